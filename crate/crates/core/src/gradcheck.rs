//! Central finite-difference verification of analytic gradients.
//!
//! Given a scalar loss as a function of the parameter set and the
//! analytic gradients from one tape pass, perturb selected parameter
//! entries by ±step and compare. Used by layer unit tests, the
//! `gradcheck` CLI subcommand, and the acceptance suite.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::params::{ParamId, ParamSet};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub max_rel_err: f64,
    pub worst_param: String,
    pub n_checked: usize,
}

impl CheckResult {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error with a floor so near-zero gradient pairs compare on an
/// absolute scale.
fn rel_err(a: f64, fd: f64) -> f64 {
    (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6)
}

/// Compare analytic gradients against central differences.
///
/// `entries_per_param` caps how many entries of each parameter are
/// perturbed (0 checks every entry); the subset is drawn with the given
/// seed so reruns check the same entries. Parameters absent from
/// `analytic` are treated as having zero gradient.
pub fn check_params<F>(
    ps: &mut ParamSet,
    ids: &[ParamId],
    analytic: &[(ParamId, Array2<f64>)],
    loss_fn: F,
    step: f64,
    entries_per_param: usize,
    seed: u64,
) -> CheckResult
where
    F: Fn(&ParamSet) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut result = CheckResult {
        max_rel_err: 0.0,
        worst_param: String::new(),
        n_checked: 0,
    };

    for &pid in ids {
        let dim = ps.get(pid).dim();
        let total = dim.0 * dim.1;
        let picks: Vec<usize> = if entries_per_param == 0 || entries_per_param >= total {
            (0..total).collect()
        } else {
            rand::seq::index::sample(&mut rng, total, entries_per_param).into_vec()
        };
        let grad = analytic.iter().find(|(id, _)| *id == pid).map(|(_, g)| g);

        for flat in picks {
            let (r, c) = (flat / dim.1, flat % dim.1);
            let orig = ps.get(pid)[(r, c)];

            ps.get_mut(pid)[(r, c)] = orig + step;
            let up = loss_fn(ps);
            ps.get_mut(pid)[(r, c)] = orig - step;
            let down = loss_fn(ps);
            ps.get_mut(pid)[(r, c)] = orig;

            let fd = (up - down) / (2.0 * step);
            let a = grad.map_or(0.0, |g| g[(r, c)]);
            let err = rel_err(a, fd);
            result.n_checked += 1;
            if err > result.max_rel_err {
                result.max_rel_err = err;
                result.worst_param = format!("{}[{r},{c}]", ps.name(pid));
            }
        }
    }
    result
}

#[derive(Debug, Clone)]
pub struct SuiteResult {
    pub name: &'static str,
    pub result: CheckResult,
    pub tol: f64,
}

impl SuiteResult {
    pub fn passed(&self) -> bool {
        self.result.passes(self.tol)
    }
}

/// Layer tolerance for the standard suites.
pub const LAYER_TOL: f64 = 1e-4;
/// Full-pass tolerance (longer chains accumulate more rounding).
pub const FULL_PASS_TOL: f64 = 1e-3;

fn tiny_document() -> crate::corpus::Document {
    let texts: [&str; 6] = [
        "graphs connect words and sentences",
        "sections gather sentences into groups",
        "attention weights sum to one",
        "scores fall between zero and one",
        "words repeat across sentences here",
        "the last sentence closes the document",
    ];
    let sentences: Vec<Vec<String>> = texts
        .iter()
        .map(|s| s.split_whitespace().map(str::to_string).collect())
        .collect();
    crate::corpus::Document {
        id: "gradcheck".into(),
        section_ids: vec![0, 0, 1, 1, 2, 2],
        abstract_sentences: vec![sentences[0].clone()],
        oracle_labels: Some(vec![1, 0, 0, 0, 1, 0]),
        sentences,
    }
}

/// Finite-difference suites over every layer family plus the full
/// forward/loss pass, on instances small enough to check exhaustively.
pub fn standard_suites(seed: u64) -> Vec<SuiteResult> {
    use crate::corpus::{build_vocab, IdfTable};
    use crate::embeddings::EmbeddingTable;
    use crate::graph::{Edge, HeteroGraph, Hypergraph};
    use crate::hetero_attn::{hetero_block, HeteroBlockParams};
    use crate::hyper_attn::{additive_layer, self_attn_layer, AdditiveParams, SelfAttnParams};
    use crate::model::{bce_loss, build_bundle, Model, ModelConfig};
    use crate::tape::Tape;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_mat =
        |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0));
    let hidden = 12;
    let mut suites = Vec::new();

    // Bipartite word-sentence block: 4 words, 3 sentences, 7 edges.
    {
        let graph = HeteroGraph {
            word_tokens: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
            word_ids: vec![2, 3, 4, 5],
            sent_count: 3,
            edges: [
                (0usize, 0usize, 0u32),
                (0, 1, 3),
                (1, 0, 1),
                (1, 2, 5),
                (2, 1, 2),
                (2, 2, 7),
                (3, 2, 9),
            ]
            .iter()
            .map(|&(word, sent, bin)| Edge {
                sent: sent as u32,
                word: word as u32,
                weight: f64::from(bin) * 0.25,
                bin,
            })
            .collect(),
        };
        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let block = HeteroBlockParams::register(&mut ps, &mut prng, "het", hidden, 3, 5, 10, 20);
        let words = rand_mat(4, hidden);
        let sents = rand_mat(3, hidden);
        let weights = rand_mat(3, hidden);
        let forward = |ps: &ParamSet| {
            let mut t = Tape::new();
            let hw = t.constant(words.clone());
            let hs = t.constant(sents.clone());
            let out = hetero_block(&mut t, ps, &block, hw, hs, &graph, None);
            let wc = t.constant(weights.clone());
            let prod = t.mul_elem(out.sent_feats, wc);
            let loss = t.sum_all(prod);
            let grads = t.backward(loss);
            (t.value(loss)[(0, 0)], t.param_grads(&grads))
        };
        let (_, analytic) = forward(&ps);
        let ids = block.all_ids();
        let result = check_params(&mut ps, &ids, &analytic, |ps| forward(ps).0, 1e-5, 0, seed);
        suites.push(SuiteResult {
            name: "hetero-attention-block",
            result,
            tol: LAYER_TOL,
        });
    }

    // Hypergraph layers over 5 sentences in 2 overlapping sections.
    {
        let hg = Hypergraph {
            n_nodes: 5,
            members: vec![vec![0, 1, 2], vec![2, 3, 4]],
        };
        let h_mat = rand_mat(5, hidden);
        let weights = rand_mat(5, hidden);

        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let p_s = SelfAttnParams::register(&mut ps, &mut prng, "hgs", hidden, 2);
        let forward_s = |ps: &ParamSet| {
            let mut t = Tape::new();
            let h = t.constant(h_mat.clone());
            let out = self_attn_layer(&mut t, ps, &p_s, h, &hg, true, None);
            let wc = t.constant(weights.clone());
            let prod = t.mul_elem(out.output, wc);
            let loss = t.sum_all(prod);
            let grads = t.backward(loss);
            (t.value(loss)[(0, 0)], t.param_grads(&grads))
        };
        let (_, analytic) = forward_s(&ps);
        let ids = p_s.all_ids();
        let result =
            check_params(&mut ps, &ids, &analytic, |ps| forward_s(ps).0, 1e-5, 0, seed);
        suites.push(SuiteResult {
            name: "hypergraph-self-attention",
            result,
            tol: LAYER_TOL,
        });

        let mut ps = ParamSet::new();
        let mut prng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let p_g = AdditiveParams::register(&mut ps, &mut prng, "hga", hidden);
        let forward_g = |ps: &ParamSet| {
            let mut t = Tape::new();
            let h = t.constant(h_mat.clone());
            let out = additive_layer(&mut t, ps, &p_g, h, &hg, None);
            let wc = t.constant(weights.clone());
            let prod = t.mul_elem(out.output, wc);
            let loss = t.sum_all(prod);
            let grads = t.backward(loss);
            (t.value(loss)[(0, 0)], t.param_grads(&grads))
        };
        let (_, analytic) = forward_g(&ps);
        let ids = p_g.all_ids();
        let result =
            check_params(&mut ps, &ids, &analytic, |ps| forward_g(ps).0, 1e-5, 0, seed);
        suites.push(SuiteResult {
            name: "hypergraph-additive-baseline",
            result,
            tol: LAYER_TOL,
        });
    }

    // Full loss-through-forward pass on a six-sentence document.
    {
        let doc = tiny_document();
        let docs = vec![doc];
        let config = ModelConfig {
            hidden: 16,
            word_dim: 12,
            edge_dim: 6,
            hetero_heads: vec![2, 2],
            hyper_layers: 2,
            hyper_heads: 2,
            ffn_inner: 24,
            vocab_size: 100,
            seed,
            ..ModelConfig::default()
        };
        let vocab = build_vocab(&docs, config.vocab_size);
        let idf = IdfTable::build(&docs);
        let emb = EmbeddingTable::random(vocab.len(), config.word_dim, seed);
        let mut model = Model::new(config.clone(), emb).expect("valid gradcheck config");
        let bundle = build_bundle(&docs[0], &vocab, &idf, &config).expect("bundle");
        let labels = bundle.labels.clone().expect("labels");

        let forward = |m: &Model| {
            let mut t = Tape::new();
            let out = m.forward(&mut t, &bundle, None);
            let loss = bce_loss(&mut t, out.scores, &labels).expect("loss");
            let grads = t.backward(loss);
            (t.value(loss)[(0, 0)], t.param_grads(&grads))
        };
        let (_, analytic) = forward(&model);
        let ids = model.param_ids();
        let shell = model.clone();
        let mut params = std::mem::take(&mut model.params);
        let result = check_params(
            &mut params,
            &ids,
            &analytic,
            |ps| {
                let mut probe = shell.clone();
                probe.params = ps.clone();
                let mut t = Tape::new();
                let out = probe.forward(&mut t, &bundle, None);
                let loss = bce_loss(&mut t, out.scores, &labels).expect("loss");
                t.value(loss)[(0, 0)]
            },
            1e-5,
            4,
            seed,
        );
        suites.push(SuiteResult {
            name: "full-pass",
            result,
            tol: FULL_PASS_TOL,
        });
    }

    suites
}
