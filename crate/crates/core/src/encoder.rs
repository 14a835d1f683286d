//! Sentence feature initialization.
//!
//! Each sentence gets a convolutional n-gram feature (kernel sizes 2-5,
//! max-pooled over window positions) concatenated with the final states
//! of a forward and a backward recurrent pass over its own tokens. The
//! recurrent pass never crosses sentence boundaries, so the encoder is
//! equivariant under sentence reordering.
//!
//! Tokens are laid out ragged (no padding rows): `flat_ids` concatenates
//! all sentences, `offsets`/`lens` delimit them. Windows that extend past
//! a sentence end see zero context via masking; recurrent steps use a
//! shrinking active set so short sentences keep their final state.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Vocabulary};
use crate::params::{ParamId, ParamSet};
use crate::tape::{NodeId, Tape};

/// Ragged token layout for one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceBatch {
    pub flat_ids: Vec<usize>,
    pub offsets: Vec<usize>,
    pub lens: Vec<usize>,
}

impl SentenceBatch {
    pub fn from_document(doc: &Document, vocab: &Vocabulary) -> Self {
        let mut flat_ids = Vec::with_capacity(doc.body_tokens());
        let mut offsets = Vec::with_capacity(doc.n_sentences());
        let mut lens = Vec::with_capacity(doc.n_sentences());
        for sent in &doc.sentences {
            offsets.push(flat_ids.len());
            lens.push(sent.len());
            flat_ids.extend(sent.iter().map(|t| vocab.id(t) as usize));
        }
        Self {
            flat_ids,
            offsets,
            lens,
        }
    }

    pub fn n_sentences(&self) -> usize {
        self.lens.len()
    }

    pub fn total_tokens(&self) -> usize {
        self.flat_ids.len()
    }

    pub fn max_len(&self) -> usize {
        self.lens.iter().copied().max().unwrap_or(0)
    }

    /// Sentence index of each flat token position.
    fn segments(&self) -> Vec<usize> {
        let mut seg = Vec::with_capacity(self.total_tokens());
        for (s, &len) in self.lens.iter().enumerate() {
            seg.extend(std::iter::repeat_n(s, len));
        }
        seg
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LstmParams {
    /// word_dim x 4H input projection; gate order i, f, g, o.
    pub w_x: ParamId,
    /// H x 4H recurrent projection.
    pub w_h: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncoderParams {
    pub kernels: Vec<usize>,
    /// Per kernel k: word_dim x (k * channels); offset u occupies columns
    /// [u*channels, (u+1)*channels).
    pub conv_w: Vec<ParamId>,
    pub conv_b: Vec<ParamId>,
    pub forward: LstmParams,
    pub backward: LstmParams,
    pub channels: usize,
    pub lstm_hidden: usize,
    pub word_dim: usize,
}

impl EncoderParams {
    /// Output width: kernels * channels from convolution plus 2H from the
    /// two recurrent directions. `hidden` must be divisible by 8 so the
    /// four kernel branches and two directions tile it exactly.
    pub fn register(
        ps: &mut ParamSet,
        rng: &mut ChaCha8Rng,
        word_dim: usize,
        hidden: usize,
    ) -> Self {
        assert!(hidden.is_multiple_of(8), "sentence feature width must be divisible by 8");
        let kernels = vec![2, 3, 4, 5];
        let channels = hidden / 8;
        let lstm_hidden = hidden / 4;

        let mut conv_w = Vec::new();
        let mut conv_b = Vec::new();
        for &k in &kernels {
            conv_w.push(ps.register_xavier(
                &format!("enc.conv{k}.w"),
                word_dim,
                k * channels,
                rng,
            ));
            conv_b.push(ps.register_zeros(&format!("enc.conv{k}.b"), 1, channels));
        }
        let lstm = |name: &str, ps: &mut ParamSet, rng: &mut ChaCha8Rng| LstmParams {
            w_x: ps.register_xavier(&format!("enc.{name}.w_x"), word_dim, 4 * lstm_hidden, rng),
            w_h: ps.register_xavier(&format!("enc.{name}.w_h"), lstm_hidden, 4 * lstm_hidden, rng),
            b: ps.register_zeros(&format!("enc.{name}.b"), 1, 4 * lstm_hidden),
        };
        let forward = lstm("fwd", ps, rng);
        let backward = lstm("bwd", ps, rng);
        Self {
            kernels,
            conv_w,
            conv_b,
            forward,
            backward,
            channels,
            lstm_hidden,
            word_dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        self.kernels.len() * self.channels + 2 * self.lstm_hidden
    }

    pub fn all_ids(&self) -> Vec<ParamId> {
        let mut ids = self.conv_w.clone();
        ids.extend(&self.conv_b);
        for l in [&self.forward, &self.backward] {
            ids.extend([l.w_x, l.w_h, l.b]);
        }
        ids
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_branch(
    t: &mut Tape,
    ps: &ParamSet,
    emb: NodeId,
    batch: &SentenceBatch,
    w_id: ParamId,
    b_id: ParamId,
    kernel: usize,
    channels: usize,
) -> NodeId {
    let w = t.param(w_id, ps.get(w_id).clone());
    let total = batch.total_tokens();
    let mut sum: Option<NodeId> = None;
    for u in 0..kernel {
        let w_u = t.slice_cols(w, u * channels, (u + 1) * channels);
        let proj = t.matmul(emb, w_u);
        let shifted = if u == 0 {
            proj
        } else {
            // Window position (s, i) reads token i+u; past the sentence
            // end it reads zero context (clamped gather, then masked).
            let mut idx = Vec::with_capacity(total);
            let mut mask = Array2::zeros((total, 1));
            for (s, (&off, &len)) in batch.offsets.iter().zip(&batch.lens).enumerate() {
                let _ = s;
                for i in 0..len {
                    if i + u < len {
                        idx.push(off + i + u);
                        mask[(off + i, 0)] = 1.0;
                    } else {
                        idx.push(off + i);
                    }
                }
            }
            let gathered = t.gather_rows(proj, &idx);
            let mask_c = t.constant(mask);
            t.mul_col(gathered, mask_c)
        };
        sum = Some(match sum {
            Some(acc) => t.add(acc, shifted),
            None => shifted,
        });
    }
    let b = t.param(b_id, ps.get(b_id).clone());
    let biased = t.add_row(sum.unwrap(), b);
    let act = t.relu(biased);
    t.segment_max(act, &batch.segments(), batch.n_sentences())
}

fn lstm_direction(
    t: &mut Tape,
    ps: &ParamSet,
    emb: NodeId,
    batch: &SentenceBatch,
    params: &LstmParams,
    hidden: usize,
    reverse: bool,
) -> NodeId {
    let m = batch.n_sentences();
    let w_x = t.param(params.w_x, ps.get(params.w_x).clone());
    let w_h = t.param(params.w_h, ps.get(params.w_h).clone());
    let b = t.param(params.b, ps.get(params.b).clone());
    let pre = t.matmul(emb, w_x);
    let pre = t.add_row(pre, b);

    let mut h = t.constant(Array2::zeros((m, hidden)));
    let mut c = t.constant(Array2::zeros((m, hidden)));

    for step in 0..batch.max_len() {
        let active: Vec<usize> = (0..m).filter(|&s| batch.lens[s] > step).collect();
        let token_rows: Vec<usize> = active
            .iter()
            .map(|&s| {
                let pos = if reverse {
                    batch.lens[s] - 1 - step
                } else {
                    step
                };
                batch.offsets[s] + pos
            })
            .collect();

        let x = t.gather_rows(pre, &token_rows);
        let (h_in, c_in) = if active.len() == m {
            (h, c)
        } else {
            (t.gather_rows(h, &active), t.gather_rows(c, &active))
        };
        let rec = t.matmul(h_in, w_h);
        let gates = t.add(x, rec);
        let i_g = t.slice_cols(gates, 0, hidden);
        let f_g = t.slice_cols(gates, hidden, 2 * hidden);
        let g_g = t.slice_cols(gates, 2 * hidden, 3 * hidden);
        let o_g = t.slice_cols(gates, 3 * hidden, 4 * hidden);
        let i = t.sigmoid(i_g);
        let f = t.sigmoid(f_g);
        let g = t.tanh(g_g);
        let o = t.sigmoid(o_g);
        let fc = t.mul_elem(f, c_in);
        let ig = t.mul_elem(i, g);
        let c_new = t.add(fc, ig);
        let c_tanh = t.tanh(c_new);
        let h_new = t.mul_elem(o, c_tanh);

        if active.len() == m {
            h = h_new;
            c = c_new;
        } else {
            // Inactive sentences carry their state through unchanged.
            let mut keep = Array2::from_elem((m, 1), 1.0);
            for &s in &active {
                keep[(s, 0)] = 0.0;
            }
            let keep_c = t.constant(keep);
            let h_kept = t.mul_col(h, keep_c);
            let h_scattered = t.scatter_rows(h_new, &active, m);
            h = t.add(h_kept, h_scattered);
            let c_kept = t.mul_col(c, keep_c);
            let c_scattered = t.scatter_rows(c_new, &active, m);
            c = t.add(c_kept, c_scattered);
        }
    }
    h
}

/// Sentence features: conv branches and both recurrent directions,
/// concatenated to an m x output_dim matrix. `emb` is the tape node
/// holding the gathered token embeddings (total_tokens x word_dim).
pub fn encode_sentences(
    t: &mut Tape,
    ps: &ParamSet,
    params: &EncoderParams,
    emb: NodeId,
    batch: &SentenceBatch,
) -> NodeId {
    assert_eq!(
        t.value(emb).dim(),
        (batch.total_tokens(), params.word_dim),
        "embedding node shape mismatch"
    );
    let mut parts = Vec::new();
    for (i, &k) in params.kernels.iter().enumerate() {
        parts.push(conv_branch(
            t,
            ps,
            emb,
            batch,
            params.conv_w[i],
            params.conv_b[i],
            k,
            params.channels,
        ));
    }
    parts.push(lstm_direction(
        t, ps, emb, batch, &params.forward, params.lstm_hidden, false,
    ));
    parts.push(lstm_direction(
        t, ps, emb, batch, &params.backward, params.lstm_hidden, true,
    ));
    t.concat_cols(&parts)
}
