//! Word-vector table for word nodes and encoder inputs.
//!
//! Rows follow vocabulary ids: row 0 is the padding vector, pinned to
//! zero and never updated. Vectors come from a pretrained text file where
//! available and from seeded Normal(0, 0.1) samples otherwise, so the
//! table is reproducible for any fixed (vocab, seed) pair.
//!
//! The table lives outside the main parameter set: documents only touch
//! a few hundred rows each, so fine-tuning (off by default) uses a
//! row-sparse Adam update instead of dense table gradients.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{Array1, Array2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Vocabulary, PAD};
use crate::optim::AdamConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub matrix: Array2<f64>,
    pub trainable: bool,
    step: u64,
    m: Option<Array2<f64>>,
    v: Option<Array2<f64>>,
}

impl EmbeddingTable {
    /// Seeded random table: every row except padding from Normal(0, 0.1).
    pub fn random(n_rows: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let mut matrix = Array2::zeros((n_rows, dim));
        for r in 1..n_rows {
            for c in 0..dim {
                matrix[(r, c)] = normal.sample(&mut rng);
            }
        }
        Self {
            matrix,
            trainable: false,
            step: 0,
            m: None,
            v: None,
        }
    }

    /// Load pretrained vectors in `token v1 .. vdim` text format. Vocab
    /// tokens present in the file get their vectors; the rest keep their
    /// seeded random initialization.
    pub fn load(path: &Path, vocab: &Vocabulary, dim: usize, seed: u64) -> Result<Self> {
        let mut table = Self::random(vocab.len(), dim, seed);
        let file = File::open(path).map_err(|e| {
            Error::Config(format!("cannot open embeddings {}: {e}", path.display()))
        })?;
        for (line_no, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let token = parts.next().unwrap();
            if !vocab.contains(token) {
                continue;
            }
            let row = vocab.id(token) as usize;
            let mut c = 0;
            for part in parts {
                if c >= dim {
                    c += 1;
                    break;
                }
                table.matrix[(row, c)] = part.parse::<f64>().map_err(|e| Error::Data {
                    line: line_no + 1,
                    msg: format!("bad embedding value: {e}"),
                })?;
                c += 1;
            }
            if c != dim {
                return Err(Error::Data {
                    line: line_no + 1,
                    msg: format!("embedding has {c} values, expected {dim}"),
                });
            }
        }
        table.matrix.row_mut(PAD as usize).fill(0.0);
        Ok(table)
    }

    pub fn dim(&self) -> usize {
        self.matrix.ncols()
    }

    /// Rows for a flat id sequence, as one dense matrix.
    pub fn gather(&self, ids: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((ids.len(), self.dim()));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&self.matrix.row(id));
        }
        out
    }

    /// Fold a dense gradient over gathered rows back into per-row
    /// gradients on the table.
    pub fn accumulate_row_grads(
        ids: &[usize],
        grad: &Array2<f64>,
        into: &mut HashMap<usize, Array1<f64>>,
    ) {
        assert_eq!(ids.len(), grad.nrows());
        for (r, &id) in ids.iter().enumerate() {
            match into.get_mut(&id) {
                Some(acc) => *acc += &grad.row(r),
                None => {
                    into.insert(id, grad.row(r).to_owned());
                }
            }
        }
    }

    /// Lazy row-sparse Adam: only touched rows advance. The padding row
    /// is pinned regardless of the gradient. No-op unless trainable.
    pub fn sparse_adam_step(&mut self, row_grads: &HashMap<usize, Array1<f64>>, cfg: &AdamConfig) {
        if !self.trainable || row_grads.is_empty() {
            return;
        }
        let dim = self.dim();
        if self.m.is_none() {
            self.m = Some(Array2::zeros(self.matrix.dim()));
            self.v = Some(Array2::zeros(self.matrix.dim()));
        }
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        let m = self.m.as_mut().unwrap();
        let v = self.v.as_mut().unwrap();

        // Sorted iteration keeps float accumulation order stable.
        let mut rows: Vec<&usize> = row_grads.keys().collect();
        rows.sort();
        for &row in rows {
            if row == PAD as usize {
                continue;
            }
            let g = &row_grads[&row];
            for c in 0..dim {
                let gm = m.get_mut((row, c)).unwrap();
                *gm = cfg.beta1 * *gm + (1.0 - cfg.beta1) * g[c];
                let gv = v.get_mut((row, c)).unwrap();
                *gv = cfg.beta2 * *gv + (1.0 - cfg.beta2) * g[c] * g[c];
                let m_hat = *gm / bc1;
                let v_hat = *gv / bc2;
                self.matrix[(row, c)] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, tokenize, Document, UNK};
    use std::io::Write;

    fn vocab_of(words: &str) -> Vocabulary {
        let doc = Document {
            id: "d".into(),
            sentences: vec![tokenize(words)],
            section_ids: vec![0],
            abstract_sentences: vec![],
            oracle_labels: None,
        };
        build_vocab([&doc], 100)
    }

    #[test]
    fn random_table_is_seed_deterministic_with_zero_pad_row() {
        let a = EmbeddingTable::random(5, 8, 42);
        let b = EmbeddingTable::random(5, 8, 42);
        assert_eq!(a.matrix, b.matrix);
        assert_eq!(a.matrix.row(0).sum(), 0.0);
        assert!(a.matrix.row(1).iter().any(|&x| x != 0.0));
        let c = EmbeddingTable::random(5, 8, 43);
        assert_ne!(a.matrix, c.matrix);
    }

    #[test]
    fn load_copies_known_vectors_and_samples_missing() {
        let vocab = vocab_of("alpha beta");
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "alpha 1.0 2.0 3.0").unwrap();
        writeln!(f, "ignored 9.0 9.0 9.0").unwrap();
        f.flush().unwrap();

        let t = EmbeddingTable::load(f.path(), &vocab, 3, 7).unwrap();
        let alpha = vocab.id("alpha") as usize;
        assert_eq!(t.matrix.row(alpha).to_vec(), vec![1.0, 2.0, 3.0]);
        let beta = vocab.id("beta") as usize;
        let norm: f64 = t.matrix.row(beta).iter().map(|x| x * x).sum();
        assert!(norm > 0.0);

        let again = EmbeddingTable::load(f.path(), &vocab, 3, 7).unwrap();
        assert_eq!(t.matrix, again.matrix);
    }

    #[test]
    fn load_rejects_dimension_mismatch_with_line_number() {
        let vocab = vocab_of("alpha beta");
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "beta 1.0 2.0 3.0").unwrap();
        writeln!(f, "alpha 1.0 2.0").unwrap();
        f.flush().unwrap();
        let err = EmbeddingTable::load(f.path(), &vocab, 3, 7).unwrap_err();
        assert!(matches!(err, Error::Data { line: 2, .. }), "{err}");
    }

    #[test]
    fn gather_and_row_grad_roundtrip() {
        let t = EmbeddingTable::random(6, 4, 1);
        let ids = vec![2, 3, 2];
        let g = t.gather(&ids);
        assert_eq!(g.row(0), t.matrix.row(2));
        assert_eq!(g.row(2), t.matrix.row(2));

        let grad = Array2::from_elem((3, 4), 1.0);
        let mut rows = HashMap::new();
        EmbeddingTable::accumulate_row_grads(&ids, &grad, &mut rows);
        assert_eq!(rows[&2], Array1::from_elem(4, 2.0));
        assert_eq!(rows[&3], Array1::from_elem(4, 1.0));
    }

    #[test]
    fn sparse_step_moves_touched_rows_only_and_pins_padding() {
        let mut t = EmbeddingTable::random(5, 3, 2);
        t.trainable = true;
        let before = t.matrix.clone();
        let mut rows = HashMap::new();
        rows.insert(1usize, Array1::from_elem(3, 1.0));
        rows.insert(PAD as usize, Array1::from_elem(3, 1.0));
        t.sparse_adam_step(&rows, &AdamConfig::default());
        assert_ne!(t.matrix.row(1), before.row(1));
        assert_eq!(t.matrix.row(0), before.row(0));
        assert_eq!(t.matrix.row(2), before.row(2));

        let mut frozen = EmbeddingTable::random(5, 3, 2);
        frozen.trainable = false;
        let fb = frozen.matrix.clone();
        frozen.sparse_adam_step(&rows, &AdamConfig::default());
        assert_eq!(frozen.matrix, fb);
    }

    #[test]
    fn unk_lookups_share_a_real_row() {
        let t = EmbeddingTable::random(4, 3, 3);
        let g = t.gather(&[UNK as usize]);
        assert!(g.row(0).iter().any(|&x| x != 0.0));
    }
}
