//! Inverted dropout as a tape-level mask.
//!
//! Training passes hold one seeded generator per document so runs are
//! reproducible; inference passes simply omit the dropout context.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tape::{NodeId, Tape};

pub struct Dropout {
    pub p: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(p: f64, seed: u64) -> Self {
        assert!((0.0..1.0).contains(&p), "dropout rate must be in [0,1)");
        Self {
            p,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Multiply by a fresh Bernoulli keep-mask scaled by 1/(1-p).
    pub fn apply(&mut self, t: &mut Tape, x: NodeId) -> NodeId {
        if self.p == 0.0 {
            return x;
        }
        let dim = t.value(x).dim();
        let scale = 1.0 / (1.0 - self.p);
        let mask = Array2::from_shape_fn(dim, |_| {
            if self.rng.gen::<f64>() < self.p {
                0.0
            } else {
                scale
            }
        });
        let mask_c = t.constant(mask);
        t.mul_elem(x, mask_c)
    }
}

/// Applies dropout only when a context is present; forwarding helper for
/// layers that take `Option<&mut Dropout>`.
pub fn maybe_apply(drop: &mut Option<&mut Dropout>, t: &mut Tape, x: NodeId) -> NodeId {
    match drop {
        Some(d) => d.apply(t, x),
        None => x,
    }
}
