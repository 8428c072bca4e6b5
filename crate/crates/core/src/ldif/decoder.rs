use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::LATENT_DIM;

pub const DECODER_HIDDEN: usize = 32;
pub const DECODER_INPUT: usize = LATENT_DIM + 3;

/// Seed used when no decoder seed is configured.
pub const DEFAULT_DECODER_SEED: u64 = 0x1d1f;

/// Two-layer residual decoder shared by all elements:
/// `D(z, x') = w2 · relu(W1 [z; x'] + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementDecoder {
    /// `DECODER_HIDDEN × DECODER_INPUT`, row-major; the first `LATENT_DIM`
    /// columns act on the latent code.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl ElementDecoder {
    pub fn zeroed() -> Self {
        Self {
            w1: vec![0.0; DECODER_HIDDEN * DECODER_INPUT],
            b1: vec![0.0; DECODER_HIDDEN],
            w2: vec![0.0; DECODER_HIDDEN],
            b2: 0.0,
        }
    }

    /// He-initialized first layer and a small output layer, so untrained
    /// residuals stay within a few percent of the Gaussian term.
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let first = Normal::new(0.0, (2.0 / DECODER_INPUT as f64).sqrt()).unwrap();
        let second = Normal::new(0.0, 0.05 / (DECODER_HIDDEN as f64).sqrt()).unwrap();
        let w1 = (0..DECODER_HIDDEN * DECODER_INPUT)
            .map(|_| first.sample(&mut rng))
            .collect();
        let b1 = vec![0.0; DECODER_HIDDEN];
        let w2 = (0..DECODER_HIDDEN).map(|_| second.sample(&mut rng)).collect();
        Self { w1, b1, w2, b2: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.w2.iter().all(|&v| v == 0.0) && self.b2 == 0.0
    }

    /// Hidden pre-activation contributed by a latent code plus the bias.
    pub(crate) fn latent_bias(&self, z: &[f64; LATENT_DIM]) -> [f64; DECODER_HIDDEN] {
        std::array::from_fn(|k| {
            let row = &self.w1[k * DECODER_INPUT..k * DECODER_INPUT + LATENT_DIM];
            self.b1[k] + row.iter().zip(z).map(|(w, z)| w * z).sum::<f64>()
        })
    }

    /// Weight of local coordinate `axis` in hidden unit `k`.
    pub(crate) fn position_weight(&self, k: usize, axis: usize) -> f64 {
        self.w1[k * DECODER_INPUT + LATENT_DIM + axis]
    }

    pub(crate) fn latent_weight(&self, k: usize, j: usize) -> f64 {
        self.w1[k * DECODER_INPUT + j]
    }

    /// Direct evaluation from the full input; used as a reference.
    pub fn evaluate(&self, z: &[f64; LATENT_DIM], local: [f64; 3]) -> f64 {
        let mut out = self.b2;
        for k in 0..DECODER_HIDDEN {
            let row = &self.w1[k * DECODER_INPUT..(k + 1) * DECODER_INPUT];
            let mut h = self.b1[k];
            for j in 0..LATENT_DIM {
                h += row[j] * z[j];
            }
            for a in 0..3 {
                h += row[LATENT_DIM + a] * local[a];
            }
            out += self.w2[k] * h.max(0.0);
        }
        out
    }
}
