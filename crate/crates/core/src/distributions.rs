//! Seedable random variates and closed-form moments for the laws driving the model.
//!
//! Every sampler draws from an explicit [`RngStream`], so replicas are reproducible
//! and can be run in parallel on distinct stream ids.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector gives statistically independent
/// sequences for distinct ids under the same seed.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            rng,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 32-bit words consumed so far.
    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    /// Derives an independent child stream; the parent advances by one draw.
    pub fn fork(&mut self) -> RngStream {
        let child_seed = self.rng.next_u64();
        RngStream::new(child_seed, self.stream_id)
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `(0, 1]`.
    pub fn uniform_pos(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Fair coin.
    pub fn bernoulli_half(&mut self) -> bool {
        self.rng.next_u64() >> 63 == 1
    }

    /// Poisson variate with mean `mean`.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        rand_distr::Poisson::new(mean.max(f64::MIN_POSITIVE))
            .map(|d| d.sample(&mut self.rng) as u64)
            .unwrap_or(0)
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Mixes an experiment tag into a base seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Exp(1) by inversion, `-ln u` with `u` in `(0, 1]`.
pub fn sample_exp1(rng: &mut RngStream) -> f64 {
    exp1_from_uniform(rng.uniform_pos())
}

/// Inversion map used by [`sample_exp1`]; `u = 1` maps to 0.
pub fn exp1_from_uniform(u: f64) -> f64 {
    -u.ln()
}

/// Gamma(shape, 1) by Marsaglia-Tsang; shapes below 1 are boosted by `U^{1/shape}`.
pub fn sample_gamma(shape: f64, rng: &mut RngStream) -> Result<f64> {
    if !(shape > 0.0 && shape.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma shape must be positive, got {shape}"
        )));
    }
    Ok(gamma_unchecked(shape, rng))
}

fn gamma_unchecked(shape: f64, rng: &mut RngStream) -> f64 {
    if shape < 1.0 {
        let g = gamma_unchecked(shape + 1.0, rng);
        return g * rng.uniform_pos().powf(1.0 / shape);
    }
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.standard_normal();
        let t = 1.0 + c * x;
        if t <= 0.0 {
            continue;
        }
        let v = t * t * t;
        let u = rng.uniform_pos();
        let x2 = x * x;
        if u < 1.0 - 0.0331 * x2 * x2 || u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Beta(a, b) as `G_a / (G_a + G_b)`; the result lies in the open unit interval.
pub fn sample_beta(a: f64, b: f64, rng: &mut RngStream) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "beta parameters must be positive, got ({a}, {b})"
        )));
    }
    loop {
        let x = gamma_unchecked(a, rng);
        let y = gamma_unchecked(b, rng);
        let s = x / (x + y);
        if s > 0.0 && s < 1.0 {
            return Ok(s);
        }
    }
}

/// Beta(2, 2), the contraction factor of the half-basis.
pub fn sample_beta22(rng: &mut RngStream) -> f64 {
    sample_beta(2.0, 2.0, rng).expect("valid constant parameters")
}

/// Order statistics of six independent Uniform(-1, 1) variates.
pub fn sample_order_stats6(rng: &mut RngStream) -> [f64; 6] {
    loop {
        let mut u = [0.0; 6];
        for x in u.iter_mut() {
            *x = 2.0 * rng.uniform_pos() - 1.0;
        }
        if u.iter().any(|&x| x >= 1.0) {
            continue;
        }
        u.sort_by(|a, b| a.total_cmp(b));
        if u.windows(2).all(|w| w[0] < w[1]) {
            return u;
        }
    }
}

/// `E[X^k]` for `X ~ Gamma(a, 1)`: `prod_{j<k} (a + j)`.
pub fn gamma_moment(a: f64, k: u32) -> f64 {
    (0..k).map(|j| a + j as f64).product()
}

/// `E[X^k]` for `X ~ Beta(a, b)`: `prod_{j<k} (a + j) / (a + b + j)`.
pub fn beta_moment(a: f64, b: f64, k: u32) -> f64 {
    (0..k)
        .map(|j| (a + j as f64) / (a + b + j as f64))
        .product()
}

/// `q_m = E[T_1^m] = 6 / ((m + 2)(m + 3))` for `T_1 ~ Beta(2, 2)`.
pub fn q_moment(m: u32) -> f64 {
    let m = m as f64;
    6.0 / ((m + 2.0) * (m + 3.0))
}

/// Scale factor in the stationary law `T = c T_1^3 T_2 T_3`.
pub const T_SCALE: f64 = 1.5;

/// Closed-form `E[T^k]` for the stationary shape variable.
pub fn t_moment_closed_form(k: u32) -> f64 {
    T_SCALE.powi(k as i32)
        * q_moment(3 * k)
        * gamma_moment(5.0 / 3.0, k)
        * beta_moment(2.0, 2.0 / 3.0, k)
}

/// One row of the moment table of the stationary shape variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentTable {
    pub k: u32,
    pub value: f64,
}

pub fn t_moment_table(k_max: u32) -> Vec<MomentTable> {
    (0..=k_max)
        .map(|k| MomentTable {
            k,
            value: t_moment_closed_form(k),
        })
        .collect()
}
