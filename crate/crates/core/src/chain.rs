//! Markov chains of triangle statistics along a branch of the cell boundary.
//!
//! The `n`-th edge of a branch is coded by the isosceles triangle `(V_n, Z_n, Z_c)`
//! through its normalized half-basis `B_n` and height `H_n`. For finite `lambda` the
//! sequence is a Markov chain with kernel `p^(lambda)`; as `lambda -> infinity` the
//! kernel converges to the explicit `p^(inf)`, under which
//! `B' = beta B` and `H' = B^3 H / (B^3 + (3/2) xi H)` with `beta ~ Beta(2,2)` and
//! `xi ~ Exp(1)` independent.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::distributions::{sample_beta, sample_beta22, sample_exp1, sample_gamma, RngStream};
use crate::error::{Error, Result};
use crate::palm::cap_area;
use crate::quad::adaptive;

/// Normalized half-basis `b` and height `h` of the triangle coding edge `n`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub b: f64,
    pub h: f64,
    pub n: u32,
    /// Set once `h` underflows; the state is then absorbing.
    #[serde(default)]
    pub terminal: bool,
}

impl ChainState {
    pub fn new(b: f64, h: f64) -> Self {
        Self {
            b,
            h,
            n: 0,
            terminal: false,
        }
    }

    pub fn with_n(b: f64, h: f64, n: u32) -> Self {
        Self {
            b,
            h,
            n,
            terminal: false,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.b > 0.0 && self.h > 0.0 && self.b.is_finite() && self.h.is_finite()
    }

    /// Collapsed triangle (zero half-basis), a measure-zero event.
    pub fn is_degenerate(&self) -> bool {
        !(self.b > 0.0)
    }

    /// `T = b^3 / h`.
    pub fn t(&self) -> f64 {
        self.b * self.b * self.b / self.h
    }

    /// `kappa = lambda^{-2/3} b / h`, the only finite-size parameter of the kernel
    /// besides `T` in scale-free coordinates.
    pub fn kappa(&self, lambda: f64) -> f64 {
        lambda.powf(-2.0 / 3.0) * self.b / self.h
    }
}

/// The driving noise `(beta, xi)` of one idealized step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepNoise {
    pub beta: f64,
    pub xi: f64,
}

/// Perpetuity pair `T_n = B_n^3 / H_n` and `W_n = B_n^2 X_n / H_n`, with `X_n` the
/// horizontal vertex coordinate oriented outward (mirrored for the left branch) so
/// that both branches obey the same recursion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeState {
    pub t: f64,
    pub w: f64,
}

impl ShapeState {
    pub fn from_chain(s: &ChainState, x_oriented: f64) -> Self {
        Self {
            t: s.t(),
            w: s.b * s.b * x_oriented / s.h,
        }
    }
}

/// A finite-`lambda` chain and an idealized chain advanced jointly.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoupledPair {
    pub finite: ChainState,
    pub ideal: ChainState,
    pub coupled: bool,
}

impl CoupledPair {
    pub fn new(start: ChainState) -> Self {
        Self {
            finite: start,
            ideal: start,
            coupled: true,
        }
    }
}

/// `p^(inf)((b,h),(b',h')) = 4(b-b')b'/h'^2 exp(-(2/3) b^3 (1/h' - 1/h))` on `(0,b) x (0,h)`.
pub fn ideal_kernel_density(from: &ChainState, to: (f64, f64)) -> f64 {
    let (bp, hp) = to;
    let (b, h) = (from.b, from.h);
    if !(bp > 0.0 && bp < b && hp > 0.0 && hp < h) {
        return 0.0;
    }
    4.0 * (b - bp) * bp / (hp * hp) * (-(2.0 / 3.0) * b * b * b * (1.0 / hp - 1.0 / h)).exp()
}

/// Deterministic idealized transition for a given noise.
pub fn ideal_transition(s: &ChainState, noise: StepNoise) -> ChainState {
    if s.terminal {
        return ChainState { n: s.n + 1, ..*s };
    }
    let b3 = s.b * s.b * s.b;
    let h = s.h * b3 / (b3 + 1.5 * noise.xi * s.h);
    let b = noise.beta * s.b;
    let terminal = !(h > 0.0 && b > 0.0);
    ChainState {
        b: if terminal { s.b } else { b },
        h: if terminal { s.h } else { h },
        n: s.n + 1,
        terminal,
    }
}

/// Noise that maps `from` to `to` under [`ideal_transition`].
pub fn ideal_noise_between(from: &ChainState, to: &ChainState) -> StepNoise {
    StepNoise {
        beta: to.b / from.b,
        xi: (2.0 / 3.0) * from.b.powi(3) * (1.0 / to.h - 1.0 / from.h),
    }
}

/// One idealized step; draws `beta` then `xi`.
pub fn ideal_step(s: &ChainState, rng: &mut RngStream) -> (ChainState, StepNoise) {
    let noise = StepNoise {
        beta: sample_beta22(rng),
        xi: sample_exp1(rng),
    };
    (ideal_transition(s, noise), noise)
}

/// Idealized trajectory of `steps` transitions from `start` (length `steps + 1`).
pub fn ideal_trace(
    start: ChainState,
    steps: usize,
    rng: &mut RngStream,
) -> (Vec<ChainState>, Vec<StepNoise>) {
    let mut states = Vec::with_capacity(steps + 1);
    let mut noise = Vec::with_capacity(steps);
    states.push(start);
    for _ in 0..steps {
        let (next, nz) = ideal_step(states.last().expect("nonempty"), rng);
        states.push(next);
        noise.push(nz);
    }
    (states, noise)
}

fn neg_four_thirds(lambda: f64) -> f64 {
    if lambda.is_infinite() {
        0.0
    } else {
        lambda.powf(-4.0 / 3.0)
    }
}

/// Upper end `(h^2 + lambda^{-4/3}(b^2 - b'^2))^{1/2}` of the finite support at `b'`.
pub fn sliver_top(lambda: f64, from: &ChainState, bp: f64) -> f64 {
    (from.h * from.h + neg_four_thirds(lambda) * (from.b * from.b - bp * bp)).sqrt()
}

/// Lower end `lambda^{-2/3}(b^2 - b'^2)^{1/2}` of the finite support at `b'`.
pub fn support_floor(lambda: f64, from: &ChainState, bp: f64) -> f64 {
    neg_four_thirds(lambda).sqrt() * (from.b * from.b - bp * bp).sqrt()
}

/// Membership in the finite-`lambda` support `S_(b,h)`.
pub fn in_support(lambda: f64, from: &ChainState, to: (f64, f64)) -> bool {
    let (bp, hp) = to;
    bp > 0.0
        && bp < from.b
        && hp > support_floor(lambda, from, bp)
        && hp < sliver_top(lambda, from, bp)
}

/// Area of the crescent swept between the disk of the current vertex and the disk
/// of the next one: the difference of two caps over the chord `[Z_c, Z_n]`.
pub fn crescent_area(lambda: f64, from: &ChainState, to: (f64, f64)) -> Result<f64> {
    if !in_support(lambda, from, to) {
        return Err(Error::Domain(format!(
            "({}, {}) outside S at (b, h) = ({}, {})",
            to.0, to.1, from.b, from.h
        )));
    }
    Ok(crescent_unchecked(lambda, from, to))
}

fn crescent_unchecked(lambda: f64, from: &ChainState, to: (f64, f64)) -> f64 {
    let (bp, hp) = to;
    let (b, h) = (from.b, from.h);
    if lambda.is_infinite() {
        return (2.0 / 3.0) * b * b * b * (1.0 / hp - 1.0 / h);
    }
    let l13 = lambda.cbrt();
    let ell = l13 * b;
    let inner = lambda * lambda * hp * hp - l13 * l13 * (b * b - bp * bp);
    cap_area(ell, inner.max(0.0).sqrt()) - cap_area(ell, lambda * h)
}

/// Finite-`lambda` transition density: Jacobian factor times `exp(-|crescent|)` on `S_(b,h)`.
pub fn finite_kernel_density(lambda: f64, from: &ChainState, to: (f64, f64)) -> f64 {
    if lambda.is_infinite() {
        return ideal_kernel_density(from, to);
    }
    if !in_support(lambda, from, to) {
        return 0.0;
    }
    let (bp, hp) = to;
    let b = from.b;
    let k = neg_four_thirds(lambda);
    // 1 - lambda^{-4/3}(b^2 - b'^2)/h'^2 = (h' - f)(h' + f)/h'^2 with f the support floor.
    let f = support_floor(lambda, from, bp);
    let jac = 4.0 * bp / (hp * hp + k * bp * bp) * (b * hp / ((hp - f) * (hp + f)).sqrt() - bp);
    jac * (-crescent_unchecked(lambda, from, to)).exp()
}

/// Inflation applied to pilot-scan maxima when setting envelope constants.
pub const ENVELOPE_INFLATION: f64 = 1.5;

/// Band edges in the exponential noise `xi` of the idealized step. Heights beyond the
/// cut band are proposed by the floor component instead.
const XI_EDGES: [f64; 15] = [
    0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, 13.0, 16.0, 20.0,
];
const BANDS: usize = XI_EDGES.len() - 1;
const FLOOR: usize = BANDS;
/// Bands from the first one whose ratio exceeds this are handed to the floor component.
const BAND_RATIO_CUT: f64 = 8.0;
const BUCKETS_PER_OCTAVE: f64 = 4.0;

/// Piecewise envelope: `M_j` times the lifted idealized density on each `xi` band
/// below the cut and `M_f` times the floor density beyond it.
#[derive(Clone, Debug)]
struct Envelope {
    band: [f64; BANDS],
    /// Bands `cut..` are covered by the floor component.
    cut: usize,
    floor: f64,
    /// Cumulative component masses: bands, then floor.
    cumulative: [f64; BANDS + 1],
}

impl Envelope {
    fn new(band: [f64; BANDS], cut: usize, floor: f64) -> Self {
        let mut cumulative = [0.0; BANDS + 1];
        let mut acc = 0.0;
        for j in 0..BANDS {
            if j < cut {
                acc += band_probability(j) * band[j];
            }
            cumulative[j] = acc;
        }
        cumulative[FLOOR] = acc + floor;
        Self {
            band,
            cut,
            floor,
            cumulative,
        }
    }

    fn xi_cut(&self) -> f64 {
        XI_EDGES[self.cut]
    }

    fn total(&self) -> f64 {
        self.cumulative[FLOOR]
    }
}

fn band_probability(j: usize) -> f64 {
    (-XI_EDGES[j]).exp() - (-XI_EDGES[j + 1]).exp()
}

fn band_of(xi: f64) -> usize {
    XI_EDGES[1..]
        .iter()
        .position(|&e| xi < e)
        .unwrap_or(BANDS - 1)
}

/// `xi` such that the idealized step from `s` lands at height `hp`.
fn xi_of(s: &ChainState, hp: f64) -> f64 {
    (2.0 / 3.0) * s.b * s.b * s.b * (1.0 / hp - 1.0 / s.h)
}

fn h_of_xi(s: &ChainState, xi: f64) -> f64 {
    s.h / (1.0 + 1.5 * xi * s.h / (s.b * s.b * s.b))
}

/// Lift `h' = (h~^2 + f^2)^{1/2}` of an idealized height `h~` over the support floor `f`;
/// it maps `(0, h)` onto the finite support at `b'`.
fn lift(f: f64, ht: f64) -> f64 {
    ht.hypot(f)
}

/// Inverse of [`lift`].
fn unlift(f: f64, hp: f64) -> f64 {
    ((hp - f) * (hp + f)).max(0.0).sqrt()
}

/// Density of the lifted idealized kernel: `p^(inf)(b', h~) h' / h~`.
fn lifted_ideal_density(lambda: f64, from: &ChainState, to: (f64, f64)) -> f64 {
    let (bp, hp) = to;
    let ht = unlift(support_floor(lambda, from, bp), hp);
    if !(ht > 0.0) {
        return 0.0;
    }
    ideal_kernel_density(from, (bp, ht)) * hp / ht
}

/// Floor proposal density: `b'` uniform on `(0, b)`, then `h' = f + (c - f) V^2` with `V`
/// uniform, `f` the support floor and `c` the lift of the height at `xi = xi_cut`.
fn floor_density(lambda: f64, from: &ChainState, xi_cut: f64, to: (f64, f64)) -> f64 {
    let (bp, hp) = to;
    let f = support_floor(lambda, from, bp);
    let c = lift(f, h_of_xi(from, xi_cut));
    if !(bp > 0.0 && bp < from.b && hp > f && hp < c) {
        return 0.0;
    }
    1.0 / (from.b * 2.0 * ((hp - f) * (c - f)).sqrt())
}

/// Exact sampler for `p^(lambda)(s, .)` by rejection.
///
/// The main proposal draws `(b', h~)` from the idealized kernel and lifts the height to
/// `h' = (h~^2 + f(b')^2)^{1/2}`, which maps onto the finite support and reproduces the
/// inverse square-root growth of `p^(lambda)` at its floor `f`. Heights with `xi` beyond
/// a cut come from a separate floor component; the cut is the first band whose ratio
/// exceeds `BAND_RATIO_CUT`.
///
/// The envelope is piecewise, with one constant per `xi` band and one for the floor
/// component; mixture weights are the envelope masses. Constants depend on the state
/// only through `(T, kappa)`; they are computed on first use per bucket of width
/// `2^{1/4}` in both parameters, as 1.5 times the largest ratio over a grid evaluated
/// at the bucket corners and center.
#[derive(Clone, Debug)]
pub struct FiniteKernelSampler {
    lambda: f64,
    envelopes: HashMap<(i64, i64), Envelope>,
    proposals: u64,
    accepted: u64,
}

impl FiniteKernelSampler {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be positive, got {lambda}"
            )));
        }
        Ok(Self {
            lambda,
            envelopes: HashMap::new(),
            proposals: 0,
            accepted: 0,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals as f64
    }

    pub fn buckets(&self) -> usize {
        self.envelopes.len()
    }

    /// Envelope density at `to`, an upper bound of `p^(lambda)(s, to)`.
    fn envelope_density(&self, env: &Envelope, from: &ChainState, to: (f64, f64)) -> f64 {
        let ht = unlift(support_floor(self.lambda, from, to.0), to.1);
        if !(ht > 0.0 && ht < from.h) {
            return 0.0;
        }
        let xi = xi_of(from, ht);
        if xi >= env.xi_cut() {
            env.floor * floor_density(self.lambda, from, env.xi_cut(), to)
        } else {
            env.band[band_of(xi)] * lifted_ideal_density(self.lambda, from, to)
        }
    }

    fn envelope(&mut self, s: &ChainState) -> Envelope {
        let lt = s.t().log2() * BUCKETS_PER_OCTAVE;
        let lk = s.kappa(self.lambda).log2() * BUCKETS_PER_OCTAVE;
        let key = (lt.floor() as i64, lk.floor() as i64);
        if let Some(env) = self.envelopes.get(&key) {
            return env.clone();
        }
        let corners: Vec<ChainState> = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5)]
            .iter()
            .map(|(dt, dk)| {
                let t = ((key.0 as f64 + dt) / BUCKETS_PER_OCTAVE).exp2();
                let kappa = ((key.1 as f64 + dk) / BUCKETS_PER_OCTAVE).exp2();
                representative_state(self.lambda, t, kappa)
            })
            .collect();
        let mut band = [0.0f64; BANDS];
        for c in &corners {
            let b = self.scan_bands(c);
            for j in 0..BANDS {
                band[j] = band[j].max(b[j]);
            }
        }
        let cut = band
            .iter()
            .position(|&m| m > BAND_RATIO_CUT)
            .unwrap_or(BANDS);
        let floor = corners
            .iter()
            .map(|c| self.scan_floor(c, XI_EDGES[cut]))
            .fold(0.0, f64::max);
        let env = Envelope::new(
            band.map(|m| ENVELOPE_INFLATION * m),
            cut,
            ENVELOPE_INFLATION * floor,
        );
        self.envelopes.insert(key, env.clone());
        env
    }

    /// Largest ratios of `p^(lambda)` to the lifted idealized density per band, over a
    /// grid at the state `from`.
    fn scan_bands(&self, from: &ChainState) -> [f64; BANDS] {
        let us: Vec<f64> = scan_probabilities()
            .into_iter()
            .map(beta22_quantile)
            .collect();
        let mut band = [0.0f64; BANDS];
        for (j, m) in band.iter_mut().enumerate() {
            let (lo, hi) = (XI_EDGES[j], XI_EDGES[j + 1]);
            for xi in (0..=6).map(|i| lo + (hi - lo) * i as f64 / 6.0) {
                let ht = h_of_xi(from, xi);
                for &u in &us {
                    let bp = u * from.b;
                    let to = (bp, lift(support_floor(self.lambda, from, bp), ht));
                    let q = lifted_ideal_density(self.lambda, from, to);
                    if q > 0.0 {
                        *m = m.max(finite_kernel_density(self.lambda, from, to) / q);
                    }
                }
            }
        }
        band
    }

    /// Largest ratio of `p^(lambda)` to the floor density for the given cut.
    fn scan_floor(&self, from: &ChainState, xi_cut: f64) -> f64 {
        let us: Vec<f64> = scan_probabilities()
            .into_iter()
            .map(beta22_quantile)
            .collect();
        let mut floor: f64 = 0.0;
        for &u in &us {
            let bp = u * from.b;
            let f = support_floor(self.lambda, from, bp);
            let c = lift(f, h_of_xi(from, xi_cut));
            for v in [
                1e-6, 1e-4, 1e-3, 0.01, 0.03, 0.1, 0.2, 0.3, 0.5, 0.7, 0.8, 0.9, 0.97, 0.99, 0.999,
            ] {
                let to = (bp, f + (c - f) * v * v);
                let q = floor_density(self.lambda, from, xi_cut, to);
                if q > 0.0 {
                    floor = floor.max(finite_kernel_density(self.lambda, from, to) / q);
                }
            }
        }
        floor
    }

    /// One exact draw from `p^(lambda)(s, .)`.
    pub fn step(&mut self, s: &ChainState, rng: &mut RngStream) -> Result<ChainState> {
        if self.lambda.is_infinite() || s.terminal {
            return Ok(ideal_step(s, rng).0);
        }
        let env = self.envelope(s);
        if !(env.total() > 0.0) {
            return Err(Error::EnvelopeFailure {
                context: format!(
                    "empty envelope at lambda={} from (b, h)=({}, {})",
                    self.lambda, s.b, s.h
                ),
                ratio: 0.0,
                envelope: 0.0,
            });
        }
        loop {
            self.proposals += 1;
            let pick = rng.uniform() * env.total();
            let j = env
                .cumulative
                .iter()
                .position(|&c| pick < c)
                .unwrap_or(FLOOR);
            let to = if j == FLOOR {
                let bp = s.b * rng.uniform_pos();
                let v = rng.uniform();
                if bp >= s.b || v == 0.0 {
                    continue;
                }
                let f = support_floor(self.lambda, s, bp);
                let c = lift(f, h_of_xi(s, env.xi_cut()));
                (bp, f + (c - f) * v * v)
            } else {
                let (lo, hi) = (XI_EDGES[j], XI_EDGES[j + 1]);
                let span = 1.0 - (lo - hi).exp();
                let xi = lo - (1.0 - rng.uniform() * span).ln();
                let bp = sample_beta22(rng) * s.b;
                (bp, lift(support_floor(self.lambda, s, bp), h_of_xi(s, xi)))
            };
            let e = self.envelope_density(&env, s, to);
            let p = finite_kernel_density(self.lambda, s, to);
            if p > e {
                return Err(Error::EnvelopeFailure {
                    context: format!(
                        "finite kernel at lambda={} from (b, h)=({}, {}) to ({}, {}), ratio relative to the envelope",
                        self.lambda, s.b, s.h, to.0, to.1
                    ),
                    ratio: p / e,
                    envelope: 1.0,
                });
            }
            if rng.uniform() * e < p {
                self.accepted += 1;
                return Ok(ChainState::with_n(to.0, to.1, s.n + 1));
            }
        }
    }
}

/// A state with prescribed `(T, kappa)`: `kappa = lambda^{-2/3} T / b^2` fixes `b`,
/// then `h = b^3 / T`.
fn representative_state(lambda: f64, t: f64, kappa: f64) -> ChainState {
    let b = if lambda.is_infinite() {
        1.0
    } else {
        (lambda.powf(-2.0 / 3.0) * t / kappa).sqrt()
    };
    ChainState::new(b, b * b * b / t)
}

fn scan_probabilities() -> Vec<f64> {
    let mut p = vec![1e-6, 1e-4, 1e-3];
    let n = 30;
    for i in 0..n {
        p.push((i as f64 + 0.5) / n as f64);
    }
    p.extend([1.0 - 1e-3, 1.0 - 1e-4, 1.0 - 1e-6, 1.0 - 1e-9]);
    p
}

/// Quantile of Beta(2, 2), whose CDF is `3x^2 - 2x^3`.
pub fn beta22_quantile(p: f64) -> f64 {
    0.5 - ((1.0 - 2.0 * p).asin() / 3.0).sin()
}

/// Convenience single draw from `p^(lambda)(s, .)`; builds a fresh sampler.
pub fn finite_step(lambda: f64, s: &ChainState, rng: &mut RngStream) -> Result<ChainState> {
    FiniteKernelSampler::new(lambda)?.step(s, rng)
}

/// Maximal residual-rejection attempts before a coupled step is declared failed.
pub const RESIDUAL_MAX_ATTEMPTS: u64 = 10_000_000;

/// One step of the maximal coupling of `p^(lambda)` and `p^(inf)`.
///
/// While coupled: draw `X ~ p^(lambda)`; keep it for both chains with probability
/// `min(1, p^(inf)(X) / p^(lambda)(X))`, otherwise draw the idealized state from the
/// normalized residual `(p^(inf) - p^(lambda))_+` and decouple. Once decoupled the two
/// chains step independently.
pub fn coupled_step(
    sampler: &mut FiniteKernelSampler,
    pair: &CoupledPair,
    rng: &mut RngStream,
) -> Result<CoupledPair> {
    let lambda = sampler.lambda();
    if !pair.coupled {
        let finite = sampler.step(&pair.finite, rng)?;
        let ideal = ideal_step(&pair.ideal, rng).0;
        return Ok(CoupledPair {
            finite,
            ideal,
            coupled: false,
        });
    }
    let s = pair.finite;
    let x = sampler.step(&s, rng)?;
    let p = finite_kernel_density(lambda, &s, (x.b, x.h));
    let q = ideal_kernel_density(&s, (x.b, x.h));
    if rng.uniform() * p <= q {
        return Ok(CoupledPair {
            finite: x,
            ideal: x,
            coupled: true,
        });
    }
    for _ in 0..RESIDUAL_MAX_ATTEMPTS {
        let (y, _) = ideal_step(&s, rng);
        let qy = ideal_kernel_density(&s, (y.b, y.h));
        let py = finite_kernel_density(lambda, &s, (y.b, y.h));
        if rng.uniform() * qy > py {
            return Ok(CoupledPair {
                finite: x,
                ideal: y,
                coupled: false,
            });
        }
    }
    Err(Error::NumericFailure {
        context: format!("residual draw of the maximal coupling at lambda={lambda}"),
        residual: 1.0 / RESIDUAL_MAX_ATTEMPTS as f64,
    })
}

/// `T' = beta^3 (T + (3/2) xi)`, `W' = beta^2 (W + (3/2) xi)`.
pub fn shape_step(s: &ShapeState, beta: f64, xi: f64) -> ShapeState {
    ShapeState {
        t: beta * beta * beta * (s.t + 1.5 * xi),
        w: beta * beta * (s.w + 1.5 * xi),
    }
}

/// One draw of the stationary `T = (3/2) T_1^3 T_2 T_3`, with `T_1 ~ Beta(2,2)`,
/// `T_2 ~ Gamma(5/3)` and `T_3 ~ Beta(2, 2/3)`.
pub fn sample_limit_t(rng: &mut RngStream) -> f64 {
    let t1 = sample_beta22(rng);
    let t2 = sample_gamma(5.0 / 3.0, rng).expect("valid constant shape");
    let t3 = sample_beta(2.0, 2.0 / 3.0, rng).expect("valid constant parameters");
    1.5 * t1 * t1 * t1 * t2 * t3
}

/// Threshold `lambda^{(eps0 - 1)/3}` of the stopping time.
pub fn tau_threshold(lambda: f64, eps0: f64) -> f64 {
    lambda.powf((eps0 - 1.0) / 3.0)
}

/// `tau_lambda(eps0) = inf{n >= 1 : B_n < lambda^{(eps0-1)/3}}` along an idealized trace.
pub fn stopping_time_tau(lambda: f64, eps0: f64, trace: &[ChainState]) -> Result<usize> {
    let thr = tau_threshold(lambda, eps0);
    trace
        .iter()
        .enumerate()
        .skip(1)
        .find(|(_, s)| s.b < thr)
        .map(|(n, _)| n)
        .ok_or(Error::NotCrossed {
            steps: trace.len().saturating_sub(1),
        })
}

/// Good set `E(eps1) = {b^3 <= lambda^{eps1} h, b <= lambda^{eps1}}`.
pub fn in_good_set(lambda: f64, s: &ChainState, eps1: f64) -> bool {
    let l = lambda.powf(eps1);
    s.b * s.b * s.b <= l * s.h && s.b <= l
}

/// Numeric values of the coupling integrals at state `s`:
/// `leak = int_{outside E_(b,h)} p^(inf)` and `l1 = int_{E_(b,h)} |p^(lambda) - p^(inf)|`,
/// with `E_(b,h)(eps1, eps2) = {b'^3 <= lambda^{eps1} h', b' >= lambda^{-eps2} b}`.
pub fn kernel_discrepancy(lambda: f64, s: &ChainState, eps1: f64, eps2: f64) -> Result<(f64, f64)> {
    let (b, h) = (s.b, s.h);
    let b_lo = lambda.powf(-eps2) * b;
    let h_floor = |bp: f64| lambda.powf(-eps1) * bp * bp * bp;
    let x = b_lo / b;
    let head = 3.0 * x * x - 2.0 * x * x * x;
    let tail = adaptive(
        |bp| ideal_mass_in_h(s, bp, 0.0, h_floor(bp).min(h)),
        b_lo,
        b,
        1e-14,
        1e-10,
        2000,
    )?;
    let leak = head + tail.value;
    let l1 = adaptive(
        |bp| {
            let lo = h_floor(bp);
            let f = support_floor(lambda, s, bp);
            // Below the support floor only the idealized kernel contributes.
            let below = if lo < f {
                ideal_mass_in_h(s, bp, lo, f.min(h))
            } else {
                0.0
            };
            let diff = |to: (f64, f64)| {
                (finite_kernel_density(lambda, s, to) - ideal_kernel_density(s, to)).abs()
            };
            let inside = integrate_lifted(lambda, s, bp, lo.max(f), h, diff);
            let above =
                integrate_lifted(lambda, s, bp, lo.max(h), sliver_top(lambda, s, bp), |to| {
                    finite_kernel_density(lambda, s, to)
                });
            match (inside, above) {
                (Ok(i), Ok(a)) => below + i + a,
                _ => f64::NAN,
            }
        },
        b_lo,
        b,
        1e-12,
        1e-6,
        2000,
    )?;
    if !l1.value.is_finite() {
        return Err(Error::NumericFailure {
            context: format!("l1 discrepancy at lambda={lambda}"),
            residual: f64::NAN,
        });
    }
    Ok((leak, l1.value))
}

/// Total mass of `p^(lambda)(s, .)` over `S_(b,h)`.
pub fn kernel_mass(lambda: f64, s: &ChainState) -> Result<f64> {
    let q = adaptive(
        |bp| {
            let f = support_floor(lambda, s, bp);
            let dens = |to: (f64, f64)| finite_kernel_density(lambda, s, to);
            match (
                integrate_lifted(lambda, s, bp, f, s.h, dens),
                integrate_lifted(lambda, s, bp, s.h, sliver_top(lambda, s, bp), dens),
            ) {
                (Ok(a), Ok(b)) => a + b,
                _ => f64::NAN,
            }
        },
        0.0,
        s.b,
        1e-13,
        1e-10,
        2000,
    )?;
    if !q.value.is_finite() {
        return Err(Error::NumericFailure {
            context: format!("kernel mass at lambda={lambda}"),
            residual: f64::NAN,
        });
    }
    Ok(q.value)
}

/// `int_lo^hi p^(inf)((b, h), (b', h')) dh'` in closed form, for `hi <= h`.
fn ideal_mass_in_h(s: &ChainState, bp: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo || bp <= 0.0 || bp >= s.b {
        return 0.0;
    }
    let c = (2.0 / 3.0) * s.b * s.b * s.b;
    let e = |t: f64| {
        if t > 0.0 {
            (-c * (1.0 / t - 1.0 / s.h)).exp()
        } else {
            0.0
        }
    };
    4.0 * (s.b - bp) * bp / c * (e(hi) - e(lo))
}

/// Integral of `g(b', h')` over `h'` in `(lo, hi)`, both at or above the support floor
/// `f`, in the lifted variable `h~ = sqrt(h'^2 - f^2)` which absorbs the inverse
/// square-root growth of `p^(lambda)` at `f`.
fn integrate_lifted<F: Fn((f64, f64)) -> f64>(
    lambda: f64,
    s: &ChainState,
    bp: f64,
    lo: f64,
    hi: f64,
    g: F,
) -> Result<f64> {
    if hi <= lo {
        return Ok(0.0);
    }
    let f = support_floor(lambda, s, bp);
    let (a, b) = (unlift(f, lo), unlift(f, hi));
    let q = adaptive(
        |ht| {
            let hp = lift(f, ht);
            if hp <= f {
                0.0
            } else {
                g((bp, hp)) * ht / hp
            }
        },
        a,
        b,
        1e-15,
        1e-9,
        500,
    )?;
    Ok(q.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_statistic;
    use proptest::prelude::*;

    const IDEAL_AT_HALF: f64 = 2.053_668_476_130_368_1; // 4 exp(-2/3)
    const CRESCENT_1E8: f64 = 0.666_666_666_689_647_3;

    #[test]
    fn ideal_density_examples() {
        let s = ChainState::new(1.0, 1.0);
        assert!((ideal_kernel_density(&s, (0.5, 0.5)) - IDEAL_AT_HALF).abs() < 1e-14);
        assert!((4.0 * (-2.0f64 / 3.0).exp() - IDEAL_AT_HALF).abs() < 1e-15);
        assert_eq!(ideal_kernel_density(&s, (1.0, 0.5)), 0.0);
        assert_eq!(ideal_kernel_density(&s, (0.5, 1.0)), 0.0);
        let m = kernel_mass(f64::INFINITY, &s).unwrap();
        assert!((m - 1.0).abs() < 1e-6, "{m}");
    }

    #[test]
    fn ideal_step_forced_noise() {
        let s = ChainState::new(0.8, 0.9);
        let t = ideal_transition(&s, StepNoise { beta: 0.5, xi: 0.0 });
        assert_eq!(t.h, 0.9);
        assert_eq!(t.b, 0.4);
        let t = ideal_transition(&s, StepNoise { beta: 0.5, xi: 1.3 });
        let back = ideal_noise_between(&s, &t);
        assert!((back.xi - 1.3).abs() < 1e-12 && (back.beta - 0.5).abs() < 1e-15);
    }

    #[test]
    fn ideal_step_matches_density_chi_square() {
        // 2-D chi-square on a 5x5 grid of (b'/b, H'-quantile) cells whose
        // probabilities are computed by direct quadrature of the density.
        let s = ChainState::new(1.0, 1.0);
        let mut rng = RngStream::new(21, 0);
        let n = 100_000;
        let b_edges = [0.0, 0.25, 0.45, 0.6, 0.8, 1.0];
        let h_edges = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];
        let mut counts = [[0usize; 5]; 5];
        for _ in 0..n {
            let (t, _) = ideal_step(&s, &mut rng);
            let i = b_edges
                .windows(2)
                .position(|w| t.b >= w[0] && t.b < w[1])
                .unwrap();
            let j = h_edges
                .windows(2)
                .position(|w| t.h >= w[0] && t.h < w[1])
                .unwrap();
            counts[i][j] += 1;
        }
        let mut chi2 = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                let p = adaptive(
                    |bp| {
                        adaptive(
                            |hp| ideal_kernel_density(&s, (bp, hp)),
                            h_edges[j].max(1e-12),
                            h_edges[j + 1],
                            1e-15,
                            1e-11,
                            200,
                        )
                        .unwrap()
                        .value
                    },
                    b_edges[i],
                    b_edges[i + 1],
                    1e-14,
                    1e-10,
                    200,
                )
                .unwrap()
                .value;
                let e = p * n as f64;
                chi2 += (counts[i][j] as f64 - e).powi(2) / e;
            }
        }
        // 24 degrees of freedom, 0.1% critical value 51.18.
        assert!(chi2 < 51.18, "chi2 {chi2}");
    }

    #[test]
    fn lyapunov_exponent_of_half_basis() {
        let mut total = 0.0;
        for c in 0..200u64 {
            let mut rng = RngStream::new(22, c);
            let mut logb = 0.0;
            for _ in 0..2000 {
                logb += sample_beta22(&mut rng).ln();
            }
            total += -logb / 2000.0;
        }
        let mean = total / 200.0;
        assert!((mean / (5.0 / 6.0) - 1.0).abs() < 0.02, "{mean}");
    }

    #[test]
    fn crescent_examples() {
        let s = ChainState::new(1.0, 1.0);
        let a = crescent_area(1e8, &s, (0.5, 0.5)).unwrap();
        assert!((a - CRESCENT_1E8).abs() < 1e-7, "{a}");
        assert!((a - 2.0 / 3.0).abs() < 1e-3);
        let lam = 1e3;
        let bp = 0.4;
        let top = sliver_top(lam, &s, bp);
        let a = crescent_unchecked(lam, &s, (bp, top));
        assert!(a.abs() < 1e-9, "{a}");
        assert!(crescent_area(lam, &s, (0.4, 2.0)).is_err());
    }

    #[test]
    fn crescent_nonnegative_on_support() {
        let mut rng = RngStream::new(23, 0);
        for _ in 0..10_000 {
            let lam = 10f64.powf(rng.uniform_in(1.0, 7.0));
            let s = ChainState::new(rng.uniform_in(0.05, 2.0), rng.uniform_in(0.05, 2.0));
            let bp = s.b * rng.uniform_pos();
            if bp >= s.b {
                continue;
            }
            let lo = support_floor(lam, &s, bp);
            let hi = sliver_top(lam, &s, bp);
            let hp = lo + (hi - lo) * rng.uniform_pos();
            if let Ok(a) = crescent_area(lam, &s, (bp, hp)) {
                assert!(a >= -1e-9 * (1.0 + lam.powf(2.0 / 3.0) * s.b * s.b), "{a}");
            }
        }
    }

    #[test]
    fn finite_density_converges_and_is_normalized() {
        let s = ChainState::new(1.0, 1.0);
        let r = finite_kernel_density(1e6, &s, (0.5, 0.5)) / ideal_kernel_density(&s, (0.5, 0.5));
        assert!((r - 1.0).abs() < 1e-2, "{r}");
        let m = kernel_mass(1e4, &s).unwrap();
        assert!((m - 1.0).abs() < 1e-3, "{m}");
        let m = kernel_mass(1e2, &s).unwrap();
        assert!((m - 1.0).abs() < 1e-3, "{m}");
        // Positive on the sliver above h where the idealized kernel vanishes.
        let lam = 1e2;
        let hp = 0.5 * (1.0 + sliver_top(lam, &s, 0.5));
        assert!(hp > 1.0 && finite_kernel_density(lam, &s, (0.5, hp)) > 0.0);
    }

    #[test]
    fn finite_step_matches_ideal_at_large_lambda() {
        let s = ChainState::new(1.0, 1.0);
        let mut sampler = FiniteKernelSampler::new(1e6).unwrap();
        let mut rng = RngStream::new(24, 0);
        let mut rng2 = RngStream::new(24, 1);
        let n = 100_000;
        let a: Vec<f64> = (0..n)
            .map(|_| sampler.step(&s, &mut rng).unwrap().b)
            .collect();
        let b: Vec<f64> = (0..n).map(|_| ideal_step(&s, &mut rng2).0.b).collect();
        let d = ks_statistic(&a, &b);
        assert!(d < 0.01, "{d}");
    }

    #[test]
    fn finite_step_matches_density_at_small_lambda() {
        let lam = 1e2;
        let s = ChainState::new(1.0, 1.0);
        let mut sampler = FiniteKernelSampler::new(lam).unwrap();
        let mut rng = RngStream::new(25, 0);
        let n = 100_000;
        let b_edges = [0.0, 0.3, 0.5, 0.7, 1.0];
        let h_edges = [0.0, 0.3, 0.5, 0.7, 0.9, 2.0];
        let mut counts = [[0usize; 5]; 4];
        for _ in 0..n {
            let t = sampler.step(&s, &mut rng).unwrap();
            assert!(in_support(lam, &s, (t.b, t.h)));
            let i = b_edges
                .windows(2)
                .position(|w| t.b >= w[0] && t.b < w[1])
                .unwrap();
            let j = h_edges
                .windows(2)
                .position(|w| t.h >= w[0] && t.h < w[1])
                .unwrap();
            counts[i][j] += 1;
        }
        let acc = sampler.acceptance_rate();
        assert!(acc > 0.5, "acceptance {acc}");
        let mut chi2 = 0.0;
        for i in 0..4 {
            for j in 0..5 {
                let p = adaptive(
                    |bp| {
                        let top = sliver_top(lam, &s, bp).min(h_edges[j + 1]);
                        let lo = h_edges[j].max(support_floor(lam, &s, bp));
                        if top <= lo {
                            return 0.0;
                        }
                        adaptive(
                            |hp| finite_kernel_density(lam, &s, (bp, hp)),
                            lo,
                            top,
                            1e-15,
                            1e-11,
                            400,
                        )
                        .unwrap()
                        .value
                    },
                    b_edges[i],
                    b_edges[i + 1],
                    1e-14,
                    1e-10,
                    400,
                )
                .unwrap()
                .value;
                let e = p * n as f64;
                chi2 += (counts[i][j] as f64 - e).powi(2) / e;
            }
        }
        // 19 degrees of freedom, 0.1% critical value 43.82.
        assert!(chi2 < 43.82, "chi2 {chi2}");
    }

    #[test]
    fn coupling_at_infinity_never_splits() {
        let mut sampler = FiniteKernelSampler::new(f64::INFINITY).unwrap();
        let mut rng = RngStream::new(26, 0);
        let mut pair = CoupledPair::new(ChainState::new(0.7, 1.0));
        for _ in 0..200 {
            pair = coupled_step(&mut sampler, &pair, &mut rng).unwrap();
            assert!(pair.coupled);
            assert_eq!(pair.finite, pair.ideal);
        }
    }

    #[test]
    fn coupling_keeps_bit_identity_and_decouples_at_small_lambda() {
        let mut sampler = FiniteKernelSampler::new(20.0).unwrap();
        let mut rng = RngStream::new(27, 0);
        let mut splits = 0;
        for _ in 0..500 {
            let mut pair = CoupledPair::new(ChainState::new(1.0, 1.0));
            for _ in 0..3 {
                pair = coupled_step(&mut sampler, &pair, &mut rng).unwrap();
                if pair.coupled {
                    assert_eq!(pair.finite, pair.ideal);
                }
            }
            if !pair.coupled {
                splits += 1;
                assert_ne!(pair.finite, pair.ideal);
            }
        }
        assert!(splits > 0);
    }

    #[test]
    fn shape_step_consistency() {
        let s = ShapeState { t: 0.3, w: -0.2 };
        assert_eq!(shape_step(&s, 1.0, 0.0), s);
        let mut rng = RngStream::new(28, 0);
        let mut c = ChainState::new(0.6, 1.0);
        let mut sh = ShapeState { t: c.t(), w: 0.0 };
        for _ in 0..40 {
            let (next, nz) = ideal_step(&c, &mut rng);
            sh = shape_step(&sh, nz.beta, nz.xi);
            assert!((sh.t / next.t() - 1.0).abs() < 1e-12);
            let xi = (2.0 / 3.0) * c.b.powi(3) * (1.0 / next.h - 1.0 / c.h);
            assert!((xi - nz.xi).abs() <= 1e-10 * nz.xi.max(1.0));
            assert!(next.b < c.b && next.h < c.h);
            c = next;
        }
    }

    #[test]
    fn limit_t_moments() {
        let mut rng = RngStream::new(29, 0);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_limit_t(&mut rng)).collect();
        for k in 1..=2 {
            let p: Vec<f64> = xs.iter().map(|x| x.powi(k)).collect();
            let m = p.iter().sum::<f64>() / n as f64;
            let v = p.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n as f64 - 1.0);
            let exact = crate::distributions::t_moment_closed_form(k as u32);
            assert!(
                (m - exact).abs() < 4.0 * (v / n as f64).sqrt(),
                "k={k}: {m} vs {exact}"
            );
        }
    }

    #[test]
    fn chain_t_converges_to_stationary_law() {
        let n = 100_000;
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        let mut rng = RngStream::new(30, 0);
        for _ in 0..n {
            let mut s = ShapeState { t: 1.0, w: 0.0 };
            for _ in 0..200 {
                s = shape_step(&s, sample_beta22(&mut rng), sample_exp1(&mut rng));
            }
            a.push(s.t);
            b.push(sample_limit_t(&mut rng));
        }
        assert!(ks_statistic(&a, &b) < 0.01);
    }

    #[test]
    fn stationary_law_is_invariant() {
        let mut rng = RngStream::new(31, 0);
        let n = 100_000;
        let t: Vec<f64> = (0..n).map(|_| sample_limit_t(&mut rng)).collect();
        let t2: Vec<f64> = t
            .iter()
            .map(|&x| {
                shape_step(
                    &ShapeState { t: x, w: 0.0 },
                    sample_beta22(&mut rng),
                    sample_exp1(&mut rng),
                )
                .t
            })
            .collect();
        assert!(ks_statistic(&t, &t2) < 0.01);
    }

    #[test]
    fn w_t_law_forgets_initial_condition() {
        let mut rng = RngStream::new(32, 0);
        let n = 100_000;
        let run = |start: ShapeState, rng: &mut RngStream| {
            let mut s = start;
            for _ in 0..200 {
                s = shape_step(&s, sample_beta22(rng), sample_exp1(rng));
            }
            s
        };
        let a: Vec<ShapeState> = (0..n)
            .map(|_| run(ShapeState { t: 1.0, w: 0.0 }, &mut rng))
            .collect();
        let b: Vec<ShapeState> = (0..n)
            .map(|_| run(ShapeState { t: 5.0, w: 5.0 }, &mut rng))
            .collect();
        let aw: Vec<f64> = a.iter().map(|s| s.w).collect();
        let bw: Vec<f64> = b.iter().map(|s| s.w).collect();
        let at: Vec<f64> = a.iter().map(|s| s.t).collect();
        let bt: Vec<f64> = b.iter().map(|s| s.t).collect();
        assert!(ks_statistic(&aw, &bw) < 0.01);
        assert!(ks_statistic(&at, &bt) < 0.01);
    }

    #[test]
    fn paired_half_bases_keep_constant_ratio() {
        let mut rng = RngStream::new(33, 0);
        let mut a = ChainState::new(0.9, 1.0);
        let mut b = ChainState::new(0.3, 0.7);
        let r0 = a.b / b.b;
        for _ in 0..50 {
            let nz = StepNoise {
                beta: sample_beta22(&mut rng),
                xi: sample_exp1(&mut rng),
            };
            a = ideal_transition(&a, nz);
            b = ideal_transition(&b, nz);
            assert!((a.b / b.b / r0 - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tau_examples() {
        let lam = 1e6;
        let thr = tau_threshold(lam, 0.4);
        let trace = vec![
            ChainState::new(thr / 2.0, 1.0),
            ChainState::new(thr * 2.0, 1.0),
            ChainState::new(thr / 3.0, 1.0),
        ];
        assert_eq!(stopping_time_tau(lam, 0.4, &trace).unwrap(), 2);
        assert!(matches!(
            stopping_time_tau(lam, 0.4, &trace[..2]),
            Err(Error::NotCrossed { .. })
        ));
        let mut rng = RngStream::new(34, 0);
        let (trace, _) = ideal_trace(ChainState::new(1.0, 1.0), 200, &mut rng);
        let mut prev = 0;
        for &l in &[1e2, 1e3, 1e4, 1e6, 1e9] {
            let t = stopping_time_tau(l, 0.4, &trace).unwrap();
            assert!(t >= prev);
            prev = t;
        }
    }

    #[test]
    fn discrepancy_decreases_with_lambda() {
        let s = ChainState::new(1.0, 1.0);
        let mut prev = (f64::INFINITY, f64::INFINITY);
        for &l in &[1e2, 1e4, 1e6] {
            let (leak, l1) = kernel_discrepancy(l, &s, 0.02, 0.02).unwrap();
            assert!((0.0..=1.0).contains(&leak));
            assert!(leak < prev.0 && l1 < prev.1, "lambda={l}: {leak} {l1}");
            prev = (leak, l1);
        }
        assert!(1e6f64.ln() * prev.1 < 0.05);
    }

    #[test]
    fn beta22_quantile_inverts_cdf() {
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let x = beta22_quantile(p);
            assert!((3.0 * x * x - 2.0 * x * x * x - p).abs() < 1e-14);
        }
    }

    proptest! {
        #[test]
        fn ideal_trajectories_strictly_decrease(seed in 0u64..1000, b in 0.05f64..3.0, h in 0.05f64..3.0) {
            let mut rng = RngStream::new(seed, 0);
            let (trace, _) = ideal_trace(ChainState::new(b, h), 30, &mut rng);
            for w in trace.windows(2) {
                prop_assert!(w[1].b < w[0].b && w[1].h < w[0].h);
            }
        }

        #[test]
        fn finite_density_vanishes_off_support(b in 0.1f64..2.0, h in 0.1f64..2.0, u in 1.0f64..2.0, v in 0.0f64..3.0) {
            let s = ChainState::new(b, h);
            prop_assert_eq!(finite_kernel_density(1e3, &s, (u * b, v)), 0.0);
        }
    }
}
