//! The Palm configuration around a typical Voronoi vertex placed at `(0, lambda)`.
//!
//! Conditionally on a vertex at `V_0 = (0, lambda)`, the three nuclei `Z_l, Z_c, Z_r`
//! lie on the circle of radius `lambda + lambda^{-1/3} r` around `V_0`, at angles
//! `lambda^{-2/3} theta` from the downward vertical, and the disk they span is empty.
//! The quadruplet `(r, theta_l, theta_c, theta_r)` has an explicit density for every
//! `lambda` and a limit law as `lambda -> infinity`.

use std::f64::consts::{FRAC_PI_2, SQRT_2};

use serde::{Deserialize, Serialize};

use crate::chain::ChainState;
use crate::distributions::{derive_seed, sample_gamma, sample_order_stats6, RngStream};
use crate::error::{Error, Result};
use crate::quad::GaussLegendre;
use crate::{Point, Side};

/// Radial excess and normalized angles of the three nuclei around the typical vertex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadruplet {
    pub r: f64,
    pub theta_l: f64,
    pub theta_c: f64,
    pub theta_r: f64,
}

impl Quadruplet {
    pub fn new(r: f64, theta_l: f64, theta_c: f64, theta_r: f64) -> Self {
        Self {
            r,
            theta_l,
            theta_c,
            theta_r,
        }
    }

    pub fn thetas(&self) -> [f64; 3] {
        [self.theta_l, self.theta_c, self.theta_r]
    }

    pub fn is_ordered(&self) -> bool {
        self.theta_l < self.theta_c && self.theta_c < self.theta_r
    }

    /// Support of the limit law: `r > 0` and `-sqrt(2r) < theta_l < theta_c < theta_r < sqrt(2r)`.
    pub fn in_limit_support(&self) -> bool {
        let w = (2.0 * self.r).sqrt();
        self.r > 0.0 && self.is_ordered() && -w < self.theta_l && self.theta_r < w
    }

    /// Reflection through the vertical axis; left and right nuclei swap roles.
    pub fn mirrored(&self) -> Self {
        Self::new(self.r, -self.theta_r, -self.theta_c, -self.theta_l)
    }

    /// Angular gap spanned by the first triangle of the given branch.
    pub fn gap(&self, side: Side) -> f64 {
        match side {
            Side::Left => self.theta_c - self.theta_l,
            Side::Right => self.theta_r - self.theta_c,
        }
    }
}

/// Absolute positions of the three nuclei of the typical vertex.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NucleiTriple {
    pub z_l: Point,
    pub z_c: Point,
    pub z_r: Point,
}

impl NucleiTriple {
    pub fn as_array(&self) -> [Point; 3] {
        [self.z_l, self.z_c, self.z_r]
    }
}

/// `x - sin x`, accurate for small `x` where the difference cancels.
pub fn x_minus_sin(x: f64) -> f64 {
    if x.abs() < 0.25 {
        let x2 = x * x;
        let mut term = x * x2 / 6.0;
        let mut sum = term;
        let mut k = 3.0;
        while term.abs() > 1e-18 * sum.abs() {
            term *= -x2 / ((k + 1.0) * (k + 2.0));
            sum += term;
            k += 2.0;
        }
        sum
    } else {
        x - x.sin()
    }
}

/// Area of the circular segment cut from a disk of squared radius `radius_sq` by a
/// chord subtending the half-angle `half_angle` at the center.
pub fn circular_segment_area(radius_sq: f64, half_angle: f64) -> f64 {
    0.5 * radius_sq * x_minus_sin(2.0 * half_angle)
}

/// Area of the cap beyond a chord of half-length `ell` lying at distance `big_l` from
/// the center: `(ell^2 + L^2)(arctan(ell/L) - ell L/(ell^2 + L^2))`, with
/// `arctan(ell/0) = pi/2`.
pub fn cap_area(ell: f64, big_l: f64) -> f64 {
    circular_segment_area(ell * ell + big_l * big_l, ell.atan2(big_l))
}

/// Area of `D(v, rho)` below the x-axis when the center `v` sits at height `v2` above it.
pub fn boundary_cap_area(v2: f64, rho: f64) -> Result<f64> {
    if !(v2 >= 0.0 && rho >= v2 && rho.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "boundary cap needs 0 <= v2 <= rho, got v2={v2}, rho={rho}"
        )));
    }
    Ok(boundary_cap_area_excess(v2, rho - v2))
}

/// Same as [`boundary_cap_area`] with `rho = v2 + excess`; accurate when the excess is
/// tiny compared to `v2`.
pub fn boundary_cap_area_excess(v2: f64, excess: f64) -> f64 {
    let rho = v2 + excess;
    if excess <= 0.0 {
        return 0.0;
    }
    circular_segment_area(rho * rho, half_window(excess, rho))
}

/// `arccos(1 - excess/rho)` evaluated without cancellation.
fn half_window(excess: f64, rho: f64) -> f64 {
    2.0 * (excess / (2.0 * rho)).sqrt().min(1.0).asin()
}

/// Area of the triangle spanned by three unit vectors at angles `phi` (measured from
/// the downward vertical), restricted to the window `|phi| < arccos(v2/rho)`.
pub fn simplex_factor(v2_over_rho: f64, phi_l: f64, phi_c: f64, phi_r: f64) -> f64 {
    if !(v2_over_rho < 1.0) {
        return 0.0;
    }
    simplex_factor_window(v2_over_rho.acos(), phi_l, phi_c, phi_r)
}

fn simplex_factor_window(window: f64, phi_l: f64, phi_c: f64, phi_r: f64) -> f64 {
    if !(-window < phi_l && phi_l < phi_c && phi_c < phi_r && phi_r < window) {
        return 0.0;
    }
    2.0 * (((phi_c - phi_r) / 2.0).sin()
        * ((phi_r - phi_l) / 2.0).sin()
        * ((phi_c - phi_l) / 2.0).sin())
    .abs()
}

/// Normalizing constant `2^{-4/3} 3^{4/3} / Gamma(5/3)` of the limit density.
pub fn limit_density_constant() -> f64 {
    2f64.powf(-4.0 / 3.0) * 3f64.powf(4.0 / 3.0) / statrs::function::gamma::gamma(5.0 / 3.0)
}

/// Limit of `lambda^{4/3} delta(lambda)`: `2^{-2/3} 3^{-4/3} Gamma(5/3)`.
pub fn delta_infinity() -> f64 {
    2f64.powf(-2.0 / 3.0) * 3f64.powf(-4.0 / 3.0) * statrs::function::gamma::gamma(5.0 / 3.0)
}

const LIMIT_EXPONENT: f64 = 4.0 * SQRT_2 / 3.0;

/// Density of the limit quadruplet law.
pub fn limit_quadruplet_density(q: &Quadruplet) -> f64 {
    if !q.in_limit_support() {
        return 0.0;
    }
    limit_density_constant()
        * (-LIMIT_EXPONENT * q.r.powf(1.5)).exp()
        * (q.theta_c - q.theta_l)
        * (q.theta_r - q.theta_c)
        * (q.theta_r - q.theta_l)
}

/// Normalized angular half-window `lambda^{2/3} arccos(lambda / (lambda + lambda^{-1/3} r))`;
/// equals `sqrt(2r)` at `lambda = infinity`.
pub fn angular_window(lambda: f64, r: f64) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    if lambda.is_infinite() {
        return (2.0 * r).sqrt();
    }
    let excess = lambda.powf(-1.0 / 3.0) * r;
    lambda.powf(2.0 / 3.0) * half_window(excess, lambda + excess)
}

/// Unnormalized finite-`lambda` quadruplet density
/// `exp(-a(lambda, rho)) lambda^{-7/3} rho^3 Delta(lambda/rho, lambda^{-2/3} theta)`
/// with `rho = lambda + lambda^{-1/3} r`.
pub fn finite_quadruplet_density(lambda: f64, q: &Quadruplet) -> f64 {
    lambda.powf(-4.0 / 3.0) * finite_quadruplet_density_scaled(lambda, q)
}

/// `lambda^{4/3}` times [`finite_quadruplet_density`], which stays of order one; at
/// `lambda = infinity` it is the limit density times `delta_infinity()`.
pub fn finite_quadruplet_density_scaled(lambda: f64, q: &Quadruplet) -> f64 {
    if !(q.r > 0.0) || !q.is_ordered() {
        return 0.0;
    }
    let w = angular_window(lambda, q.r);
    if !(-w < q.theta_l && q.theta_r < w) {
        return 0.0;
    }
    let d = [
        q.theta_c - q.theta_l,
        q.theta_r - q.theta_c,
        q.theta_r - q.theta_l,
    ];
    if lambda.is_infinite() {
        return 0.25 * (-LIMIT_EXPONENT * q.r.powf(1.5)).exp() * d[0] * d[1] * d[2];
    }
    let s = lambda.powf(-2.0 / 3.0);
    let excess = lambda.powf(-1.0 / 3.0) * q.r;
    let a = boundary_cap_area_excess(lambda, excess);
    let growth = 1.0 + excess / lambda;
    let sines: f64 = d.iter().map(|&di| (s * di / 2.0).sin() / s).product();
    (-a).exp() * growth * growth * growth * 2.0 * sines
}

/// Normalization `delta(lambda)` of the finite-`lambda` quadruplet density.
pub fn delta_lambda(lambda: f64) -> Result<f64> {
    Ok(lambda.powf(-4.0 / 3.0) * delta_lambda_scaled(lambda)?)
}

/// Radial cutoff beyond which `exp(-(4 sqrt 2/3) r^{3/2})` is below `1e-40`.
const R_MAX: f64 = 14.0;

/// `lambda^{4/3} delta(lambda)` by Gauss-Legendre quadrature on `(u, s_l, s_c, s_r)`
/// with `r = u^2` and `theta = w_lambda(r) s` mapping the finite support onto the
/// ordered cube. The result is compared against a run with twice as many radial
/// panels; disagreement beyond `1e-9` relative is reported as a failure.
pub fn delta_lambda_scaled(lambda: f64) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let gl = GaussLegendre::new(32);
    let coarse = delta_scaled_with_panels(lambda, &gl, 4);
    let fine = delta_scaled_with_panels(lambda, &gl, 8);
    let residual = (coarse - fine).abs();
    if !(residual <= 1e-9 * fine.abs()) {
        return Err(Error::NumericFailure {
            context: format!("delta(lambda) at lambda={lambda}"),
            residual,
        });
    }
    Ok(fine)
}

fn delta_scaled_with_panels(lambda: f64, gl: &GaussLegendre, panels: usize) -> f64 {
    let u_max = R_MAX.sqrt();
    let width = u_max / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let (u0, u1) = (p as f64 * width, (p + 1) as f64 * width);
        for (u, wu) in gl.mapped(u0, u1) {
            let r = u * u;
            let w = angular_window(lambda, r);
            let inner = ordered_cube_integral(gl, |sl, sc, sr| {
                finite_quadruplet_density_scaled(
                    lambda,
                    &Quadruplet::new(r, w * sl, w * sc, w * sr),
                )
            });
            total += wu * 2.0 * u * w * w * w * inner;
        }
    }
    total
}

/// Integral over `-1 < s_l < s_c < s_r < 1` by nested Gauss-Legendre rules.
fn ordered_cube_integral<F: FnMut(f64, f64, f64) -> f64>(gl: &GaussLegendre, mut f: F) -> f64 {
    let mut total = 0.0;
    for (sl, wl) in gl.mapped(-1.0, 1.0) {
        for (sc, wc) in gl.mapped(sl, 1.0) {
            for (sr, wr) in gl.mapped(sc, 1.0) {
                total += wl * wc * wr * f(sl, sc, sr);
            }
        }
    }
    total
}

/// One draw of the limit quadruplet: with `G ~ Gamma(8/3)`, six sorted uniforms on
/// `(-1, 1)` and `e` uniform on `{3, 4}`, returns
/// `(1/2 (3G/2)^{2/3}, (3G/2)^{1/3} (U_(1), U_(e), U_(6)))`.
/// Draw order: `G`, then the six uniforms, then `e`.
pub fn sample_limit_quadruplet(rng: &mut RngStream) -> Quadruplet {
    let g = sample_gamma(8.0 / 3.0, rng).expect("valid constant shape");
    let u = sample_order_stats6(rng);
    let mid = if rng.bernoulli_half() { u[3] } else { u[2] };
    quadruplet_from_parts(g, u[0], mid, u[5])
}

/// Deterministic part of [`sample_limit_quadruplet`].
pub fn quadruplet_from_parts(g: f64, u_lo: f64, u_mid: f64, u_hi: f64) -> Quadruplet {
    let s = (1.5 * g).cbrt();
    Quadruplet::new(0.5 * s * s, s * u_lo, s * u_mid, s * u_hi)
}

/// Exact sampler for the finite-`lambda` quadruplet law by rejection.
///
/// Proposals are limit-law draws whose angles are dilated by
/// `w_lambda(R) / sqrt(2R)`, which maps the limit support exactly onto the
/// finite-`lambda` support. The envelope constant is 1.5 times the largest density
/// ratio seen in a pilot scan of `PILOT_SIZE` proposals.
#[derive(Clone, Debug)]
pub struct FiniteQuadrupletSampler {
    lambda: f64,
    envelope: f64,
    pilot_max: f64,
    proposals: u64,
    accepted: u64,
}

impl FiniteQuadrupletSampler {
    pub const PILOT_SIZE: usize = 10_000;
    pub const INFLATION: f64 = 1.5;
    pub const MIN_LAMBDA: f64 = 10.0;
    pub const MIN_ACCEPTANCE: f64 = 1e-3;

    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= Self::MIN_LAMBDA) {
            return Err(Error::InvalidParameter(format!(
                "finite quadruplet sampler needs lambda >= {}, got {lambda}",
                Self::MIN_LAMBDA
            )));
        }
        let mut pilot = RngStream::new(derive_seed(0x5EED_9A1A, lambda.to_bits()), 0);
        let mut pilot_max: f64 = 0.0;
        for _ in 0..Self::PILOT_SIZE {
            let (_, ratio) = Self::propose(lambda, &mut pilot);
            pilot_max = pilot_max.max(ratio);
        }
        Ok(Self {
            lambda,
            envelope: Self::INFLATION * pilot_max,
            pilot_max,
            proposals: 0,
            accepted: 0,
        })
    }

    fn propose(lambda: f64, rng: &mut RngStream) -> (Quadruplet, f64) {
        let q0 = sample_limit_quadruplet(rng);
        let kappa = angular_window(lambda, q0.r) / (2.0 * q0.r).sqrt();
        let q = Quadruplet::new(
            q0.r,
            kappa * q0.theta_l,
            kappa * q0.theta_c,
            kappa * q0.theta_r,
        );
        let proposal = limit_quadruplet_density(&q0) / (kappa * kappa * kappa);
        let target = finite_quadruplet_density_scaled(lambda, &q);
        (q, target / proposal)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn envelope(&self) -> f64 {
        self.envelope
    }

    pub fn pilot_max(&self) -> f64 {
        self.pilot_max
    }

    /// Fraction of proposals accepted so far (NaN before the first proposal).
    pub fn acceptance_rate(&self) -> f64 {
        self.accepted as f64 / self.proposals as f64
    }

    pub fn sample(&mut self, rng: &mut RngStream) -> Result<Quadruplet> {
        loop {
            let (q, ratio) = Self::propose(self.lambda, rng);
            self.proposals += 1;
            if ratio > self.envelope {
                return Err(Error::EnvelopeFailure {
                    context: format!("finite quadruplet at lambda={}", self.lambda),
                    ratio,
                    envelope: self.envelope,
                });
            }
            if rng.uniform() * self.envelope < ratio {
                self.accepted += 1;
                return Ok(q);
            }
            if self.proposals >= Self::PILOT_SIZE as u64
                && self.acceptance_rate() < Self::MIN_ACCEPTANCE
            {
                return Err(Error::EnvelopeFailure {
                    context: format!(
                        "acceptance rate {} at lambda={}",
                        self.acceptance_rate(),
                        self.lambda
                    ),
                    ratio: self.pilot_max,
                    envelope: self.envelope,
                });
            }
        }
    }
}

/// One finite-`lambda` quadruplet. Builds a fresh sampler (with its pilot scan) on
/// every call; use [`FiniteQuadrupletSampler`] directly for repeated draws.
pub fn sample_finite_quadruplet(lambda: f64, rng: &mut RngStream) -> Result<Quadruplet> {
    FiniteQuadrupletSampler::new(lambda)?.sample(rng)
}

/// Positions `(0, lambda) + rho (sin(lambda^{-2/3} theta), -cos(lambda^{-2/3} theta))`.
pub fn nuclei_positions(lambda: f64, q: &Quadruplet) -> Result<NucleiTriple> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "nuclei positions need a finite positive lambda, got {lambda}"
        )));
    }
    let s = lambda.powf(-2.0 / 3.0);
    let excess = lambda.powf(-1.0 / 3.0) * q.r;
    let rho = lambda + excess;
    let place = |theta: f64| -> Result<Point> {
        let phi = s * theta;
        if !(phi.abs() < FRAC_PI_2) {
            return Err(Error::InvalidParameter(format!(
                "nucleus angle {phi} outside (-pi/2, pi/2)"
            )));
        }
        let half = (phi / 2.0).sin();
        Ok([rho * phi.sin(), -excess + 2.0 * rho * half * half])
    };
    Ok(NucleiTriple {
        z_l: place(q.theta_l)?,
        z_c: place(q.theta_c)?,
        z_r: place(q.theta_r)?,
    })
}

/// Initial triangle statistics `(B_0, H_0)` of the given branch.
///
/// For finite `lambda`, with `alpha = lambda^{-2/3} gap / 2` the half-angle at `V_0`
/// between the two nuclei, `B_0 = lambda^{-1/3} rho sin(alpha)` and
/// `H_0 = rho cos(alpha) / lambda`. At `lambda = infinity`, `(gap / 2, 1)`.
pub fn initial_state(lambda: f64, q: &Quadruplet, side: Side) -> ChainState {
    let gap = q.gap(side);
    if lambda.is_infinite() {
        return ChainState::new(0.5 * gap, 1.0);
    }
    let alpha = 0.5 * lambda.powf(-2.0 / 3.0) * gap;
    let rho = lambda + lambda.powf(-1.0 / 3.0) * q.r;
    ChainState::new(
        lambda.powf(-1.0 / 3.0) * rho * alpha.sin(),
        rho / lambda * alpha.cos(),
    )
}
