//! Limiting menhir and finite-`lambda` branch reconstruction.
//!
//! In rescaled coordinates centred at the central nucleus, each limit branch starts at
//! the apex `(-theta_c, 1)`. Its vertex `V_n = (X_n, H_n)` is reached from `V_{n-1}` by
//! moving along the ray towards the target point `-B_{n-1} e_1` (left branch) or
//! `+B_{n-1} e_1` (right branch) until height `H_n`.

use serde::{Deserialize, Serialize};

use crate::chain::{ideal_step, ChainState, ShapeState, StepNoise};
use crate::distributions::RngStream;
use crate::error::{Error, Result};
use crate::palm::{initial_state, sample_limit_quadruplet, Quadruplet};
use crate::{Point, Side};

/// Convex polygonal chain walked down one side of a cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Branch {
    pub side: Side,
    pub vertices: Vec<Point>,
}

impl Branch {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    /// Strictly decreasing second coordinate.
    pub fn is_y_decreasing(&self) -> bool {
        self.vertices.windows(2).all(|w| w[1][1] < w[0][1])
    }

    /// Consecutive edge vectors turn towards the interior of the cell: counterclockwise
    /// on the left branch, clockwise on the right one.
    pub fn is_convex(&self) -> bool {
        let orient = -self.side.sign();
        self.vertices.windows(3).all(|w| {
            let d1 = sub(w[1], w[0]);
            let d2 = sub(w[2], w[1]);
            orient * cross(d1, d2) >= -1e-12 * norm(d1) * norm(d2)
        })
    }

    pub fn mirrored(&self) -> Branch {
        Branch {
            side: self.side.mirror(),
            vertices: self.vertices.iter().map(|p| [-p[0], p[1]]).collect(),
        }
    }
}

/// Truncation bookkeeping of a sampled menhir.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub n_max: usize,
    pub h_min: f64,
    /// Last vertex index reached on the left and right branch.
    pub depth: [usize; 2],
    /// Height of the last vertex on each branch.
    pub last_height: [f64; 2],
}

/// Idealized chain trace of one branch: states `0..=n` and the noise driving them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchTrace {
    pub states: Vec<ChainState>,
    pub noise: Vec<StepNoise>,
}

/// Apex and two branches of the limiting cell, truncated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Menhir {
    pub quadruplet: Quadruplet,
    pub apex: Point,
    pub left: Branch,
    pub right: Branch,
    pub left_trace: BranchTrace,
    pub right_trace: BranchTrace,
    pub truncation: Truncation,
}

impl Menhir {
    pub fn branch(&self, side: Side) -> &Branch {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn trace(&self, side: Side) -> &BranchTrace {
        match side {
            Side::Left => &self.left_trace,
            Side::Right => &self.right_trace,
        }
    }
}

/// Coefficient convention for the apex offset in the closed-form left abscissa.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LeftOffset {
    /// `-(theta_l + theta_c)/2`, consistent with the apex `(-theta_c, 1)`.
    Corrected,
    /// `-(theta_l - theta_c)/2`, the printed variant, kept for comparison only.
    AsPrinted,
}

fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

/// Limit branch vertices `(X_n, H_n)` by the incremental target-point construction,
/// for at most `n_max + 1` vertices.
pub fn limit_branch(q: &Quadruplet, side: Side, trace: &[ChainState], n_max: usize) -> Branch {
    let n = trace.len().min(n_max + 1);
    let mut vertices = Vec::with_capacity(n);
    if n == 0 {
        return Branch { side, vertices };
    }
    let sign = side.sign();
    let mut x = -q.theta_c;
    vertices.push([x, trace[0].h]);
    for k in 1..n {
        let (prev, cur) = (&trace[k - 1], &trace[k]);
        let t = 1.0 - cur.h / prev.h;
        x += t * (sign * prev.b - x);
        vertices.push([x, cur.h]);
    }
    Branch { side, vertices }
}

/// Closed-form abscissae
/// `X_n = -(theta_side + theta_c)/2 H_n + s (B_n + H_n sum_{k<n} (B_k - B_{k+1}) / H_{k+1})`
/// with `s = -1` on the left and `+1` on the right.
pub fn limit_abscissae_closed_form(
    q: &Quadruplet,
    side: Side,
    trace: &[ChainState],
    convention: LeftOffset,
) -> Vec<f64> {
    let sign = side.sign();
    let offset = match (side, convention) {
        (Side::Left, LeftOffset::Corrected) => -0.5 * (q.theta_l + q.theta_c),
        (Side::Left, LeftOffset::AsPrinted) => -0.5 * (q.theta_l - q.theta_c),
        (Side::Right, _) => -0.5 * (q.theta_r + q.theta_c),
    };
    let mut sum = 0.0;
    let mut out = Vec::with_capacity(trace.len());
    for (n, s) in trace.iter().enumerate() {
        if n > 0 {
            sum += (trace[n - 1].b - s.b) / s.h;
        }
        out.push(offset * s.h + sign * (s.b + s.h * sum));
    }
    out
}

/// Perpetuity pairs `(T_n, W_n)` along a limit branch, with `W_n` built from the
/// outward-oriented abscissa `side.sign() * X_n`.
pub fn shape_trace(branch: &Branch, trace: &[ChainState]) -> Vec<ShapeState> {
    branch
        .vertices
        .iter()
        .zip(trace)
        .map(|(v, s)| ShapeState::from_chain(s, branch.side.sign() * v[0]))
        .collect()
}

/// `T_n^2 / W_n^3`, which equals `Y_n / X~_n^3` for the outward-oriented abscissa.
pub fn local_ratio(trace: &[ShapeState], n: usize) -> Result<f64> {
    let s = trace.get(n).ok_or_else(|| {
        Error::InvalidParameter(format!("index {n} beyond trace of length {}", trace.len()))
    })?;
    let r = s.t * s.t / (s.w * s.w * s.w);
    if !r.is_finite() {
        return Err(Error::Degenerate(format!(
            "W_{n} = {} gives a non-finite ratio",
            s.w
        )));
    }
    Ok(r)
}

/// `Y_n / X_n^3` in the unoriented coordinates, i.e. `side.sign() * T_n^2 / W_n^3`.
pub fn signed_local_ratio(side: Side, trace: &[ShapeState], n: usize) -> Result<f64> {
    Ok(side.sign() * local_ratio(trace, n)?)
}

/// Idealized trace started at `start`, stopped after `n_max` steps or before the
/// first height below `h_min`.
pub fn truncated_ideal_trace(
    start: ChainState,
    n_max: usize,
    h_min: f64,
    rng: &mut RngStream,
) -> BranchTrace {
    let mut states = vec![start];
    let mut noise = Vec::new();
    while states.len() <= n_max {
        let cur = *states.last().expect("nonempty");
        let (next, nz) = ideal_step(&cur, rng);
        if next.terminal || next.h < h_min {
            break;
        }
        states.push(next);
        noise.push(nz);
    }
    BranchTrace { states, noise }
}

/// Samples a limit quadruplet and two independent idealized branches.
///
/// The quadruplet is drawn first; each branch then runs on its own stream forked
/// from `rng` (left first).
pub fn build_menhir(rng: &mut RngStream, n_max: usize, h_min: f64) -> Result<Menhir> {
    if n_max < 1 {
        return Err(Error::InvalidParameter("n_max must be at least 1".into()));
    }
    let q = sample_limit_quadruplet(rng);
    let mut left_rng = rng.fork();
    let mut right_rng = rng.fork();
    Ok(build_menhir_with(
        &q,
        &mut left_rng,
        &mut right_rng,
        n_max,
        h_min,
    ))
}

/// Menhir for a given quadruplet and per-branch noise streams.
pub fn build_menhir_with(
    q: &Quadruplet,
    left_rng: &mut RngStream,
    right_rng: &mut RngStream,
    n_max: usize,
    h_min: f64,
) -> Menhir {
    let lt = truncated_ideal_trace(
        initial_state(f64::INFINITY, q, Side::Left),
        n_max,
        h_min,
        left_rng,
    );
    let rt = truncated_ideal_trace(
        initial_state(f64::INFINITY, q, Side::Right),
        n_max,
        h_min,
        right_rng,
    );
    let left = limit_branch(q, Side::Left, &lt.states, n_max);
    let right = limit_branch(q, Side::Right, &rt.states, n_max);
    let truncation = Truncation {
        n_max,
        h_min,
        depth: [lt.states.len() - 1, rt.states.len() - 1],
        last_height: [
            lt.states.last().map_or(1.0, |s| s.h),
            rt.states.last().map_or(1.0, |s| s.h),
        ],
    };
    Menhir {
        quadruplet: *q,
        apex: [-q.theta_c, 1.0],
        left,
        right,
        left_trace: lt,
        right_trace: rt,
        truncation,
    }
}

/// Finite-`lambda` branch in absolute coordinates from `V_0 = (0, lambda)`.
///
/// Edge `k` has length `lambda (H_k - (H_{k+1}^2 - lambda^{-4/3}(B_k^2 - B_{k+1}^2))^{1/2})`;
/// its direction, measured from the downward vertical towards `+x`, starts at
/// `lambda^{-2/3}(theta_c + theta_side)/2` and turns at each vertex by
/// `arcsin(lambda^{-2/3} B_k / (H_{k+1}^2 + lambda^{-4/3} B_{k+1}^2)^{1/2}) - arctan(lambda^{-2/3} B_{k+1} / H_{k+1})`,
/// counterclockwise on the left branch and clockwise on the right one.
pub fn finite_branch(
    lambda: f64,
    q: &Quadruplet,
    side: Side,
    trace: &[ChainState],
) -> Result<Branch> {
    let s23 = lambda.powf(-2.0 / 3.0);
    let s43 = s23 * s23;
    let theta_side = match side {
        Side::Left => q.theta_l,
        Side::Right => q.theta_r,
    };
    let turn_sign = -side.sign();
    let mut angle = 0.5 * s23 * (q.theta_c + theta_side);
    let mut v: Point = [0.0, lambda];
    let mut vertices = vec![v];
    for k in 0..trace.len().saturating_sub(1) {
        let (cur, next) = (&trace[k], &trace[k + 1]);
        let arg = next.h * next.h - s43 * (cur.b * cur.b - next.b * next.b);
        if !(arg >= 0.0) {
            return Err(Error::InconsistentTrace {
                step: k,
                detail: format!("negative squared distance {arg}"),
            });
        }
        let len = lambda * (cur.h - arg.sqrt());
        v = [v[0] + len * angle.sin(), v[1] - len * angle.cos()];
        vertices.push(v);
        let radius = (next.h * next.h + s43 * next.b * next.b).sqrt();
        let turn = (s23 * cur.b / radius).asin() - (s23 * next.b / next.h).atan();
        angle += turn_sign * turn;
    }
    Ok(Branch { side, vertices })
}

/// `F(x, y) = (lambda^{-1/3} x, lambda^{-1} y)`.
pub fn rescale(lambda: f64, p: Point) -> Point {
    [p[0] / lambda.cbrt(), p[1] / lambda]
}

/// Rescaled branch translated so that the rescaled central nucleus sits at the origin.
pub fn rescale_branch(lambda: f64, branch: &Branch, origin: Point) -> Branch {
    let o = rescale(lambda, origin);
    Branch {
        side: branch.side,
        vertices: branch
            .vertices
            .iter()
            .map(|&p| sub(rescale(lambda, p), o))
            .collect(),
    }
}

fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = sub(b, a);
    let ap = sub(p, a);
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    norm([ap[0] - t * ab[0], ap[1] - t * ab[1]])
}

fn point_polyline_distance(p: Point, line: &[Point]) -> f64 {
    if line.len() == 1 {
        return norm(sub(p, line[0]));
    }
    line.windows(2)
        .map(|w| point_segment_distance(p, w[0], w[1]))
        .fold(f64::INFINITY, f64::min)
}

/// Cap on the densified points of a Hausdorff computation.
const MAX_HAUSDORFF_SAMPLES: f64 = 1e7;

fn polyline_length(line: &[Point]) -> f64 {
    line.windows(2).map(|w| norm(sub(w[1], w[0]))).sum()
}

fn densify(line: &[Point], resolution: f64) -> Vec<Point> {
    let mut out = Vec::new();
    for w in line.windows(2) {
        let d = norm(sub(w[1], w[0]));
        let k = (d / resolution).ceil().max(1.0) as usize;
        for i in 0..k {
            let t = i as f64 / k as f64;
            out.push([
                w[0][0] + t * (w[1][0] - w[0][0]),
                w[0][1] + t * (w[1][1] - w[0][1]),
            ]);
        }
    }
    out.extend(line.last());
    out
}

/// Symmetric Hausdorff distance between two polylines; each is densified at
/// `resolution` and compared to the other exactly, so the error is at most
/// `resolution`.
pub fn hausdorff_distance(a: &Branch, b: &Branch, resolution: f64) -> Result<f64> {
    hausdorff_polylines(&a.vertices, &b.vertices, resolution)
}

pub fn hausdorff_polylines(a: &[Point], b: &[Point], resolution: f64) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate(
            "Hausdorff distance of an empty branch".into(),
        ));
    }
    if !(resolution > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "resolution must be positive, got {resolution}"
        )));
    }
    let samples = (polyline_length(a) + polyline_length(b)) / resolution;
    if !(samples <= MAX_HAUSDORFF_SAMPLES) {
        return Err(Error::InvalidParameter(format!(
            "resolution {resolution} needs {samples:.3e} samples, above {MAX_HAUSDORFF_SAMPLES:.0e}"
        )));
    }
    let one_sided = |x: &[Point], y: &[Point]| {
        densify(x, resolution)
            .into_iter()
            .map(|p| point_polyline_distance(p, y))
            .fold(0.0, f64::max)
    };
    Ok(one_sided(a, b).max(one_sided(b, a)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{ideal_trace, ideal_transition, shape_step};
    use crate::palm::nuclei_positions;
    use proptest::prelude::*;

    fn random_limit_branch(
        seed: u64,
        side: Side,
        steps: usize,
    ) -> (Quadruplet, Vec<ChainState>, Vec<StepNoise>) {
        let mut rng = RngStream::new(seed, 0);
        let q = sample_limit_quadruplet(&mut rng);
        let (states, noise) = ideal_trace(initial_state(f64::INFINITY, &q, side), steps, &mut rng);
        (q, states, noise)
    }

    fn rel_to_scale(a: f64, b: f64, scale: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(scale)
    }

    #[test]
    fn apex_and_first_vertex() {
        let (q, trace, _) = random_limit_branch(1, Side::Left, 5);
        for side in Side::BOTH {
            let t: Vec<ChainState> = if side == Side::Left {
                trace.clone()
            } else {
                ideal_trace(
                    initial_state(f64::INFINITY, &q, side),
                    5,
                    &mut RngStream::new(2, 0),
                )
                .0
            };
            let br = limit_branch(&q, side, &t, 100);
            assert_eq!(br.vertices[0], [-q.theta_c, 1.0]);
        }
        let br = limit_branch(&q, Side::Left, &trace, 100);
        let x1 = -0.5 * (q.theta_l + q.theta_c) * trace[1].h - trace[0].b;
        assert!((br.vertices[1][0] - x1).abs() < 1e-14);
    }

    #[test]
    fn closed_form_and_target_points_agree() {
        for seed in 0..1000u64 {
            for side in Side::BOTH {
                let (q, trace, _) = random_limit_branch(seed, side, 50);
                let br = limit_branch(&q, side, &trace, 50);
                let xs = limit_abscissae_closed_form(&q, side, &trace, LeftOffset::Corrected);
                for (n, (v, x)) in br.vertices.iter().zip(&xs).enumerate() {
                    let err = rel_to_scale(v[0], *x, trace[n].b);
                    assert!(err < 1e-10, "seed {seed} {side:?} n={n}: {} vs {x}", v[0]);
                }
            }
        }
    }

    #[test]
    fn printed_left_offset_misses_the_apex() {
        let (q, trace, _) = random_limit_branch(3, Side::Left, 5);
        let xs = limit_abscissae_closed_form(&q, Side::Left, &trace, LeftOffset::AsPrinted);
        assert!((xs[0] + q.theta_c).abs() > 1e-3 || q.theta_l.abs() < 1e-3);
        assert!(xs[0].abs() < 1e-15);
    }

    #[test]
    fn menhir_invariants_hold() {
        let mut rng = RngStream::new(4, 0);
        for _ in 0..1000 {
            let m = build_menhir(&mut rng, 200, 1e-12).unwrap();
            assert_eq!(m.left.vertices[0], m.apex);
            assert_eq!(m.right.vertices[0], m.apex);
            for side in Side::BOTH {
                let b = m.branch(side);
                assert!(b.is_y_decreasing(), "{side:?}");
                assert!(b.is_convex(), "{side:?}");
            }
        }
    }

    #[test]
    fn tail_norm_shrinks_with_depth() {
        let mut rng = RngStream::new(5, 0);
        let mut worst_short: f64 = 0.0;
        let mut worst_long: f64 = 0.0;
        for _ in 0..200 {
            let q = sample_limit_quadruplet(&mut rng);
            let mut l = rng.fork();
            let m_long = build_menhir_with(&q, &mut l.clone(), &mut l.fork(), 1000, 0.0);
            let m_short = build_menhir_with(&q, &mut l.clone(), &mut l.fork(), 20, 0.0);
            for side in Side::BOTH {
                let tail = |b: &Branch| {
                    b.vertices[b.len().saturating_sub(10)..]
                        .iter()
                        .map(|p| norm(*p))
                        .fold(0.0, f64::max)
                };
                worst_short = worst_short.max(tail(m_short.branch(side)));
                worst_long = worst_long.max(tail(m_long.branch(side)));
            }
        }
        assert!(worst_long < worst_short);
        assert!(worst_long < 1e-6, "{worst_long}");
    }

    #[test]
    fn truncation_by_height_is_recorded() {
        let mut rng = RngStream::new(6, 0);
        let m = build_menhir(&mut rng, 10_000, 1e-9).unwrap();
        for (i, side) in Side::BOTH.iter().enumerate() {
            let t = m.trace(*side);
            assert!(t.states.iter().all(|s| s.h >= 1e-9));
            assert_eq!(m.truncation.depth[i], t.states.len() - 1);
            assert_eq!(m.branch(*side).len(), t.states.len());
        }
        assert!(build_menhir(&mut rng, 0, 1e-9).is_err());
    }

    #[test]
    fn mirror_symmetry_is_exact() {
        let mut rng = RngStream::new(7, 0);
        for _ in 0..1000 {
            let q = sample_limit_quadruplet(&mut rng);
            let mut a = rng.fork();
            let mut b = rng.fork();
            let m = build_menhir_with(&q, &mut a.clone(), &mut b.clone(), 60, 0.0);
            let mm = build_menhir_with(&q.mirrored(), &mut b, &mut a, 60, 0.0);
            assert_eq!(mm.left, m.right.mirrored());
            assert_eq!(mm.right, m.left.mirrored());
            assert_eq!(mm.apex, [-m.apex[0], m.apex[1]]);
        }
    }

    #[test]
    fn local_ratio_identity_along_trajectories() {
        for seed in 0..200u64 {
            for side in Side::BOTH {
                let (q, trace, noise) = random_limit_branch(seed, side, 60);
                let br = limit_branch(&q, side, &trace, 60);
                let shapes = shape_trace(&br, &trace);
                let mut rec = shapes[0];
                for n in 0..trace.len() {
                    if n > 0 {
                        rec = shape_step(&rec, noise[n - 1].beta, noise[n - 1].xi);
                        assert!((rec.t / shapes[n].t - 1.0).abs() < 1e-10);
                        let scale = shapes[n].t.max(rec.w.abs());
                        assert!(
                            (rec.w - shapes[n].w).abs() < 1e-10 * scale,
                            "n={n}: {} vs {}",
                            rec.w,
                            shapes[n].w
                        );
                    }
                    let v = br.vertices[n];
                    if v[0] == 0.0 {
                        continue;
                    }
                    let direct = v[1] / v[0].powi(3);
                    let via = signed_local_ratio(side, &shapes, n).unwrap();
                    assert!(
                        (direct / via - 1.0).abs() < 1e-10,
                        "n={n}: {direct} vs {via}"
                    );
                }
            }
        }
    }

    #[test]
    fn local_ratio_fixed_point_and_errors() {
        let s = ShapeState { t: 0.4, w: 0.7 };
        let trace: Vec<ShapeState> =
            std::iter::successors(Some(s), |x| Some(shape_step(x, 1.0, 0.0)))
                .take(5)
                .collect();
        let r0 = local_ratio(&trace, 0).unwrap();
        assert!(trace
            .iter()
            .enumerate()
            .all(|(n, _)| local_ratio(&trace, n).unwrap() == r0));
        assert!(local_ratio(&[ShapeState { t: 1.0, w: 0.0 }], 0).is_err());
        assert!(local_ratio(&trace, 9).is_err());
    }

    #[test]
    fn rescale_examples() {
        let lam: f64 = 1e6;
        assert_eq!(rescale(lam, [0.0, lam]), [0.0, 1.0]);
        let p = rescale(lam, [lam.cbrt(), 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        let (a, b) = ([3.0, -7.0], [0.25, 11.0]);
        let s = rescale(lam, [a[0] + b[0], a[1] + b[1]]);
        let t = [
            rescale(lam, a)[0] + rescale(lam, b)[0],
            rescale(lam, a)[1] + rescale(lam, b)[1],
        ];
        assert!((s[0] - t[0]).abs() < 1e-15 && (s[1] - t[1]).abs() < 1e-15);
    }

    #[test]
    fn hausdorff_examples() {
        let a = Branch {
            side: Side::Left,
            vertices: vec![[0.0, 1.0], [0.0, 0.0]],
        };
        let b = Branch {
            side: Side::Left,
            vertices: vec![[0.3, 1.0], [0.3, 0.0]],
        };
        assert_eq!(hausdorff_distance(&a, &a, 1e-3).unwrap(), 0.0);
        assert!((hausdorff_distance(&a, &b, 1e-3).unwrap() - 0.3).abs() < 1e-12);
        let e = Branch {
            side: Side::Left,
            vertices: vec![],
        };
        assert!(hausdorff_distance(&a, &e, 1e-3).is_err());
        assert!(hausdorff_distance(&a, &b, 0.0).is_err());
        assert!(hausdorff_distance(&a, &b, 1e-12).is_err());
    }

    #[test]
    fn finite_branch_follows_limit_scaling() {
        let q = Quadruplet::new(0.9, -0.8, 0.1, 1.0);
        let noise = StepNoise { beta: 0.6, xi: 0.5 };
        let chain = |start: ChainState| {
            std::iter::successors(Some(start), |s| Some(ideal_transition(s, noise)))
                .take(5)
                .collect::<Vec<_>>()
        };
        let lim = limit_branch(
            &q,
            Side::Left,
            &chain(initial_state(f64::INFINITY, &q, Side::Left)),
            10,
        );
        for &lam in &[1e4, 1e6, 1e8] {
            let trace = chain(initial_state(lam, &q, Side::Left));
            let br = finite_branch(lam, &q, Side::Left, &trace).unwrap();
            assert_eq!(br.vertices[0], [0.0, lam]);
            assert!(br.is_y_decreasing() && br.is_convex());
            for k in 0..trace.len() - 1 {
                let d = norm(sub(br.vertices[k + 1], br.vertices[k])) / lam;
                assert!((d - (trace[k].h - trace[k + 1].h)).abs() < 1.0 / lam);
            }
            let zc = nuclei_positions(lam, &q).unwrap().z_c;
            let h = hausdorff_distance(&rescale_branch(lam, &br, zc), &lim, 1e-4).unwrap();
            assert!(h < 10.0 * lam.powf(-2.0 / 3.0) + 1e-4, "lambda={lam}: {h}");
        }
    }

    #[test]
    fn finite_branch_rejects_inconsistent_trace() {
        let q = Quadruplet::new(0.9, -0.8, 0.1, 1.0);
        let trace = vec![ChainState::new(1.0, 1.0), ChainState::new(0.5, 1e-5)];
        assert!(matches!(
            finite_branch(1e2, &q, Side::Left, &trace),
            Err(Error::InconsistentTrace { .. })
        ));
    }

    proptest! {
        #[test]
        fn hausdorff_triangle_inequality(pts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 6..=12)) {
            let mk = |s: &[(f64, f64)]| Branch { side: Side::Left, vertices: s.iter().map(|&(x, y)| [x, y]).collect() };
            let k = pts.len() / 3;
            let (a, b, c) = (mk(&pts[..k]), mk(&pts[k..2 * k]), mk(&pts[2 * k..]));
            let res = 1e-3;
            let ab = hausdorff_distance(&a, &b, res).unwrap();
            let bc = hausdorff_distance(&b, &c, res).unwrap();
            let ac = hausdorff_distance(&a, &c, res).unwrap();
            prop_assert!(ac <= ab + bc + 2.0 * res);
            prop_assert!((ab - hausdorff_distance(&b, &a, res).unwrap()).abs() < 1e-15);
        }
    }
}
