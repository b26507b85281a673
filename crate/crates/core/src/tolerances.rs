//! Versioned acceptance tolerances and sample sizes. Every experiment reads its
//! thresholds from here; reports echo the table version.

use serde::Serialize;

pub const TABLE_VERSION: &str = "1";

// Moments of T.
/// [DERIVED] agreement radius, in standard errors.
pub const MOMENT_SE_MULTIPLIER: f64 = 4.0;
pub const MOMENT_SAMPLES: usize = 1_000_000;
pub const MOMENT_CHAIN_STEPS: usize = 200;
pub const MOMENT_K_MAX: u32 = 6;
/// [DERIVED] `E[T] = 3/8` from the Gamma-Beta closed form.
pub const MOMENT_T1: f64 = 0.375;
/// [DERIVED] `E[T^2] = 45/88`.
pub const MOMENT_T2: f64 = 45.0 / 88.0;
/// [DERIVED] closed-form moments against the rational targets above.
pub const MOMENT_CLOSED_FORM_TOL: f64 = 1e-12;

// Lyapunov exponent of B_n.
/// [THEORY] `-(1/n) log B_n -> 5/6`; band around it for `n = 2000`, 200 chains.
pub const LYAPUNOV_BAND: (f64, f64) = (0.817, 0.850);
pub const LYAPUNOV_STEPS: usize = 2000;
pub const LYAPUNOV_CHAINS: usize = 200;
/// [THEORY]
pub const LYAPUNOV_TARGET: f64 = 5.0 / 6.0;

// Normalization.
/// [DERIVED] `lambda^{4/3} delta(lambda) -> 0.131436` from the closed form.
pub const DELTA_TARGET: f64 = 0.131_436;
/// [DERIVED]
pub const DELTA_TOL: f64 = 0.005;
pub const DELTA_LAMBDA: f64 = 1e6;
pub const DELTA_GRID: [f64; 3] = [1e2, 1e4, 1e6];

// Kernel convergence.
/// [DERIVED] total mass of the finite kernel.
pub const KERNEL_MASS_TOL: f64 = 1e-3;
/// [THEORY] pointwise convergence; ratio to the ideal kernel at `lambda = 1e6`.
pub const KERNEL_RATIO_TOL: f64 = 1e-2;
pub const KERNEL_RATIO_LAMBDA: f64 = 1e6;
pub const KERNEL_RATIO_FROM: (f64, f64) = (1.0, 1.0);
pub const KERNEL_RATIO_TO: (f64, f64) = (0.5, 0.5);
pub const KERNEL_GRID: [f64; 3] = [1e2, 1e4, 1e6];
/// [DERIVED] `(log lambda) * l1` at `lambda = 1e6`, `s = (1, 1)`; pilot value about `1e-8`.
pub const DISCREPANCY_LOG_L1_MAX: f64 = 0.05;

// Oracle versus kernel.
/// [DERIVED] two-dimensional KS bound between oracle and kernel one-step laws.
pub const ORACLE_KS2D_MAX: f64 = 0.03;
pub const ORACLE_SAMPLES: usize = 10_000;
pub const ORACLE_LAMBDA: f64 = 1e4;

// Vertex counts.
/// [THEORY] total count slope `4/5` in `log lambda`.
pub const VERTEX_SLOPE_BAND: (f64, f64) = (0.65, 0.95);
/// [THEORY] per-branch slope `2/5`.
pub const BRANCH_SLOPE_BAND: (f64, f64) = (0.30, 0.50);
pub const VERTEX_CELLS_PER_LAMBDA: usize = 500;
pub const VERTEX_GRID: [f64; 4] = [1e2, 1e3, 1e4, 1e5];

// Coupling.
/// [THEORY] coupling probability up to `tau_lambda(0.4)` at `lambda = 1e6`.
pub const COUPLING_MIN: f64 = 0.9;
pub const COUPLING_RUNS: usize = 1000;
pub const COUPLING_LAMBDA: f64 = 1e6;
pub const COUPLING_GRID: [f64; 3] = [1e2, 1e4, 1e6];
pub const COUPLING_EPS0: f64 = 0.4;
/// [THEORY] `E[tau_lambda] / ((2/5) log lambda)` band.
pub const TAU_RATIO_BAND: (f64, f64) = (0.85, 1.15);
/// Exponent at which the concentration band is evaluated; see the decisions ledger.
pub const TAU_EPS0: f64 = 0.02;
/// Step cap for a coupled run before `tau_lambda` is declared not reached.
pub const COUPLING_MAX_STEPS: usize = 500;

// Local ratio.
/// [THEORY] stationarity of `T_n^2 / W_n^3`: KS between `n = 60` and `n = 120`.
pub const LOCAL_RATIO_KS_MAX: f64 = 0.02;
pub const LOCAL_RATIO_SAMPLES: usize = 10_000;
pub const LOCAL_RATIO_STEPS: (usize, usize) = (60, 120);
/// [THEORY] `Y/X^3 = T^2/W^3` along trajectories, relative.
pub const LOCAL_RATIO_IDENTITY_REL: f64 = 1e-10;

// Geometry suite.
/// [DERIVED] closed-form versus target-point abscissae, relative to `max(|X|, B_n)`.
pub const MUTUAL_ORACLE_REL: f64 = 1e-10;
pub const GEOMETRY_INSTANCES: usize = 1000;
pub const DUALITY_MAX_POINTS: usize = 30;
/// [DERIVED] empty-circumdisk slack, relative to the disk radius.
pub const DUALITY_REL: f64 = 1e-9;

// Shape convergence (reported, not judged).
pub const SHAPE_CELLS_PER_LAMBDA: usize = 300;
pub const SHAPE_MENHIRS: usize = 2000;

/// Largest fraction of replicas allowed to fail (certification or sampler errors).
pub const REPLICA_FAILURE_MAX: f64 = 0.01;

/// One row of the table.
#[derive(Clone, Debug, Serialize)]
pub struct Tolerance {
    pub name: &'static str,
    pub lower: f64,
    pub upper: f64,
    pub provenance: &'static str,
}

/// The acceptance bands, for echoing into reports.
pub fn table() -> Vec<Tolerance> {
    let row = |name, (lower, upper), provenance| Tolerance {
        name,
        lower,
        upper,
        provenance,
    };
    vec![
        row(
            "moment_se_multiplier",
            (0.0, MOMENT_SE_MULTIPLIER),
            "DERIVED",
        ),
        row("lyapunov", LYAPUNOV_BAND, "THEORY"),
        row(
            "moment_closed_form",
            (0.0, MOMENT_CLOSED_FORM_TOL),
            "DERIVED",
        ),
        row(
            "delta_scaled",
            (DELTA_TARGET - DELTA_TOL, DELTA_TARGET + DELTA_TOL),
            "DERIVED",
        ),
        row(
            "kernel_mass",
            (1.0 - KERNEL_MASS_TOL, 1.0 + KERNEL_MASS_TOL),
            "DERIVED",
        ),
        row(
            "kernel_ratio",
            (1.0 - KERNEL_RATIO_TOL, 1.0 + KERNEL_RATIO_TOL),
            "THEORY",
        ),
        row(
            "discrepancy_log_l1",
            (0.0, DISCREPANCY_LOG_L1_MAX),
            "DERIVED",
        ),
        row("oracle_ks2d", (0.0, ORACLE_KS2D_MAX), "DERIVED"),
        row("vertex_slope", VERTEX_SLOPE_BAND, "THEORY"),
        row("branch_slope", BRANCH_SLOPE_BAND, "THEORY"),
        row("coupling_probability", (COUPLING_MIN, 1.0), "THEORY"),
        row("tau_ratio", TAU_RATIO_BAND, "THEORY"),
        row("local_ratio_ks", (0.0, LOCAL_RATIO_KS_MAX), "THEORY"),
        row(
            "local_ratio_identity",
            (0.0, LOCAL_RATIO_IDENTITY_REL),
            "THEORY",
        ),
        row("mutual_oracle", (0.0, MUTUAL_ORACLE_REL), "DERIVED"),
        row("duality_rel", (0.0, DUALITY_REL), "DERIVED"),
        row(
            "replica_failure_fraction",
            (0.0, REPLICA_FAILURE_MAX),
            "DERIVED",
        ),
    ]
}
