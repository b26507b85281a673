//! Statistical utilities: two-sample Kolmogorov-Smirnov tests (1-D and the
//! Fasano-Franceschini 2-D variant), least-squares slopes and self-contained reports.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed acceptance interval for the value a report is judged on.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn at_most(upper: f64) -> Self {
        Self::new(f64::NEG_INFINITY, upper)
    }

    pub fn at_least(lower: f64) -> Self {
        Self::new(lower, f64::INFINITY)
    }

    /// `target +- tol`.
    pub fn around(target: f64, tol: f64) -> Self {
        Self::new(target - tol, target + tol)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// One estimate with its uncertainty, test statistic and acceptance decision.
///
/// `pass` is recomputed from `checked_value` and `accept`, both stored in the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatReport {
    pub name: String,
    pub estimate: f64,
    pub standard_error: Option<f64>,
    pub sample_size: usize,
    /// Kind of the checked quantity: `estimate`, `z`, `ks`, `ks2d`, `slope`, ...
    pub statistic: String,
    pub checked_value: f64,
    pub p_value: Option<f64>,
    pub target: Option<f64>,
    pub accept: Option<Interval>,
    pub pass: Option<bool>,
}

impl StatReport {
    pub fn new(name: impl Into<String>, estimate: f64, sample_size: usize) -> Self {
        Self {
            name: name.into(),
            estimate,
            standard_error: None,
            sample_size,
            statistic: "estimate".into(),
            checked_value: estimate,
            p_value: None,
            target: None,
            accept: None,
            pass: None,
        }
    }

    pub fn with_se(mut self, se: f64) -> Self {
        self.standard_error = Some(se);
        self
    }

    pub fn with_target(mut self, target: f64) -> Self {
        self.target = Some(target);
        self
    }

    pub fn with_statistic(mut self, kind: impl Into<String>, value: f64) -> Self {
        self.statistic = kind.into();
        self.checked_value = value;
        self
    }

    pub fn with_p_value(mut self, p: f64) -> Self {
        self.p_value = Some(p);
        self
    }

    /// Sets the acceptance interval for `checked_value` and derives `pass`.
    pub fn judged(mut self, accept: Interval) -> Self {
        self.accept = Some(accept);
        self.pass = Some(accept.contains(self.checked_value));
        self
    }

    /// `|estimate - target| / se` judged against `k` standard errors.
    pub fn within_se(self, target: f64, k: f64) -> Self {
        let se = self.standard_error.unwrap_or(f64::NAN);
        let z = (self.estimate - target).abs() / se;
        self.with_target(target)
            .with_statistic("z", z)
            .judged(Interval::at_most(k))
    }

    pub fn passed(&self) -> bool {
        self.pass.unwrap_or(true)
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, f64::NAN);
    }
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    v
}

/// Two-sample Kolmogorov-Smirnov statistic `sup |F_a - F_b|`.
pub fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let a = sorted(a);
    let b = sorted(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic Kolmogorov tail `P(K > x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * x * x).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// Two-sample KS test with the Stephens small-sample correction for the p-value.
pub fn ks_two_sample(name: &str, a: &[f64], b: &[f64]) -> Result<StatReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate(
            "KS test needs two nonempty samples".into(),
        ));
    }
    let d = ks_statistic(a, b);
    let ne = (a.len() * b.len()) as f64 / (a.len() + b.len()) as f64;
    let p = kolmogorov_sf((ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d);
    Ok(StatReport::new(name, d, a.len() + b.len())
        .with_statistic("ks", d)
        .with_p_value(p))
}

/// Fasano-Franceschini two-sample 2-D KS statistic: for each sample, the largest
/// quadrant-probability difference over origins taken at that sample's points; the
/// two maxima are averaged.
pub fn ks2d_statistic(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let side = |origins: &[[f64; 2]]| -> f64 {
        origins
            .par_iter()
            .map(|o| {
                let fa = quadrant_fractions(a, *o);
                let fb = quadrant_fractions(b, *o);
                (0..4).map(|q| (fa[q] - fb[q]).abs()).fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    };
    0.5 * (side(a) + side(b))
}

fn quadrant_fractions(pts: &[[f64; 2]], o: [f64; 2]) -> [f64; 4] {
    let mut c = [0usize; 4];
    for p in pts {
        let right = p[0] > o[0];
        let up = p[1] > o[1];
        c[(right as usize) | ((up as usize) << 1)] += 1;
    }
    let n = pts.len() as f64;
    [
        c[0] as f64 / n,
        c[1] as f64 / n,
        c[2] as f64 / n,
        c[3] as f64 / n,
    ]
}

pub fn ks2d_two_sample(name: &str, a: &[[f64; 2]], b: &[[f64; 2]]) -> Result<StatReport> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Degenerate(
            "2-D KS test needs two nonempty samples".into(),
        ));
    }
    let d = ks2d_statistic(a, b);
    Ok(StatReport::new(name, d, a.len() + b.len()).with_statistic("ks2d", d))
}

/// Ordinary least-squares fit `y = a + s x`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub n: usize,
}

pub fn least_squares(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Degenerate(
            "regression needs at least two paired points".into(),
        ));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return Err(Error::Degenerate(
            "regression with constant abscissa".into(),
        ));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let slope_se = if x.len() > 2 {
        let rss: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (b - intercept - slope * a).powi(2))
            .sum();
        (rss / (n - 2.0) / sxx).sqrt()
    } else {
        f64::NAN
    };
    Ok(LinearFit {
        slope,
        intercept,
        slope_se,
        n: x.len(),
    })
}

/// OLS slope with its standard error as a report.
pub fn regression_slope(name: &str, x: &[f64], y: &[f64]) -> Result<StatReport> {
    let fit = least_squares(x, y)?;
    Ok(StatReport::new(name, fit.slope, fit.n)
        .with_se(fit.slope_se)
        .with_statistic("slope", fit.slope))
}
