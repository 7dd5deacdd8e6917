//! Point estimate and three variance routes for the difference in means.
//!
//! All routes consume the same residuals `e_i = y_i - alpha_hat - tau_hat * w_i`,
//! computed once by [`fit`]:
//!
//! * [`sandwich_covariance`]: `B^-1 M B^-1` with bread `B = sum_i x_i x_i'`
//!   for `x_i = (1, w_i)` and meat `M = sum_g u_g u_g'` for the cluster score
//!   `u_g = sum_{i in g} x_i e_i`. The variance of `tau_hat` is its `(2,2)` entry.
//! * [`variance_simplified`]: `sum_g S_gT^2 / N_T^2 + sum_g S_gC^2 / N_C^2`.
//! * [`delta_method_variance`]: per arm, the first-order expansion of the
//!   ratio of mean cluster outcome sum to mean cluster size, written in terms
//!   of cluster-level moments of `(r_g, n_g)`.
//!
//! The three agree exactly in real arithmetic when the delta moments use the
//! population divisor.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::experiment::{aggregate_clusters, Arm, ClusterAggregate, ValidatedExperiment};
use crate::matrix::{invert2, Matrix2};
use crate::numeric::{exact_mean, DoubleF64};

/// Denominator floor for relative discrepancies.
pub const DISCREPANCY_FLOOR: f64 = 1e-300;

/// A delta-method arm variance whose linearized residuals are all within this
/// many units of relative rounding of the cluster outcome sums is reported as 0.
const DELTA_ROUNDING_RATIO: f64 = 64.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    /// Control mean.
    pub alpha_hat: f64,
    /// Treatment mean minus control mean.
    pub tau_hat: f64,
}

/// Divisor used for cluster-level second moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMode {
    /// Divide by the number of clusters. Matches the sandwich estimator.
    #[default]
    Population,
    /// Divide by the number of clusters minus one.
    Sample,
}

impl std::fmt::Display for MomentMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MomentMode::Population => "population",
            MomentMode::Sample => "sample",
        })
    }
}

impl std::str::FromStr for MomentMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "population" => Ok(MomentMode::Population),
            "sample" => Ok(MomentMode::Sample),
            other => Err(Error::InvalidParameter(format!(
                "unknown moment mode `{other}`"
            ))),
        }
    }
}

/// Arm estimate, per-unit residuals and cluster aggregates, computed once and
/// shared by every variance route.
#[derive(Debug, Clone)]
pub struct ResidualFit {
    pub estimate: AteEstimate,
    pub residuals: Vec<f64>,
    pub aggregates: Vec<ClusterAggregate>,
}

pub fn difference_in_means(exp: &ValidatedExperiment) -> AteEstimate {
    let arm_mean = |w: u8| exact_mean(exp.units().iter().filter(move |u| u.w == w).map(|u| u.y));
    let alpha_hat = arm_mean(0);
    AteEstimate {
        alpha_hat,
        tau_hat: arm_mean(1) - alpha_hat,
    }
}

pub fn residuals(exp: &ValidatedExperiment, est: &AteEstimate) -> Vec<f64> {
    exp.units()
        .iter()
        .map(|u| u.y - est.alpha_hat - est.tau_hat * f64::from(u.w))
        .collect()
}

pub fn fit(exp: &ValidatedExperiment) -> ResidualFit {
    let estimate = difference_in_means(exp);
    let residuals = residuals(exp, &estimate);
    let aggregates = aggregate_clusters(exp, &residuals).expect("residuals are aligned with units");
    ResidualFit {
        estimate,
        residuals,
        aggregates,
    }
}

/// `sum_i (1, w_i)'(1, w_i)`, i.e. `[[N, N_T], [N_T, N_T]]`.
pub fn bread(exp: &ValidatedExperiment) -> Matrix2 {
    let n = exp.n_units() as f64;
    let nt = exp.n_treat() as f64;
    Matrix2::new(n, nt, nt, nt)
}

/// Sum over clusters of the outer product of the cluster score
/// `(S_gT + S_gC, S_gT)`.
pub fn meat(aggregates: &[ClusterAggregate]) -> Matrix2 {
    aggregates.iter().fold(Matrix2::ZERO, |acc, g| {
        acc + Matrix2::outer([g.s_gt + g.s_gc, g.s_gt])
    })
}

/// Cluster-robust covariance of `(alpha_hat, tau_hat)` by explicit 2x2 algebra.
pub fn sandwich_covariance(
    exp: &ValidatedExperiment,
    aggregates: &[ClusterAggregate],
) -> Result<Matrix2> {
    let inv = invert2(&bread(exp))?;
    Ok(inv.matmul(&meat(aggregates)).matmul(&inv))
}

pub fn variance_simplified(
    aggregates: &[ClusterAggregate],
    n_treat: usize,
    n_control: usize,
) -> f64 {
    let (sst, ssc) = aggregates.iter().fold((0.0, 0.0), |(t, c), g| {
        (t + g.s_gt * g.s_gt, c + g.s_gc * g.s_gc)
    });
    let nt = n_treat as f64;
    let nc = n_control as f64;
    sst / (nt * nt) + ssc / (nc * nc)
}

/// Cluster-level moments of `(r_g, n_g)` within one arm.
///
/// Second moments are accumulated from exact products of two-pass deviations
/// and kept as double-doubles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArmMoments {
    pub arm: Arm,
    pub n_clusters: usize,
    pub mu_r: f64,
    pub mu_n: f64,
    pub var_r: DoubleF64,
    pub var_n: DoubleF64,
    pub cov_rn: DoubleF64,
    pub mode: MomentMode,
}

pub fn arm_moments(arm_aggregates: &[ClusterAggregate], mode: MomentMode) -> Result<ArmMoments> {
    let first = arm_aggregates.first().ok_or(Error::EmptyArm)?;
    let arm = first.arm();
    if arm_aggregates.iter().any(|g| g.w_g != first.w_g) {
        return Err(Error::InvalidParameter(
            "arm moments need clusters from a single arm".into(),
        ));
    }
    let g = arm_aggregates.len();
    let divisor = match mode {
        MomentMode::Population => g,
        MomentMode::Sample if g < 2 => {
            return Err(Error::InsufficientClusters { arm, clusters: g })
        }
        MomentMode::Sample => g - 1,
    } as f64;

    let mu_r = exact_mean(arm_aggregates.iter().map(|a| a.r_g));
    let mu_n = exact_mean(arm_aggregates.iter().map(|a| a.n_g as f64));
    let (mut srr, mut snn, mut srn) = (DoubleF64::ZERO, DoubleF64::ZERO, DoubleF64::ZERO);
    for a in arm_aggregates {
        let dr = a.r_g - mu_r;
        let dn = a.n_g as f64 - mu_n;
        srr += DoubleF64::product(dr, dr);
        snn += DoubleF64::product(dn, dn);
        srn += DoubleF64::product(dr, dn);
    }
    Ok(ArmMoments {
        arm,
        n_clusters: g,
        mu_r,
        mu_n,
        var_r: srr / divisor,
        var_n: snn / divisor,
        cov_rn: srn / divisor,
        mode,
    })
}

/// Delta-method variance of one arm's mean outcome:
///
/// `var_r/(n mu_n^2) - 2 mu_r cov_rn/(n mu_n^3) + mu_r^2 var_n/(n mu_n^4)`
///
/// with `n` the number of clusters in the arm.
pub fn delta_arm_variance(m: &ArmMoments) -> Result<f64> {
    if m.mu_n.is_nan() || m.mu_n <= 0.0 {
        return Err(Error::DegenerateArm(m.arm));
    }
    // Factor out 1/(n mu_n^2) and evaluate the remaining quadratic in the
    // ratio mu_r/mu_n at double-double precision.
    let ratio = DoubleF64::from(m.mu_r) / DoubleF64::from(m.mu_n);
    let quad = m.var_r - ratio * m.cov_rn * 2.0 + ratio * ratio * m.var_n;
    let scale = DoubleF64::product(m.mu_r, m.mu_r) + m.var_r.abs();
    let floor = DoubleF64::product(DELTA_ROUNDING_RATIO, DELTA_ROUNDING_RATIO) * scale.to_f64();
    if quad.to_f64() <= floor.to_f64() {
        return Ok(0.0);
    }
    let denom = DoubleF64::product(m.mu_n, m.mu_n) * m.n_clusters as f64;
    Ok((quad / denom).to_f64())
}

fn split_arms(aggregates: &[ClusterAggregate]) -> (Vec<ClusterAggregate>, Vec<ClusterAggregate>) {
    aggregates.iter().cloned().partition(|g| g.w_g == 1)
}

/// Sum of the two arms' delta-method variances.
pub fn delta_method_variance(aggregates: &[ClusterAggregate], mode: MomentMode) -> Result<f64> {
    let (treated, control) = split_arms(aggregates);
    let t = delta_arm_variance(&arm_moments(&treated, mode)?)?;
    let c = delta_arm_variance(&arm_moments(&control, mode)?)?;
    Ok(t + c)
}

/// `|a - b| / max(|a|, |b|, DISCREPANCY_FLOOR)`.
pub fn relative_discrepancy(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(DISCREPANCY_FLOOR)
}

/// Two-sided standard normal critical value for confidence `level`.
pub fn normal_critical_value(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub ci_level: f64,
    /// Which delta-method variance the interval uses. Population mode uses
    /// the (identical) simplified form.
    pub mode: MomentMode,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            ci_level: 0.95,
            mode: MomentMode::Population,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub estimate: AteEstimate,
    pub var_sandwich: f64,
    pub var_simplified: f64,
    pub var_delta_pop: f64,
    /// Absent when either arm has fewer than two clusters.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub var_delta_sample: Option<f64>,
    /// Largest pairwise relative gap among the sandwich, simplified and
    /// population delta-method variances.
    pub max_rel_discrepancy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

impl VarianceReport {
    pub fn equivalence_holds(&self, tol: f64) -> bool {
        self.max_rel_discrepancy <= tol
    }

    pub fn ci_contains(&self, value: f64) -> bool {
        self.ci_low <= value && value <= self.ci_high
    }
}

/// Run every estimator on one shared set of residuals.
pub fn analyze(exp: &ValidatedExperiment, opts: &AnalysisOptions) -> Result<VarianceReport> {
    let z = normal_critical_value(opts.ci_level)?;
    let fit = fit(exp);
    let aggs = &fit.aggregates;

    let sandwich = sandwich_covariance(exp, aggs)?;
    let var_sandwich = sandwich.a22.max(0.0);
    let var_simplified = variance_simplified(aggs, exp.n_treat(), exp.n_control());
    let var_delta_pop = delta_method_variance(aggs, MomentMode::Population)?;
    let var_delta_sample = match delta_method_variance(aggs, MomentMode::Sample) {
        Ok(v) => Some(v),
        Err(Error::InsufficientClusters { arm, clusters }) => {
            if opts.mode == MomentMode::Sample {
                return Err(Error::InsufficientClusters { arm, clusters });
            }
            None
        }
        Err(e) => return Err(e),
    };

    let max_rel_discrepancy = relative_discrepancy(var_sandwich, var_simplified)
        .max(relative_discrepancy(var_sandwich, var_delta_pop))
        .max(relative_discrepancy(var_simplified, var_delta_pop));

    let ci_var = match opts.mode {
        MomentMode::Population => var_simplified,
        MomentMode::Sample => var_delta_sample.expect("checked above"),
    };
    let half = z * ci_var.sqrt();
    let tau = fit.estimate.tau_hat;
    Ok(VarianceReport {
        estimate: fit.estimate,
        var_sandwich,
        var_simplified,
        var_delta_pop,
        var_delta_sample,
        max_rel_discrepancy,
        ci_low: tau - half,
        ci_high: tau + half,
    })
}
