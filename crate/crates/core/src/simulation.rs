//! Synthetic cluster-randomized experiments and Monte Carlo studies.
//!
//! Generator: cluster sizes are Poisson, each cluster gets a success rate
//! drawn uniformly from `[rate_low, rate_high]`, and each unit's outcome is a
//! Bernoulli draw at its cluster's rate. Both arms draw rates from the same
//! distribution, so the true average treatment effect is zero.
//!
//! Draw order for one dataset (all from a single `ChaCha8Rng` seeded with
//! `seed_from_u64(config.seed)`):
//!
//! 1. one Poisson size per cluster, in cluster order;
//! 2. one uniform rate per cluster: `rate_low + (rate_high - rate_low) * u`;
//! 3. under [`Assignment::BernoulliHalf`] only, one fair coin per cluster
//!    (`u < 0.5` means treatment);
//! 4. one outcome per unit, cluster by cluster: `y = 1` iff `u < rate`.
//!
//! `u` is always `Rng::random::<f64>()`, uniform on `[0, 1)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{analyze, AnalysisOptions};
use crate::experiment::{validate, UnitRecord};
use crate::numeric::exact_mean;

/// Identity of the random stream, for output metadata.
pub const RNG_NAME: &str = "ChaCha8Rng (rand_chacha 0.9, seed_from_u64)";

/// Largest Poisson mean sampled by sequential inversion.
pub const POISSON_INVERSION_MAX_MEAN: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Assignment {
    /// Clusters 0, 2, 4, ... are control; 1, 3, 5, ... are treatment.
    #[default]
    Alternating,
    /// Independent fair coin per cluster.
    BernoulliHalf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_clusters: usize,
    pub mean_cluster_size: f64,
    pub rate_low: f64,
    pub rate_high: f64,
    pub assignment: Assignment,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_clusters: 100,
            mean_cluster_size: 10.0,
            rate_low: 0.5,
            rate_high: 1.0,
            assignment: Assignment::Alternating,
            seed: 1,
        }
    }
}

impl SimConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_clusters < 2 {
            return bad(format!("need at least 2 clusters, got {}", self.n_clusters));
        }
        if !(self.mean_cluster_size.is_finite() && self.mean_cluster_size > 0.0) {
            return bad(format!(
                "mean cluster size must be positive, got {}",
                self.mean_cluster_size
            ));
        }
        let in_unit = |r: f64| (0.0..=1.0).contains(&r);
        if !in_unit(self.rate_low) || !in_unit(self.rate_high) {
            return bad(format!(
                "rates must lie in [0, 1], got [{}, {}]",
                self.rate_low, self.rate_high
            ));
        }
        if self.rate_low > self.rate_high {
            return bad(format!(
                "rate_low {} exceeds rate_high {}",
                self.rate_low, self.rate_high
            ));
        }
        Ok(())
    }

    /// Name of the Poisson sampler used at this config's mean.
    pub fn poisson_method(&self) -> &'static str {
        if self.mean_cluster_size <= POISSON_INVERSION_MAX_MEAN {
            "inversion"
        } else {
            "ptrs (rand_distr)"
        }
    }
}

fn poisson_inversion<R: Rng>(rng: &mut R, mean: f64) -> u64 {
    let u: f64 = rng.random();
    let mut k = 0u64;
    let mut p = (-mean).exp();
    let mut cdf = p;
    while u > cdf && p > 0.0 {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
    }
    k
}

enum SizeSampler {
    Inversion(f64),
    Ptrs(Poisson<f64>),
}

impl SizeSampler {
    fn new(mean: f64) -> Self {
        if mean <= POISSON_INVERSION_MAX_MEAN {
            SizeSampler::Inversion(mean)
        } else {
            SizeSampler::Ptrs(Poisson::new(mean).expect("validated mean"))
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        match self {
            SizeSampler::Inversion(mean) => poisson_inversion(rng, *mean) as usize,
            SizeSampler::Ptrs(d) => d.sample(rng) as usize,
        }
    }
}

/// Generate one dataset. Size-0 clusters produce no rows. Cluster ids are
/// `1..=n_clusters` in decimal.
pub fn generate(config: &SimConfig) -> Result<Vec<UnitRecord>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let g = config.n_clusters;
    let sizes = SizeSampler::new(config.mean_cluster_size);

    let size: Vec<usize> = (0..g).map(|_| sizes.sample(&mut rng)).collect();
    let span = config.rate_high - config.rate_low;
    let rate: Vec<f64> = (0..g)
        .map(|_| config.rate_low + span * rng.random::<f64>())
        .collect();
    let arm: Vec<u8> = match config.assignment {
        Assignment::Alternating => (0..g).map(|i| (i % 2) as u8).collect(),
        Assignment::BernoulliHalf => (0..g)
            .map(|_| u8::from(rng.random::<f64>() < 0.5))
            .collect(),
    };

    let mut out = Vec::with_capacity(size.iter().sum());
    for c in 0..g {
        let id = (c + 1).to_string();
        for _ in 0..size[c] {
            let y = if rng.random::<f64>() < rate[c] {
                1.0
            } else {
                0.0
            };
            out.push(UnitRecord {
                cluster_id: id.clone(),
                w: arm[c],
                y,
            });
        }
    }
    Ok(out)
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of replication `index` under `master`.
///
/// `splitmix64(master ^ splitmix64(index))`: both steps are bijections, so
/// distinct indices never share a seed under one master seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub seeds: u64,
    pub evaluated: u64,
    /// Draws with an empty arm.
    pub skipped: u64,
    pub max_discrepancy: f64,
    /// Seed of the largest discrepancy (lowest such seed on ties).
    pub worst_seed: Option<u64>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Analyze datasets for seeds `base.seed .. base.seed + n_seeds` (wrapping)
/// and report the largest relative discrepancy among the variance routes.
pub fn equivalence_sweep(base: &SimConfig, n_seeds: u64, tol: f64) -> Result<SweepSummary> {
    base.validate()?;
    if n_seeds == 0 {
        return Err(Error::InvalidParameter("need at least one seed".into()));
    }
    let opts = AnalysisOptions::default();
    let outcomes: Vec<Result<Option<f64>>> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let cfg = base.with_seed(base.seed.wrapping_add(i));
            match validate(generate(&cfg)?) {
                Ok(exp) => Ok(Some(analyze(&exp, &opts)?.max_rel_discrepancy)),
                Err(Error::EmptyArm) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut summary = SweepSummary {
        seeds: n_seeds,
        evaluated: 0,
        skipped: 0,
        max_discrepancy: 0.0,
        worst_seed: None,
        tolerance: tol,
        passed: true,
    };
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome? {
            None => summary.skipped += 1,
            Some(d) => {
                summary.evaluated += 1;
                if summary.worst_seed.is_none() || d > summary.max_discrepancy {
                    summary.max_discrepancy = d;
                    summary.worst_seed = Some(base.seed.wrapping_add(i as u64));
                }
            }
        }
    }
    summary.passed = summary.max_discrepancy <= tol;
    Ok(summary)
}

pub const MIN_COVERAGE_REPLICATIONS: u64 = 100;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageResult {
    pub replications: u64,
    /// Replications dropped because an arm came out empty.
    pub skipped: u64,
    pub covered: u64,
    /// `covered / (replications - skipped)`.
    pub coverage_rate: f64,
    pub mean_tau_hat: f64,
    pub mean_variance: f64,
    /// Sample variance (divisor count - 1) of the point estimates.
    pub empirical_variance_of_tau_hat: f64,
}

/// Check how often the normal interval covers the true effect of zero.
///
/// Replication `i` uses seed `derive_seed(base.seed, i)`.
pub fn coverage_study(
    base: &SimConfig,
    replications: u64,
    ci_level: f64,
) -> Result<CoverageResult> {
    base.validate()?;
    if replications < MIN_COVERAGE_REPLICATIONS {
        return Err(Error::InvalidParameter(format!(
            "need at least {MIN_COVERAGE_REPLICATIONS} replications, got {replications}"
        )));
    }
    let opts = AnalysisOptions {
        ci_level,
        ..Default::default()
    };
    crate::estimators::normal_critical_value(ci_level)?;

    let outcomes: Vec<Result<Option<(f64, f64, bool)>>> = (0..replications)
        .into_par_iter()
        .map(|i| {
            let cfg = base.with_seed(derive_seed(base.seed, i));
            match validate(generate(&cfg)?) {
                Ok(exp) => {
                    let r = analyze(&exp, &opts)?;
                    Ok(Some((
                        r.estimate.tau_hat,
                        r.var_simplified,
                        r.ci_contains(0.0),
                    )))
                }
                Err(Error::EmptyArm) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut taus = Vec::new();
    let mut vars = Vec::new();
    let mut covered = 0u64;
    for outcome in outcomes {
        if let Some((tau, var, hit)) = outcome? {
            taus.push(tau);
            vars.push(var);
            covered += u64::from(hit);
        }
    }
    let evaluated = taus.len();
    if evaluated < 2 {
        return Err(Error::InvalidParameter(format!(
            "only {evaluated} replication(s) had both arms populated"
        )));
    }
    let mean_tau_hat = exact_mean(taus.iter().copied());
    let mean_variance = exact_mean(vars.iter().copied());
    let ss = crate::numeric::exact_sum(taus.iter().map(|t| (t - mean_tau_hat).powi(2)));
    Ok(CoverageResult {
        replications,
        skipped: replications - evaluated as u64,
        covered,
        coverage_rate: covered as f64 / evaluated as f64,
        mean_tau_hat,
        mean_variance,
        empirical_variance_of_tau_hat: ss / (evaluated - 1) as f64,
    })
}
