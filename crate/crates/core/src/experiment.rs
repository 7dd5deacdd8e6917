//! Unit-level records, validation of cluster randomization, and reduction to
//! per-cluster sufficient statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::exact_sum;

/// A cluster residual sum no larger than this multiple of the unit roundoff
/// times the cluster's outcome and fitted-value mass is rounding noise, and
/// is stored as exactly zero.
const RESIDUAL_SUM_ROUNDING_RATIO: f64 = 64.0 * f64::EPSILON;

/// Experiment arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Control,
    Treatment,
}

impl Arm {
    pub fn from_w(w: u8) -> Arm {
        if w == 1 {
            Arm::Treatment
        } else {
            Arm::Control
        }
    }

    pub fn w(self) -> u8 {
        match self {
            Arm::Control => 0,
            Arm::Treatment => 1,
        }
    }
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Arm::Control => "control",
            Arm::Treatment => "treatment",
        })
    }
}

/// One experimental unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub cluster_id: String,
    /// Assignment, exactly 0 or 1.
    pub w: u8,
    pub y: f64,
}

impl UnitRecord {
    pub fn new(cluster_id: impl Into<String>, w: u8, y: f64) -> Result<Self> {
        let rec = UnitRecord {
            cluster_id: cluster_id.into(),
            w,
            y,
        };
        rec.check().map_err(Error::InvalidParameter)?;
        Ok(rec)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.w > 1 {
            return Err(format!("assignment must be 0 or 1, got {}", self.w));
        }
        if !self.y.is_finite() {
            return Err(format!("outcome must be finite, got {}", self.y));
        }
        Ok(())
    }

    pub fn arm(&self) -> Arm {
        Arm::from_w(self.w)
    }
}

/// Unit table that passed validation, with arm totals and a cluster index.
///
/// Clusters are indexed in byte order of their ids, so every downstream
/// per-cluster loop is independent of the row order of the input.
#[derive(Debug, Clone)]
pub struct ValidatedExperiment {
    units: Vec<UnitRecord>,
    n_treat: usize,
    n_control: usize,
    cluster_index: BTreeMap<String, Vec<usize>>,
}

impl ValidatedExperiment {
    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn n_treat(&self) -> usize {
        self.n_treat
    }

    pub fn n_control(&self) -> usize {
        self.n_control
    }

    pub fn n_units(&self) -> usize {
        self.units.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_index.len()
    }

    pub fn cluster_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.cluster_index
    }

    /// Number of clusters assigned to `arm`.
    pub fn arm_clusters(&self, arm: Arm) -> usize {
        self.cluster_index
            .values()
            .filter(|rows| self.units[rows[0]].arm() == arm)
            .count()
    }
}

/// Check cluster homogeneity and non-empty arms.
pub fn validate(records: Vec<UnitRecord>) -> Result<ValidatedExperiment> {
    let mut cluster_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut n_treat = 0;
    for (pos, rec) in records.iter().enumerate() {
        rec.check()
            .map_err(|e| Error::InvalidParameter(format!("record {pos}: {e}")))?;
        let rows = cluster_index.entry(rec.cluster_id.clone()).or_default();
        if let Some(&first) = rows.first() {
            if records[first].w != rec.w {
                return Err(Error::MixedAssignmentCluster(rec.cluster_id.clone()));
            }
        }
        rows.push(pos);
        n_treat += usize::from(rec.w);
    }
    let n_control = records.len() - n_treat;
    if n_treat == 0 || n_control == 0 {
        return Err(Error::EmptyArm);
    }
    Ok(ValidatedExperiment {
        units: records,
        n_treat,
        n_control,
        cluster_index,
    })
}

/// Per-cluster sufficient statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterAggregate {
    pub cluster_id: String,
    pub n_g: usize,
    /// Sum of outcomes in the cluster.
    pub r_g: f64,
    pub w_g: u8,
    /// Residual sum over treated units; exactly 0.0 for a control cluster.
    pub s_gt: f64,
    /// Residual sum over control units; exactly 0.0 for a treated cluster.
    pub s_gc: f64,
}

impl ClusterAggregate {
    pub fn arm(&self) -> Arm {
        Arm::from_w(self.w_g)
    }

    /// Residual sum of whichever arm the cluster belongs to.
    pub fn residual_sum(&self) -> f64 {
        self.s_gt + self.s_gc
    }
}

/// Reduce units and their residuals to one aggregate per cluster, in cluster-id order.
///
/// All sums are correctly rounded, so the result does not depend on row order.
/// A residual sum that is indistinguishable from zero at the rounding scale of
/// the cluster's outcomes is stored as exactly zero; this is what makes a
/// one-cluster arm (whose residual sum vanishes identically) report zero
/// variance on every route.
pub fn aggregate_clusters(
    exp: &ValidatedExperiment,
    residuals: &[f64],
) -> Result<Vec<ClusterAggregate>> {
    if residuals.len() != exp.n_units() {
        return Err(Error::LengthMismatch {
            expected: exp.n_units(),
            got: residuals.len(),
        });
    }
    let units = exp.units();
    Ok(exp
        .cluster_index()
        .iter()
        .map(|(id, rows)| {
            let w_g = units[rows[0]].w;
            let r_g = exact_sum(rows.iter().map(|&i| units[i].y));
            let mut s = exact_sum(rows.iter().map(|&i| residuals[i]));
            let mass = exact_sum(
                rows.iter()
                    .map(|&i| units[i].y.abs() + (units[i].y - residuals[i]).abs()),
            );
            if s.abs() <= RESIDUAL_SUM_ROUNDING_RATIO * mass {
                s = 0.0;
            }
            let (s_gt, s_gc) = if w_g == 1 { (s, 0.0) } else { (0.0, s) };
            ClusterAggregate {
                cluster_id: id.clone(),
                n_g: rows.len(),
                r_g,
                w_g,
                s_gt,
                s_gc,
            }
        })
        .collect())
}
