//! Variance of the difference-in-means estimator in cluster-randomized
//! experiments, by three routes that agree exactly: the cluster-robust
//! sandwich, its residual-cluster-sum simplification, and the delta method
//! on cluster-level ratio-of-means moments.
//!
//! ```
//! use clustervar::{analyze, parse_csv, validate, AnalysisOptions};
//!
//! let csv = "cluster_id,w,y\ng1,1,1\ng1,1,0\ng2,1,1\ng3,0,0\ng3,0,0\ng4,0,1\n";
//! let exp = validate(parse_csv(csv.as_bytes())?)?;
//! let report = analyze(&exp, &AnalysisOptions::default())?;
//! assert!((report.var_sandwich - 10.0 / 81.0).abs() < 1e-15);
//! assert!(report.max_rel_discrepancy <= 1e-12);
//! # Ok::<(), clustervar::Error>(())
//! ```

pub mod csv;
pub mod error;
pub mod estimators;
pub mod experiment;
pub mod matrix;
pub mod numeric;
pub mod simulation;

pub use crate::csv::{parse_csv, write_csv};
pub use error::{Error, Result};
pub use estimators::{
    analyze, arm_moments, bread, delta_arm_variance, delta_method_variance, difference_in_means,
    fit, meat, normal_critical_value, relative_discrepancy, residuals, sandwich_covariance,
    variance_simplified, AnalysisOptions, ArmMoments, AteEstimate, MomentMode, ResidualFit,
    VarianceReport,
};
pub use experiment::{
    aggregate_clusters, validate, Arm, ClusterAggregate, UnitRecord, ValidatedExperiment,
};
pub use matrix::{invert2, Matrix2};
pub use simulation::{
    coverage_study, derive_seed, equivalence_sweep, generate, Assignment, CoverageResult,
    SimConfig, SweepSummary,
};
