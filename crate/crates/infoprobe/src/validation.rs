//! The two controlled validation experiments, their checks and the CSV log.

use std::fmt::Write as _;
use std::path::Path;

use infoprobe_core::synth::{self, ClusterPoint, DependencyTrial, ExperimentConfig, CLUSTER_SWEEP, SAMPLER};
use rayon::prelude::*;
use serde::Serialize;

use crate::ingest::{write_atomic, IngestError};

pub const CLUSTER_SEEDS: u64 = 10;
pub const DEPENDENCY_SEEDS: u64 = 40;
/// Fraction of dependency trials that must show the full ordering.
pub const DEPENDENCY_PASS_RATE: f64 = 0.95;
pub const VALIDATION_FILE: &str = "validation.csv";

#[derive(Debug, thiserror::Error)]
pub enum ValidationError {
    #[error(transparent)]
    Core(#[from] infoprobe_core::Error),
    #[error(transparent)]
    Io(#[from] IngestError),
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub sampler: &'static str,
    pub alpha: f64,
    pub log_base: &'static str,
    pub checks: Vec<Check>,
    #[serde(skip)]
    pub clusters: Vec<Vec<ClusterPoint>>,
    #[serde(skip)]
    pub dependency: Vec<DependencyTrial>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Runs both experiments on the default seeds.
pub fn run_experiments(cfg: &ExperimentConfig) -> Result<ValidationReport, ValidationError> {
    let clusters = (0..CLUSTER_SEEDS)
        .into_par_iter()
        .map(|seed| synth::cluster_sweep(cfg, &CLUSTER_SWEEP, seed))
        .collect::<Result<Vec<_>, _>>()?;
    let dependency = (0..DEPENDENCY_SEEDS)
        .into_par_iter()
        .map(|seed| synth::dependency_trial(cfg, seed))
        .collect::<Result<Vec<_>, _>>()?;

    let increasing = clusters.iter().filter(|s| synth::strictly_increasing(s)).count();
    let max_k1 = clusters
        .iter()
        .flat_map(|s| s.iter().filter(|p| p.k == 1))
        .map(|p| p.result.value.abs())
        .fold(0.0, f64::max);
    let ordered = dependency.iter().filter(|t| t.ordered()).count();
    let rate = ordered as f64 / dependency.len() as f64;

    let checks = vec![
        Check {
            name: "cluster_monotonicity",
            pass: increasing == clusters.len(),
            detail: format!("{increasing}/{} seeds strictly increasing over k={CLUSTER_SWEEP:?}", clusters.len()),
        },
        Check {
            name: "cluster_identical_zero",
            pass: max_k1 <= 1e-9,
            detail: format!("max |H| at k=1 is {max_k1:e}"),
        },
        Check {
            name: "dependency_monotonicity",
            pass: rate >= DEPENDENCY_PASS_RATE,
            detail: format!("{ordered}/{} trials identical < perturbed < independent", dependency.len()),
        },
    ];
    Ok(ValidationReport {
        sampler: SAMPLER,
        alpha: cfg.params.alpha,
        log_base: cfg.params.log_base.as_str(),
        checks,
        clusters,
        dependency,
    })
}

/// CSV with `#` header lines describing the sampler and parameters.
pub fn report_csv(report: &ValidationReport, cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let c = &cfg.clusters;
    let b = &cfg.dependency_base;
    let _ = writeln!(s, "# sampler: {SAMPLER}");
    let _ = writeln!(
        s,
        "# clusters: d={} total={} center_scale={} spread={} bandwidth={}",
        c.d, cfg.total_points, c.center_scale, c.spread, cfg.bandwidth
    );
    let _ = writeln!(
        s,
        "# dependency: k={} per_cluster={} d={} center_scale={} spread={} perturb_fraction={} sigma_scope={}",
        b.k,
        b.per_cluster,
        b.d,
        b.center_scale,
        b.spread,
        cfg.perturb_fraction,
        cfg.scope.as_str()
    );
    for check in &report.checks {
        let _ = writeln!(s, "# check {}: {} ({})", check.name, if check.pass { "pass" } else { "fail" }, check.detail);
    }
    s.push_str("experiment,param,seed,entropy_or_proxy,sigma,n,alpha,log_base\n");
    let (alpha, base) = (report.alpha, report.log_base);
    for p in report.clusters.iter().flatten() {
        let _ = writeln!(
            s,
            "clusters,k={},{},{},{},{},{alpha},{base}",
            p.k, p.seed, p.result.value, p.result.sigma, p.n
        );
    }
    for t in &report.dependency {
        for (name, r) in [("identical", &t.identical), ("perturbed", &t.perturbed), ("independent", &t.independent)] {
            let param = if name == "perturbed" { format!("perturbed(noise={})", t.noise) } else { name.to_string() };
            let _ = writeln!(
                s,
                "dependency,{param},{},{},{},{},{alpha},{base}",
                t.seed, r.value, r.joint_entropy.sigma, r.joint_entropy.n_effective
            );
        }
    }
    s
}

/// Runs the experiments and writes `validation.csv` into `out_dir`.
pub fn run_validation(out_dir: impl AsRef<Path>, cfg: &ExperimentConfig) -> Result<ValidationReport, ValidationError> {
    let report = run_experiments(cfg)?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(crate::ingest::io_err(out_dir))?;
    write_atomic(&out_dir.join(VALIDATION_FILE), report_csv(&report, cfg).as_bytes())?;
    Ok(report)
}
