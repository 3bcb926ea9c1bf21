//! Seeded synthetic embedding generators and the two sensitivity experiments.
//!
//! * Cluster sweep: entropy must grow with the number of well-separated
//!   clusters at a fixed point budget.
//! * Dependency sweep: the conditional proxy must rank an identical response
//!   below a mildly perturbed one, and that below an independent draw.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::entropy::{self, ConditionalEntropyResult, EntropyParams, EntropyResult, SigmaScope};
use crate::error::{Error, Result};
use crate::kernel::{self, Bandwidth};
use crate::sequence::{EmbeddingSequence, Role};

/// Generator used for every draw in this module.
pub const SAMPLER: &str = "ChaCha8Rng (rand_chacha 0.9) seeded via seed_from_u64; \
normals from rand_distr 0.5 StandardNormal (ziggurat); centers uniform in [0, center_scale)";

/// Cluster counts of the sensitivity sweep.
pub const CLUSTER_SWEEP: [usize; 4] = [1, 5, 20, 100];
pub const DEFAULT_TOTAL_POINTS: usize = 400;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterSpec {
    pub k: usize,
    pub per_cluster: usize,
    pub d: usize,
    /// Side of the hypercube the centers are drawn from.
    pub center_scale: f64,
    /// Per-coordinate standard deviation around each center.
    pub spread: f64,
    pub seed: u64,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        Self {
            k: 5,
            per_cluster: DEFAULT_TOTAL_POINTS / 5,
            d: 64,
            center_scale: 10.0,
            spread: 0.1,
            seed: 0,
        }
    }
}

impl ClusterSpec {
    /// `k` clusters sharing a total budget of `total` points.
    pub fn with_budget(self, k: usize, total: usize) -> Self {
        Self {
            k,
            per_cluster: (total / k.max(1)).max(1),
            ..self
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.per_cluster == 0 || self.d == 0 {
            return Err(Error::param(format!(
                "k, per_cluster and d must be positive (got {}, {}, {})",
                self.k, self.per_cluster, self.d
            )));
        }
        if !(self.center_scale > 0.0 && self.center_scale.is_finite()) {
            return Err(Error::param(format!("center_scale must be positive, got {}", self.center_scale)));
        }
        if !(self.spread >= 0.0 && self.spread.is_finite()) {
            return Err(Error::param(format!("spread must be nonnegative, got {}", self.spread)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DependencyMode {
    Identical,
    /// Response = prompt + iid N(0, noise²) per coordinate.
    Perturbed { noise: f64 },
    Independent,
}

impl DependencyMode {
    pub fn name(&self) -> &'static str {
        match self {
            DependencyMode::Identical => "identical",
            DependencyMode::Perturbed { .. } => "perturbed",
            DependencyMode::Independent => "independent",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependencySpec {
    pub mode: DependencyMode,
    /// Generator for the prompt sequence.
    pub base: ClusterSpec,
    /// Seed for the noise or the independent draw.
    pub seed: u64,
}

impl DependencySpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if let DependencyMode::Perturbed { noise } = self.mode {
            if !(noise > 0.0 && noise.is_finite()) {
                return Err(Error::param(format!("perturbation noise must be positive, got {noise}")));
            }
        }
        Ok(())
    }
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `k * per_cluster` points, cluster-major.
pub fn gen_clusters(spec: &ClusterSpec) -> Result<EmbeddingSequence> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<f64> = (0..spec.k * spec.d)
        .map(|_| rng.random::<f64>() * spec.center_scale)
        .collect();
    let mut data = Vec::with_capacity(spec.k * spec.per_cluster * spec.d);
    for center in centers.chunks_exact(spec.d) {
        for _ in 0..spec.per_cluster {
            if spec.spread == 0.0 {
                data.extend_from_slice(center);
            } else {
                data.extend(center.iter().map(|c| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    c + spec.spread * z
                }));
            }
        }
    }
    EmbeddingSequence::from_flat(data, spec.k * spec.per_cluster, spec.d)
}

/// Returns `(prompt, response)`.
pub fn gen_dependency_pair(spec: &DependencySpec) -> Result<(EmbeddingSequence, EmbeddingSequence)> {
    spec.validate()?;
    let prompt = gen_clusters(&spec.base)?.with_role(Role::Prompt);
    let response = match spec.mode {
        DependencyMode::Identical => prompt.clone(),
        DependencyMode::Perturbed { noise } => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 1));
            let data = prompt
                .as_flat()
                .iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + noise * z
                })
                .collect();
            EmbeddingSequence::from_flat(data, prompt.len(), prompt.dim())?
        }
        DependencyMode::Independent => {
            gen_clusters(&spec.base.with_seed(derive_seed(spec.seed, 2)))?
        }
    };
    Ok((prompt, response.with_role(Role::Response)))
}

/// Settings shared by both experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExperimentConfig {
    pub params: EntropyParams,
    pub bandwidth: Bandwidth,
    pub scope: SigmaScope,
    /// Generator template; `k` and `per_cluster` are overridden by the cluster sweep.
    pub clusters: ClusterSpec,
    pub total_points: usize,
    /// Base generator for the dependency experiment.
    pub dependency_base: ClusterSpec,
    /// Mild perturbation, as a fraction of the base sequence's median distance.
    pub perturb_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            params: EntropyParams::default(),
            bandwidth: Bandwidth::Median,
            scope: SigmaScope::Pooled,
            clusters: ClusterSpec::default(),
            total_points: DEFAULT_TOTAL_POINTS,
            dependency_base: ClusterSpec {
                k: 10,
                per_cluster: 10,
                ..ClusterSpec::default()
            },
            perturb_fraction: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClusterPoint {
    pub k: usize,
    pub seed: u64,
    pub n: usize,
    pub result: EntropyResult,
}

/// Entropy for each `k` at a fixed point budget. `k = 1` uses zero spread,
/// i.e. a sequence of identical vectors.
pub fn cluster_sweep(cfg: &ExperimentConfig, ks: &[usize], seed: u64) -> Result<Vec<ClusterPoint>> {
    ks.iter()
        .map(|&k| {
            let mut spec = cfg.clusters.with_budget(k, cfg.total_points).with_seed(seed);
            if k == 1 {
                spec.spread = 0.0;
            }
            let seq = gen_clusters(&spec)?;
            let result = entropy::sequence_entropy(&seq, &cfg.params, cfg.bandwidth)?;
            Ok(ClusterPoint {
                k,
                seed,
                n: seq.len(),
                result,
            })
        })
        .collect()
}

/// True when entropies strictly increase along the sweep.
pub fn strictly_increasing(points: &[ClusterPoint]) -> bool {
    points.windows(2).all(|w| w[0].result.value < w[1].result.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependencyTrial {
    pub seed: u64,
    /// Absolute per-coordinate noise used for the perturbed response.
    pub noise: f64,
    pub identical: ConditionalEntropyResult,
    pub perturbed: ConditionalEntropyResult,
    pub independent: ConditionalEntropyResult,
}

impl DependencyTrial {
    pub fn ordered(&self) -> bool {
        self.identical.value < self.perturbed.value && self.perturbed.value < self.independent.value
    }
}

/// Median pairwise distance of the base prompt for `seed`.
pub fn base_sigma(base: &ClusterSpec, seed: u64) -> Result<f64> {
    let seq = gen_clusters(&base.with_seed(seed))?;
    kernel::select_bandwidth(&seq, Bandwidth::Median)
}

/// Conditional proxy of one response mode against the base prompt for `seed`.
pub fn dependency_proxy(cfg: &ExperimentConfig, mode: DependencyMode, seed: u64) -> Result<ConditionalEntropyResult> {
    let spec = DependencySpec {
        mode,
        base: cfg.dependency_base.with_seed(seed),
        seed,
    };
    let (prompt, response) = gen_dependency_pair(&spec)?;
    entropy::conditional_entropy(&prompt, &response, &cfg.params, cfg.bandwidth, cfg.scope)
}

pub fn dependency_trial(cfg: &ExperimentConfig, seed: u64) -> Result<DependencyTrial> {
    let noise = cfg.perturb_fraction * base_sigma(&cfg.dependency_base, seed)?;
    Ok(DependencyTrial {
        seed,
        noise,
        identical: dependency_proxy(cfg, DependencyMode::Identical, seed)?,
        perturbed: dependency_proxy(cfg, DependencyMode::Perturbed { noise }, seed)?,
        independent: dependency_proxy(cfg, DependencyMode::Independent, seed)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_when_spread_zero() {
        let spec = ClusterSpec {
            k: 1,
            per_cluster: 50,
            spread: 0.0,
            ..Default::default()
        };
        let s = gen_clusters(&spec).unwrap();
        assert_eq!(s.len(), 50);
        assert_eq!(s.dim(), 64);
        assert!(s.rows().all(|r| r == s.row(0)));
    }

    #[test]
    fn same_seed_same_bits() {
        let spec = ClusterSpec::default().with_seed(42);
        let a = gen_clusters(&spec).unwrap();
        let b = gen_clusters(&spec).unwrap();
        assert!(a.as_flat().iter().zip(b.as_flat()).all(|(x, y)| x.to_bits() == y.to_bits()));
        let c = gen_clusters(&spec.with_seed(43)).unwrap();
        assert_ne!(a.as_flat(), c.as_flat());
    }

    #[test]
    fn budget_split() {
        let s = ClusterSpec::default().with_budget(20, 400);
        assert_eq!(s.per_cluster, 20);
        assert_eq!(ClusterSpec::default().with_budget(1000, 400).per_cluster, 1);
    }

    #[test]
    fn spec_validation() {
        let bad = [
            ClusterSpec { k: 0, ..Default::default() },
            ClusterSpec { d: 0, ..Default::default() },
            ClusterSpec { per_cluster: 0, ..Default::default() },
            ClusterSpec { center_scale: 0.0, ..Default::default() },
            ClusterSpec { spread: -0.1, ..Default::default() },
        ];
        for spec in bad {
            assert!(matches!(gen_clusters(&spec), Err(Error::InvalidParameter(_))));
        }
        let dep = DependencySpec {
            mode: DependencyMode::Perturbed { noise: 0.0 },
            base: ClusterSpec::default(),
            seed: 0,
        };
        assert!(gen_dependency_pair(&dep).is_err());
    }

    #[test]
    fn dependency_modes() {
        let base = ClusterSpec { k: 3, per_cluster: 4, d: 5, ..Default::default() };
        let mk = |mode| DependencySpec { mode, base, seed: 9 };
        let (p, r) = gen_dependency_pair(&mk(DependencyMode::Identical)).unwrap();
        assert_eq!(p.as_flat(), r.as_flat());
        assert_eq!(r.role, Role::Response);

        let (p2, r2) = gen_dependency_pair(&mk(DependencyMode::Perturbed { noise: 0.01 })).unwrap();
        assert_eq!(p.as_flat(), p2.as_flat());
        let max_dev = p2.as_flat().iter().zip(r2.as_flat()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_dev > 0.0 && max_dev < 0.1);

        let (p3, r3) = gen_dependency_pair(&mk(DependencyMode::Independent)).unwrap();
        assert_eq!(p.as_flat(), p3.as_flat());
        assert_eq!(r3.len(), p3.len());
        assert_ne!(p3.as_flat(), r3.as_flat());
    }

    #[test]
    fn derived_seeds_differ() {
        assert_ne!(derive_seed(0, 1), derive_seed(0, 2));
        assert_ne!(derive_seed(0, 1), derive_seed(1, 1));
        assert_eq!(derive_seed(5, 3), derive_seed(5, 3));
    }
}
