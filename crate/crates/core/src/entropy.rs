//! Matrix-based Rényi entropy of Gram matrices and the conditional entropy proxy.
//!
//! For a kernel `K` with `A = K / tr(K)` and eigenvalues `λ_i` of `A`,
//!
//! ```text
//! H_α(K) = log(Σ λ_i^α) / (1 - α)
//! ```
//!
//! The conditional proxy of a response given a prompt is
//! `H_α(K_joint) - H_α(K_pp)`, where `K_joint` is the block kernel over the
//! concatenated points. It can be negative and is reported as-is.

use alloc::borrow::Cow;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{self, Bandwidth, KernelMatrix};
use crate::sequence::EmbeddingSequence;
use crate::spectrum;

pub const DEFAULT_ALPHA: f64 = 1.01;
pub const DEFAULT_EIG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LogBase {
    /// Bits.
    #[default]
    Two,
    /// Nats.
    Natural,
}

impl LogBase {
    /// `log_base(x)`.
    pub fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Two => libm::log2(x),
            LogBase::Natural => libm::log(x),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LogBase::Two => "2",
            LogBase::Natural => "e",
        }
    }
}

impl fmt::Display for LogBase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LogBase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "2" | "two" | "bits" => Ok(LogBase::Two),
            "e" | "natural" | "nats" => Ok(LogBase::Natural),
            other => Err(Error::param(format!("unknown log base {other:?}"))),
        }
    }
}

/// Where the bandwidth for a conditional proxy is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaScope {
    /// Prompt and response points together.
    #[default]
    Pooled,
    /// Prompt points only.
    PromptOnly,
}

impl SigmaScope {
    pub fn as_str(self) -> &'static str {
        match self {
            SigmaScope::Pooled => "pooled",
            SigmaScope::PromptOnly => "prompt-only",
        }
    }
}

impl FromStr for SigmaScope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(SigmaScope::Pooled),
            "prompt-only" | "prompt" => Ok(SigmaScope::PromptOnly),
            other => Err(Error::param(format!("unknown sigma policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyParams {
    /// Rényi order; positive and not 1.
    pub alpha: f64,
    pub log_base: LogBase,
    /// Eigenvalues of the normalized kernel below this are treated as zero.
    pub eig_clamp: f64,
    /// Uniformly subsample sequences longer than this, without replacement.
    pub subsample_cap: Option<usize>,
    /// Seed for subsampling; `None` behaves as 0.
    pub seed: Option<u64>,
}

impl Default for EntropyParams {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            log_base: LogBase::Two,
            eig_clamp: DEFAULT_EIG_CLAMP,
            subsample_cap: None,
            seed: None,
        }
    }
}

impl EntropyParams {
    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    pub fn with_log_base(mut self, log_base: LogBase) -> Self {
        self.log_base = log_base;
        self
    }

    pub fn with_subsample(mut self, cap: usize, seed: u64) -> Self {
        self.subsample_cap = Some(cap);
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) || self.alpha == 1.0 {
            return Err(Error::param(format!(
                "alpha must be positive, finite and not 1, got {}",
                self.alpha
            )));
        }
        if !(self.eig_clamp >= 0.0 && self.eig_clamp.is_finite()) {
            return Err(Error::param(format!(
                "eigenvalue clamp must be nonnegative, got {}",
                self.eig_clamp
            )));
        }
        if self.subsample_cap == Some(0) {
            return Err(Error::param("subsample cap must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyResult {
    pub value: f64,
    pub params: EntropyParams,
    pub sigma: f64,
    /// Points actually used, after subsampling.
    pub n_effective: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionalEntropyResult {
    /// `joint_entropy.value - prompt_entropy.value`.
    pub value: f64,
    pub joint_entropy: EntropyResult,
    pub prompt_entropy: EntropyResult,
}

/// Rényi entropy of the trace-normalized kernel.
pub fn matrix_entropy(k: &KernelMatrix, params: &EntropyParams) -> Result<EntropyResult> {
    params.validate()?;
    if k.trace().is_nan() || k.trace() <= 0.0 {
        return Err(Error::input("kernel trace must be positive"));
    }
    let eigs = spectrum::symmetric_eigenvalues(&k.normalized(), k.dim())?;
    let value = renyi_of_spectrum(&eigs, params)?;
    Ok(EntropyResult {
        value,
        params: *params,
        sigma: k.sigma(),
        n_effective: k.dim(),
    })
}

fn renyi_of_spectrum(eigs: &[f64], params: &EntropyParams) -> Result<f64> {
    let power_sum: f64 = eigs
        .iter()
        .filter(|&&l| l >= params.eig_clamp && l > 0.0)
        .map(|&l| libm::pow(l, params.alpha))
        .sum();
    if !power_sum.is_finite() || power_sum <= 0.0 {
        return Err(Error::Numerical(format!(
            "spectrum power sum is {power_sum}; every eigenvalue was clamped"
        )));
    }
    Ok(params.log_base.log(power_sum) / (1.0 - params.alpha))
}

/// Seeded uniform subsample without replacement; original order is kept.
pub fn subsample<'a>(
    seq: &'a EmbeddingSequence,
    cap: Option<usize>,
    seed: Option<u64>,
) -> Result<Cow<'a, EmbeddingSequence>> {
    match cap {
        Some(0) => Err(Error::param("subsample cap must be positive")),
        Some(cap) if seq.len() > cap => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            let mut idx: Vec<usize> = rand::seq::index::sample(&mut rng, seq.len(), cap).into_vec();
            idx.sort_unstable();
            Ok(Cow::Owned(seq.select(&idx)?))
        }
        _ => Ok(Cow::Borrowed(seq)),
    }
}

/// Entropy of one embedding sequence: subsample, pick σ, build the self-kernel.
pub fn sequence_entropy(
    seq: &EmbeddingSequence,
    params: &EntropyParams,
    bandwidth: Bandwidth,
) -> Result<EntropyResult> {
    params.validate()?;
    let seq = subsample(seq, params.subsample_cap, params.seed)?;
    let sigma = kernel::select_bandwidth(&seq, bandwidth)?;
    let k = kernel::gaussian_self_kernel(&seq, sigma)?;
    matrix_entropy(&k, params)
}

/// `H_α(K_joint) - H_α(K_pp)` under one shared σ.
///
/// Subsampling, when enabled, is applied to prompt and response separately,
/// each from a fresh generator seeded with `params.seed`.
pub fn conditional_entropy(
    prompt: &EmbeddingSequence,
    response: &EmbeddingSequence,
    params: &EntropyParams,
    bandwidth: Bandwidth,
    scope: SigmaScope,
) -> Result<ConditionalEntropyResult> {
    params.validate()?;
    if prompt.dim() != response.dim() {
        return Err(Error::input(format!(
            "dimension mismatch: prompt d={} response d={}",
            prompt.dim(),
            response.dim()
        )));
    }
    let prompt = subsample(prompt, params.subsample_cap, params.seed)?;
    let response = subsample(response, params.subsample_cap, params.seed)?;
    let sigma = match scope {
        SigmaScope::Pooled => kernel::select_bandwidth_pooled(&prompt, &response, bandwidth)?,
        SigmaScope::PromptOnly => kernel::select_bandwidth(&prompt, bandwidth)?,
    };
    let k_pp = kernel::gaussian_self_kernel(&prompt, sigma)?;
    let k_joint = kernel::gaussian_joint_kernel(&prompt, &response, sigma)?;
    let prompt_entropy = matrix_entropy(&k_pp, params)?;
    let joint_entropy = matrix_entropy(&k_joint, params)?;
    Ok(ConditionalEntropyResult {
        value: joint_entropy.value - prompt_entropy.value,
        joint_entropy,
        prompt_entropy,
    })
}
