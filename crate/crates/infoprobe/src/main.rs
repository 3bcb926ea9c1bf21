use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use infoprobe::chart::{emit_charts, ChartOutcome};
use infoprobe::ingest::{self, Dtype, IngestError, RecordMeta, TraceWriter, MANIFEST_FILE};
use infoprobe::pipeline::{probe, Level, ProbeConfig};
use infoprobe::report::{aggregate, parse_group_keys, LengthBuckets, ReportError};
use infoprobe::validation::{run_validation, ValidationError, VALIDATION_FILE};
use infoprobe_core::entropy::{conditional_entropy, sequence_entropy, DEFAULT_ALPHA};
use infoprobe_core::synth::{
    self, gen_clusters, gen_dependency_pair, ClusterSpec, DependencyMode, DependencySpec, ExperimentConfig,
};
use infoprobe_core::{Bandwidth, EmbeddingSequence, EntropyParams, LogBase, Modality, Role, SigmaScope};
use serde_json::json;

#[derive(Parser)]
#[command(name = "infoprobe", version, about = "Kernel matrix entropy probes for embedding sequences")]
struct Cli {
    /// Worker threads for pipeline and validation runs (0 = all cores).
    #[arg(long, global = true, env = "INFOPROBE_JOBS", default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Entropy of one embedding sequence.
    Entropy {
        /// A numeric file (JSON rows or whitespace/comma separated text) or `<trace dir>#<record id>`.
        #[arg(long)]
        input: String,
        #[command(flatten)]
        opts: EntropyOpts,
    },
    /// Conditional entropy proxy of a response given a prompt.
    Cond {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        response: String,
        #[command(flatten)]
        opts: EntropyOpts,
        #[arg(long, value_enum, default_value_t = SigmaPolicy::Pooled)]
        sigma_policy: SigmaPolicy,
    },
    /// Run the probing pipeline over a trace directory.
    Probe {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value_t = LevelArg::Both)]
        level: LevelArg,
        /// Results CSV path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        opts: EntropyOpts,
        #[arg(long, value_enum, default_value_t = SigmaPolicy::Pooled)]
        sigma_policy: SigmaPolicy,
    },
    /// Aggregate a results CSV and draw layer-wise charts.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Comma-separated subset of layer, modality, type_tag, length_bucket, role, metric.
        #[arg(long, default_value = "layer,metric")]
        group_by: String,
        /// Directory for SVG charts.
        #[arg(long)]
        charts: Option<PathBuf>,
        /// Ascending character-count cut points; default is thirds of the observed range.
        #[arg(long, value_delimiter = ',')]
        length_buckets: Vec<u64>,
        /// Table CSV path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Synthetic data and the validation experiments.
    Synth {
        #[command(subcommand)]
        what: SynthCommand,
    },
    /// Trace format utilities.
    Fmt {
        #[command(subcommand)]
        what: FmtCommand,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Gaussian cluster sequences, one prompt record per (k, seed).
    Clusters {
        #[arg(long, value_delimiter = ',', default_values_t = synth::CLUSTER_SWEEP)]
        k: Vec<usize>,
        /// Points per sequence, split evenly across clusters.
        #[arg(long, default_value_t = synth::DEFAULT_TOTAL_POINTS)]
        total: usize,
        #[command(flatten)]
        gen: GenOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Prompt/response pairs with controlled dependency.
    Dependency {
        #[arg(long, value_enum, default_value_t = ModeArg::All)]
        mode: ModeArg,
        /// Absolute noise stdev for the perturbed mode; default scales the base median distance.
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 10)]
        per_cluster: usize,
        #[command(flatten)]
        gen: GenOpts,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run both validation experiments and write their CSV.
    Validate {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum FmtCommand {
    /// Validate a trace directory, including every payload.
    Check {
        #[arg(long)]
        manifest: PathBuf,
    },
}

#[derive(Args, Clone)]
struct EntropyOpts {
    /// Kernel bandwidth: `auto` (median heuristic) or a positive number.
    #[arg(long, default_value = "auto", value_parser = parse_sigma)]
    sigma: Bandwidth,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// `2` for bits, `e` for nats.
    #[arg(long, default_value = "2")]
    log_base: LogBase,
    /// Keep at most this many rows, sampled uniformly without replacement.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Scale rows to unit norm first.
    #[arg(long)]
    normalize: bool,
}

impl EntropyOpts {
    fn params(&self) -> EntropyParams {
        let mut p = EntropyParams::default().with_alpha(self.alpha).with_log_base(self.log_base);
        p.subsample_cap = self.subsample;
        p.seed = self.seed;
        p
    }

    fn describe(&self) -> serde_json::Value {
        let p = self.params();
        json!({
            "alpha": p.alpha,
            "log_base": p.log_base.as_str(),
            "eig_clamp": p.eig_clamp,
            "bandwidth": self.sigma.to_string(),
            "subsample": p.subsample_cap,
            "seed": p.seed,
            "normalize": self.normalize,
        })
    }
}

#[derive(Args, Clone)]
struct GenOpts {
    #[arg(long, default_value_t = 64)]
    d: usize,
    #[arg(long, default_value_t = 10.0)]
    center_scale: f64,
    #[arg(long, default_value_t = 0.1)]
    spread: f64,
    /// Number of seeds, starting at `--seed`.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum SigmaPolicy {
    Pooled,
    PromptOnly,
}

impl From<SigmaPolicy> for SigmaScope {
    fn from(p: SigmaPolicy) -> Self {
        match p {
            SigmaPolicy::Pooled => SigmaScope::Pooled,
            SigmaPolicy::PromptOnly => SigmaScope::PromptOnly,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LevelArg {
    Prompt,
    Response,
    Both,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Identical,
    Perturbed,
    Independent,
    All,
}

fn parse_sigma(s: &str) -> Result<Bandwidth, String> {
    if s == "auto" || s == "median" {
        return Ok(Bandwidth::Median);
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(Bandwidth::Fixed(v)),
        _ => Err(format!("expected `auto` or a positive number, got {s:?}")),
    }
}

/// An error with its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<infoprobe_core::Error> for Failure {
    fn from(e: infoprobe_core::Error) -> Self {
        let code = match e {
            infoprobe_core::Error::InvalidParameter(_) => 2,
            infoprobe_core::Error::InvalidInput(_) => 3,
            infoprobe_core::Error::Numerical(_) => 4,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<IngestError> for Failure {
    fn from(e: IngestError) -> Self {
        Failure::new(3, e.to_string())
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        let code = match e {
            ReportError::UnknownGroupKey(_) | ReportError::BadThresholds(_) => 2,
            ReportError::Empty | ReportError::Io(_) => 3,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<ValidationError> for Failure {
    fn from(e: ValidationError) -> Self {
        match e {
            ValidationError::Core(e) => e.into(),
            ValidationError::Io(e) => e.into(),
        }
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure::new(3, format!("{}: {e}", path.display()))
}

fn parse_rows(text: &str, origin: &str) -> Result<EmbeddingSequence, Failure> {
    let bad = |msg: String| Failure::new(3, format!("{origin}: {msg}"));
    let rows: Vec<Vec<f64>> = if text.trim_start().starts_with('[') {
        serde_json::from_str(text).map_err(|e| bad(e.to_string()))?
    } else {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .map(str::parse::<f64>)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(format!("line {}: {e}", i + 1)))?;
            rows.push(row);
        }
        rows
    };
    Ok(EmbeddingSequence::from_rows(rows)?.with_id(origin))
}

/// Reads `file` or `dir#record`.
fn read_input(src: &str) -> Result<EmbeddingSequence, Failure> {
    if let Some((dir, id)) = src.rsplit_once('#') {
        let dir = Path::new(dir);
        if dir.join(MANIFEST_FILE).is_file() {
            let manifest = ingest::read_manifest(dir)?;
            let entry = manifest
                .get(id)
                .ok_or_else(|| Failure::new(3, format!("record {id:?} not found in {}", dir.display())))?;
            return Ok(ingest::load_record(dir, entry)?);
        }
    }
    let path = Path::new(src);
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    parse_rows(&text, src)
}

fn read_prepared(src: &str, opts: &EntropyOpts) -> Result<EmbeddingSequence, Failure> {
    let seq = read_input(src)?;
    Ok(if opts.normalize { seq.normalize_rows() } else { seq })
}

fn print_json(v: &serde_json::Value) {
    let mut out = io::stdout().lock();
    let _ = writeln!(out, "{v}");
}

fn merge(mut a: serde_json::Value, b: serde_json::Value) -> serde_json::Value {
    if let (Some(a), serde_json::Value::Object(b)) = (a.as_object_mut(), b) {
        a.extend(b);
    }
    a
}

fn run(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Entropy { input, opts } => {
            let seq = read_prepared(&input, &opts)?;
            let r = sequence_entropy(&seq, &opts.params(), opts.sigma)?;
            print_json(&merge(
                json!({
                    "input": input,
                    "value": r.value,
                    "sigma": r.sigma,
                    "n": seq.len(),
                    "d": seq.dim(),
                    "n_effective": r.n_effective,
                }),
                opts.describe(),
            ));
            Ok(0)
        }
        Command::Cond { prompt, response, opts, sigma_policy } => {
            let p = read_prepared(&prompt, &opts)?;
            let r = read_prepared(&response, &opts)?;
            let scope = SigmaScope::from(sigma_policy);
            let c = conditional_entropy(&p, &r, &opts.params(), opts.sigma, scope)?;
            print_json(&merge(
                json!({
                    "prompt": prompt,
                    "response": response,
                    "value": c.value,
                    "joint_entropy": c.joint_entropy.value,
                    "prompt_entropy": c.prompt_entropy.value,
                    "sigma": c.joint_entropy.sigma,
                    "n_effective": c.joint_entropy.n_effective,
                    "sigma_policy": scope.as_str(),
                }),
                opts.describe(),
            ));
            Ok(0)
        }
        Command::Probe { manifest, level, out, opts, sigma_policy } => {
            opts.params().validate()?;
            let m = ingest::read_manifest(&manifest)?;
            let cfg = ProbeConfig {
                params: opts.params(),
                bandwidth: opts.sigma,
                scope: sigma_policy.into(),
                normalize_rows: opts.normalize,
                jobs: cli.jobs,
            };
            let level = match level {
                LevelArg::Prompt => Level::Prompt,
                LevelArg::Response => Level::Response,
                LevelArg::Both => Level::Both,
            };
            let outcome = probe(&manifest, &m, level, &cfg);
            ingest::write_results(&out, &outcome.rows)?;
            print_json(&merge(
                json!({
                    "results": out,
                    "rows": outcome.rows.len(),
                    "failures": outcome.failures,
                }),
                opts.describe(),
            ));
            Ok(if outcome.succeeded() { 0 } else { 1 })
        }
        Command::Report { results, group_by, charts, length_buckets, out } => {
            let keys = parse_group_keys(&group_by)?;
            let buckets = if length_buckets.is_empty() {
                LengthBuckets::Thirds
            } else {
                LengthBuckets::Thresholds(length_buckets)
            };
            let rows = ingest::read_results(&results)?;
            let table = aggregate(&rows, &keys, &buckets)?;
            match &out {
                Some(path) => {
                    let mut buf = Vec::new();
                    table.write_csv(&mut buf)?;
                    ingest::write_atomic(path, &buf)?;
                }
                None => table.write_csv(io::stdout().lock())?,
            }
            if let Some(dir) = charts {
                match emit_charts(&table, &dir)? {
                    ChartOutcome::Written(paths) => {
                        for p in paths {
                            eprintln!("wrote {}", p.display());
                        }
                    }
                    ChartOutcome::Skipped(why) => eprintln!("warning: no charts written: {why}"),
                }
            }
            Ok(0)
        }
        Command::Synth { what } => synth_command(what, cli.jobs),
        Command::Fmt { what: FmtCommand::Check { manifest } } => Ok(fmt_check(&manifest)),
    }
}

fn cluster_base(gen: &GenOpts) -> ClusterSpec {
    ClusterSpec {
        d: gen.d,
        center_scale: gen.center_scale,
        spread: gen.spread,
        ..ClusterSpec::default()
    }
}

fn synth_command(what: SynthCommand, jobs: usize) -> Result<u8, Failure> {
    match what {
        SynthCommand::Clusters { k, total, gen, out } => {
            let w = TraceWriter::create(&out, "synthetic-clusters")?;
            w.set_metadata("sampler", json!(synth::SAMPLER))?;
            for seed in gen.seed..gen.seed + gen.seeds {
                for &k in &k {
                    let spec = cluster_base(&gen).with_budget(k, total).with_seed(seed);
                    let seq = gen_clusters(&spec)?;
                    let id = format!("k{k}-seed{seed}");
                    let meta = RecordMeta {
                        id: id.clone(),
                        prompt_id: id,
                        role: Role::Prompt,
                        modality: Modality::Other,
                        layer: None,
                        type_tag: format!("k={k}"),
                        length_chars: None,
                    };
                    w.write_record(meta, &seq, Dtype::F64, false)?;
                }
            }
            print_json(&json!({ "manifest": out, "records": w.manifest().records.len() }));
            Ok(0)
        }
        SynthCommand::Dependency { mode, noise, k, per_cluster, gen, out } => {
            let w = TraceWriter::create(&out, "synthetic-dependency")?;
            w.set_metadata("sampler", json!(synth::SAMPLER))?;
            let base = ClusterSpec { k, per_cluster, ..cluster_base(&gen) };
            let fraction = ExperimentConfig::default().perturb_fraction;
            for seed in gen.seed..gen.seed + gen.seeds {
                let noise = match noise {
                    Some(v) => v,
                    None => fraction * synth::base_sigma(&base, seed)?,
                };
                let modes = [
                    (ModeArg::Identical, DependencyMode::Identical),
                    (ModeArg::Perturbed, DependencyMode::Perturbed { noise }),
                    (ModeArg::Independent, DependencyMode::Independent),
                ];
                for (arg, m) in modes {
                    if mode != ModeArg::All && mode != arg {
                        continue;
                    }
                    let spec = DependencySpec { mode: m, base: base.with_seed(seed), seed };
                    let (p, r) = gen_dependency_pair(&spec)?;
                    let prompt_id = format!("{}-seed{seed}", m.name());
                    for (role, seq) in [(Role::Prompt, &p), (Role::Response, &r)] {
                        let meta = RecordMeta {
                            id: format!("{prompt_id}-{}", role.as_str()),
                            prompt_id: prompt_id.clone(),
                            role,
                            modality: Modality::Other,
                            layer: None,
                            type_tag: m.name().to_string(),
                            length_chars: None,
                        };
                        w.write_record(meta, seq, Dtype::F64, false)?;
                    }
                }
            }
            print_json(&json!({ "manifest": out, "records": w.manifest().records.len() }));
            Ok(0)
        }
        SynthCommand::Validate { out } => {
            let cfg = ExperimentConfig::default();
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| Failure::new(2, e.to_string()))?;
            let report = pool.install(|| run_validation(&out, &cfg))?;
            let mut v = serde_json::to_value(&report).map_err(|e| Failure::new(4, e.to_string()))?;
            v["csv"] = json!(out.join(VALIDATION_FILE));
            v["passed"] = json!(report.passed());
            print_json(&v);
            Ok(if report.passed() { 0 } else { 1 })
        }
    }
}

fn fmt_check(dir: &Path) -> u8 {
    let report = match ingest::read_manifest(dir) {
        Err(e) => {
            let violations = match &e {
                IngestError::Invalid(v) => json!(v),
                _ => json!([]),
            };
            json!({ "valid": false, "error": e.to_string(), "violations": violations })
        }
        Ok(m) => {
            let payload_errors: Vec<String> = m
                .records
                .iter()
                .filter_map(|r| ingest::load_record(dir, r).err())
                .map(|e| e.to_string())
                .collect();
            json!({
                "valid": payload_errors.is_empty(),
                "model_id": m.model_id,
                "records": m.records.len(),
                "payload_errors": payload_errors,
            })
        }
    };
    let valid = report["valid"] == json!(true);
    print_json(&report);
    if valid { 0 } else { 3 }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
