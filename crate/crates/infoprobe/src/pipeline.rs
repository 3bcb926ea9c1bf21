//! Two-level probing over a trace directory.
//!
//! Prompt level: one entropy row per prompt-role record (every layer,
//! including the embedding layer). Response level: one conditional-entropy
//! row per response record paired with the prompt record that shares its
//! `prompt_id` and `layer`.
//!
//! Failures are collected per record and the run continues. Output rows are
//! sorted by `(prompt_id, layer, metric, record id)` whatever the completion
//! order of the worker pool.

use std::collections::HashMap;
use std::path::Path;

use infoprobe_core::entropy::{conditional_entropy, sequence_entropy};
use infoprobe_core::{Bandwidth, EmbeddingSequence, EntropyParams, Role, SigmaScope};
use rayon::prelude::*;
use serde::Serialize;

use crate::ingest::{load_record, Metric, RecordEntry, ResultRow, TraceManifest};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub params: EntropyParams,
    pub bandwidth: Bandwidth,
    pub scope: SigmaScope,
    /// Scale rows to unit norm before any kernel is built.
    pub normalize_rows: bool,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            params: EntropyParams::default(),
            bandwidth: Bandwidth::Median,
            scope: SigmaScope::Pooled,
            normalize_rows: false,
            jobs: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Prompt,
    Response,
    Both,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureKind {
    /// No prompt record with the same `prompt_id` and `layer`.
    MissingPair { prompt_id: String, layer: Option<u32> },
    /// More than one prompt record with the same `prompt_id` and `layer`.
    AmbiguousPair { prompt_id: String, layer: Option<u32>, candidates: Vec<String> },
    Load { message: String },
    Compute { message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordFailure {
    pub ids: Vec<String>,
    #[serde(flatten)]
    pub kind: FailureKind,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProbeOutcome {
    pub rows: Vec<ResultRow>,
    pub failures: Vec<RecordFailure>,
}

impl ProbeOutcome {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    fn merge(mut self, other: ProbeOutcome) -> Self {
        self.rows.extend(other.rows);
        self.failures.extend(other.failures);
        self
    }
}

fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

fn load(dir: &Path, entry: &RecordEntry, cfg: &ProbeConfig) -> Result<EmbeddingSequence, RecordFailure> {
    let seq = load_record(dir, entry).map_err(|e| RecordFailure {
        ids: vec![entry.id.clone()],
        kind: FailureKind::Load { message: e.to_string() },
    })?;
    Ok(if cfg.normalize_rows { seq.normalize_rows() } else { seq })
}

fn row_for(
    manifest: &TraceManifest,
    entry: &RecordEntry,
    metric: Metric,
    value: f64,
    sigma: f64,
    n_effective: usize,
    cfg: &ProbeConfig,
) -> ResultRow {
    ResultRow {
        model_id: manifest.model_id.clone(),
        prompt_id: entry.prompt_id.clone(),
        role: entry.role.as_str().to_string(),
        modality: entry.modality.as_str().to_string(),
        layer: entry.layer,
        type_tag: entry.type_tag.clone(),
        length_chars: entry.length_chars,
        metric,
        value,
        sigma,
        alpha: cfg.params.alpha,
        log_base: cfg.params.log_base.as_str().to_string(),
        n_effective,
        seed: cfg.params.seed,
    }
}

fn finish(keyed: Vec<(String, Result<ResultRow, RecordFailure>)>, mut failures: Vec<RecordFailure>) -> ProbeOutcome {
    let mut ok = Vec::with_capacity(keyed.len());
    for (id, r) in keyed {
        match r {
            Ok(row) => ok.push((id, row)),
            Err(f) => failures.push(f),
        }
    }
    ok.sort_by(|(ia, a), (ib, b)| (&a.prompt_id, a.layer, a.metric, ia).cmp(&(&b.prompt_id, b.layer, b.metric, ib)));
    failures.sort_by(|a, b| a.ids.cmp(&b.ids));
    ProbeOutcome {
        rows: ok.into_iter().map(|(_, row)| row).collect(),
        failures,
    }
}

/// Entropy of every prompt-role record.
pub fn prompt_level_probe(dir: impl AsRef<Path>, manifest: &TraceManifest, cfg: &ProbeConfig) -> ProbeOutcome {
    let dir = dir.as_ref();
    let prompts: Vec<&RecordEntry> = manifest.records.iter().filter(|r| r.role == Role::Prompt).collect();
    let keyed = in_pool(cfg.jobs, || {
        prompts
            .par_iter()
            .map(|entry| {
                let res = load(dir, entry, cfg).and_then(|seq| {
                    sequence_entropy(&seq, &cfg.params, cfg.bandwidth)
                        .map(|h| row_for(manifest, entry, Metric::Entropy, h.value, h.sigma, h.n_effective, cfg))
                        .map_err(|e| RecordFailure {
                            ids: vec![entry.id.clone()],
                            kind: FailureKind::Compute { message: e.to_string() },
                        })
                });
                (entry.id.clone(), res)
            })
            .collect()
    });
    finish(keyed, Vec::new())
}

/// Pairs each response record with its prompt record.
pub fn pair_records(manifest: &TraceManifest) -> (Vec<(&RecordEntry, &RecordEntry)>, Vec<RecordFailure>) {
    let mut by_key: HashMap<(&str, Option<u32>), Vec<&RecordEntry>> = HashMap::new();
    for r in manifest.records.iter().filter(|r| r.role == Role::Prompt) {
        by_key.entry((r.prompt_id.as_str(), r.layer)).or_default().push(r);
    }
    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for resp in manifest.records.iter().filter(|r| r.role == Role::Response) {
        match by_key.get(&(resp.prompt_id.as_str(), resp.layer)).map(Vec::as_slice) {
            Some([prompt]) => pairs.push((*prompt, resp)),
            Some(many) => failures.push(RecordFailure {
                ids: vec![resp.id.clone()],
                kind: FailureKind::AmbiguousPair {
                    prompt_id: resp.prompt_id.clone(),
                    layer: resp.layer,
                    candidates: many.iter().map(|r| r.id.clone()).collect(),
                },
            }),
            None => failures.push(RecordFailure {
                ids: vec![resp.id.clone()],
                kind: FailureKind::MissingPair { prompt_id: resp.prompt_id.clone(), layer: resp.layer },
            }),
        }
    }
    (pairs, failures)
}

/// Conditional entropy proxy of every paired response record.
///
/// Rows carry the response's role and modality and the prompt's type tag and
/// length, so they group by prompt properties and by generated modality.
pub fn response_level_probe(dir: impl AsRef<Path>, manifest: &TraceManifest, cfg: &ProbeConfig) -> ProbeOutcome {
    let dir = dir.as_ref();
    let (pairs, failures) = pair_records(manifest);
    let keyed = in_pool(cfg.jobs, || {
        pairs
            .par_iter()
            .map(|(prompt_entry, resp_entry)| {
                let res = load(dir, prompt_entry, cfg).and_then(|prompt| {
                    let response = load(dir, resp_entry, cfg)?;
                    conditional_entropy(&prompt, &response, &cfg.params, cfg.bandwidth, cfg.scope)
                        .map(|c| {
                            let mut row = row_for(
                                manifest,
                                resp_entry,
                                Metric::CondEntropy,
                                c.value,
                                c.joint_entropy.sigma,
                                c.joint_entropy.n_effective,
                                cfg,
                            );
                            row.type_tag = prompt_entry.type_tag.clone();
                            row.length_chars = prompt_entry.length_chars;
                            row
                        })
                        .map_err(|e| RecordFailure {
                            ids: vec![prompt_entry.id.clone(), resp_entry.id.clone()],
                            kind: FailureKind::Compute { message: e.to_string() },
                        })
                });
                (resp_entry.id.clone(), res)
            })
            .collect()
    });
    finish(keyed, failures)
}

pub fn probe(dir: impl AsRef<Path>, manifest: &TraceManifest, level: Level, cfg: &ProbeConfig) -> ProbeOutcome {
    let dir = dir.as_ref();
    let out = match level {
        Level::Prompt => prompt_level_probe(dir, manifest, cfg),
        Level::Response => response_level_probe(dir, manifest, cfg),
        Level::Both => prompt_level_probe(dir, manifest, cfg).merge(response_level_probe(dir, manifest, cfg)),
    };
    // Re-sort the merged rows; each half is already canonical.
    let mut rows = out.rows;
    rows.sort_by(|a, b| (&a.prompt_id, a.layer, a.metric).cmp(&(&b.prompt_id, b.layer, b.metric)));
    ProbeOutcome { rows, failures: out.failures }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{Dtype, RecordMeta, TraceWriter};
    use infoprobe_core::Modality;

    fn seq(rows: Vec<Vec<f64>>) -> EmbeddingSequence {
        EmbeddingSequence::from_rows(rows).unwrap()
    }

    fn meta(id: &str, prompt_id: &str, role: Role, layer: Option<u32>) -> RecordMeta {
        RecordMeta {
            id: id.into(),
            prompt_id: prompt_id.into(),
            role,
            modality: Modality::Text,
            layer,
            type_tag: "deductive".into(),
            length_chars: Some(100),
        }
    }

    #[test]
    fn one_prompt_three_layers() {
        let dir = tempfile::tempdir().unwrap();
        let w = TraceWriter::create(dir.path(), "toy").unwrap();
        let s = seq(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]);
        for layer in [None, Some(0), Some(1)] {
            let id = format!("p0-{layer:?}");
            w.write_record(meta(&id, "p0", Role::Prompt, layer), &s, Dtype::F64, false).unwrap();
        }
        let out = prompt_level_probe(dir.path(), &w.manifest(), &ProbeConfig::default());
        assert!(out.succeeded());
        assert_eq!(out.rows.len(), 3);
        assert_eq!(out.rows.iter().map(|r| r.layer).collect::<Vec<_>>(), vec![None, Some(0), Some(1)]);
        assert!(out.rows.iter().all(|r| r.metric == Metric::Entropy && r.model_id == "toy"));
    }

    #[test]
    fn identical_record_zero_and_copy_response_zero() {
        let dir = tempfile::tempdir().unwrap();
        let w = TraceWriter::create(dir.path(), "toy").unwrap();
        let flat = seq(vec![vec![1.0, 1.0]; 6]);
        let s = seq(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0]]);
        w.write_record(meta("flat", "a", Role::Prompt, Some(2)), &flat, Dtype::F32, false).unwrap();
        w.write_record(meta("p", "b", Role::Prompt, Some(2)), &s, Dtype::F64, false).unwrap();
        w.write_record(meta("r", "b", Role::Response, Some(2)), &s, Dtype::F64, false).unwrap();
        let out = probe(dir.path(), &w.manifest(), Level::Both, &ProbeConfig::default());
        assert!(out.succeeded(), "{:?}", out.failures);
        assert_eq!(out.rows.len(), 3);
        assert!(out.rows[0].value.abs() < 1e-9);
        let cond = out.rows.iter().find(|r| r.metric == Metric::CondEntropy).unwrap();
        assert!(cond.value.abs() < 1e-9);
        assert_eq!(cond.role, "response");
        assert_eq!(cond.n_effective, 6);
    }

    #[test]
    fn unmatched_response_is_pairing_failure() {
        let dir = tempfile::tempdir().unwrap();
        let w = TraceWriter::create(dir.path(), "toy").unwrap();
        let s = seq(vec![vec![0.0], vec![1.0]]);
        w.write_record(meta("p", "a", Role::Prompt, Some(0)), &s, Dtype::F64, false).unwrap();
        w.write_record(meta("r0", "a", Role::Response, Some(0)), &s, Dtype::F64, false).unwrap();
        w.write_record(meta("r1", "a", Role::Response, Some(1)), &s, Dtype::F64, false).unwrap();
        let out = response_level_probe(dir.path(), &w.manifest(), &ProbeConfig::default());
        assert_eq!(out.rows.len(), 1);
        assert_eq!(
            out.failures,
            vec![RecordFailure {
                ids: vec!["r1".into()],
                kind: FailureKind::MissingPair { prompt_id: "a".into(), layer: Some(1) },
            }]
        );
    }

    #[test]
    fn ambiguous_prompt_pairing() {
        let dir = tempfile::tempdir().unwrap();
        let w = TraceWriter::create(dir.path(), "toy").unwrap();
        let s = seq(vec![vec![0.0], vec![1.0]]);
        w.write_record(meta("p1", "a", Role::Prompt, None), &s, Dtype::F64, false).unwrap();
        w.write_record(meta("p2", "a", Role::Prompt, None), &s, Dtype::F64, false).unwrap();
        w.write_record(meta("r", "a", Role::Response, None), &s, Dtype::F64, false).unwrap();
        let manifest = w.manifest();
        let (pairs, failures) = pair_records(&manifest);
        assert!(pairs.is_empty());
        assert!(matches!(failures[0].kind, FailureKind::AmbiguousPair { ref candidates, .. } if candidates.len() == 2));
    }

    #[test]
    fn dimension_mismatch_is_compute_failure() {
        let dir = tempfile::tempdir().unwrap();
        let w = TraceWriter::create(dir.path(), "toy").unwrap();
        w.write_record(meta("p", "a", Role::Prompt, None), &seq(vec![vec![0.0, 1.0]]), Dtype::F64, false)
            .unwrap();
        w.write_record(meta("r", "a", Role::Response, None), &seq(vec![vec![0.0]]), Dtype::F64, false)
            .unwrap();
        let out = probe(dir.path(), &w.manifest(), Level::Both, &ProbeConfig::default());
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].ids, vec!["p".to_string(), "r".to_string()]);
        assert!(matches!(out.failures[0].kind, FailureKind::Compute { .. }));
    }
}
