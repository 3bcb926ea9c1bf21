//! Grouped statistics over result rows.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::Serialize;

use crate::ingest::{IngestError, ResultRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    Layer,
    Modality,
    TypeTag,
    LengthBucket,
    Role,
    Metric,
}

impl GroupKey {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupKey::Layer => "layer",
            GroupKey::Modality => "modality",
            GroupKey::TypeTag => "type_tag",
            GroupKey::LengthBucket => "length_bucket",
            GroupKey::Role => "role",
            GroupKey::Metric => "metric",
        }
    }
}

impl FromStr for GroupKey {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, ReportError> {
        Ok(match s {
            "layer" => GroupKey::Layer,
            "modality" => GroupKey::Modality,
            "type_tag" | "type" => GroupKey::TypeTag,
            "length_bucket" | "length" => GroupKey::LengthBucket,
            "role" => GroupKey::Role,
            "metric" => GroupKey::Metric,
            other => return Err(ReportError::UnknownGroupKey(other.to_string())),
        })
    }
}

/// Parses a comma-separated key list, e.g. `layer,modality`.
pub fn parse_group_keys(s: &str) -> Result<Vec<GroupKey>, ReportError> {
    let mut keys: Vec<GroupKey> = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k = part.parse()?;
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    Ok(keys)
}

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("unknown group key {0:?} (expected layer, modality, type_tag, length_bucket, role, metric)")]
    UnknownGroupKey(String),

    #[error("no result rows to aggregate")]
    Empty,

    #[error("length thresholds must be strictly increasing, got {0:?}")]
    BadThresholds(Vec<u64>),

    #[error(transparent)]
    Io(#[from] IngestError),
}

/// How `length_chars` maps to a bucket label.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum LengthBuckets {
    /// short / middle / long thirds of the observed range.
    #[default]
    Thirds,
    /// Explicit ascending cut points; `length < t[0]` is the first bucket.
    Thresholds(Vec<u64>),
}

type Labeler = Box<dyn Fn(Option<u64>) -> String>;

impl LengthBuckets {
    fn labeler(&self, rows: &[ResultRow]) -> Result<Labeler, ReportError> {
        match self {
            LengthBuckets::Thirds => {
                let lens = rows.iter().filter_map(|r| r.length_chars);
                let (lo, hi) = lens.fold((u64::MAX, 0), |(lo, hi), l| (lo.min(l), hi.max(l)));
                let (lo, hi) = (lo as f64, hi as f64);
                let (c1, c2) = (lo + (hi - lo) / 3.0, lo + 2.0 * (hi - lo) / 3.0);
                Ok(Box::new(move |len| match len {
                    None => "na".to_string(),
                    Some(l) if (l as f64) <= c1 => "short".to_string(),
                    Some(l) if (l as f64) <= c2 => "middle".to_string(),
                    Some(_) => "long".to_string(),
                }))
            }
            LengthBuckets::Thresholds(t) => {
                if t.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(ReportError::BadThresholds(t.clone()));
                }
                let t = t.clone();
                let named = t.len() == 2;
                Ok(Box::new(move |len| match len {
                    None => "na".to_string(),
                    Some(l) => {
                        let i = t.iter().take_while(|&&c| c <= l).count();
                        if named {
                            ["short", "middle", "long"][i].to_string()
                        } else {
                            format!("b{i}")
                        }
                    }
                }))
            }
        }
    }
}

/// A group coordinate. Layers order numerically with the embedding layer first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum GroupValue {
    Layer(Option<u32>),
    Text(String),
}

impl fmt::Display for GroupValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupValue::Layer(None) => f.write_str("emb"),
            GroupValue::Layer(Some(l)) => write!(f, "{l}"),
            GroupValue::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub group: Vec<GroupValue>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single row.
    pub stdev: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub keys: Vec<GroupKey>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn key_index(&self, key: GroupKey) -> Option<usize> {
        self.keys.iter().position(|&k| k == key)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ReportError> {
        let mut wtr = csv::Writer::from_writer(w);
        let header: Vec<&str> = self
            .keys
            .iter()
            .map(|k| k.as_str())
            .chain(["mean", "stdev", "count"])
            .collect();
        wtr.write_record(&header).map_err(IngestError::from)?;
        for row in &self.rows {
            let mut rec: Vec<String> = row.group.iter().map(ToString::to_string).collect();
            rec.push(row.mean.to_string());
            rec.push(row.stdev.to_string());
            rec.push(row.count.to_string());
            wtr.write_record(&rec).map_err(IngestError::from)?;
        }
        wtr.flush().map_err(|e| IngestError::Csv(e.into()))?;
        Ok(())
    }
}

/// Mean, sample stdev and count of `value` per group.
///
/// Values inside a group are summed in sorted order, so the table does not
/// depend on input row order.
pub fn aggregate(rows: &[ResultRow], keys: &[GroupKey], buckets: &LengthBuckets) -> Result<ReportTable, ReportError> {
    if rows.is_empty() {
        return Err(ReportError::Empty);
    }
    let bucket = buckets.labeler(rows)?;
    let mut groups: BTreeMap<Vec<GroupValue>, Vec<f64>> = BTreeMap::new();
    for r in rows {
        let group = keys
            .iter()
            .map(|k| match k {
                GroupKey::Layer => GroupValue::Layer(r.layer),
                GroupKey::Modality => GroupValue::Text(r.modality.clone()),
                GroupKey::TypeTag => GroupValue::Text(r.type_tag.clone()),
                GroupKey::LengthBucket => GroupValue::Text(bucket(r.length_chars)),
                GroupKey::Role => GroupValue::Text(r.role.clone()),
                GroupKey::Metric => GroupValue::Text(r.metric.as_str().to_string()),
            })
            .collect();
        groups.entry(group).or_default().push(r.value);
    }
    let rows = groups
        .into_iter()
        .map(|(group, mut values)| {
            values.sort_by(f64::total_cmp);
            let count = values.len();
            let mean = values.iter().sum::<f64>() / count as f64;
            let stdev = if count > 1 {
                (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64).sqrt()
            } else {
                0.0
            };
            ReportRow { group, mean, stdev, count }
        })
        .collect();
    Ok(ReportTable { keys: keys.to_vec(), rows })
}
