//! Layer-wise SVG line charts from a [`ReportTable`].
//!
//! x is the layer (the embedding layer sits left of layer 0), y is the group
//! mean. Rows sharing every non-layer key form one series. When the table is
//! grouped by metric, each metric gets its own file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::ingest::{write_atomic, IngestError};
use crate::report::{GroupKey, GroupValue, ReportTable};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 40.0;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChartOutcome {
    Written(Vec<PathBuf>),
    /// Nothing to draw; the string says why.
    Skipped(String),
}

type Series = BTreeMap<String, Vec<(i64, f64)>>;

fn layer_x(v: &GroupValue) -> i64 {
    match v {
        GroupValue::Layer(Some(l)) => i64::from(*l),
        _ => -1,
    }
}

/// Writes one SVG per metric into `out_dir`.
pub fn emit_charts(table: &ReportTable, out_dir: impl AsRef<Path>) -> Result<ChartOutcome, IngestError> {
    if table.is_empty() {
        return Ok(ChartOutcome::Skipped("empty report table".into()));
    }
    let Some(li) = table.key_index(GroupKey::Layer) else {
        return Ok(ChartOutcome::Skipped("table is not grouped by layer".into()));
    };
    let mi = table.key_index(GroupKey::Metric);

    let mut charts: BTreeMap<String, Series> = BTreeMap::new();
    for row in &table.rows {
        let metric = mi.map_or_else(|| "value".to_string(), |i| row.group[i].to_string());
        let label: Vec<String> = row
            .group
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != li && Some(i) != mi)
            .map(|(_, v)| v.to_string())
            .collect();
        let label = if label.is_empty() { "all".to_string() } else { label.join(" / ") };
        charts
            .entry(metric)
            .or_default()
            .entry(label)
            .or_default()
            .push((layer_x(&row.group[li]), row.mean));
    }

    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(crate::ingest::io_err(out_dir))?;
    let mut written = Vec::new();
    for (metric, mut series) in charts {
        for pts in series.values_mut() {
            pts.sort_by_key(|p| p.0);
        }
        let path = out_dir.join(format!("{metric}.svg"));
        write_atomic(&path, render(&metric, &series).as_bytes())?;
        written.push(path);
    }
    Ok(ChartOutcome::Written(written))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn render(title: &str, series: &Series) -> String {
    let all = series.values().flatten();
    let (mut x0, mut x1) = (i64::MAX, i64::MIN);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x0 == x1 {
        x1 = x0 + 1;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: i64| LEFT + (x - x0) as f64 / (x1 - x0) as f64 * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT},{TOP}V{:.2}H{:.2}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );

    let step = ((x1 - x0) as f64 / 10.0).ceil().max(1.0) as i64;
    let mut x = x0;
    while x <= x1 {
        let label = if x < 0 { "emb".to_string() } else { x.to_string() };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            sx(x),
            TOP + ph + 15.0
        );
        x += step;
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">layer</text>"#, LEFT + pw / 2.0, HEIGHT - 6.0);
    for i in 0..=4 {
        let y = y0 + (y1 - y0) * f64::from(i) / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.3}</text>"#, LEFT - 6.0, sy(y) + 4.0);
    }

    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 14.0 * i as f64 + 10.0;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<path d="M{lx:.2},{ly:.2}h16" stroke="{color}" stroke-width="2"/>"#);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 20.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::report::ReportRow;

    fn table(rows: &[(Option<u32>, &str, f64)]) -> ReportTable {
        ReportTable {
            keys: vec![GroupKey::Layer, GroupKey::Modality],
            rows: rows
                .iter()
                .map(|&(l, m, v)| ReportRow {
                    group: vec![GroupValue::Layer(l), GroupValue::Text(m.into())],
                    mean: v,
                    stdev: 0.0,
                    count: 1,
                })
                .collect(),
        }
    }

    #[test]
    fn empty_table_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = emit_charts(&table(&[]), dir.path()).unwrap();
        assert!(matches!(out, ChartOutcome::Skipped(_)));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn one_series_three_points() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(&[(None, "text", 1.0), (Some(0), "text", 2.0), (Some(1), "text", 1.5)]);
        let ChartOutcome::Written(paths) = emit_charts(&t, dir.path()).unwrap() else { panic!() };
        assert_eq!(paths.len(), 1);
        let svg = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(svg.matches("<polyline").count(), 1);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(pts.split(' ').count(), 3);
        assert!(svg.contains(">emb<"));
    }

    #[test]
    fn deterministic_bytes() {
        let t = table(&[(Some(0), "text", 1.0), (Some(1), "image", 2.0), (Some(1), "text", 0.5)]);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        emit_charts(&t, a.path()).unwrap();
        emit_charts(&t, b.path()).unwrap();
        let read = |d: &Path| std::fs::read(d.join("value.svg")).unwrap();
        assert_eq!(read(a.path()), read(b.path()));
        assert_eq!(String::from_utf8(read(a.path())).unwrap().matches("<polyline").count(), 2);
    }

    #[test]
    fn needs_layer_key() {
        let mut t = table(&[(Some(0), "text", 1.0)]);
        t.keys = vec![GroupKey::Modality];
        t.rows[0].group.remove(0);
        assert!(matches!(emit_charts(&t, "/nonexistent").unwrap(), ChartOutcome::Skipped(_)));
    }
}
