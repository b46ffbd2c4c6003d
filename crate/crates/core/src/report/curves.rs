use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::alloop::{aggregate_runs, load_run, Aggregate, ExperimentConfig, RunResult, RUN_FILE};
use crate::datapool::checkpoint::write_atomic;
use crate::error::{Error, Result};
use crate::nn::OptimizerKind;
use crate::sampling::Strategy;
use crate::vnn::Variant;

/// One accuracy-vs-budget line.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    pub label: String,
    pub x: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub y_std: Vec<f64>,
    /// Built from a single seed; drawn without an error band.
    pub single_run: bool,
}

impl CurveSet {
    pub fn from_aggregate(agg: &Aggregate) -> Result<Self> {
        let curve = CurveSet {
            label: curve_label(agg),
            x: agg.stages.iter().map(|s| s.labeled_fraction).collect(),
            y_mean: agg.stages.iter().map(|s| s.acc_mean).collect(),
            y_std: agg.stages.iter().map(|s| s.acc_std).collect(),
            single_run: agg.single_run,
        };
        if curve.x.is_empty() {
            return Err(Error::Aggregation(format!("curve {} has no points", curve.label)));
        }
        if curve.y_mean.iter().any(|y| !(0.0..=1.0).contains(y)) {
            return Err(Error::Aggregation(format!("curve {} has accuracies outside [0, 1]", curve.label)));
        }
        if curve.x.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Aggregation(format!("curve {} has a decreasing budget axis", curve.label)));
        }
        Ok(curve)
    }

    pub fn final_accuracy(&self) -> f64 {
        *self.y_mean.last().expect("curves are non-empty")
    }
}

pub fn curve_label(agg: &Aggregate) -> String {
    format!("{}/{}/{}/{}", agg.name, agg.strategy, variant_name(agg.variant), optimizer_name(agg.optimizer))
}

fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::M1 => "m1",
        Variant::M2 => "m2",
    }
}

fn optimizer_name(o: OptimizerKind) -> &'static str {
    match o {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
    }
}

#[derive(Debug, Serialize)]
struct CurveRow<'a> {
    strategy: Strategy,
    variant: &'a str,
    optimizer: &'a str,
    stage: usize,
    labeled_count: usize,
    labeled_fraction: f64,
    acc_mean: f64,
    acc_std: f64,
    n_seeds: usize,
}

/// Curve rows in the published schema.
pub fn curve_csv(aggregates: &[&Aggregate]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for agg in aggregates {
        for s in &agg.stages {
            w.serialize(CurveRow {
                strategy: agg.strategy,
                variant: variant_name(agg.variant),
                optimizer: optimizer_name(agg.optimizer),
                stage: s.stage,
                labeled_count: s.labeled_count,
                labeled_fraction: s.labeled_fraction,
                acc_mean: s.acc_mean,
                acc_std: s.acc_std,
                n_seeds: s.n_seeds,
            })?;
        }
    }
    w.into_inner().map_err(|e| Error::Contract(e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedCurves {
    pub csv_paths: Vec<PathBuf>,
    pub plot_path: PathBuf,
    /// Labels in legend order, highest final accuracy first.
    pub legend: Vec<String>,
    /// Curves drawn without an error band because only one seed ran.
    pub single_run: Vec<String>,
}

fn file_stem(label: &str) -> String {
    label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

/// Writes `<out_dir>/<label>.csv` for every curve and one SVG figure
/// `<out_dir>/<figure>.svg`.
pub fn emit_curves(aggregates: &[Aggregate], out_dir: &Path, figure: &str) -> Result<EmittedCurves> {
    if aggregates.is_empty() {
        return Err(Error::Aggregation("no curves to emit".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut csv_paths = Vec::new();
    let mut curves = Vec::new();
    for agg in aggregates {
        let curve = CurveSet::from_aggregate(agg)?;
        let path = out_dir.join(format!("{}.csv", file_stem(&curve.label)));
        write_atomic(&path, &curve_csv(&[agg])?)?;
        csv_paths.push(path);
        curves.push(curve);
    }
    curves.sort_by(|a, b| b.final_accuracy().total_cmp(&a.final_accuracy()).then_with(|| a.label.cmp(&b.label)));
    let single_run: Vec<String> = curves.iter().filter(|c| c.single_run).map(|c| c.label.clone()).collect();
    for label in &single_run {
        tracing::warn!(curve = %label, "single seed; no error band");
    }
    let plot_path = out_dir.join(format!("{}.svg", file_stem(figure)));
    write_atomic(&plot_path, render_svg(&curves, figure).as_bytes())?;
    Ok(EmittedCurves { csv_paths, plot_path, legend: curves.iter().map(|c| c.label.clone()).collect(), single_run })
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart of accuracy against labeled fraction, legend in the given
/// curve order.
pub fn render_svg(curves: &[CurveSet], title: &str) -> String {
    let (w, h) = (720.0, 460.0);
    let (left, right, top, bottom) = (70.0, 230.0, 40.0, 60.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let xs = curves.iter().flat_map(|c| c.x.iter().copied());
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if x1 - x0 < 1e-12 {
        x0 -= 0.05;
        x1 += 0.05;
    }
    let lows = curves.iter().flat_map(|c| c.y_mean.iter().zip(&c.y_std).map(|(m, s)| m - s));
    let highs = curves.iter().flat_map(|c| c.y_mean.iter().zip(&c.y_std).map(|(m, s)| m + s));
    let y0 = (lows.fold(f64::INFINITY, f64::min) * 20.0).floor() / 20.0;
    let y1 = (highs.fold(f64::NEG_INFINITY, f64::max) * 20.0).ceil() / 20.0;
    let (y0, y1) = (y0.max(0.0), y1.min(1.0).max(y0.max(0.0) + 0.05));
    let px = |x: f64| left + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + pw / 2.0, escape(title));
    for i in 0..=5 {
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{:.2}" y2="{:.2}" stroke="#ddd"/>"##, left + pw, py(fy), py(fy));
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{:.3}</text>"#, left - 6.0, py(fy) + 4.0, fy);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{:.1}%</text>"#, px(fx), top + ph + 18.0, fx * 100.0);
    }
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">labeled fraction</text>"#, left + pw / 2.0, h - 15.0);
    let _ = writeln!(s, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">accuracy</text>"#, top + ph / 2.0, top + ph / 2.0);

    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if !c.single_run {
            let upper = c.x.iter().zip(c.y_mean.iter().zip(&c.y_std)).map(|(&x, (m, sd))| format!("{:.2},{:.2}", px(x), py((m + sd).min(1.0))));
            let lower = c.x.iter().zip(c.y_mean.iter().zip(&c.y_std)).rev().map(|(&x, (m, sd))| format!("{:.2},{:.2}", px(x), py((m - sd).max(0.0))));
            let pts: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#, pts.join(" "));
        }
        let pts: Vec<String> = c.x.iter().zip(&c.y_mean).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(s, r#"<line x1="{lx}" x2="{}" y1="{ly}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#, lx + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{} ({:.3})</text>"#, lx + 26.0, ly + 4.0, escape(&c.label), c.final_accuracy());
    }
    s.push_str("</svg>\n");
    s
}

/// Every run directory below `root`, in path order.
pub fn collect_runs(root: &Path) -> Result<Vec<RunResult>> {
    let mut dirs = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        if dir.join(RUN_FILE).exists() {
            dirs.push(dir);
            continue;
        }
        let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&dir, e))?.path();
            if path.is_dir() {
                stack.push(path);
            }
        }
    }
    dirs.sort();
    dirs.iter().map(|d| load_run(d)).collect()
}

/// Groups runs that differ only in seed and aggregates each group. Groups
/// come out ordered by curve label.
pub fn aggregate_groups(runs: &[RunResult]) -> Result<Vec<Aggregate>> {
    let mut groups: BTreeMap<String, Vec<RunResult>> = BTreeMap::new();
    for r in runs {
        let key = ExperimentConfig { seeds: Vec::new(), ..r.config.clone() }.to_toml()?;
        groups.entry(key).or_default().push(r.clone());
    }
    let mut out = groups.values().map(|g| aggregate_runs(g)).collect::<Result<Vec<_>>>()?;
    out.sort_by_key(curve_label);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OodRow {
    pub experiment: String,
    pub strategy: Strategy,
    pub seed: u64,
    pub rejected_ood: usize,
    pub final_labeled: usize,
    pub final_accuracy: f64,
}

/// Oracle rejections per run.
pub fn ood_summary(runs: &[RunResult]) -> Vec<OodRow> {
    runs.iter()
        .filter_map(|r| {
            let last = r.stages.last()?;
            Some(OodRow {
                experiment: r.config.name.clone(),
                strategy: r.config.strategy,
                seed: r.seed,
                rejected_ood: r.stages.iter().map(|s| s.rejected_ood).sum(),
                final_labeled: last.labeled,
                final_accuracy: last.accuracy,
            })
        })
        .collect()
}

pub fn ood_csv(rows: &[OodRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Contract(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alloop::AggregateStage;

    fn agg(name: &str, accs: &[f64], single: bool) -> Aggregate {
        Aggregate {
            name: name.into(),
            strategy: Strategy::Uncertainty,
            variant: Variant::M2,
            optimizer: OptimizerKind::Adam,
            stages: accs
                .iter()
                .enumerate()
                .map(|(t, &a)| AggregateStage {
                    stage: t,
                    labeled_count: 100 * (t + 2),
                    labeled_fraction: 0.05 * (t + 2) as f64,
                    acc_mean: a,
                    acc_std: if single { 0.0 } else { 0.01 },
                    n_seeds: if single { 1 } else { 5 },
                })
                .collect(),
            single_run: single,
        }
    }

    #[test]
    fn shape_and_legend_order() {
        let dir = tempfile::tempdir().unwrap();
        let aggs: Vec<Aggregate> = ["a", "b", "c", "d"].iter().map(|n| agg(n, &[0.5; 7], false)).collect();
        let out = emit_curves(&aggs, dir.path(), "fig").unwrap();
        assert_eq!(out.csv_paths.len(), 4);
        for p in &out.csv_paths {
            assert_eq!(std::fs::read_to_string(p).unwrap().lines().count(), 8);
        }

        let aggs = vec![agg("low", &[0.4, 0.54], false), agg("high", &[0.3, 0.61], true)];
        let out = emit_curves(&aggs, dir.path(), "fig2").unwrap();
        assert_eq!(out.legend, vec!["high/uncertainty/m2/adam", "low/uncertainty/m2/adam"]);
        assert_eq!(out.single_run, vec!["high/uncertainty/m2/adam"]);
        let svg = std::fs::read_to_string(&out.plot_path).unwrap();
        assert!(svg.find("high/").unwrap() < svg.find("low/").unwrap());
        assert_eq!(svg.matches("<polygon").count(), 1);
        assert!(matches!(emit_curves(&[], dir.path(), "x"), Err(Error::Aggregation(_))));
    }

    #[test]
    fn csv_schema_and_byte_stability() {
        let a = agg("a", &[0.5, 0.6], false);
        let bytes = curve_csv(&[&a]).unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert!(text.starts_with("strategy,variant,optimizer,stage,labeled_count,labeled_fraction,acc_mean,acc_std,n_seeds\n"));
        assert!(text.contains("uncertainty,m2,adam,1,300,0.15000000000000002,0.6,0.01,5"));
        assert_eq!(bytes, curve_csv(&[&a]).unwrap());
    }
}
