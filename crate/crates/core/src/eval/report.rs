use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::DeviationStats;
use crate::error::{Error, Result};

pub const REPORT_SCHEMA_VERSION: &str = "1";

/// Canonical row order of the comparison tables.
pub const METHOD_ORDER: [&str; 3] = ["sim_only", "no_adv", "adversarial"];

/// Everything measured for one method (averaged over its runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    pub runs: usize,
    pub precision: f64,
    pub recall: f64,
    pub map50: Option<f64>,
    pub map50_95: Option<f64>,
    pub center_deviation: Option<DeviationStats>,
    pub layout_miou: Option<f64>,
    pub grasp_success_plain: Option<f64>,
    pub grasp_success_complex: Option<f64>,
}

fn mean_opt(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = vals.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl MethodMetrics {
    /// Averages runs of the same method. Absent values are skipped.
    pub fn average(method: &str, runs: &[MethodMetrics]) -> Result<MethodMetrics> {
        if runs.is_empty() {
            return Err(Error::EmptyInput("method runs"));
        }
        let n = runs.len() as f64;
        let devs: Vec<DeviationStats> = runs.iter().filter_map(|r| r.center_deviation).collect();
        let center_deviation = (!devs.is_empty()).then(|| {
            let k = devs.len() as f64;
            DeviationStats {
                mean: devs.iter().map(|d| d.mean).sum::<f64>() / k,
                median: devs.iter().map(|d| d.median).sum::<f64>() / k,
                max: devs.iter().map(|d| d.max).fold(0.0, f64::max),
                count: devs.iter().map(|d| d.count).sum(),
            }
        });
        Ok(MethodMetrics {
            method: method.to_string(),
            runs: runs.iter().map(|r| r.runs).sum(),
            precision: runs.iter().map(|r| r.precision).sum::<f64>() / n,
            recall: runs.iter().map(|r| r.recall).sum::<f64>() / n,
            map50: mean_opt(runs.iter().map(|r| r.map50)),
            map50_95: mean_opt(runs.iter().map(|r| r.map50_95)),
            center_deviation,
            layout_miou: mean_opt(runs.iter().map(|r| r.layout_miou)),
            grasp_success_plain: mean_opt(runs.iter().map(|r| r.grasp_success_plain)),
            grasp_success_complex: mean_opt(runs.iter().map(|r| r.grasp_success_complex)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: String,
    pub methods: Vec<MethodMetrics>,
}

fn method_rank(name: &str) -> usize {
    METHOD_ORDER.iter().position(|m| *m == name).unwrap_or(METHOD_ORDER.len())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.4}"))
}

fn md_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.3}"))
}

pub const CSV_HEADER: &str = "method,runs,P,R,mAP50,mAP50-95,center_dev_mean,center_dev_median,center_dev_max,layout_mIoU,grasp_plain,grasp_complex";

/// Groups per-run metrics by method, averages each group and orders the
/// rows sim_only, no_adv, adversarial, then anything else by name.
pub fn build_report(runs: &[MethodMetrics]) -> Result<MetricsReport> {
    if runs.is_empty() {
        return Err(Error::EmptyInput("report input"));
    }
    let mut names: Vec<&str> = runs.iter().map(|r| r.method.as_str()).collect();
    names.sort_by(|a, b| method_rank(a).cmp(&method_rank(b)).then(a.cmp(b)));
    names.dedup();
    let methods = names
        .iter()
        .map(|name| {
            let group: Vec<MethodMetrics> = runs.iter().filter(|r| r.method == *name).cloned().collect();
            MethodMetrics::average(name, &group)
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        schema_version: REPORT_SCHEMA_VERSION.into(),
        methods,
    })
}

impl MetricsReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for m in &self.methods {
            let d = m.center_deviation;
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{},{},{},{},{},{},{},{}",
                m.method,
                m.runs,
                m.precision,
                m.recall,
                fmt_opt(m.map50),
                fmt_opt(m.map50_95),
                fmt_opt(d.map(|d| d.mean)),
                fmt_opt(d.map(|d| d.median)),
                fmt_opt(d.map(|d| d.max)),
                fmt_opt(m.layout_miou),
                fmt_opt(m.grasp_success_plain),
                fmt_opt(m.grasp_success_complex),
            );
        }
        s
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("## Detection and layout fidelity (real-style test split)\n\n");
        s.push_str("| Method | P | R | mAP50 | mAP50-95 | Center dev. (px) | Layout mIoU |\n");
        s.push_str("|---|---|---|---|---|---|---|\n");
        for m in &self.methods {
            let _ = writeln!(
                s,
                "| {} | {:.3} | {:.3} | {} | {} | {} | {} |",
                m.method,
                m.precision,
                m.recall,
                md_opt(m.map50),
                md_opt(m.map50_95),
                md_opt(m.center_deviation.map(|d| d.mean)),
                md_opt(m.layout_miou),
            );
        }
        s.push_str("\n## Grasp success rate\n\n| Background |");
        for m in &self.methods {
            let _ = write!(s, " {} |", m.method);
        }
        s.push_str("\n|---|");
        s.push_str(&"---|".repeat(self.methods.len()));
        s.push('\n');
        for (label, pick) in [
            ("Plain", (|m: &MethodMetrics| m.grasp_success_plain) as fn(&MethodMetrics) -> Option<f64>),
            ("Complex", |m: &MethodMetrics| m.grasp_success_complex),
        ] {
            let _ = write!(s, "| {label} |");
            for m in &self.methods {
                let _ = write!(s, " {} |", md_opt(pick(m)));
            }
            s.push('\n');
        }
        s
    }

    /// Writes `report.json`, `report.csv` and `report.md` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("report.json", serde_json::to_string_pretty(self)?)?;
        put("report.csv", self.to_csv())?;
        put("report.md", self.to_markdown())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: MetricsReport = serde_json::from_str(&text)?;
        if r.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::FormatVersion {
                what: "report",
                found: r.schema_version,
                expected: REPORT_SCHEMA_VERSION.into(),
            });
        }
        Ok(r)
    }
}
