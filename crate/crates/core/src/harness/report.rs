use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::LcaMetrics;
use crate::error::Result;

pub const TABLE1_FILE: &str = "table1_weights.csv";
pub const TABLE2_FILE: &str = "table2_lca.csv";
pub const REPLICATES_FILE: &str = "replicates.csv";
pub const FIGURE_FILE: &str = "weight_bias.svg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub scenario: String,
    pub replicate: usize,
    pub model: String,
    pub n_nps: usize,
    pub n_ps: usize,
    pub overlap: f64,
    pub wts_abs_bias: f64,
    pub k_hat: Option<usize>,
    pub metrics: Option<LcaMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub replicate: usize,
    pub message: String,
}

/// Replicate means of one model in one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub model: String,
    pub replicates: usize,
    pub overlap: f64,
    pub wts_abs_bias: f64,
    pub metrics: Option<LcaMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub sample_size: String,
    pub overlap: String,
    pub models: Vec<String>,
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<ReplicateFailure>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl ScenarioReport {
    pub fn model_records<'a>(
        &'a self,
        model: &'a str,
    ) -> impl Iterator<Item = &'a ReplicateRecord> + 'a {
        self.records.iter().filter(move |r| r.model == model)
    }

    /// The record of `model` in replicate `r`, if it succeeded.
    pub fn record<'a>(&'a self, model: &'a str, r: usize) -> Option<&'a ReplicateRecord> {
        self.model_records(model).find(|x| x.replicate == r)
    }

    pub fn aggregate(&self) -> Vec<AggregateRow> {
        self.models
            .iter()
            .map(|m| {
                let recs: Vec<&ReplicateRecord> = self.model_records(m).collect();
                let ms: Vec<LcaMetrics> = recs.iter().filter_map(|r| r.metrics).collect();
                let metrics = (!ms.is_empty()).then(|| {
                    let avg = |f: fn(&LcaMetrics) -> f64| {
                        mean(ms.iter().map(f).filter(|x| x.is_finite()))
                    };
                    LcaMetrics {
                        k_abs_bias: avg(|x| x.k_abs_bias),
                        pi_abs_bias: avg(|x| x.pi_abs_bias),
                        theta_abs_bias: avg(|x| x.theta_abs_bias),
                        pi_ci_width: avg(|x| x.pi_ci_width),
                        theta_ci_width: avg(|x| x.theta_ci_width),
                        pi_coverage: avg(|x| x.pi_coverage),
                        theta_coverage: avg(|x| x.theta_coverage),
                    }
                });
                AggregateRow {
                    scenario: self.scenario.clone(),
                    model: m.clone(),
                    replicates: recs.len(),
                    overlap: mean(recs.iter().map(|r| r.overlap)),
                    wts_abs_bias: mean(recs.iter().map(|r| r.wts_abs_bias)),
                    metrics,
                }
            })
            .collect()
    }
}

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.6}")
    } else {
        "NA".into()
    }
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn put(w: &mut csv::Writer<fs::File>, row: &[String]) -> Result<()> {
    Ok(w.write_record(row)?)
}

fn finish(mut w: csv::Writer<fs::File>) -> Result<()> {
    Ok(w.flush()?)
}

fn write_table1(path: &Path, reports: &[&ScenarioReport]) -> Result<()> {
    let mut models: Vec<String> = Vec::new();
    for r in reports {
        for m in &r.models {
            if !models.contains(m) {
                models.push(m.clone());
            }
        }
    }
    let mut w = writer(path)?;
    let mut header = vec!["Sample Size".to_string(), "Overlap".to_string()];
    header.extend(models.iter().cloned());
    put(&mut w, &header)?;
    for r in reports {
        let agg = r.aggregate();
        let mut row = vec![r.sample_size.clone(), r.overlap.clone()];
        for m in &models {
            row.push(
                agg.iter()
                    .find(|a| &a.model == m)
                    .map_or("NA".into(), |a| num(a.wts_abs_bias)),
            );
        }
        put(&mut w, &row)?;
    }
    finish(w)
}

fn write_table2(path: &Path, reports: &[&ScenarioReport]) -> Result<()> {
    let mut w = writer(path)?;
    put(
        &mut w,
        &[
            "Scenario",
            "Model",
            "Wts Abs Bias",
            "K Abs Bias",
            "π Abs Bias",
            "θ Abs Bias",
            "π CI Width",
            "θ CI Width",
            "π Cov",
            "θ Cov",
        ]
        .map(String::from),
    )?;
    for r in reports {
        for a in r.aggregate() {
            let Some(m) = a.metrics else { continue };
            put(
                &mut w,
                &[
                    a.scenario.clone(),
                    a.model.clone(),
                    num(a.wts_abs_bias),
                    num(m.k_abs_bias),
                    num(m.pi_abs_bias),
                    num(m.theta_abs_bias),
                    num(m.pi_ci_width),
                    num(m.theta_ci_width),
                    num(m.pi_coverage),
                    num(m.theta_coverage),
                ],
            )?;
        }
    }
    finish(w)
}

fn write_replicates(path: &Path, reports: &[ScenarioReport]) -> Result<()> {
    let mut w = writer(path)?;
    put(
        &mut w,
        &[
            "scenario",
            "replicate",
            "model",
            "n_nps",
            "n_ps",
            "overlap",
            "wts_abs_bias",
            "k_hat",
            "k_abs_bias",
            "pi_abs_bias",
            "theta_abs_bias",
            "pi_ci_width",
            "theta_ci_width",
            "pi_cov",
            "theta_cov",
        ]
        .map(String::from),
    )?;
    for rep in reports {
        for r in &rep.records {
            let mut row = vec![
                r.scenario.clone(),
                r.replicate.to_string(),
                r.model.clone(),
                r.n_nps.to_string(),
                r.n_ps.to_string(),
                num(r.overlap),
                num(r.wts_abs_bias),
                r.k_hat.map_or("NA".into(), |k| k.to_string()),
            ];
            match r.metrics {
                Some(m) => row.extend(
                    [
                        m.k_abs_bias,
                        m.pi_abs_bias,
                        m.theta_abs_bias,
                        m.pi_ci_width,
                        m.theta_ci_width,
                        m.pi_coverage,
                        m.theta_coverage,
                    ]
                    .map(num),
                ),
                None => row.extend(std::iter::repeat_n("NA".to_string(), 7)),
            }
            put(&mut w, &row)?;
        }
    }
    finish(w)
}

/// Beeswarm of per-replicate weight bias, one column per scenario and model.
fn beeswarm_svg(reports: &[&ScenarioReport]) -> String {
    let groups: Vec<(String, Vec<f64>)> = reports
        .iter()
        .flat_map(|r| {
            r.models.iter().map(move |m| {
                (
                    format!("{} {m}", r.scenario),
                    r.model_records(m)
                        .map(|x| x.wts_abs_bias)
                        .collect::<Vec<_>>(),
                )
            })
        })
        .collect();
    let (w_col, height, pad) = (90.0, 360.0, 50.0);
    let width = pad * 2.0 + w_col * groups.len().max(1) as f64;
    let ymax = groups
        .iter()
        .flat_map(|g| g.1.iter().copied())
        .filter(|x| x.is_finite())
        .fold(0.0_f64, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    let y = |v: f64| height - pad - (v / ymax) * (height - 2.0 * pad);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" font-family="sans-serif" font-size="10">"#,
        height + 60.0
    );
    let _ = writeln!(
        s,
        r#"<line x1="{pad}" y1="{:.1}" x2="{pad}" y2="{pad}" stroke="black"/>"#,
        height - pad
    );
    for t in 0..=4 {
        let v = ymax * t as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            pad - 4.0,
            y(v) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" transform="rotate(-90 12 {:.1})" text-anchor="middle">mean absolute weight bias</text>"#,
        height / 2.0,
        height / 2.0
    );
    for (g, (label, values)) in groups.iter().enumerate() {
        let cx = pad + w_col * (g as f64 + 0.5);
        let mut placed: Vec<(f64, f64)> = Vec::new();
        let mut sorted: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
        sorted.sort_by(f64::total_cmp);
        for v in sorted {
            let cy = y(v);
            let mut step = 0usize;
            let cx_pt = loop {
                let off = step.div_ceil(2) as f64 * 5.0 * if step % 2 == 1 { 1.0 } else { -1.0 };
                let x = cx + off;
                if placed.iter().all(|(px, py)| (px - x).hypot(py - cy) >= 5.0)
                    || off.abs() > w_col / 2.0
                {
                    break x;
                }
                step += 1;
            };
            placed.push((cx_pt, cy));
            let _ = writeln!(
                s,
                r##"<circle cx="{cx_pt:.1}" cy="{cy:.1}" r="2.4" fill="#3366aa" fill-opacity="0.8"/>"##
            );
        }
        let ty = height - pad + 14.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{ty:.1}" text-anchor="end" transform="rotate(-35 {cx:.1} {ty:.1})">{label}</text>"#
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes the weight table, the latent class table, the per-replicate long
/// table and the beeswarm figure into `dir`. Returns the files written.
pub fn emit_report(reports: &[ScenarioReport], dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let set1: Vec<&ScenarioReport> = reports
        .iter()
        .filter(|r| r.scenario.starts_with('1'))
        .collect();
    let set2: Vec<&ScenarioReport> = reports
        .iter()
        .filter(|r| !r.scenario.starts_with('1'))
        .collect();
    let mut out = Vec::new();
    if !set1.is_empty() {
        let p = dir.join(TABLE1_FILE);
        write_table1(&p, &set1)?;
        out.push(p);
        let p = dir.join(FIGURE_FILE);
        fs::write(&p, beeswarm_svg(&set1))?;
        out.push(p);
    }
    if !set2.is_empty() {
        let p = dir.join(TABLE2_FILE);
        write_table2(&p, &set2)?;
        out.push(p);
    }
    let p = dir.join(REPLICATES_FILE);
    write_replicates(&p, reports)?;
    out.push(p);
    Ok(out)
}
