//! Post-hoc analyses: loss interpolation between two parameter states, group
//! ROC export and the method-by-split comparison report.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::TripletDataset;
use crate::error::{Error, Result};
use crate::fairloss::{ConstraintKind, FairnessConstraint};
use crate::fairmetrics::{evaluate, group_roc_curves, EvalSettings, MetricsReport, RocCurve};
use crate::network::Network;
use crate::pipeline::{objective_value, Seeds};

/// Identifies the configuration and seeds an artifact came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seeds: Seeds,
}

impl Provenance {
    /// Comment line placed at the top of CSV and text artifacts.
    pub fn header_line(&self) -> String {
        format!(
            "# config_hash={} seed_init={} seed_data={} seed_train={}",
            self.config_hash, self.seeds.init, self.seeds.data, self.seeds.train
        )
    }
}

/// `n` uniform points on `[0, 1]`, both ends exact.
pub fn uniform_grid(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|k| {
                if k + 1 == n {
                    1.0
                } else {
                    k as f64 / (n - 1) as f64
                }
            })
            .collect(),
    }
}

/// `(1 − α)·θ₀ + α·θ*`, exact at `α ∈ {0, 1}` for finite inputs.
pub fn blend(theta0: &[f64], theta_star: &[f64], alpha: f64) -> Vec<f64> {
    theta0
        .iter()
        .zip(theta_star)
        .map(|(&u, &v)| (1.0 - alpha) * u + alpha * v)
        .collect()
}

fn check_grid(grid: &[f64], allow_extrapolation: bool) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::Contract("interpolation grid is empty".into()));
    }
    if let Some(&g) = grid.iter().find(|g| !g.is_finite()) {
        return Err(Error::Contract(format!("interpolation grid contains {g}")));
    }
    if !allow_extrapolation {
        if let Some(&g) = grid.iter().find(|g| !(0.0..=1.0).contains(*g)) {
            return Err(Error::Contract(format!(
                "grid value {g} lies outside [0, 1]; enable extrapolation to allow it"
            )));
        }
    }
    Ok(())
}

/// Evaluates `f` along the segment from `theta0` to `theta_star`.
pub fn interpolate_with<F>(
    theta0: &[f64],
    theta_star: &[f64],
    grid: &[f64],
    f: F,
) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if theta0.len() != theta_star.len() {
        return Err(Error::shape(
            "interpolate",
            (1, theta0.len()),
            (1, theta_star.len()),
        ));
    }
    check_grid(grid, true)?;
    grid.par_iter()
        .map(|&alpha| f(&blend(theta0, theta_star, alpha)))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterpolationOptions {
    /// Move frozen parameters along the line as well.
    pub interpolate_frozen: bool,
    /// Plot cross-entropy alone instead of the penalized objective.
    pub ce_only: bool,
    /// Permit grid values outside `[0, 1]`.
    pub allow_extrapolation: bool,
}

/// A named parameter state.
#[derive(Clone, Copy, Debug)]
pub struct Endpoint<'a> {
    pub id: &'a str,
    pub net: &'a Network,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterpolationCurve {
    pub alphas: Vec<f64>,
    pub datasets: Vec<String>,
    /// `values[k][i]`: objective on `datasets[k]` at `alphas[i]`.
    pub values: Vec<Vec<f64>>,
    pub theta0: String,
    pub theta_star: String,
}

impl InterpolationCurve {
    pub fn to_csv(&self, provenance: &Provenance) -> Result<String> {
        let mut header = vec!["alpha".to_string()];
        header.extend(self.datasets.iter().cloned());
        let rows = self.alphas.iter().enumerate().map(|(i, a)| {
            let mut row = vec![a.to_string()];
            row.extend(self.values.iter().map(|v| v[i].to_string()));
            row
        });
        let meta = format!(
            "{} theta0={} theta_star={}",
            provenance.header_line(),
            self.theta0,
            self.theta_star
        );
        csv_with_meta(&meta, &header, rows)
    }
}

fn same_topology(a: &Network, b: &Network) -> Result<()> {
    let flags = |n: &Network| n.layers().iter().map(|l| l.trainable).collect::<Vec<_>>();
    if a.dims() != b.dims() || a.stitch_index() != b.stitch_index() {
        return Err(Error::Contract(format!(
            "endpoints differ in architecture: dims {:?} stitch {:?} vs dims {:?} stitch {:?}",
            a.dims(),
            a.stitch_index(),
            b.dims(),
            b.stitch_index()
        )));
    }
    if flags(a) != flags(b) {
        return Err(Error::Contract(
            "endpoints differ in trainable flags".into(),
        ));
    }
    Ok(())
}

/// Objective along `θ(α) = (1 − α)·θ₀ + α·θ*` on each dataset.
///
/// Only trainable parameters move unless `interpolate_frozen` is set; frozen
/// ones are taken from `θ*`.
pub fn interpolate_loss(
    theta0: Endpoint<'_>,
    theta_star: Endpoint<'_>,
    datasets: &[&TripletDataset],
    constraint: &FairnessConstraint,
    grid: &[f64],
    options: InterpolationOptions,
) -> Result<InterpolationCurve> {
    same_topology(theta0.net, theta_star.net)?;
    check_grid(grid, options.allow_extrapolation)?;
    constraint.validate()?;
    let p0 = theta0.net.params(false);
    let p1 = theta_star.net.params(false);
    let mut start = p1.clone();
    let mut offset = 0;
    for layer in theta_star.net.layers() {
        let n = layer.param_count();
        if layer.trainable || options.interpolate_frozen {
            start[offset..offset + n].copy_from_slice(&p0[offset..offset + n]);
        }
        offset += n;
    }
    let eval_at = |ds: &TripletDataset, flat: &[f64]| -> Result<f64> {
        let mut net = theta_star.net.clone();
        net.set_params(false, flat)?;
        let v = objective_value(&net, ds, constraint).map_err(|e| e.context(&ds.name))?;
        Ok(if options.ce_only {
            v.cross_entropy
        } else {
            v.total
        })
    };
    let values = datasets
        .iter()
        .map(|ds| interpolate_with(&start, &p1, grid, |flat| eval_at(ds, flat)))
        .collect::<Result<Vec<_>>>()?;
    Ok(InterpolationCurve {
        alphas: grid.to_vec(),
        datasets: datasets.iter().map(|d| d.name.clone()).collect(),
        values,
        theta0: theta0.id.to_string(),
        theta_star: theta_star.id.to_string(),
    })
}

/// Per-group ROC curves `[a = 0, a = 1]`.
pub fn roc_export(p: &[f64], y: &[u8], a: &[u8]) -> Result<[RocCurve; 2]> {
    group_roc_curves(p, y, a)
}

/// Long-format CSV (`group,fpr,tpr`) of both group curves.
pub fn roc_csv(curves: &[RocCurve; 2], provenance: &Provenance) -> Result<String> {
    let header = ["group", "fpr", "tpr"].map(String::from);
    let rows = curves.iter().enumerate().flat_map(|(g, c)| {
        c.points
            .iter()
            .map(move |(f, t)| vec![g.to_string(), f.to_string(), t.to_string()])
    });
    csv_with_meta(&provenance.header_line(), &header, rows)
}

fn csv_with_meta(
    meta: &str,
    header: &[String],
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)
        .map_err(|e| Error::Serde(e.to_string()))?;
    for r in rows {
        w.write_record(&r)
            .map_err(|e| Error::Serde(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    let mut out = format!("{meta}\n");
    out.push_str(&String::from_utf8(body).map_err(|e| Error::Serde(e.to_string()))?);
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub split: String,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodAbroca {
    pub method: String,
    pub split: String,
    pub abroca: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub provenance: Provenance,
    pub constraint: FairnessConstraint,
    pub settings: EvalSettings,
    /// Method-major, split-minor.
    pub rows: Vec<ReportRow>,
    /// ABROCA of every method on the last split.
    pub abroca: Vec<MethodAbroca>,
}

impl ComparisonReport {
    pub fn row(&self, method: &str, split: &str) -> Option<&MetricsReport> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.split == split)
            .map(|r| &r.metrics)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    /// Aligned plain-text table.
    pub fn to_text(&self) -> String {
        let header = [
            "method", "split", "BACC", "AUC", "EO_Diff", "AE_Diff", "WA", "AF", "ABROCA",
        ];
        let fmt = |v: f64| format!("{v:.4}");
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                let m = &r.metrics;
                vec![
                    r.method.clone(),
                    r.split.clone(),
                    fmt(m.bacc),
                    fmt(m.auc),
                    fmt(m.eo_diff),
                    fmt(m.ae_diff),
                    fmt(m.wa),
                    m.af.map_or_else(|| "-".into(), fmt),
                    fmt(m.abroca),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                body.iter()
                    .map(|r| r[c].len())
                    .chain([header[c].len()])
                    .max()
                    .unwrap()
            })
            .collect();
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (c, cell) in cells.iter().enumerate() {
                if c > 0 {
                    s.push_str("  ");
                }
                if c < 2 {
                    let _ = write!(s, "{cell:<w$}", w = widths[c]);
                } else {
                    let _ = write!(s, "{cell:>w$}", w = widths[c]);
                }
            }
            s.trim_end().to_string()
        };
        let mut out = format!(
            "{}\n# constraint={} alpha={} threshold={}\n",
            self.provenance.header_line(),
            self.constraint.kind,
            self.constraint.alpha,
            self.settings.threshold
        );
        out.push_str(&line(&header.map(String::from)));
        out.push('\n');
        out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
        out.push('\n');
        for r in &body {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, json_path: impl AsRef<Path>, text_path: impl AsRef<Path>) -> Result<()> {
        let (j, t) = (json_path.as_ref(), text_path.as_ref());
        fs::write(j, self.to_json()?).map_err(|e| Error::io(j, e))?;
        fs::write(t, self.to_text()).map_err(|e| Error::io(t, e))
    }
}

/// Evaluates every `(method, split)` pair.
pub fn emit_report(
    methods: &[(&str, &Network)],
    splits: &[&TripletDataset],
    constraint: &FairnessConstraint,
    settings: &EvalSettings,
    provenance: Provenance,
) -> Result<ComparisonReport> {
    if methods.is_empty() || splits.is_empty() {
        return Err(Error::Contract(
            "report needs at least one method and one split".into(),
        ));
    }
    let kind: ConstraintKind = constraint.kind;
    let cells: Vec<(usize, usize)> = (0..methods.len())
        .flat_map(|m| (0..splits.len()).map(move |s| (m, s)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|&(m, s)| {
            let (name, net) = methods[m];
            let ds = splits[s];
            let ctx = format!("method {name}, split {}", ds.name);
            let p = net.predict_proba(&ds.x).map_err(|e| e.context(&ctx))?;
            let metrics = evaluate(&p, &ds.y, &ds.a, &ds.name, kind, settings)
                .map_err(|e| e.context(&ctx))?;
            Ok(ReportRow {
                method: name.to_string(),
                split: ds.name.clone(),
                metrics,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let last = &splits[splits.len() - 1].name;
    let abroca = rows
        .iter()
        .filter(|r| &r.split == last)
        .map(|r| MethodAbroca {
            method: r.method.clone(),
            split: r.split.clone(),
            abroca: r.metrics.abroca,
        })
        .collect();
    Ok(ComparisonReport {
        provenance,
        constraint: *constraint,
        settings: *settings,
        rows,
        abroca,
    })
}
