//! Hard-prediction performance and group-fairness metrics.
//!
//! All threshold metrics predict class 1 when `p >= threshold`. Groups are
//! indexed by the sensitive attribute `a ∈ {0, 1}`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fairloss::ConstraintKind;

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ABROCA_GRID: usize = 10_001;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    fn record(&mut self, predicted: bool, label: u8) {
        match (predicted, label == 1) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    fn tpr(&self) -> f64 {
        self.tp as f64 / self.positives() as f64
    }

    fn fpr(&self) -> f64 {
        self.fp as f64 / self.negatives() as f64
    }

    fn error_rate(&self) -> f64 {
        (self.fp + self.fn_) as f64 / self.total() as f64
    }
}

/// Confusion counts per attribute group, `groups[a]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupConfusion {
    pub groups: [Confusion; 2],
}

/// How the TPR and FPR gaps are combined into a single EO difference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EoScalarization {
    #[default]
    Max,
    Sum,
}

fn check_binary(name: &str, v: &[u8]) -> Result<()> {
    match v.iter().position(|&x| x > 1) {
        Some(i) => Err(Error::Contract(format!(
            "{name}[{i}] = {} is not 0/1",
            v[i]
        ))),
        None => Ok(()),
    }
}

fn check_inputs(p: &[f64], y: &[u8], a: Option<&[u8]>) -> Result<()> {
    if p.len() != y.len() || a.is_some_and(|a| a.len() != y.len()) {
        return Err(Error::Shape {
            op: "metric inputs",
            lhs: format!("{} scores", p.len()),
            rhs: format!(
                "{} labels, {} attributes",
                y.len(),
                a.map_or(y.len(), <[u8]>::len)
            ),
        });
    }
    if p.iter().any(|v| v.is_nan()) {
        return Err(Error::Contract("scores contain NaN".into()));
    }
    check_binary("y", y)?;
    if let Some(a) = a {
        check_binary("a", a)?;
    }
    Ok(())
}

pub fn confusion(p: &[f64], y: &[u8], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&pi, &yi) in p.iter().zip(y) {
        c.record(pi >= threshold, yi);
    }
    c
}

pub fn confusion_by_group(p: &[f64], y: &[u8], a: &[u8], threshold: f64) -> Result<GroupConfusion> {
    check_inputs(p, y, Some(a))?;
    let mut gc = GroupConfusion::default();
    for ((&pi, &yi), &ai) in p.iter().zip(y).zip(a) {
        gc.groups[ai as usize].record(pi >= threshold, yi);
    }
    for (g, c) in gc.groups.iter().enumerate() {
        if c.total() == 0 {
            return Err(Error::EmptyGroup(format!(
                "attribute group a={g} has no rows"
            )));
        }
    }
    Ok(gc)
}

/// Mean of TPR and TNR over the whole split.
pub fn bacc(p: &[f64], y: &[u8], threshold: f64) -> Result<f64> {
    check_inputs(p, y, None)?;
    let c = confusion(p, y, threshold);
    if c.positives() == 0 || c.negatives() == 0 {
        return Err(Error::DegenerateSplit(
            "balanced accuracy needs both classes".into(),
        ));
    }
    let tnr = c.tn as f64 / c.negatives() as f64;
    Ok((c.tpr() + tnr) / 2.0)
}

/// Mann–Whitney AUC: fraction of (positive, negative) pairs ranked correctly,
/// ties counted as one half.
pub fn auc(p: &[f64], y: &[u8]) -> Result<f64> {
    check_inputs(p, y, None)?;
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&i, &j| p[i].total_cmp(&p[j]));
    let (mut neg_below, mut wins, mut ties) = (0u64, 0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos_g, mut neg_g) = (0u64, 0u64);
        while j < order.len() && p[order[j]] == p[order[i]] {
            if y[order[j]] == 1 {
                pos_g += 1;
            } else {
                neg_g += 1;
            }
            j += 1;
        }
        wins += pos_g * neg_below;
        ties += pos_g * neg_g;
        neg_below += neg_g;
        i = j;
    }
    let pos = y.iter().filter(|&&v| v == 1).count() as u64;
    let neg = y.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateSplit("AUC needs both classes".into()));
    }
    Ok((2 * wins + ties) as f64 / (2 * pos * neg) as f64)
}

fn require_cells(gc: &GroupConfusion, what: &str) -> Result<()> {
    for (g, c) in gc.groups.iter().enumerate() {
        if c.positives() == 0 {
            return Err(Error::EmptyGroup(format!(
                "{what}: cell (y=1,a={g}) is empty"
            )));
        }
        if c.negatives() == 0 {
            return Err(Error::EmptyGroup(format!(
                "{what}: cell (y=0,a={g}) is empty"
            )));
        }
    }
    Ok(())
}

pub fn eo_diff(p: &[f64], y: &[u8], a: &[u8], threshold: f64) -> Result<f64> {
    eo_diff_with(p, y, a, threshold, EoScalarization::Max)
}

/// Gap in TPR and FPR between the attribute groups.
pub fn eo_diff_with(
    p: &[f64],
    y: &[u8],
    a: &[u8],
    threshold: f64,
    how: EoScalarization,
) -> Result<f64> {
    let gc = confusion_by_group(p, y, a, threshold)?;
    require_cells(&gc, "eo_diff")?;
    let [g0, g1] = gc.groups;
    let tpr_gap = (g1.tpr() - g0.tpr()).abs();
    let fpr_gap = (g1.fpr() - g0.fpr()).abs();
    Ok(match how {
        EoScalarization::Max => tpr_gap.max(fpr_gap),
        EoScalarization::Sum => tpr_gap + fpr_gap,
    })
}

/// Gap in overall misclassification rate between the attribute groups.
pub fn ae_diff(p: &[f64], y: &[u8], a: &[u8], threshold: f64) -> Result<f64> {
    let gc = confusion_by_group(p, y, a, threshold)?;
    let [g0, g1] = gc.groups;
    Ok((g1.error_rate() - g0.error_rate()).abs())
}

/// Lowest accuracy over the four `(y, a)` cells.
pub fn worst_accuracy(p: &[f64], y: &[u8], a: &[u8], threshold: f64) -> Result<f64> {
    let gc = confusion_by_group(p, y, a, threshold)?;
    require_cells(&gc, "worst_accuracy")?;
    let mut worst = f64::INFINITY;
    for c in gc.groups {
        worst = worst
            .min(c.tp as f64 / c.positives() as f64)
            .min(c.tn as f64 / c.negatives() as f64);
    }
    Ok(worst)
}

/// Aggregate fairness score: `bacc - eo_diff`, `bacc - ae_diff` or `bacc + wa`.
pub fn af_score(bacc: f64, fairness_value: f64, kind: ConstraintKind) -> Result<f64> {
    match kind {
        ConstraintKind::EqualizedOdds | ConstraintKind::AccuracyEquality => {
            Ok(bacc - fairness_value)
        }
        ConstraintKind::MaxMinFairness => Ok(bacc + fairness_value),
        ConstraintKind::None => Err(Error::Contract(
            "AF is undefined without a fairness constraint".into(),
        )),
    }
}

/// Empirical ROC curve as `(fpr, tpr)` points.
///
/// One point per distinct score (predict 1 when `p >= score`), preceded by
/// `(0, 0)`. Points are non-decreasing in both coordinates and end at `(1, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn from_scores(p: &[f64], y: &[u8]) -> Result<Self> {
        check_inputs(p, y, None)?;
        let pos = y.iter().filter(|&&v| v == 1).count();
        let neg = y.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::DegenerateSplit(
                "ROC curve needs both classes".into(),
            ));
        }
        let mut order: Vec<usize> = (0..p.len()).collect();
        order.sort_by(|&i, &j| p[j].total_cmp(&p[i]));
        let mut points = vec![(0.0, 0.0)];
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < order.len() {
            let score = p[order[i]];
            while i < order.len() && p[order[i]] == score {
                if y[order[i]] == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        }
        Ok(Self { points })
    }

    /// Trapezoid area under the point sequence.
    pub fn area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }

    /// Samples the curve at increasing FPR values `grid`.
    ///
    /// Between distinct FPR values the curve is linear (tied scores give a
    /// diagonal segment); at an FPR with several points the highest TPR is
    /// taken.
    fn sample_sorted(&self, grid: impl Iterator<Item = f64>) -> Vec<f64> {
        let pts = &self.points;
        let mut j = 0;
        grid.map(|f| {
            while j + 1 < pts.len() && pts[j + 1].0 <= f {
                j += 1;
            }
            let (f0, t0) = pts[j];
            if f0 == f || j + 1 == pts.len() {
                t0
            } else {
                let (f1, t1) = pts[j + 1];
                t0 + (t1 - t0) * (f - f0) / (f1 - f0)
            }
        })
        .collect()
    }
}

/// Per-group ROC curves, `[group 0, group 1]`.
pub fn group_roc_curves(p: &[f64], y: &[u8], a: &[u8]) -> Result<[RocCurve; 2]> {
    check_inputs(p, y, Some(a))?;
    let split = |g: u8| -> Result<RocCurve> {
        let (ps, ys): (Vec<f64>, Vec<u8>) = p
            .iter()
            .zip(y)
            .zip(a)
            .filter(|(_, &ai)| ai == g)
            .map(|((&pi, &yi), _)| (pi, yi))
            .unzip();
        RocCurve::from_scores(&ps, &ys).map_err(|_| {
            Error::DegenerateSplit(format!("group a={g} needs both classes for a ROC curve"))
        })
    };
    Ok([split(0)?, split(1)?])
}

/// Area between the two groups' ROC curves, trapezoid rule on a uniform FPR
/// grid of `grid` points.
pub fn abroca(p: &[f64], y: &[u8], a: &[u8], grid: usize) -> Result<f64> {
    if grid < 2 {
        return Err(Error::config("eval.abroca_grid", "needs at least 2 points"));
    }
    let [r0, r1] = group_roc_curves(p, y, a)?;
    let step = 1.0 / (grid - 1) as f64;
    let xs = || (0..grid).map(move |k| if k + 1 == grid { 1.0 } else { k as f64 * step });
    let c0 = r0.sample_sorted(xs());
    let c1 = r1.sample_sorted(xs());
    let d: Vec<f64> = c0.iter().zip(&c1).map(|(u, v)| (u - v).abs()).collect();
    let interior: f64 = d.iter().sum::<f64>() - (d[0] + d[grid - 1]) / 2.0;
    Ok((interior * step).clamp(0.0, 1.0))
}

/// Evaluation knobs shared by every report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    pub threshold: f64,
    pub abroca_grid: usize,
    pub eo_scalarization: EoScalarization,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            abroca_grid: DEFAULT_ABROCA_GRID,
            eo_scalarization: EoScalarization::Max,
        }
    }
}

/// Every performance and fairness metric for one model on one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bacc: f64,
    pub auc: f64,
    pub eo_diff: f64,
    pub ae_diff: f64,
    pub wa: f64,
    /// `None` when evaluated without a constraint.
    pub af: Option<f64>,
    pub abroca: f64,
    pub threshold: f64,
    pub split: String,
    pub constraint: ConstraintKind,
}

impl MetricsReport {
    /// Fairness component that AF is built from for `constraint`.
    pub fn af_component(&self) -> Option<f64> {
        match self.constraint {
            ConstraintKind::EqualizedOdds => Some(self.eo_diff),
            ConstraintKind::AccuracyEquality => Some(self.ae_diff),
            ConstraintKind::MaxMinFairness => Some(self.wa),
            ConstraintKind::None => None,
        }
    }

    /// Whether `af` reproduces its defining formula within `tol`.
    pub fn af_identity_holds(&self, tol: f64) -> bool {
        match (self.af, self.af_component()) {
            (Some(af), Some(v)) => {
                af_score(self.bacc, v, self.constraint).is_ok_and(|e| (e - af).abs() <= tol)
            }
            (None, None) => true,
            _ => false,
        }
    }
}

pub fn evaluate(
    p: &[f64],
    y: &[u8],
    a: &[u8],
    split: &str,
    constraint: ConstraintKind,
    settings: &EvalSettings,
) -> Result<MetricsReport> {
    let thr = settings.threshold;
    let bacc = bacc(p, y, thr)?;
    let auc = auc(p, y)?;
    let eo = eo_diff_with(p, y, a, thr, settings.eo_scalarization)?;
    let ae = ae_diff(p, y, a, thr)?;
    let wa = worst_accuracy(p, y, a, thr)?;
    let abroca = abroca(p, y, a, settings.abroca_grid)?;
    let af = match constraint {
        ConstraintKind::None => None,
        ConstraintKind::EqualizedOdds => Some(af_score(bacc, eo, constraint)?),
        ConstraintKind::AccuracyEquality => Some(af_score(bacc, ae, constraint)?),
        ConstraintKind::MaxMinFairness => Some(af_score(bacc, wa, constraint)?),
    };
    Ok(MetricsReport {
        bacc,
        auc,
        eo_diff: eo,
        ae_diff: ae,
        wa,
        af,
        abroca,
        threshold: thr,
        split: split.to_string(),
        constraint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Shared worked batch: ŷ = [1,0,1,0,1,0] at threshold 0.5.
    const P: [f64; 6] = [0.6, 0.4, 0.6, 0.4, 0.6, 0.4];
    const Y: [u8; 6] = [1, 1, 0, 1, 0, 0];
    const A: [u8; 6] = [1, 1, 1, 0, 0, 0];

    // Predictions [1,0,0,1,1,0] for the eo/bacc examples.
    const P2: [f64; 6] = [0.9, 0.1, 0.1, 0.9, 0.9, 0.1];

    #[test]
    fn confusion_worked_example() {
        let gc = confusion_by_group(&P, &Y, &A, 0.5).unwrap();
        assert_eq!(
            gc.groups[1],
            Confusion {
                tp: 1,
                fn_: 1,
                fp: 1,
                tn: 0
            }
        );
        // group 0: y = [1,0,0], ŷ = [0,1,0]
        assert_eq!(
            gc.groups[0],
            Confusion {
                tp: 0,
                fn_: 1,
                fp: 1,
                tn: 1
            }
        );
        let gc = confusion_by_group(&P, &Y, &A, 1.1).unwrap();
        for c in gc.groups {
            assert_eq!(c.tp + c.fp, 0);
        }
        let perfect: Vec<f64> = Y.iter().map(|&v| f64::from(v)).collect();
        let gc = confusion_by_group(&perfect, &Y, &A, 0.5).unwrap();
        assert!(gc.groups.iter().all(|c| c.fp == 0 && c.fn_ == 0));
        assert!(matches!(
            confusion_by_group(&P, &Y, &[1; 6], 0.5),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn bacc_examples() {
        assert!((bacc(&P2, &Y, 0.5).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let perfect: Vec<f64> = Y.iter().map(|&v| f64::from(v)).collect();
        assert_eq!(bacc(&perfect, &Y, 0.5).unwrap(), 1.0);
        assert_eq!(bacc(&[0.9; 6], &Y, 0.5).unwrap(), 0.5);
        assert!(matches!(
            bacc(&[0.9; 3], &[1, 1, 1], 0.5),
            Err(Error::DegenerateSplit(_))
        ));
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3, 0.7], &[1, 0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5], &[1, 0]).unwrap(), 0.5);
        assert!(auc(&[0.5, 0.6], &[1, 1]).is_err());
    }

    #[test]
    fn eo_ae_wa_examples() {
        assert_eq!(eo_diff(&P2, &Y, &A, 0.5).unwrap(), 0.5);
        let swapped: Vec<u8> = A.iter().map(|a| 1 - a).collect();
        assert_eq!(eo_diff(&P2, &Y, &swapped, 0.5).unwrap(), 0.5);
        assert_eq!(
            eo_diff_with(&P2, &Y, &A, 0.5, EoScalarization::Sum).unwrap(),
            1.0
        );

        // both groups of the shared batch misclassify one row in three
        assert_eq!(ae_diff(&P2, &Y, &A, 0.5).unwrap(), 0.0);
        // group 1 errs on 1/3, group 0 on 2/3
        let p3 = [0.9, 0.1, 0.1, 0.1, 0.9, 0.1];
        assert!((ae_diff(&p3, &Y, &A, 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let perfect: Vec<f64> = Y.iter().map(|&v| f64::from(v)).collect();
        assert_eq!(ae_diff(&perfect, &Y, &A, 0.5).unwrap(), 0.0);

        assert_eq!(worst_accuracy(&P2, &Y, &A, 0.5).unwrap(), 0.5);
        assert_eq!(worst_accuracy(&perfect, &Y, &A, 0.5).unwrap(), 1.0);
        assert_eq!(worst_accuracy(&[0.9; 6], &Y, &A, 0.5).unwrap(), 0.0);
        assert!(matches!(
            eo_diff(&P2, &[1, 1, 1, 1, 0, 0], &A, 0.5),
            Err(Error::EmptyGroup(_))
        ));
    }

    #[test]
    fn af_examples_from_published_tables() {
        let eo = af_score(0.874, 0.081, ConstraintKind::EqualizedOdds).unwrap();
        assert!((eo - 0.793).abs() < 1e-12);
        let mmf = af_score(0.877, 0.811, ConstraintKind::MaxMinFairness).unwrap();
        assert!((mmf - 1.688).abs() < 1e-12);
        let ae = af_score(0.796, 0.0096, ConstraintKind::AccuracyEquality).unwrap();
        assert!((ae - 0.7864).abs() < 1e-12);
        assert!(af_score(0.9, 0.1, ConstraintKind::None).is_err());
    }

    #[test]
    fn roc_curve_shapes() {
        let r = RocCurve::from_scores(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap();
        assert!(r.points.contains(&(0.0, 1.0)));
        assert_eq!(*r.points.last().unwrap(), (1.0, 1.0));
        let r = RocCurve::from_scores(&[0.5; 4], &[0, 1, 0, 1]).unwrap();
        assert_eq!(r.points, vec![(0.0, 0.0), (1.0, 1.0)]);
    }

    #[test]
    fn abroca_identical_and_half() {
        let p = [0.2, 0.7, 0.4, 0.9, 0.2, 0.7, 0.4, 0.9];
        let y = [0, 1, 0, 1, 0, 1, 0, 1];
        let a = [0, 0, 0, 0, 1, 1, 1, 1];
        assert_eq!(abroca(&p, &y, &a, 101).unwrap(), 0.0);

        // group 1 perfectly separated, group 0 all tied
        let p = [0.5, 0.5, 0.5, 0.5, 0.1, 0.2, 0.8, 0.9];
        let y = [0, 1, 0, 1, 0, 0, 1, 1];
        let v = abroca(&p, &y, &a, DEFAULT_ABROCA_GRID).unwrap();
        assert!((v - 0.5).abs() <= 1.0 / DEFAULT_ABROCA_GRID as f64, "{v}");
        assert!(abroca(&p, &y, &a, 1).is_err());
    }

    #[test]
    fn report_af_identity() {
        let p = [0.9, 0.1, 0.6, 0.8, 0.3, 0.2, 0.7, 0.4];
        let y = [1, 0, 0, 1, 1, 0, 1, 0];
        let a = [1, 1, 1, 1, 0, 0, 0, 0];
        for kind in [
            ConstraintKind::EqualizedOdds,
            ConstraintKind::AccuracyEquality,
            ConstraintKind::MaxMinFairness,
            ConstraintKind::None,
        ] {
            let r = evaluate(&p, &y, &a, "test", kind, &EvalSettings::default()).unwrap();
            assert!(r.af_identity_holds(1e-12));
            assert_eq!(r.af.is_none(), kind == ConstraintKind::None);
        }
    }

    #[test]
    fn report_json_field_names() {
        let p = [0.9, 0.1, 0.6, 0.8, 0.3, 0.2, 0.7, 0.4];
        let y = [1, 0, 0, 1, 1, 0, 1, 0];
        let a = [1, 1, 1, 1, 0, 0, 0, 0];
        let r = evaluate(
            &p,
            &y,
            &a,
            "val",
            ConstraintKind::EqualizedOdds,
            &EvalSettings::default(),
        )
        .unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for k in [
            "bacc",
            "auc",
            "eo_diff",
            "ae_diff",
            "wa",
            "af",
            "abroca",
            "threshold",
            "split",
            "constraint",
        ] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
        assert_eq!(v["constraint"], "eo");
    }
}
