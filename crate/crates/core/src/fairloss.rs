//! Differentiable fairness surrogates and the penalized training objective
//! `CE + α·R`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintKind {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "eo", alias = "equalized_odds")]
    EqualizedOdds,
    #[serde(rename = "ae", alias = "accuracy_equality")]
    AccuracyEquality,
    #[serde(rename = "mmf", alias = "max_min_fairness")]
    MaxMinFairness,
}

impl ConstraintKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ConstraintKind::None => "none",
            ConstraintKind::EqualizedOdds => "eo",
            ConstraintKind::AccuracyEquality => "ae",
            ConstraintKind::MaxMinFairness => "mmf",
        }
    }

    /// Penalty weight used when a config does not set one.
    pub fn default_alpha(self) -> f64 {
        match self {
            ConstraintKind::None => 0.0,
            ConstraintKind::EqualizedOdds | ConstraintKind::AccuracyEquality => 20.0,
            ConstraintKind::MaxMinFairness => 1.0,
        }
    }
}

impl fmt::Display for ConstraintKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstraintKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "eo" | "equalized_odds" => Ok(Self::EqualizedOdds),
            "ae" | "accuracy_equality" => Ok(Self::AccuracyEquality),
            "mmf" | "max_min_fairness" => Ok(Self::MaxMinFairness),
            other => Err(Error::config(
                "constraint.kind",
                format!("unknown constraint `{other}`"),
            )),
        }
    }
}

/// Denominators of the equalized-odds rate terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EoDenominator {
    /// Divide by the attribute-group size (`Σ a_i`, `Σ (1 - a_i)`).
    #[default]
    GroupSize,
    /// Divide by the number of rows with the relevant label in the group.
    Conditional,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FairnessConstraint {
    pub kind: ConstraintKind,
    pub alpha: f64,
    #[serde(default)]
    pub eo_denominator: EoDenominator,
}

impl FairnessConstraint {
    pub fn new(kind: ConstraintKind, alpha: f64) -> Result<Self> {
        let c = Self {
            kind,
            alpha,
            eo_denominator: EoDenominator::GroupSize,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn none() -> Self {
        Self {
            kind: ConstraintKind::None,
            alpha: 0.0,
            eo_denominator: EoDenominator::GroupSize,
        }
    }

    pub fn with_denominator(mut self, d: EoDenominator) -> Self {
        self.eo_denominator = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::config(
                "constraint.alpha",
                format!("must be finite and >= 0, got {}", self.alpha),
            ));
        }
        Ok(())
    }
}

/// Class-1 probabilities on a tape with the labels and attributes of the batch.
#[derive(Clone, Copy, Debug)]
pub struct BatchContext<'a> {
    pub p: Var,
    pub y: &'a [u8],
    pub a: &'a [u8],
}

impl<'a> BatchContext<'a> {
    pub fn new(tape: &Tape, p: Var, y: &'a [u8], a: &'a [u8]) -> Result<Self> {
        let t = tape.value(p);
        if t.cols() != 1 || t.rows() != y.len() || y.len() != a.len() {
            return Err(Error::Shape {
                op: "batch context",
                lhs: format!("p {}x{}", t.rows(), t.cols()),
                rhs: format!("{} labels, {} attributes", y.len(), a.len()),
            });
        }
        if y.iter().chain(a).any(|&v| v > 1) {
            return Err(Error::Contract(
                "labels and attributes must be 0 or 1".into(),
            ));
        }
        Ok(Self { p, y, a })
    }

    fn len(&self) -> usize {
        self.y.len()
    }

    fn mask(&self, f: impl Fn(u8, u8) -> bool) -> Vec<f64> {
        self.y
            .iter()
            .zip(self.a)
            .map(|(&y, &a)| if f(y, a) { 1.0 } else { 0.0 })
            .collect()
    }
}

/// `(y, a)` cells in canonical order `(0,0), (0,1), (1,0), (1,1)`.
pub const CELLS: [(u8, u8); 4] = [(0, 0), (0, 1), (1, 0), (1, 1)];

fn require_rows(mask: &[f64], what: impl FnOnce() -> String) -> Result<()> {
    if mask.iter().all(|&m| m == 0.0) {
        return Err(Error::EmptyGroup(what()));
    }
    Ok(())
}

/// `|mean_{mask1}(v) - mean_{mask0}(v)|`.
fn abs_gap(tape: &mut Tape, v: Var, mask1: &[f64], mask0: &[f64]) -> Result<Var> {
    let m1 = tape.masked_mean(v, mask1)?;
    let m0 = tape.masked_mean(v, mask0)?;
    let d = tape.weighted_sum(&[m1, m0], &[1.0, -1.0])?;
    tape.abs(d)
}

/// Soft equalized-odds gap: positive-rate term plus negative-rate term.
pub fn eo_surrogate(tape: &mut Tape, ctx: &BatchContext<'_>, denom: EoDenominator) -> Result<Var> {
    let n = ctx.len();
    let g1 = ctx.mask(|_, a| a == 1);
    let g0 = ctx.mask(|_, a| a == 0);
    require_rows(&g1, || "eo: group a=1 is empty".into())?;
    require_rows(&g0, || "eo: group a=0 is empty".into())?;
    let y: Vec<f64> = ctx.y.iter().map(|&v| f64::from(v)).collect();
    let not_y: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let zeros = vec![0.0; n];
    let neg = vec![-1.0; n];
    let ones = vec![1.0; n];

    let (t, f) = match denom {
        EoDenominator::GroupSize => {
            // p (1 - y) and (1 - p) y, averaged over each attribute group
            let pos = tape.scale_shift(ctx.p, &not_y, &zeros)?;
            let neg_y: Vec<f64> = y.iter().map(|v| -v).collect();
            let neg_rate = tape.scale_shift(ctx.p, &neg_y, &y)?;
            (
                abs_gap(tape, pos, &g1, &g0)?,
                abs_gap(tape, neg_rate, &g1, &g0)?,
            )
        }
        EoDenominator::Conditional => {
            let c10 = ctx.mask(|y, a| y == 0 && a == 1);
            let c00 = ctx.mask(|y, a| y == 0 && a == 0);
            let c11 = ctx.mask(|y, a| y == 1 && a == 1);
            let c01 = ctx.mask(|y, a| y == 1 && a == 0);
            for (m, name) in [
                (&c10, "(y=0,a=1)"),
                (&c00, "(y=0,a=0)"),
                (&c11, "(y=1,a=1)"),
                (&c01, "(y=1,a=0)"),
            ] {
                require_rows(m, || format!("eo: cell {name} is empty"))?;
            }
            let q = tape.scale_shift(ctx.p, &neg, &ones)?;
            (
                abs_gap(tape, ctx.p, &c10, &c00)?,
                abs_gap(tape, q, &c11, &c01)?,
            )
        }
    };
    tape.weighted_sum(&[t, f], &[1.0, 1.0])
}

/// Gap in group-mean soft misclassification `p (1 - y) + (1 - p) y`.
pub fn ae_surrogate(tape: &mut Tape, ctx: &BatchContext<'_>) -> Result<Var> {
    let g1 = ctx.mask(|_, a| a == 1);
    let g0 = ctx.mask(|_, a| a == 0);
    require_rows(&g1, || "ae: group a=1 is empty".into())?;
    require_rows(&g0, || "ae: group a=0 is empty".into())?;
    let scale: Vec<f64> = ctx.y.iter().map(|&y| 1.0 - 2.0 * f64::from(y)).collect();
    let offset: Vec<f64> = ctx.y.iter().map(|&y| f64::from(y)).collect();
    let err = tape.scale_shift(ctx.p, &scale, &offset)?;
    abs_gap(tape, err, &g1, &g0)
}

/// Worst `(y, a)`-cell mean of `per_row_ce`. Ties go to the earliest cell in
/// [`CELLS`] order.
pub fn mmf_surrogate(tape: &mut Tape, ctx: &BatchContext<'_>, per_row_ce: Var) -> Result<Var> {
    let mut cell_losses = Vec::with_capacity(4);
    for (y, a) in CELLS {
        let mask = ctx.mask(|yy, aa| yy == y && aa == a);
        require_rows(&mask, || format!("mmf: cell (y={y},a={a}) is empty"))?;
        cell_losses.push(tape.masked_mean(per_row_ce, &mask)?);
    }
    tape.max(&cell_losses)
}

/// Penalty `R` selected by `constraint` (`None` for the unconstrained kind).
pub fn fairness_penalty(
    tape: &mut Tape,
    logits: Var,
    ctx: &BatchContext<'_>,
    constraint: &FairnessConstraint,
) -> Result<Option<Var>> {
    Ok(match constraint.kind {
        ConstraintKind::None => None,
        ConstraintKind::EqualizedOdds => Some(eo_surrogate(tape, ctx, constraint.eo_denominator)?),
        ConstraintKind::AccuracyEquality => Some(ae_surrogate(tape, ctx)?),
        ConstraintKind::MaxMinFairness => {
            let rows = tape.row_cross_entropy(logits, ctx.y)?;
            Some(mmf_surrogate(tape, ctx, rows)?)
        }
    })
}

#[derive(Clone, Copy, Debug)]
pub struct Objective {
    pub total: Var,
    pub cross_entropy: Var,
    pub penalty: Option<Var>,
}

/// `cross_entropy(logits, y) + α·R`.
pub fn composite_objective(
    tape: &mut Tape,
    logits: Var,
    y: &[u8],
    a: &[u8],
    constraint: &FairnessConstraint,
) -> Result<Objective> {
    constraint.validate()?;
    let ce = tape.cross_entropy(logits, y)?;
    if constraint.kind == ConstraintKind::None {
        return Ok(Objective {
            total: ce,
            cross_entropy: ce,
            penalty: None,
        });
    }
    let p = tape.softmax_probs(logits)?;
    let ctx = BatchContext::new(tape, p, y, a)?;
    let penalty = fairness_penalty(tape, logits, &ctx, constraint)?.expect("constrained kind");
    let total = tape.weighted_sum(&[ce, penalty], &[1.0, constraint.alpha])?;
    Ok(Objective {
        total,
        cross_entropy: ce,
        penalty: Some(penalty),
    })
}
