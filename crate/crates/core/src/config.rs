//! Declarative run configuration (TOML).
//!
//! Every field has a default, so an empty file describes the seeded
//! synthetic benchmark. Unknown keys are rejected and the whole config is
//! validated before any work starts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::datasets::SynthSpec;
use crate::error::{Error, Result};
use crate::fairloss::{ConstraintKind, EoDenominator, FairnessConstraint};
use crate::fairmetrics::EvalSettings;
use crate::network::StitchInit;
use crate::pipeline::{OptimizerConfig, Seeds};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    /// Probabilities of cells `(y,a)` = `(0,0), (0,1), (1,0), (1,1)`.
    pub cell_probs: [f64; 4],
    pub class_separation: f64,
    pub attribute_shift: f64,
    pub label_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 20_000,
            d: 8,
            cell_probs: [0.45, 0.45, 0.05, 0.05],
            class_separation: 2.0,
            attribute_shift: 1.5,
            label_noise: 0.05,
        }
    }
}

impl SyntheticConfig {
    pub fn spec(&self, seed: u64) -> SynthSpec {
        SynthSpec {
            n: self.n,
            d: self.d,
            cell_probs: self.cell_probs,
            class_separation: self.class_separation,
            attribute_shift: self.attribute_shift,
            label_noise: self.label_noise,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    /// Train / validation / test fractions.
    pub fractions: [f64; 3],
    pub stratify: bool,
    /// Share of the balanced set held out for model selection.
    pub balanced_val_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            fractions: [0.6, 0.2, 0.2],
            stratify: true,
            balanced_val_fraction: 0.2,
        }
    }
}

/// Exactly one of `synthetic` or `csv` is used; `csv` wins when set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// CSV with columns `f0..f{d-1},a,y`, split according to `split`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
    pub split: SplitConfig,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StitchInitKind {
    #[default]
    Random,
    Identity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Layer widths from input to the two output logits.
    pub dims: Vec<usize>,
    /// Stitch goes before `blocks[stitch_position]`; defaults to the last block.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stitch_position: Option<usize>,
    pub stitch_init: StitchInitKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: vec![8, 32, 16, 2],
            stitch_position: None,
            stitch_init: StitchInitKind::Random,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    pub kind: ConstraintKind,
    /// Defaults to the kind's standard weight.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    pub eo_denominator: EoDenominator,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            kind: ConstraintKind::EqualizedOdds,
            alpha: None,
            eo_denominator: EoDenominator::GroupSize,
        }
    }
}

impl ConstraintConfig {
    pub fn constraint(&self) -> FairnessConstraint {
        FairnessConstraint {
            kind: self.kind,
            alpha: self.alpha.unwrap_or(self.kind.default_alpha()),
            eo_denominator: self.eo_denominator,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochsConfig {
    pub erm: usize,
    pub tfs: usize,
    pub fdr: usize,
}

impl Default for EpochsConfig {
    fn default() -> Self {
        Self {
            erm: 500,
            tfs: 1000,
            fdr: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterpolationConfig {
    /// Uniform grid size on `[0, 1]`.
    pub points: usize,
    /// Move frozen parameters along the line too.
    pub interpolate_frozen: bool,
    /// Drop the fairness penalty from the plotted objective.
    pub ce_only: bool,
}

impl Default for InterpolationConfig {
    fn default() -> Self {
        Self {
            points: 101,
            interpolate_frozen: false,
            ce_only: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Output directory; `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub seeds: SeedsConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub constraint: ConstraintConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: EpochsConfig,
    pub eval: EvalSettings,
    pub interpolation: InterpolationConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeedsConfig {
    pub init: u64,
    pub data: u64,
    pub train: u64,
}

impl Default for SeedsConfig {
    fn default() -> Self {
        Self {
            init: 7,
            data: 7,
            train: 7,
        }
    }
}

impl From<SeedsConfig> for Seeds {
    fn from(s: SeedsConfig) -> Self {
        Seeds {
            init: s.init,
            data: s.data,
            train: s.train,
        }
    }
}

/// Offsets that give each random consumer its own stream.
pub mod streams {
    pub const SYNTH: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const BALANCED: u64 = 2;
    pub const BALANCED_SPLIT: u64 = 3;
    pub const STITCH: u64 = 1;
}

impl RunConfig {
    pub fn from_toml_str(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let msg = e.message().to_string();
            let at = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].lines().count().max(1);
                    format!(" (line {line})")
                })
                .unwrap_or_default();
            Error::config(origin, format!("{msg}{at}"))
        })?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, &path.display().to_string())
    }

    /// Annotated default configuration.
    pub fn default_toml() -> String {
        toml::to_string_pretty(&RunConfig::default()).expect("default config serializes")
    }

    /// Applies a `key=value` seed override, `key` being init, data, train or all.
    pub fn apply_seed_override(&mut self, spec: &str) -> Result<()> {
        let (key, value) = spec.split_once('=').ok_or_else(|| {
            Error::config(
                "--seed-override",
                format!("expected key=value, got `{spec}`"),
            )
        })?;
        let v: u64 = value.trim().parse().map_err(|_| {
            Error::config(
                format!("--seed-override {key}"),
                format!("`{value}` is not a u64"),
            )
        })?;
        match key.trim() {
            "init" => self.seeds.init = v,
            "data" => self.seeds.data = v,
            "train" => self.seeds.train = v,
            "all" => {
                self.seeds = SeedsConfig {
                    init: v,
                    data: v,
                    train: v,
                }
            }
            other => {
                return Err(Error::config(
                    "--seed-override",
                    format!("unknown seed `{other}` (expected init, data, train or all)"),
                ))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.csv.is_none() {
            self.data.synthetic.spec(self.seeds.data).validate()?;
        }
        let split = &self.data.split;
        if let Some(i) = split
            .fractions
            .iter()
            .position(|&f| !(f > 0.0 && f.is_finite()))
        {
            return Err(Error::config(
                format!("data.split.fractions[{i}]"),
                "fractions must be positive",
            ));
        }
        let total: f64 = split.fractions.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(
                "data.split.fractions",
                format!("must sum to 1, got {total}"),
            ));
        }
        if !(split.balanced_val_fraction > 0.0 && split.balanced_val_fraction < 1.0) {
            return Err(Error::config(
                "data.split.balanced_val_fraction",
                "must lie in (0, 1)",
            ));
        }

        let dims = &self.model.dims;
        if dims.len() < 3 {
            return Err(Error::config(
                "model.dims",
                "need at least one hidden layer (input, hidden..., 2) so a stitch fits",
            ));
        }
        if let Some(i) = dims.iter().position(|&w| w == 0) {
            return Err(Error::config(
                format!("model.dims[{i}]"),
                "widths must be positive",
            ));
        }
        if *dims.last().unwrap() != 2 {
            return Err(Error::config(
                "model.dims",
                "the last width must be 2 (binary logits)",
            ));
        }
        if self.data.csv.is_none() && dims[0] != self.data.synthetic.d {
            return Err(Error::config(
                "model.dims[0]",
                format!(
                    "input width {} does not match data.synthetic.d = {}",
                    dims[0], self.data.synthetic.d
                ),
            ));
        }
        let blocks = dims.len() - 1;
        if let Some(p) = self.model.stitch_position {
            if p == 0 || p >= blocks {
                return Err(Error::config(
                    "model.stitch_position",
                    format!("must lie in [1, {}], got {p}", blocks - 1),
                ));
            }
        }

        let c = self.constraint.constraint();
        if !(c.alpha.is_finite() && c.alpha >= 0.0) {
            return Err(Error::config(
                "constraint.alpha",
                format!("must be finite and >= 0, got {}", c.alpha),
            ));
        }
        self.optimizer.validate()?;
        let eval = &self.eval;
        if !(0.0..=1.0).contains(&eval.threshold) {
            return Err(Error::config("eval.threshold", "must lie in [0, 1]"));
        }
        if eval.abroca_grid < 2 {
            return Err(Error::config("eval.abroca_grid", "must be at least 2"));
        }
        if self.interpolation.points < 2 {
            return Err(Error::config("interpolation.points", "must be at least 2"));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Seeds {
        self.seeds.into()
    }

    pub fn stitch_init(&self) -> StitchInit {
        match self.model.stitch_init {
            StitchInitKind::Identity => StitchInit::Identity,
            StitchInitKind::Random => StitchInit::Random {
                seed: self.seeds.init.wrapping_add(streams::STITCH),
            },
        }
    }

    /// SHA-256 of the canonical JSON form, excluding the output directory.
    pub fn hash(&self) -> String {
        let mut canon = self.clone();
        canon.out_dir = None;
        let json = serde_json::to_vec(&canon).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}
