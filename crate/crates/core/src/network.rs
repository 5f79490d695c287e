//! Feed-forward networks with per-block freezing and an optional stitching
//! layer.
//!
//! Data flows `input → blocks[..ℓ] → stitch → blocks[ℓ..] → logits`. The
//! stitch is a plain affine map whose input and output width both equal the
//! activation width at position `ℓ`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerBlock {
    pub weight: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
    pub trainable: bool,
}

impl LayerBlock {
    pub fn new(weight: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::shape("layer bias", weight.shape(), bias.shape()));
        }
        Ok(Self {
            weight,
            bias,
            activation,
            trainable: true,
        })
    }

    /// Glorot-uniform weights, zero bias.
    fn glorot(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut ChaCha8Rng) -> Self {
        let limit = glorot_limit(fan_in, fan_out);
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weight: Tensor::new(fan_in, fan_out, data).expect("sized by construction"),
            bias: Tensor::zeros(1, fan_out),
            activation,
            trainable: true,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn apply(&self, x: &Tensor) -> Result<Tensor> {
        let z = x.affine(&self.weight, &self.bias)?;
        Ok(match self.activation {
            Activation::Relu => z.relu(),
            Activation::Identity => z,
        })
    }
}

/// `√(6 / (fan_in + fan_out))`.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stitch {
    /// Inserted before `blocks[index]`.
    pub index: usize,
    pub block: LayerBlock,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StitchInit {
    Identity,
    Random { seed: u64 },
}

/// Which parameters an optimizer may touch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableSelector {
    All,
    LastBlockOnly,
    StitchOnly,
    Frozen,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    blocks: Vec<LayerBlock>,
    stitch: Option<Stitch>,
    seed: u64,
}

/// Tape handles produced by [`Network::forward`].
#[derive(Debug)]
pub struct ForwardPass {
    pub logits: Var,
    /// `(weight, bias)` leaves in forward order, stitch included.
    pub layer_params: Vec<(Var, Var)>,
}

impl Network {
    /// Glorot-initialized MLP with relu hidden blocks and a linear output
    /// block producing two logits.
    pub fn init_mlp(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::config(
                "model.dims",
                "need at least an input and an output width",
            ));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::config(
                format!("model.dims[{i}]"),
                "widths must be positive",
            ));
        }
        if *dims.last().unwrap() != 2 {
            return Err(Error::config(
                "model.dims",
                "final width must be 2 (binary logits)",
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len() - 1;
        let blocks = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                LayerBlock::glorot(w[0], w[1], act, &mut rng)
            })
            .collect();
        Ok(Self {
            blocks,
            stitch: None,
            seed,
        })
    }

    /// Assembles a network from stored parts, validating every shape.
    pub fn from_parts(blocks: Vec<LayerBlock>, stitch: Option<Stitch>, seed: u64) -> Result<Self> {
        let net = Self {
            blocks,
            stitch,
            seed,
        };
        net.validate()?;
        Ok(net)
    }

    fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::Contract("network has no blocks".into()));
        }
        for (k, b) in self.blocks.iter().enumerate() {
            if b.bias.rows() != 1 || b.bias.cols() != b.out_dim() {
                return Err(Error::Contract(format!(
                    "block {k}: bias shape does not match weight"
                )));
            }
        }
        for (k, pair) in self.blocks.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Contract(format!(
                    "block {k} outputs {} but block {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        if self.blocks.last().unwrap().out_dim() != 2 {
            return Err(Error::Contract("final block must produce 2 logits".into()));
        }
        if let Some(s) = &self.stitch {
            self.check_position(s.index)?;
            let width = self.blocks[s.index].in_dim();
            let b = &s.block;
            if b.in_dim() != width || b.out_dim() != width || b.bias.cols() != width {
                return Err(Error::Contract(format!(
                    "stitch at {} must be {width}x{width}, got {}x{}",
                    s.index,
                    b.in_dim(),
                    b.out_dim()
                )));
            }
        }
        Ok(())
    }

    fn check_position(&self, index: usize) -> Result<()> {
        let n = self.blocks.len();
        if index == 0 || index >= n {
            return Err(Error::Range {
                index,
                detail: format!("stitch position must lie in [1, {}]", n.saturating_sub(1)),
            });
        }
        Ok(())
    }

    pub fn blocks(&self) -> &[LayerBlock] {
        &self.blocks
    }

    pub fn stitch(&self) -> Option<&Stitch> {
        self.stitch.as_ref()
    }

    pub fn stitch_index(&self) -> Option<usize> {
        self.stitch.as_ref().map(|s| s.index)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Layer widths `[d₀, …, d_n]` (stitch excluded).
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.blocks[0].in_dim())
            .chain(self.blocks.iter().map(LayerBlock::out_dim))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].in_dim()
    }

    /// Layers in forward order, the stitch at its position.
    pub fn layers(&self) -> Vec<&LayerBlock> {
        let mut out = Vec::with_capacity(self.blocks.len() + 1);
        for (k, b) in self.blocks.iter().enumerate() {
            if let Some(s) = self.stitch.as_ref().filter(|s| s.index == k) {
                out.push(&s.block);
            }
            out.push(b);
        }
        out
    }

    fn layers_mut(&mut self) -> Vec<&mut LayerBlock> {
        let idx = self.stitch_index();
        let mut stitch = self.stitch.as_mut().map(|s| &mut s.block);
        let mut out = Vec::with_capacity(self.blocks.len() + 1);
        for (k, b) in self.blocks.iter_mut().enumerate() {
            if Some(k) == idx {
                out.push(stitch.take().unwrap());
            }
            out.push(b);
        }
        out
    }

    /// Inserts a trainable affine stitch before `blocks[position]` and freezes
    /// every original block.
    pub fn insert_stitch(&mut self, position: usize, init: StitchInit) -> Result<()> {
        if self.stitch.is_some() {
            return Err(Error::Contract("network already has a stitch".into()));
        }
        self.check_position(position)?;
        let width = self.blocks[position].in_dim();
        let block = match init {
            StitchInit::Identity => LayerBlock {
                weight: Tensor::eye(width),
                bias: Tensor::zeros(1, width),
                activation: Activation::Identity,
                trainable: true,
            },
            StitchInit::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                LayerBlock::glorot(width, width, Activation::Identity, &mut rng)
            }
        };
        for b in &mut self.blocks {
            b.trainable = false;
        }
        self.stitch = Some(Stitch {
            index: position,
            block,
        });
        Ok(())
    }

    pub fn set_trainable(&mut self, selector: TrainableSelector) -> Result<()> {
        if selector == TrainableSelector::StitchOnly && self.stitch.is_none() {
            return Err(Error::Contract(
                "stitch_only selected but the network has no stitch".into(),
            ));
        }
        let last = self.blocks.len() - 1;
        for (k, b) in self.blocks.iter_mut().enumerate() {
            b.trainable = match selector {
                TrainableSelector::All => true,
                TrainableSelector::LastBlockOnly => k == last,
                TrainableSelector::StitchOnly | TrainableSelector::Frozen => false,
            };
        }
        if let Some(s) = &mut self.stitch {
            s.block.trainable = matches!(
                selector,
                TrainableSelector::All | TrainableSelector::StitchOnly
            );
        }
        Ok(())
    }

    pub fn param_count(&self, trainable_only: bool) -> usize {
        self.layers()
            .into_iter()
            .filter(|l| !trainable_only || l.trainable)
            .map(LayerBlock::param_count)
            .sum()
    }

    /// Flat parameter vector: forward layer order, weight (row-major) before bias.
    pub fn params(&self, trainable_only: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count(trainable_only));
        for l in self.layers() {
            if trainable_only && !l.trainable {
                continue;
            }
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    /// Inverse of [`Network::params`].
    pub fn set_params(&mut self, trainable_only: bool, flat: &[f64]) -> Result<()> {
        let expected = self.param_count(trainable_only);
        if flat.len() != expected {
            return Err(Error::Contract(format!(
                "parameter vector has {} entries, network expects {expected}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for l in self.layers_mut() {
            if trainable_only && !l.trainable {
                continue;
            }
            for t in [&mut l.weight, &mut l.bias] {
                let n = t.len();
                t.data_mut().copy_from_slice(&flat[offset..offset + n]);
                offset += n;
            }
        }
        Ok(())
    }

    /// Records the forward pass on `tape`. Trainable layers become
    /// differentiable leaves, frozen ones constants.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<ForwardPass> {
        let xt = tape.value(x);
        if xt.cols() != self.input_dim() {
            return Err(Error::shape(
                "network input",
                xt.shape(),
                (xt.rows(), self.input_dim()),
            ));
        }
        let mut h = x;
        let mut layer_params = Vec::new();
        for l in self.layers() {
            let (w, b) = if l.trainable {
                (tape.var(l.weight.clone()), tape.var(l.bias.clone()))
            } else {
                (
                    tape.constant(l.weight.clone()),
                    tape.constant(l.bias.clone()),
                )
            };
            layer_params.push((w, b));
            h = tape.affine(h, w, b)?;
            if l.activation == Activation::Relu {
                h = tape.relu(h);
            }
        }
        Ok(ForwardPass {
            logits: h,
            layer_params,
        })
    }

    /// Flattened gradient of the trainable parameters, ordered like
    /// `params(true)`.
    pub fn trainable_grads(&self, pass: &ForwardPass, grads: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count(true));
        for (l, (w, b)) in self.layers().into_iter().zip(&pass.layer_params) {
            if l.trainable {
                out.extend_from_slice(grads.wrt(*w).data());
                out.extend_from_slice(grads.wrt(*b).data());
            }
        }
        out
    }

    /// Tape-free forward pass; bit-identical to [`Network::forward`].
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(
                "network input",
                x.shape(),
                (x.rows(), self.input_dim()),
            ));
        }
        let mut h = x.clone();
        for l in self.layers() {
            h = l.apply(&h)?;
        }
        Ok(h)
    }

    /// Class-1 probabilities for each input row.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.softmax_probs()?.into_data())
    }
}
