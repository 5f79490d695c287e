//! JSON checkpoints that round-trip a [`Network`] bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::optim::OptimizerConfig;
use super::train::Phase;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::network::{Activation, LayerBlock, Network, Stitch};

pub const CHECKPOINT_VERSION: u32 = 1;

/// The three named seeds every random draw derives from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub init: u64,
    pub data: u64,
    pub train: u64,
}

impl Seeds {
    pub fn all(seed: u64) -> Self {
        Self {
            init: seed,
            data: seed,
            train: seed,
        }
    }
}

/// Provenance stored next to the parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub phase: Phase,
    /// Number of updates applied; 0 for an initial state.
    pub epoch: usize,
    pub optimizer: OptimizerConfig,
    pub seeds: Seeds,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerParams {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub activation: Activation,
}

impl LayerParams {
    fn from_block(b: &LayerBlock) -> Self {
        Self {
            w: b.weight.to_rows(),
            b: b.bias.data().to_vec(),
            activation: b.activation,
        }
    }

    fn to_block(&self, key: &str, trainable: bool) -> Result<LayerBlock> {
        let rows = self.w.len();
        let cols = self.w.first().map_or(0, Vec::len);
        if rows == 0 || cols == 0 {
            return Err(Error::Checkpoint(format!("{key}: empty weight matrix")));
        }
        if let Some((r, row)) = self.w.iter().enumerate().find(|(_, r)| r.len() != cols) {
            return Err(Error::Checkpoint(format!(
                "{key}: weight row {r} has {} entries, expected {cols}",
                row.len()
            )));
        }
        if self.b.len() != cols {
            return Err(Error::Checkpoint(format!(
                "{key}: bias has {} entries, expected {cols}",
                self.b.len()
            )));
        }
        let weight = Tensor::new(rows, cols, self.w.concat())
            .map_err(|e| Error::Checkpoint(format!("{key}: {e}")))?;
        let bias = Tensor::row(&self.b);
        let mut block = LayerBlock::new(weight, bias, self.activation)
            .map_err(|e| Error::Checkpoint(format!("{key}: {e}")))?;
        block.trainable = trainable;
        Ok(block)
    }
}

/// On-disk network state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    /// Widths of the original blocks; the stitch keeps its input width.
    pub dims: Vec<usize>,
    pub stitch_index: Option<usize>,
    /// One flag per block in block order, followed by the stitch flag if any.
    pub trainable: Vec<bool>,
    /// `block_<k>` for every block plus `stitch` when present.
    pub params: BTreeMap<String, LayerParams>,
    pub optimizer: OptimizerConfig,
    pub phase: Phase,
    pub epoch: usize,
    pub seeds: Seeds,
}

fn block_key(k: usize) -> String {
    format!("block_{k}")
}

impl Checkpoint {
    pub fn from_network(net: &Network, meta: &CheckpointMeta) -> Self {
        let mut params = BTreeMap::new();
        let mut trainable = Vec::with_capacity(net.depth() + 1);
        for (k, b) in net.blocks().iter().enumerate() {
            params.insert(block_key(k), LayerParams::from_block(b));
            trainable.push(b.trainable);
        }
        if let Some(s) = net.stitch() {
            params.insert("stitch".into(), LayerParams::from_block(&s.block));
            trainable.push(s.block.trainable);
        }
        Self {
            version: CHECKPOINT_VERSION,
            dims: net.dims(),
            stitch_index: net.stitch_index(),
            trainable,
            params,
            optimizer: meta.optimizer,
            phase: meta.phase,
            epoch: meta.epoch,
            seeds: meta.seeds,
        }
    }

    pub fn meta(&self) -> CheckpointMeta {
        CheckpointMeta {
            phase: self.phase,
            epoch: self.epoch,
            optimizer: self.optimizer,
            seeds: self.seeds,
        }
    }

    /// Rebuilds the network, checking every stored dimension.
    pub fn to_network(&self) -> Result<Network> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        if self.dims.len() < 2 {
            return Err(Error::Checkpoint(
                "dims must list at least input and output width".into(),
            ));
        }
        let depth = self.dims.len() - 1;
        let expected = depth + usize::from(self.stitch_index.is_some());
        if self.trainable.len() != expected {
            return Err(Error::Checkpoint(format!(
                "trainable has {} flags, expected {expected}",
                self.trainable.len()
            )));
        }
        if self.params.len() != expected {
            return Err(Error::Checkpoint(format!(
                "params has {} entries, expected {expected}",
                self.params.len()
            )));
        }
        let mut blocks = Vec::with_capacity(depth);
        for k in 0..depth {
            let key = block_key(k);
            let p = self
                .params
                .get(&key)
                .ok_or_else(|| Error::Checkpoint(format!("missing params.{key}")))?;
            let block = p.to_block(&key, self.trainable[k])?;
            if block.in_dim() != self.dims[k] || block.out_dim() != self.dims[k + 1] {
                return Err(Error::Checkpoint(format!(
                    "{key} is {}x{}, dims say {}x{}",
                    block.in_dim(),
                    block.out_dim(),
                    self.dims[k],
                    self.dims[k + 1]
                )));
            }
            blocks.push(block);
        }
        let stitch = match self.stitch_index {
            Some(index) => {
                let p = self.params.get("stitch").ok_or_else(|| {
                    Error::Checkpoint("stitch_index set but params.stitch missing".into())
                })?;
                Some(Stitch {
                    index,
                    block: p.to_block("stitch", self.trainable[depth])?,
                })
            }
            None => None,
        };
        // The network seed is the init seed by construction.
        Network::from_parts(blocks, stitch, self.seeds.init)
            .map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

pub fn save_checkpoint(net: &Network, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = Checkpoint::from_network(net, meta).to_json()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Reads and fully validates a checkpoint, returning it with its network.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(Checkpoint, Network)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ckpt = Checkpoint::from_json(&text)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let net = ckpt
        .to_network()
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok((ckpt, net))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{StitchInit, TrainableSelector};

    fn meta() -> CheckpointMeta {
        CheckpointMeta {
            phase: Phase::Tfs,
            epoch: 3,
            optimizer: OptimizerConfig::default(),
            seeds: Seeds {
                init: 11,
                data: 2,
                train: 3,
            },
        }
    }

    fn stitched() -> Network {
        let mut net = Network::init_mlp(&[3, 5, 4, 2], 11).unwrap();
        net.insert_stitch(2, StitchInit::Random { seed: 9 })
            .unwrap();
        net
    }

    #[test]
    fn round_trip_is_exact_and_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.json");
        let net = stitched();
        save_checkpoint(&net, &meta(), &path).unwrap();
        let (ckpt, back) = load_checkpoint(&path).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.stitch_index(), Some(2));
        assert_eq!(ckpt.meta(), meta());
        let path2 = dir.path().join("b.json");
        save_checkpoint(&back, &ckpt.meta(), &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn flags_survive() {
        let mut net = Network::init_mlp(&[3, 5, 2], 1).unwrap();
        net.set_trainable(TrainableSelector::LastBlockOnly).unwrap();
        let back = Checkpoint::from_network(&net, &meta())
            .to_network()
            .unwrap();
        assert_eq!(
            back.blocks()
                .iter()
                .map(|b| b.trainable)
                .collect::<Vec<_>>(),
            [false, true]
        );
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let net = stitched();
        let good = Checkpoint::from_network(&net, &meta());

        let mut bad = good.clone();
        bad.version = 2;
        assert!(matches!(bad.to_network(), Err(Error::Checkpoint(_))));

        let mut bad = good.clone();
        bad.params.get_mut("block_1").unwrap().b.pop();
        assert!(matches!(bad.to_network(), Err(Error::Checkpoint(_))));

        let mut bad = good.clone();
        bad.params.get_mut("block_0").unwrap().w[1].push(0.0);
        assert!(matches!(bad.to_network(), Err(Error::Checkpoint(_))));

        let mut bad = good.clone();
        bad.dims[1] = 6;
        assert!(matches!(bad.to_network(), Err(Error::Checkpoint(_))));

        let mut bad = good.clone();
        bad.params.remove("stitch");
        assert!(bad.to_network().is_err());

        let json = good.to_json().unwrap();
        assert!(matches!(
            Checkpoint::from_json(&json[..json.len() / 2]),
            Err(Error::Checkpoint(_))
        ));
    }

    #[test]
    fn missing_file_is_io() {
        let err = load_checkpoint("/nonexistent/x.json").unwrap_err();
        assert_eq!(err.exit_code(), 5);
    }
}
