use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::mlp::{Layer, MlpModel};
use crate::error::{DuetError, Result};

pub const CHECKPOINT_FORMAT: &str = "duet-mlp/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngRecord {
    /// 32-byte ChaCha key, hex encoded.
    key: String,
    stream: u64,
    /// u128 word position as a decimal string.
    word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    fan_in: usize,
    fan_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Self-describing JSON record of a model, exact under round trip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    format: String,
    dims: Vec<usize>,
    dropout_rate: f64,
    seed: u64,
    rng: RngRecord,
    layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &MlpModel) -> Self {
        let rng = model.rng();
        let key = rng.get_seed().iter().map(|b| format!("{b:02x}")).collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            dims: model.dims().to_vec(),
            dropout_rate: model.dropout_rate(),
            seed: model.seed(),
            rng: RngRecord {
                key,
                stream: rng.get_stream(),
                word_pos: rng.get_word_pos().to_string(),
            },
            layers: model
                .layers()
                .iter()
                .map(|l| LayerRecord {
                    fan_in: l.weights.rows(),
                    fan_out: l.weights.cols(),
                    weights: l.weights.data().to_vec(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn into_model(self) -> Result<MlpModel> {
        let bad = |m: &str| DuetError::Schema {
            line: 1,
            message: m.to_string(),
        };
        if self.format != CHECKPOINT_FORMAT {
            return Err(bad(&format!("unknown checkpoint format {}", self.format)));
        }
        if self.rng.key.len() != 64 {
            return Err(bad("rng key must be 64 hex digits"));
        }
        let mut key = [0u8; 32];
        for (i, byte) in key.iter_mut().enumerate() {
            *byte = u8::from_str_radix(&self.rng.key[2 * i..2 * i + 2], 16).map_err(|_| bad("rng key is not hex"))?;
        }
        let word_pos: u128 = self
            .rng
            .word_pos
            .parse()
            .map_err(|_| bad("rng word position is not an integer"))?;
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(self.rng.stream);
        rng.set_word_pos(word_pos);
        let layers = self
            .layers
            .into_iter()
            .map(|l| {
                Ok(Layer {
                    weights: Matrix::from_vec(l.fan_in, l.fan_out, l.weights)?,
                    bias: l.bias,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpModel::from_parts(self.dims, layers, self.dropout_rate, self.seed, rng)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DuetError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

pub fn save_checkpoint(model: &MlpModel, path: &Path) -> Result<()> {
    let mut text = Checkpoint::from_model(model).to_json()?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpModel> {
    Checkpoint::from_json(&fs::read_to_string(path)?)?.into_model()
}
