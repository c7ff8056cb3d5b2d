//! JSON checkpoints holding the model configuration, every parameter tensor
//! and the data scaler. Floats use shortest round-trip formatting, so a
//! save/load cycle is bit-exact.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Scaler;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, ModelParams};
use crate::tensor::Tensor;

const FORMAT: &str = "stode-checkpoint";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StoredTensor {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    config: ModelConfig,
    scaler: Option<Scaler>,
    params: Vec<StoredTensor>,
    fixed_adjacency: Option<StoredTensor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub scaler: Option<Scaler>,
}

fn store(name: &str, t: &Tensor) -> Result<StoredTensor> {
    if t.values().iter().any(|v| !v.is_finite()) {
        return Err(Error::Checkpoint(format!("tensor `{name}` holds non-finite values")));
    }
    Ok(StoredTensor {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        values: t.values().to_vec(),
    })
}

pub fn to_json(model: &Model, scaler: Option<&Scaler>) -> Result<String> {
    let params = model
        .params
        .named()
        .into_iter()
        .map(|(name, _, t)| store(&name, t))
        .collect::<Result<Vec<_>>>()?;
    let fixed_adjacency = model
        .params
        .fixed_adjacency
        .as_ref()
        .map(|a| store("fixed_adjacency", a))
        .transpose()?;
    let doc = Document {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config.clone(),
        scaler: scaler.cloned(),
        params,
        fixed_adjacency,
    };
    Ok(serde_json::to_string(&doc)?)
}

pub fn from_json(text: &str) -> Result<Checkpoint> {
    let doc: Document = serde_json::from_str(text)?;
    if doc.format != FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", doc.format)));
    }
    if doc.version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", doc.version)));
    }
    let mut params = ModelParams::init(&doc.config, &mut ChaCha8Rng::seed_from_u64(0))?;
    let names: Vec<String> = params.named().into_iter().map(|(n, _, _)| n).collect();
    if names.len() != doc.params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors for this configuration, found {}",
            names.len(),
            doc.params.len()
        )));
    }
    for ((slot, name), stored) in params.tensors_mut().into_iter().zip(&names).zip(doc.params) {
        if stored.name != *name || stored.shape != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{}` {:?} does not match expected `{name}` {:?}",
                stored.name,
                stored.shape,
                slot.shape()
            )));
        }
        *slot = Tensor::new(stored.shape, stored.values)?.with_grad();
    }
    match (&mut params.fixed_adjacency, doc.fixed_adjacency) {
        (Some(slot), Some(stored)) if stored.shape == slot.shape() => {
            *slot = Tensor::new(stored.shape, stored.values)?;
        }
        (None, None) => {}
        _ => {
            return Err(Error::Checkpoint(
                "fixed adjacency does not match the configuration".into(),
            ))
        }
    }
    Ok(Checkpoint {
        model: Model::from_parts(doc.config, params)?,
        scaler: doc.scaler,
    })
}

pub fn save(path: &Path, model: &Model, scaler: Option<&Scaler>) -> Result<()> {
    std::fs::write(path, to_json(model, scaler)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    from_json(&std::fs::read_to_string(path)?)
}
