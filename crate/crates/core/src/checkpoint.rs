//! Model files: safetensors with the sampling and network configs stored as
//! JSON metadata. Raw sampling weights are kept as f64 so measurements are
//! reproduced exactly; network parameters are stored as f32.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use crate::error::{Error, Result};
use crate::reconstruction::{build_network, NetworkConfig};
use crate::sampling::{SamplingConfig, SamplingOperator};
use crate::training::CsModel;

pub const FORMAT: &str = "cscodec-model";
pub const FORMAT_VERSION: &str = "1";
const SAMPLING_KEY: &str = "sampling.raw_weights";

fn f64_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn f32_bytes(v: &[f64]) -> Vec<u8> {
    v.iter().flat_map(|x| (*x as f32).to_le_bytes()).collect()
}

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

/// Serializes a model to bytes.
pub fn to_bytes(model: &CsModel) -> Result<Vec<u8>> {
    let s = model.sampling.config();
    let b = s.block_size;
    let raw = f64_bytes(model.sampling.raw_weights());
    let params = model.network.params();
    let encoded: Vec<(String, Vec<usize>, Vec<u8>)> = params
        .iter()
        .map(|p| (p.name.clone(), p.shape.clone(), f32_bytes(&p.value)))
        .collect();
    let mut views = vec![(
        SAMPLING_KEY.to_string(),
        TensorView::new(Dtype::F64, vec![model.sampling.measurement_count(), b, b], &raw)
            .map_err(ckpt_err)?,
    )];
    for (name, shape, bytes) in &encoded {
        views.push((
            name.clone(),
            TensorView::new(Dtype::F32, shape.clone(), bytes).map_err(ckpt_err)?,
        ));
    }
    let metadata = HashMap::from([
        ("format".to_string(), FORMAT.to_string()),
        ("version".to_string(), FORMAT_VERSION.to_string()),
        ("sampling_config".to_string(), serde_json::to_string(s)?),
        (
            "network_config".to_string(),
            serde_json::to_string(model.network.config())?,
        ),
    ]);
    safetensors::serialize(views, &Some(metadata)).map_err(ckpt_err)
}

/// Parses a model written by [`to_bytes`].
pub fn from_bytes(bytes: &[u8]) -> Result<CsModel> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(ckpt_err)?;
    let meta = meta
        .metadata()
        .clone()
        .ok_or_else(|| ckpt_err("missing metadata"))?;
    let get = |k: &str| meta.get(k).ok_or_else(|| ckpt_err(format!("missing metadata key {k}")));
    if get("format")? != FORMAT {
        return Err(ckpt_err("not a model file"));
    }
    if get("version")? != FORMAT_VERSION {
        return Err(ckpt_err(format!("unsupported model version {}", get("version")?)));
    }
    let sampling_cfg: SamplingConfig = serde_json::from_str(get("sampling_config")?)?;
    let network_cfg: NetworkConfig = serde_json::from_str(get("network_config")?)?;
    let tensors = SafeTensors::deserialize(bytes).map_err(ckpt_err)?;

    let raw = tensors.tensor(SAMPLING_KEY).map_err(ckpt_err)?;
    if raw.dtype() != Dtype::F64 {
        return Err(ckpt_err("sampling weights must be f64"));
    }
    let raw: Vec<f64> = raw
        .data()
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let sampling = SamplingOperator::from_raw(sampling_cfg, raw)?;

    let mut network = build_network(&network_cfg, 0)?;
    for p in network.params_mut() {
        let t = tensors.tensor(&p.name).map_err(ckpt_err)?;
        if t.dtype() != Dtype::F32 || t.shape() != p.shape.as_slice() {
            return Err(ckpt_err(format!("tensor {} has the wrong type or shape", p.name)));
        }
        for (v, c) in p.value.iter_mut().zip(t.data().chunks_exact(4)) {
            *v = f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")));
        }
    }
    Ok(CsModel { sampling, network })
}

pub fn save(model: &CsModel, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<CsModel> {
    from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
