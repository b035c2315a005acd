use super::model::{AeModel, ModelConfig, ModelMeta};
use super::NnError;
use crate::artifact::{parse_header, read_container, write_container, ArtifactError, FORMAT_VERSION};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const MODEL_MAGIC: &[u8; 8] = b"GSMODEL\0";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    config: ModelConfig,
    meta: ModelMeta,
    tensors: Vec<TensorEntry>,
}

pub fn save_model(path: &Path, model: &AeModel) -> Result<(), NnError> {
    let tensors = model
        .param_names()
        .into_iter()
        .zip(model.params())
        .map(|(name, p)| TensorEntry { name, shape: [p.nrows(), p.ncols()] })
        .collect();
    let header =
        ModelHeader { format_version: FORMAT_VERSION, config: model.config.clone(), meta: model.meta.clone(), tensors };
    let payload: Vec<f64> = model.params().iter().flat_map(|p| p.iter().copied()).collect();
    write_container(path, MODEL_MAGIC, &header, &payload)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<AeModel, NnError> {
    let (value, payload) = read_container(path, MODEL_MAGIC, "model")?;
    let header: ModelHeader = parse_header(value)?;
    let mut model = AeModel::new(header.config, 0)?;
    model.meta = header.meta;
    let names = model.param_names();
    if header.tensors.len() != names.len() {
        return Err(ArtifactError::Shape {
            name: "<manifest>".into(),
            detail: format!("{} tensors listed, model has {}", header.tensors.len(), names.len()),
        }
        .into());
    }
    let mut offset = 0;
    for ((entry, name), p) in header.tensors.iter().zip(&names).zip(model.params_mut()) {
        let expected = [p.nrows(), p.ncols()];
        if &entry.name != name || entry.shape != expected {
            return Err(ArtifactError::Shape {
                name: entry.name.clone(),
                detail: format!("manifest says {:?}, configuration implies `{name}` {:?}", entry.shape, expected),
            }
            .into());
        }
        let len = p.len();
        let Some(chunk) = payload.get(offset..offset + len) else {
            return Err(ArtifactError::Truncated(format!("tensor `{name}` needs {len} values")).into());
        };
        *p = Array2::from_shape_vec((expected[0], expected[1]), chunk.to_vec()).expect("length checked");
        offset += len;
    }
    if offset != payload.len() {
        return Err(ArtifactError::Header(format!("{} trailing values after the last tensor", payload.len() - offset)).into());
    }
    Ok(model)
}
