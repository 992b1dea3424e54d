use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::model::{Architecture, CrlModel, ModelDims};
use crate::error::{Error, Result};
use crate::report::write_json;
use crate::tabular::{load_embeddings, write_embeddings, EmbeddingMatrix};

pub const MODEL_MANIFEST: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub dims: ModelDims,
    pub arch: Architecture,
    /// One `<name>.bin` + `<name>.json` embedding blob per entry.
    pub params: Vec<ParamEntry>,
}

/// Writes `model.json` and one f32 embedding blob per parameter into `dir`.
/// Values are rounded to f32, so a reloaded model matches the saved one to
/// single precision.
pub fn save_model(model: &CrlModel, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::new();
    for (name, v) in model.params.names.iter().zip(&model.params.values) {
        let flat: Vec<f64> = v.transpose().as_slice().to_vec();
        let e = EmbeddingMatrix::from_f64(v.nrows(), v.ncols(), &flat)?;
        write_embeddings(&e, &dir.join(format!("{name}.bin")), &dir.join(format!("{name}.json")))?;
        entries.push(ParamEntry {
            name: name.clone(),
            rows: v.nrows(),
            cols: v.ncols(),
        });
    }
    let manifest = ModelManifest {
        dims: model.dims.clone(),
        arch: model.arch.clone(),
        params: entries,
    };
    let path = dir.join(MODEL_MANIFEST);
    write_json(&path, &manifest)?;
    Ok(path)
}

pub fn load_model(dir: &Path) -> Result<CrlModel> {
    let path = dir.join(MODEL_MANIFEST);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ModelManifest = serde_json::from_str(&text)?;
    let mut model = CrlModel::new(manifest.dims, manifest.arch, 0)?;
    let layout_ok = manifest.params.len() == model.params.values.len()
        && manifest
            .params
            .iter()
            .zip(model.params.names.iter().zip(&model.params.values))
            .all(|(e, (n, v))| &e.name == n && e.rows == v.nrows() && e.cols == v.ncols());
    if !layout_ok {
        return Err(Error::ShapeMismatch("parameter layout does not match the architecture".into()));
    }
    for (e, v) in manifest.params.iter().zip(&mut model.params.values) {
        let m = load_embeddings(&dir.join(format!("{}.bin", e.name)), &dir.join(format!("{}.json", e.name)))?;
        if m.rows() != e.rows || m.dim() != e.cols {
            return Err(Error::ShapeMismatch(format!("blob {} is {}x{}", e.name, m.rows(), m.dim())));
        }
        *v = m.to_dmatrix();
    }
    Ok(model)
}
