//! On-disk toy model: `weights.scst` holds every parameter as one flat f32
//! vector (denoiser, query encoder, key encoder), `model.json` the metadata
//! needed to rebuild the layout.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{tensor_read, tensor_write, Rng, Tensor};
use crate::params::ParamSet;
use crate::train::{ModelDims, ToyModel};

pub const WEIGHTS_FILE: &str = "weights.scst";
pub const META_FILE: &str = "model.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelMeta {
    pub dims: ModelDims,
    pub momentum: f64,
    pub completed_stage: u8,
    pub num_params: usize,
    /// FNV-1a over the weights, checked on load.
    pub fingerprint: String,
}

pub fn save_model(model: &ToyModel<f32>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    tensor_write(&Tensor::vector(model.flatten()), dir.join(WEIGHTS_FILE))?;
    let meta = ModelMeta {
        dims: model.dims,
        momentum: model.control.momentum,
        completed_stage: model.completed_stage,
        num_params: model.num_params(),
        fingerprint: format!("{:016x}", model.fingerprint()),
    };
    let json = serde_json::to_string_pretty(&meta).expect("plain data serializes");
    let path = dir.join(META_FILE);
    fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<ToyModel<f32>> {
    let dir = dir.as_ref();
    let path = dir.join(META_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let meta: ModelMeta = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if meta.completed_stage > 3 {
        return Err(Error::Config(format!("completed_stage {} is not a stage", meta.completed_stage)));
    }
    let weights: Tensor<f32> = tensor_read(dir.join(WEIGHTS_FILE))?;
    // Layout comes from the dims; the random draw is overwritten.
    let mut model = ToyModel::init(meta.dims, meta.momentum, &mut Rng::new(0))?;
    if weights.ndim() != 1 || weights.len() != meta.num_params {
        return Err(Error::Shape(format!("weights file holds {:?}, metadata says {}", weights.dims(), meta.num_params)));
    }
    model.load_flat(weights.data())?;
    if format!("{:016x}", model.fingerprint()) != meta.fingerprint {
        return Err(Error::Config("weights do not match the recorded fingerprint".into()));
    }
    model.completed_stage = meta.completed_stage;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = std::env::temp_dir().join(format!("scst-ckpt-{}", std::process::id()));
        let mut model = ToyModel::<f32>::init(ModelDims::default(), 0.99, &mut Rng::new(3)).unwrap();
        model.completed_stage = 2;
        save_model(&model, &dir).unwrap();
        assert_eq!(load_model(&dir).unwrap(), model);

        let mut w: Tensor<f32> = tensor_read(dir.join(WEIGHTS_FILE)).unwrap();
        w.data_mut()[0] += 1.0;
        tensor_write(&w, dir.join(WEIGHTS_FILE)).unwrap();
        assert!(load_model(&dir).is_err());
        fs::remove_dir_all(&dir).unwrap();
    }
}
