//! Parameter checkpoints: one MCTA file per tensor plus `manifest.json`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array3, Array4};
use serde::{Deserialize, Serialize};

use super::conv::ConvLayer;
use super::denoiser::{DenoiserParams, Variant};
use super::spectral::RsnState;
use super::Real;
use crate::array_io::{load_array, save_array, write_atomic};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_size: usize,
    pub weight: String,
    pub bias: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsn_u: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rsn_v: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub variant: Variant,
    /// Momentum-Net layer this network refines for (0-based).
    pub layer_index: usize,
    /// Training epochs completed.
    pub epoch: usize,
    pub input_scale: f64,
    pub layers: Vec<LayerEntry>,
}

fn to_f64<T: Real, D: ndarray::Dimension>(a: &ndarray::Array<T, D>) -> ndarray::ArrayD<f64> {
    a.map(|v| v.f64()).into_dyn()
}

pub fn save_params<T: Real>(dir: &Path, params: &DenoiserParams<T>, layer_index: usize, epoch: usize) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut layers = Vec::new();
    for (i, layer) in params.layers.iter().enumerate() {
        let weight = format!("conv{i}_weight.mcta");
        let bias = format!("conv{i}_bias.mcta");
        save_array(&dir.join(&weight), &to_f64(&layer.weight))?;
        save_array(&dir.join(&bias), &to_f64(&layer.bias))?;
        let (rsn_u, rsn_v) = match &layer.rsn {
            Some(state) => {
                let u = format!("conv{i}_rsn_u.mcta");
                let v = format!("conv{i}_rsn_v.mcta");
                save_array(&dir.join(&u), &to_f64(&state.u))?;
                save_array(&dir.join(&v), &to_f64(&state.v))?;
                (Some(u), Some(v))
            }
            None => (None, None),
        };
        layers.push(LayerEntry {
            in_channels: layer.in_channels(),
            out_channels: layer.out_channels(),
            kernel_size: layer.kernel_size(),
            weight,
            bias,
            rsn_u,
            rsn_v,
        });
    }
    let manifest = CheckpointManifest {
        variant: params.variant,
        layer_index,
        epoch,
        input_scale: params.input_scale,
        layers,
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
    write_atomic(&dir.join(MANIFEST), json.as_bytes())
}

pub fn load_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn load_tensor<T: Real, D: ndarray::Dimension>(dir: &Path, name: &str, shape: &[usize]) -> Result<ndarray::Array<T, D>> {
    let a = load_array(&dir.join(name))?;
    if a.shape() != shape {
        return Err(Error::Data(format!(
            "{name}: expected shape {shape:?}, found {:?}",
            a.shape()
        )));
    }
    a.map(|&v| T::of(v))
        .into_dimensionality::<D>()
        .map_err(|_| Error::Data(format!("{name}: wrong rank")))
}

pub fn load_params<T: Real>(dir: &Path) -> Result<(DenoiserParams<T>, CheckpointManifest)> {
    let manifest = load_manifest(dir)?;
    let mut layers = Vec::new();
    for entry in &manifest.layers {
        let (i, o, k) = (entry.in_channels, entry.out_channels, entry.kernel_size);
        let weight: Array4<T> = load_tensor(dir, &entry.weight, &[o, i, k, k])?;
        let bias: Array1<T> = load_tensor(dir, &entry.bias, &[o])?;
        let rsn = match (&entry.rsn_u, &entry.rsn_v) {
            (Some(u), Some(v)) => {
                let u: Array3<T> = load_array(&dir.join(u))?
                    .map(|&x| T::of(x))
                    .into_dimensionality()
                    .map_err(|_| Error::Data(format!("{u}: expected rank 3")))?;
                let v: Array3<T> = load_array(&dir.join(v))?
                    .map(|&x| T::of(x))
                    .into_dimensionality()
                    .map_err(|_| Error::Data(format!("{v}: expected rank 3")))?;
                Some(RsnState { u, v })
            }
            _ => None,
        };
        layers.push(ConvLayer { weight, bias, rsn });
    }
    let params = DenoiserParams {
        layers,
        variant: manifest.variant,
        input_scale: manifest.input_scale,
    };
    Ok((params, manifest))
}
