//! Weight files.
//!
//! A weight file is one JSON object:
//!
//! ```text
//! {"format_version": 1, "layer_dims": [3, 128, ..., 3], "activation": "smooth_relu",
//!  "created_from_seed": 0,
//!  "layers": [{"weight": "<base64>", "bias": "<base64>"}, ...]}
//! ```
//!
//! Each base64 payload is a little-endian `f64` array; weights are row-major
//! with shape `(out, in)`. Layers appear in forward order.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{EfmError, Result};
use crate::model::mlp::{Activation, FieldApproximator, Layer, Parameters};

pub const WEIGHT_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct WeightFile {
    format_version: u32,
    layer_dims: Vec<usize>,
    activation: Activation,
    created_from_seed: u64,
    layers: Vec<EncodedLayer>,
}

#[derive(Serialize, Deserialize)]
struct EncodedLayer {
    weight: String,
    bias: String,
}

fn encode(values: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = values.flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(text: &str, expected: usize) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(text)
        .map_err(|e| EfmError::CorruptWeights(format!("bad base64: {e}")))?;
    if bytes.len() != expected * 8 {
        return Err(EfmError::ShapeMismatch(format!(
            "payload holds {} bytes, expected {} values",
            bytes.len(),
            expected
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn weights_to_string(net: &FieldApproximator, seed: u64) -> String {
    let file = WeightFile {
        format_version: WEIGHT_FORMAT_VERSION,
        layer_dims: net.layer_dims().to_vec(),
        activation: net.activation(),
        created_from_seed: seed,
        layers: net
            .params
            .layers
            .iter()
            .map(|l| EncodedLayer {
                weight: encode(l.weight.iter().copied()),
                bias: encode(l.bias.iter().copied()),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&file).expect("weights serialize")
}

pub fn weights_from_str(text: &str) -> Result<FieldApproximator> {
    let file: WeightFile =
        serde_json::from_str(text).map_err(|e| EfmError::CorruptWeights(e.to_string()))?;
    if file.format_version != WEIGHT_FORMAT_VERSION {
        return Err(EfmError::WeightVersion {
            found: file.format_version,
            expected: WEIGHT_FORMAT_VERSION,
        });
    }
    let dims = &file.layer_dims;
    if dims.len() < 2 || file.layers.len() != dims.len() - 1 {
        return Err(EfmError::ShapeMismatch(format!(
            "{} layers declared for dims {dims:?}",
            file.layers.len()
        )));
    }
    let mut layers = Vec::with_capacity(file.layers.len());
    for (w, enc) in dims.windows(2).zip(&file.layers) {
        let (inp, out) = (w[0], w[1]);
        let weight = Array2::from_shape_vec((out, inp), decode(&enc.weight, out * inp)?)
            .map_err(|e| EfmError::ShapeMismatch(e.to_string()))?;
        let bias = Array1::from(decode(&enc.bias, out)?);
        layers.push(Layer { weight, bias });
    }
    FieldApproximator::from_parameters(dims, file.activation, Parameters { layers })
}

pub fn save_weights(net: &FieldApproximator, seed: u64, path: &Path) -> Result<()> {
    std::fs::write(path, weights_to_string(net, seed)).map_err(|e| EfmError::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<FieldApproximator> {
    let text = std::fs::read_to_string(path).map_err(|e| EfmError::io(path, e))?;
    weights_from_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_stream;

    fn sample_net() -> FieldApproximator {
        FieldApproximator::new(&[3, 7, 5, 3], Activation::SmoothRelu, &mut seeded_stream(11, "io")).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let net = sample_net();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.json");
        save_weights(&net, 11, &path).unwrap();
        let back = load_weights(&path).unwrap();
        assert_eq!(back.layer_dims(), net.layer_dims());
        assert_eq!(back.activation(), net.activation());
        let a: Vec<u64> = net.params.to_flat().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.params.to_flat().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let text = weights_to_string(&sample_net(), 0);
        let err = weights_from_str(&text[..text.len() / 2]).unwrap_err();
        assert!(err.to_string().contains("corrupt weight file"), "{err}");
    }

    #[test]
    fn mismatched_dims_rejected() {
        let text = weights_to_string(&sample_net(), 0);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["layer_dims"] = serde_json::json!([3, 8, 5, 3]);
        assert!(matches!(weights_from_str(&v.to_string()), Err(EfmError::ShapeMismatch(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let text = weights_to_string(&sample_net(), 0);
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["format_version"] = serde_json::json!(7);
        assert!(matches!(
            weights_from_str(&v.to_string()),
            Err(EfmError::WeightVersion { found: 7, .. })
        ));
    }
}
