//! Weights and checkpoints in the tensor container. Tensors `w{l}`/`b{l}`
//! hold layer `l`; checkpoints add `m_w{l}`, `m_b{l}`, `v_w{l}`, `v_b{l}`.

use ndarray::{Array1, Array2};
use serde_json::{json, Value};
use std::path::Path;

use super::adam::{Adam, AdamConfig};
use super::mlp::{Layer, MlpSpec, OccupancyMlp};
use crate::container::TensorFile;
use crate::{Error, Result};

fn push_layers(file: &mut TensorFile, prefix: &str, layers: &[Layer]) -> Result<()> {
    for (l, layer) in layers.iter().enumerate() {
        let (o, i) = layer.weight.dim();
        file.push_f64(
            &format!("{prefix}w{l}"),
            &[o, i],
            layer.weight.iter().copied().collect(),
        )?;
        file.push_f64(&format!("{prefix}b{l}"), &[o], layer.bias.to_vec())?;
    }
    Ok(())
}

fn read_layers(file: &TensorFile, prefix: &str, count: usize, path: &Path) -> Result<Vec<Layer>> {
    (0..count)
        .map(|l| {
            let (ws, w) = file.f64(&format!("{prefix}w{l}"))?;
            let (_, b) = file.f64(&format!("{prefix}b{l}"))?;
            if ws.len() != 2 {
                return Err(Error::format(path, "weight tensors must be 2-D"));
            }
            let weight = Array2::from_shape_vec((ws[0], ws[1]), w.to_vec())
                .map_err(|e| Error::format(path, &e.to_string()))?;
            Ok(Layer {
                weight,
                bias: Array1::from(b.to_vec()),
            })
        })
        .collect()
}

fn header(net: &OccupancyMlp, training: Value) -> Value {
    json!({
        "kind": "occupancy_mlp",
        "spec": net.spec(),
        "hidden_activation": format!("leaky_relu({})", net.spec().leaky_slope),
        "output_activation": "sigmoid",
        "training": training,
    })
}

fn spec_from(meta: &Value, path: &Path) -> Result<MlpSpec> {
    serde_json::from_value(meta["spec"].clone())
        .map_err(|e| Error::format(path, &format!("bad network header: {e}")))
}

pub fn save_weights(net: &OccupancyMlp, path: impl AsRef<Path>, training: Value) -> Result<()> {
    let mut file = TensorFile::with_meta(header(net, training));
    push_layers(&mut file, "", net.layers())?;
    file.write(path)
}

/// Network and the training metadata stored with it.
pub fn load_weights(path: impl AsRef<Path>) -> Result<(OccupancyMlp, Value)> {
    let path = path.as_ref();
    let file = TensorFile::read(path)?;
    let spec = spec_from(&file.meta, path)?;
    let layers = read_layers(&file, "", spec.layer_count(), path)?;
    let net = OccupancyMlp::from_layers(spec, layers)?;
    Ok((net, file.meta["training"].clone()))
}

pub fn save_checkpoint(net: &OccupancyMlp, adam: &Adam, path: impl AsRef<Path>, training: Value) -> Result<()> {
    let mut meta = header(net, training);
    meta["adam"] = json!({ "config": adam.config, "step": adam.step });
    let mut file = TensorFile::with_meta(meta);
    push_layers(&mut file, "", net.layers())?;
    push_layers(&mut file, "m_", &adam.m)?;
    push_layers(&mut file, "v_", &adam.v)?;
    file.write(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(OccupancyMlp, Adam, Value)> {
    let path = path.as_ref();
    let file = TensorFile::read(path)?;
    let spec = spec_from(&file.meta, path)?;
    let n = spec.layer_count();
    let net = OccupancyMlp::from_layers(spec, read_layers(&file, "", n, path)?)?;
    let config: AdamConfig = serde_json::from_value(file.meta["adam"]["config"].clone())
        .map_err(|e| Error::format(path, &format!("bad optimizer header: {e}")))?;
    let step = file.meta["adam"]["step"]
        .as_u64()
        .ok_or_else(|| Error::format(path, "missing optimizer step"))?;
    let adam = Adam {
        config,
        step,
        m: read_layers(&file, "m_", n, path)?,
        v: read_layers(&file, "v_", n, path)?,
    };
    Ok((net, adam, file.meta["training"].clone()))
}
