use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{InputTransform, Junction, Layer, LayerDescriptor, ModelGraph, Source};
use crate::compress::quant::ActivationQuant;
use crate::container::{count_blobs, read_blob, read_manifest, write_blob, write_manifest, BlobRef};
use crate::error::{Error, Result};

const FORMAT: &str = "cforge-model/1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    input_shape: [usize; 3],
    num_classes: usize,
    layer_count: usize,
    layers: Vec<LayerEntry>,
    junctions: Vec<Junction>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerEntry {
    descriptor: LayerDescriptor,
    source: Source,
    transform: InputTransform,
    relu: bool,
    weights: BlobRef,
    bias: BlobRef,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dead_outputs: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_quant: Option<ActivationQuant>,
}

pub fn save_model(model: &ModelGraph, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(model.num_layers());
    for (i, l) in model.layers.iter().enumerate() {
        layers.push(LayerEntry {
            descriptor: l.desc,
            source: l.source,
            transform: l.transform,
            relu: l.relu,
            weights: write_blob(dir, &format!("layer{i:02}_weight.bin"), &l.weights)?,
            bias: write_blob(dir, &format!("layer{i:02}_bias.bin"), &l.bias)?,
            dead_outputs: l
                .dead_outputs
                .as_ref()
                .map(|d| d.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| i).collect()),
            input_quant: l.input_quant,
        });
    }
    write_manifest(
        dir,
        &Manifest {
            format: FORMAT.into(),
            input_shape: model.input_shape,
            num_classes: model.num_classes,
            layer_count: layers.len(),
            layers,
            junctions: model.junctions.clone(),
        },
    )
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<ModelGraph> {
    let dir = dir.as_ref();
    let manifest_path = dir.join("manifest.json");
    let m: Manifest = read_manifest(dir)?;
    if m.format != FORMAT {
        return Err(Error::format(&manifest_path, format!("bad magic {:?}", m.format)));
    }
    if m.layer_count != m.layers.len() {
        return Err(Error::format(
            &manifest_path,
            format!("layer_count {} but {} layer entries", m.layer_count, m.layers.len()),
        ));
    }
    let blobs = count_blobs(dir)?;
    if blobs != 2 * m.layer_count {
        return Err(Error::format(
            &manifest_path,
            format!("{} layers need {} blobs, directory holds {}", m.layer_count, 2 * m.layer_count, blobs),
        ));
    }
    let mut layers = Vec::with_capacity(m.layers.len());
    for e in m.layers {
        let mut layer = Layer::new(
            e.descriptor,
            e.source,
            e.transform,
            e.relu,
            read_blob(dir, &e.weights)?,
            read_blob(dir, &e.bias)?,
        )?;
        if let Some(dead) = e.dead_outputs {
            let mut mask = vec![false; e.descriptor.out_channels];
            for u in dead {
                *mask
                    .get_mut(u)
                    .ok_or_else(|| Error::format(&manifest_path, format!("dead unit {u} out of range")))? =
                    true;
            }
            layer.dead_outputs = Some(mask);
        }
        layer.input_quant = e.input_quant;
        layers.push(layer);
    }
    let g = ModelGraph::new(m.input_shape, layers, m.junctions)?;
    if g.num_classes != m.num_classes {
        return Err(Error::format(&manifest_path, "num_classes disagrees with the last layer"));
    }
    Ok(g)
}
