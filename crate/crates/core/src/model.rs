//! Sequential CNN backbones loaded from MRPW files, and the forward pass
//! that taps block outputs.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mrpw::{Container, ParamArray};
use crate::tensor::{self, KernelView, Tensor3};

/// One layer of a sequential backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerDescriptor {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub kind: LayerKind,
    /// The output of this layer is a block output.
    #[serde(default)]
    pub tap: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        weight: String,
        bias: String,
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 2],
        stride: usize,
        padding: usize,
    },
    Relu,
    Maxpool {
        size: usize,
        stride: usize,
    },
}

/// The JSON document stored in a weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub backbone: String,
    pub input_channels: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    pub layers: Vec<LayerDescriptor>,
    /// Free-form provenance written by the exporter.
    #[serde(default, skip_serializing_if = "serde_json::Map::is_empty")]
    pub source: serde_json::Map<String, serde_json::Value>,
}

impl Manifest {
    pub fn block_count(&self) -> usize {
        self.layers.iter().filter(|l| l.tap).count()
    }

    fn layer_name(&self, index: usize) -> String {
        let layer = &self.layers[index];
        match &layer.name {
            Some(n) => n.clone(),
            None => {
                let kind = match layer.kind {
                    LayerKind::Conv { .. } => "conv",
                    LayerKind::Relu => "relu",
                    LayerKind::Maxpool { .. } => "maxpool",
                };
                format!("#{index} ({kind})")
            }
        }
    }
}

/// A validated backbone: parameters, architecture and preprocessing constants.
///
/// Immutable after loading; share it across threads by reference.
#[derive(Debug, Clone)]
pub struct WeightStore {
    manifest: Manifest,
    params: HashMap<String, ParamArray>,
    checksum: u32,
}

impl WeightStore {
    pub fn from_container(container: Container) -> Result<Self> {
        let manifest: Manifest =
            serde_json::from_str(&container.manifest).map_err(|e| Error::Manifest {
                entry: "<manifest>".into(),
                message: e.to_string(),
            })?;
        let checksum = container.checksum;
        let params = container.into_map();
        validate(&manifest, &params)?;
        Ok(Self {
            manifest,
            params,
            checksum,
        })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    pub fn backbone(&self) -> &str {
        &self.manifest.backbone
    }

    /// Number of tapped blocks, `B`.
    pub fn block_count(&self) -> usize {
        self.manifest.block_count()
    }

    pub fn param(&self, name: &str) -> Option<&ParamArray> {
        self.params.get(name)
    }

    /// Channel count of each block output as declared by the manifest.
    pub fn block_channels(&self) -> Vec<usize> {
        let mut channels = self.manifest.input_channels;
        let mut out = Vec::new();
        for layer in &self.manifest.layers {
            if let LayerKind::Conv { out_channels, .. } = layer.kind {
                channels = out_channels;
            }
            if layer.tap {
                out.push(channels);
            }
        }
        out
    }
}

fn validate(manifest: &Manifest, params: &HashMap<String, ParamArray>) -> Result<()> {
    let manifest_err = |entry: &str, message: String| Error::Manifest {
        entry: entry.to_string(),
        message,
    };
    if manifest.input_channels == 0 {
        return Err(manifest_err("input_channels", "must be positive".into()));
    }
    for (field, values) in [("mean", &manifest.mean), ("std", &manifest.std)] {
        if values.len() != manifest.input_channels {
            return Err(manifest_err(
                field,
                format!(
                    "has {} values for {} input channels",
                    values.len(),
                    manifest.input_channels
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(manifest_err(field, "contains a non-finite value".into()));
        }
    }
    if manifest.std.iter().any(|&s| s <= 0.0) {
        return Err(manifest_err("std", "values must be positive".into()));
    }
    if manifest.block_count() == 0 {
        return Err(manifest_err(
            "layers",
            "no layer is flagged as a block tap".into(),
        ));
    }

    let mut channels = manifest.input_channels;
    for (i, layer) in manifest.layers.iter().enumerate() {
        match &layer.kind {
            LayerKind::Conv {
                weight,
                bias,
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                let name = manifest.layer_name(i);
                if *in_channels != channels {
                    return Err(manifest_err(
                        &name,
                        format!("expects {in_channels} input channels, previous layer yields {channels}"),
                    ));
                }
                if *stride == 0 || kernel.contains(&0) || *out_channels == 0 {
                    return Err(manifest_err(
                        &name,
                        "zero stride, kernel or channel count".into(),
                    ));
                }
                let expect_w = [*out_channels, *in_channels, kernel[0], kernel[1]];
                check_shape(params, weight, &expect_w)?;
                check_shape(params, bias, &[*out_channels])?;
                channels = *out_channels;
            }
            LayerKind::Relu => {}
            LayerKind::Maxpool { size, stride } => {
                if *size == 0 || *stride == 0 {
                    return Err(manifest_err(
                        &manifest.layer_name(i),
                        "zero pool size or stride".into(),
                    ));
                }
            }
        }
    }
    Ok(())
}

fn check_shape(params: &HashMap<String, ParamArray>, name: &str, expected: &[usize]) -> Result<()> {
    let array = params.get(name).ok_or_else(|| Error::Manifest {
        entry: name.to_string(),
        message: "referenced by the manifest but missing from the file".into(),
    })?;
    if array.dims() != expected {
        return Err(Error::Manifest {
            entry: name.to_string(),
            message: format!("shape {:?}, manifest declares {expected:?}", array.dims()),
        });
    }
    Ok(())
}

/// Read and validate an MRPW weight file.
pub fn load_weights(path: impl AsRef<Path>) -> Result<WeightStore> {
    WeightStore::from_container(Container::read(path.as_ref())?)
}

/// Standardize an image in `[0, 1]` with the per-channel constants of `store`.
pub fn preprocess(image: &Tensor3, store: &WeightStore) -> Result<Tensor3> {
    let m = &store.manifest;
    if image.channels() != m.input_channels {
        return Err(Error::Input(format!(
            "image has {} channels, backbone `{}` expects {}",
            image.channels(),
            m.backbone,
            m.input_channels
        )));
    }
    let plane = image.height() * image.width();
    let data = image
        .as_slice()
        .chunks_exact(plane)
        .zip(m.mean.iter().zip(&m.std))
        .flat_map(|(ch, (&mean, &std))| ch.iter().map(move |&v| (v - mean) / std))
        .collect();
    Tensor3::new(image.channels(), image.height(), image.width(), data)
}

/// Block outputs of one forward pass, shallow to deep.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeatures {
    blocks: Vec<Tensor3>,
}

impl BlockFeatures {
    pub fn new(blocks: Vec<Tensor3>) -> Self {
        Self { blocks }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// Block `b`, 1-based.
    pub fn block(&self, b: usize) -> Option<&Tensor3> {
        b.checked_sub(1).and_then(|i| self.blocks.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor3> {
        self.blocks.iter()
    }

    pub fn into_blocks(self) -> Vec<Tensor3> {
        self.blocks
    }
}

/// Run the backbone on a preprocessed image and collect every tapped output.
pub fn extract_blocks(image: &Tensor3, store: &WeightStore) -> Result<BlockFeatures> {
    let manifest = &store.manifest;
    let mut blocks = Vec::with_capacity(manifest.block_count());
    let mut x = image.clone();
    for (i, layer) in manifest.layers.iter().enumerate() {
        x = match &layer.kind {
            LayerKind::Conv {
                weight,
                bias,
                kernel,
                stride,
                padding,
                in_channels,
                out_channels,
            } => {
                let (_, h, w) = x.dims();
                if kernel[0] > h + 2 * padding || kernel[1] > w + 2 * padding {
                    return Err(Error::InputTooSmall {
                        layer: manifest.layer_name(i),
                        message: format!(
                            "{h}x{w} input with padding {padding} cannot fit a {}x{} kernel",
                            kernel[0], kernel[1]
                        ),
                    });
                }
                // shapes were checked at load time
                let wt = &store.params[weight];
                let b = &store.params[bias];
                let view = KernelView::new(
                    [*out_channels, *in_channels, kernel[0], kernel[1]],
                    wt.data(),
                )?;
                tensor::conv2d(&x, view, b.data(), *stride, *padding)
                    .map_err(|e| e.at_layer(&manifest.layer_name(i)))?
            }
            LayerKind::Relu => tensor::relu(&x),
            LayerKind::Maxpool { size, stride } => {
                let (_, h, w) = x.dims();
                if *size > h || *size > w {
                    return Err(Error::InputTooSmall {
                        layer: manifest.layer_name(i),
                        message: format!("{h}x{w} input cannot fit a {size}x{size} pool window"),
                    });
                }
                tensor::maxpool2d(&x, *size, *stride)
                    .map_err(|e| e.at_layer(&manifest.layer_name(i)))?
            }
        };
        if layer.tap {
            blocks.push(x.clone());
        }
    }
    Ok(BlockFeatures::new(blocks))
}

/// Reference activations shipped next to a weight file.
#[derive(Debug, Clone)]
pub struct GoldenActivations {
    /// The raw image in `[0, 1]`, before preprocessing.
    pub input: Tensor3,
    pub blocks: Vec<Tensor3>,
}

impl GoldenActivations {
    /// Reads entries `golden/input` and `golden/block1..B`.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let container = Container::read(path.as_ref())?;
        let tensor = |name: &str| -> Result<Tensor3> {
            let a = container.get(name).ok_or_else(|| Error::Manifest {
                entry: name.to_string(),
                message: "missing from golden file".into(),
            })?;
            match *a.dims() {
                [c, h, w] => Tensor3::new(c, h, w, a.data().to_vec()),
                _ => Err(Error::Manifest {
                    entry: name.to_string(),
                    message: format!("expected a rank-3 array, got shape {:?}", a.dims()),
                }),
            }
        };
        let input = tensor("golden/input")?;
        let mut blocks = Vec::new();
        for b in 1.. {
            let name = format!("golden/block{b}");
            if container.get(&name).is_none() {
                break;
            }
            blocks.push(tensor(&name)?);
        }
        Ok(Self { input, blocks })
    }
}
