//! Descriptors built from block features: linear (raw maps) and quadratic
//! (channel Gram matrices), their normalization, and the dissimilarity
//! measures between two descriptors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::BlockFeatures;
use crate::tensor::{Acc, Tensor3};

/// Clamp applied to both arguments of the cross-entropy.
pub const CE_EPSILON: f64 = 1e-7;

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::Usage(format!(
                        concat!("unknown ", stringify!($name), " `{}`, expected one of: {}"),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

named_enum!(
    /// Input scale of a feature branch.
    Resolution { X1 => "x1", X2 => "x2" }
);

named_enum!(
    /// Raw block maps or their channel Gram matrices.
    Statistic { Linear => "linear", Quadratic => "quadratic" }
);

named_enum!(
    NormStrategy { L2 => "l2", Sigmoid => "sigmoid", ReluL1 => "relu_l1" }
);

named_enum!(
    DissimMeasure { Mse => "mse", Mae => "mae", Ce => "ce" }
);

impl Resolution {
    pub fn factor(self) -> usize {
        match self {
            Resolution::X1 => 1,
            Resolution::X2 => 2,
        }
    }
}

/// Where a feature block came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockOrigin {
    /// 1-based block index.
    pub block: usize,
    pub resolution: Resolution,
    pub statistic: Statistic,
}

/// Symmetric `size × size` channel co-activation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    size: usize,
    data: Vec<f32>,
}

impl GramMatrix {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.size + col]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

/// Channel Gram matrix of a feature map, averaged over spatial positions:
/// `G[c1, c2] = Σ_{y,x} f[c1, y, x] · f[c2, y, x] / (H · W)`.
pub fn gram(block: &Tensor3) -> GramMatrix {
    let (c, h, w) = block.dims();
    let positions = (h * w) as Acc;
    let mut data = vec![0.0f32; c * c];
    for c1 in 0..c {
        let a = block.channel(c1);
        for c2 in c1..c {
            let b = block.channel(c2);
            let sum: Acc = a.iter().zip(b).map(|(&x, &y)| x as Acc * y as Acc).sum();
            let v = (sum / positions) as f32;
            data[c1 * c + c2] = v;
            data[c2 * c + c1] = v;
        }
    }
    GramMatrix { size: c, data }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValues {
    Map(Tensor3),
    Gram(GramMatrix),
}

impl FeatureValues {
    pub fn as_slice(&self) -> &[f32] {
        match self {
            FeatureValues::Map(t) => t.as_slice(),
            FeatureValues::Gram(g) => &g.data,
        }
    }

    fn as_mut_slice(&mut self) -> &mut [f32] {
        match self {
            FeatureValues::Map(t) => t.as_mut_slice(),
            FeatureValues::Gram(g) => &mut g.data,
        }
    }

    fn shape(&self) -> (usize, usize, usize) {
        match self {
            FeatureValues::Map(t) => t.dims(),
            FeatureValues::Gram(g) => (1, g.size, g.size),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBlock {
    pub origin: BlockOrigin,
    pub values: FeatureValues,
}

/// An ordered list of feature blocks from one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    blocks: Vec<FeatureBlock>,
    normalization: Option<NormStrategy>,
}

impl Descriptor {
    pub fn new(blocks: Vec<FeatureBlock>) -> Self {
        Self {
            blocks,
            normalization: None,
        }
    }

    pub fn blocks(&self) -> &[FeatureBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    /// The normalization applied so far, if any.
    pub fn normalization(&self) -> Option<NormStrategy> {
        self.normalization
    }
}

/// Build a descriptor from the blocks selected by `mask` (1-based indices;
/// `None` selects all blocks).
pub fn build_descriptor(
    features: &BlockFeatures,
    resolution: Resolution,
    statistic: Statistic,
    mask: Option<&[usize]>,
) -> Result<Descriptor> {
    let all: Vec<usize> = (1..=features.len()).collect();
    let indices = mask.unwrap_or(&all);
    let blocks = indices
        .iter()
        .map(|&b| {
            let map = features.block(b).ok_or_else(|| {
                Error::Usage(format!(
                    "block {b} requested, backbone has {} blocks",
                    features.len()
                ))
            })?;
            let values = match statistic {
                Statistic::Linear => FeatureValues::Map(map.clone()),
                Statistic::Quadratic => FeatureValues::Gram(gram(map)),
            };
            Ok(FeatureBlock {
                origin: BlockOrigin {
                    block: b,
                    resolution,
                    statistic,
                },
                values,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Descriptor::new(blocks))
}

/// One linear block per backbone block, values unchanged.
pub fn linear_features(features: &BlockFeatures, resolution: Resolution) -> Descriptor {
    build_descriptor(features, resolution, Statistic::Linear, None).expect("all blocks exist")
}

/// One Gram matrix per backbone block.
pub fn quadratic_features(features: &BlockFeatures, resolution: Resolution) -> Descriptor {
    build_descriptor(features, resolution, Statistic::Quadratic, None).expect("all blocks exist")
}

fn norm_l2(values: &[f32]) -> f64 {
    values
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt()
}

fn scale_by(values: &mut [f32], norm: f64) {
    // zero-norm blocks pass through unchanged
    if norm > 0.0 {
        for v in values {
            *v = (*v as f64 / norm) as f32;
        }
    }
}

fn sigmoid(v: f32) -> f32 {
    // keep the result inside the open interval even where f32 saturates
    const BELOW_ONE: f32 = 1.0 - f32::EPSILON / 2.0;
    (1.0 / (1.0 + (-v).exp())).clamp(f32::MIN_POSITIVE, BELOW_ONE)
}

fn check_unnormalized(desc: &Descriptor) -> Result<()> {
    match desc.normalization {
        None => Ok(()),
        Some(s) => Err(Error::Usage(format!(
            "descriptor is already {s}-normalized"
        ))),
    }
}

/// Apply a normalization strategy block by block.
///
/// L2 divides each block by the Euclidean norm of the whole block; `relu_l1`
/// clips negatives then divides by the L1 norm; sigmoid is elementwise.
pub fn normalize(mut desc: Descriptor, strategy: NormStrategy) -> Result<Descriptor> {
    check_unnormalized(&desc)?;
    for block in &mut desc.blocks {
        let values = block.values.as_mut_slice();
        match strategy {
            NormStrategy::L2 => {
                let n = norm_l2(values);
                scale_by(values, n);
            }
            NormStrategy::Sigmoid => values.iter_mut().for_each(|v| *v = sigmoid(*v)),
            NormStrategy::ReluL1 => {
                values.iter_mut().for_each(|v| *v = v.max(0.0));
                let n: f64 = values.iter().map(|&v| v as f64).sum();
                scale_by(values, n);
            }
        }
    }
    desc.normalization = Some(strategy);
    Ok(desc)
}

/// L2 normalization of the channel vector at every spatial position, the
/// convention of common learned perceptual metrics. Gram blocks have no
/// spatial axis and are normalized as a whole.
pub fn normalize_l2_per_location(mut desc: Descriptor) -> Result<Descriptor> {
    check_unnormalized(&desc)?;
    for block in &mut desc.blocks {
        match &mut block.values {
            FeatureValues::Map(t) => {
                let (c, h, w) = t.dims();
                let plane = h * w;
                let data = t.as_mut_slice();
                for p in 0..plane {
                    let n = (0..c)
                        .map(|ch| {
                            let v = data[ch * plane + p] as f64;
                            v * v
                        })
                        .sum::<f64>()
                        .sqrt();
                    if n > 0.0 {
                        for ch in 0..c {
                            let v = &mut data[ch * plane + p];
                            *v = (*v as f64 / n) as f32;
                        }
                    }
                }
            }
            FeatureValues::Gram(g) => {
                let n = norm_l2(&g.data);
                scale_by(&mut g.data, n);
            }
        }
    }
    desc.normalization = Some(NormStrategy::L2);
    Ok(desc)
}

fn check_compatible(a: &Descriptor, b: &Descriptor) -> Result<()> {
    if a.normalization != b.normalization {
        return Err(Error::Usage(format!(
            "descriptors normalized differently ({:?} vs {:?})",
            a.normalization, b.normalization
        )));
    }
    if a.blocks.len() != b.blocks.len() {
        return Err(Error::Usage(format!(
            "descriptor lengths differ: {} vs {} blocks",
            a.blocks.len(),
            b.blocks.len()
        )));
    }
    for (x, y) in a.blocks.iter().zip(&b.blocks) {
        if x.origin != y.origin {
            return Err(Error::Usage(format!(
                "block origins differ: {:?} vs {:?}",
                x.origin, y.origin
            )));
        }
        if x.values.shape() != y.values.shape() {
            return Err(Error::Usage(format!(
                "block {} shapes differ: {:?} vs {:?}",
                x.origin.block,
                x.values.shape(),
                y.values.shape()
            )));
        }
    }
    Ok(())
}

fn check_probabilities(desc: &Descriptor, side: &str) -> Result<()> {
    for block in &desc.blocks {
        if block
            .values
            .as_slice()
            .iter()
            .any(|&v| !(0.0..=1.0).contains(&v))
        {
            return Err(Error::Usage(format!(
                "cross-entropy needs values in [0, 1]; {side} block {} ({:?} normalization) is out of range",
                block.origin.block, desc.normalization
            )));
        }
    }
    Ok(())
}

#[inline]
fn cross_entropy(target: f64, predicted: f64) -> f64 {
    let t = target.clamp(CE_EPSILON, 1.0 - CE_EPSILON);
    let p = predicted.clamp(CE_EPSILON, 1.0 - CE_EPSILON);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

fn mean_term(a: &[f32], b: &[f32], measure: DissimMeasure) -> f64 {
    let sum: f64 = match measure {
        DissimMeasure::Mse => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = x as f64 - y as f64;
                d * d
            })
            .sum(),
        DissimMeasure::Mae => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| (x as f64 - y as f64).abs())
            .sum(),
        DissimMeasure::Ce => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| cross_entropy(x as f64, y as f64))
            .sum(),
    };
    sum / a.len() as f64
}

/// Per-block mean of the pointwise term. `a` is the reference side for the
/// cross-entropy.
pub fn block_dissimilarities(
    a: &Descriptor,
    b: &Descriptor,
    measure: DissimMeasure,
) -> Result<Vec<f64>> {
    check_compatible(a, b)?;
    if measure == DissimMeasure::Ce {
        check_probabilities(a, "first")?;
        check_probabilities(b, "second")?;
    }
    Ok(a.blocks
        .iter()
        .zip(&b.blocks)
        .map(|(x, y)| mean_term(x.values.as_slice(), y.values.as_slice(), measure))
        .collect())
}

/// Unweighted mean over blocks of [`block_dissimilarities`].
pub fn dissimilarity(a: &Descriptor, b: &Descriptor, measure: DissimMeasure) -> Result<f64> {
    let per_block = block_dissimilarities(a, b, measure)?;
    if per_block.is_empty() {
        return Err(Error::Usage("cannot compare empty descriptors".into()));
    }
    Ok(mean(&per_block))
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
