//! Full metrics assembled from feature branches, plus the SSIM baseline.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::descriptor::{
    self, block_dissimilarities, build_descriptor, DissimMeasure, NormStrategy, Resolution,
    Statistic,
};
use crate::error::{Error, Result};
use crate::model::{self, BlockFeatures, WeightStore};
use crate::tensor::{self, Tensor3};

/// One feature branch: an input scale and a statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Branch {
    pub resolution: Resolution,
    pub statistic: Statistic,
}

impl Branch {
    pub const fn new(resolution: Resolution, statistic: Statistic) -> Self {
        Self {
            resolution,
            statistic,
        }
    }
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.resolution, self.statistic)
    }
}

impl FromStr for Branch {
    type Err = Error;

    /// `x1:linear`, `x2:quadratic`; `lin` and `quad` are accepted as
    /// shorthands.
    fn from_str(s: &str) -> Result<Self> {
        let (res, stat) = s
            .split_once(':')
            .ok_or_else(|| Error::Usage(format!("branch `{s}` must look like `x1:linear`")))?;
        let stat = match stat.trim() {
            "lin" => "linear",
            "quad" => "quadratic",
            other => other,
        };
        Ok(Self::new(res.parse()?, stat.parse()?))
    }
}

impl Serialize for Branch {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Branch {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Comma-separated list of branches.
pub fn parse_branches(s: &str) -> Result<Vec<Branch>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Comma-separated 1-based block indices, or `all`.
pub fn parse_blocks(s: &str) -> Result<Option<Vec<usize>>> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(None);
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("bad block index `{p}`")))
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// How L2 normalization groups values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum L2Mode {
    /// Divide each block by the norm of the whole map.
    #[default]
    WholeMap,
    /// Divide each spatial position's channel vector by its own norm.
    PerLocation,
}

fn is_default_l2(mode: &L2Mode) -> bool {
    *mode == L2Mode::WholeMap
}

/// A deep perceptual metric: which branches feed it, how they are normalized
/// and compared, and which blocks are kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub branches: Vec<Branch>,
    pub normalization: NormStrategy,
    pub measure: DissimMeasure,
    /// 1-based block indices; `None` keeps every block.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_mask: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "is_default_l2")]
    pub l2_mode: L2Mode,
}

impl MetricConfig {
    pub fn new(branches: Vec<Branch>, normalization: NormStrategy, measure: DissimMeasure) -> Self {
        Self {
            branches,
            normalization,
            measure,
            block_mask: None,
            l2_mode: L2Mode::WholeMap,
        }
    }

    /// Linear ×1 features, L2 normalization, MSE.
    pub fn classical() -> Self {
        Self::new(
            vec![Branch::new(Resolution::X1, Statistic::Linear)],
            NormStrategy::L2,
            DissimMeasure::Mse,
        )
    }

    /// Linear and quadratic features at ×1 plus linear features at ×2,
    /// sigmoid normalization, binary cross-entropy.
    pub fn mr() -> Self {
        Self::new(
            vec![
                Branch::new(Resolution::X1, Statistic::Linear),
                Branch::new(Resolution::X1, Statistic::Quadratic),
                Branch::new(Resolution::X2, Statistic::Linear),
            ],
            NormStrategy::Sigmoid,
            DissimMeasure::Ce,
        )
    }

    pub fn with_blocks(mut self, mask: Option<Vec<usize>>) -> Self {
        self.block_mask = mask;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.branches.is_empty() {
            return Err(Error::Usage("metric needs at least one branch".into()));
        }
        for (i, b) in self.branches.iter().enumerate() {
            if self.branches[..i].contains(b) {
                return Err(Error::Usage(format!("duplicate branch {b}")));
            }
        }
        if let Some(mask) = &self.block_mask {
            if mask.is_empty() {
                return Err(Error::Usage("block mask is empty".into()));
            }
            for (i, b) in mask.iter().enumerate() {
                if *b == 0 {
                    return Err(Error::Usage("block indices start at 1".into()));
                }
                if mask[..i].contains(b) {
                    return Err(Error::Usage(format!("block {b} listed twice")));
                }
            }
        }
        if self.measure == DissimMeasure::Ce && self.normalization == NormStrategy::L2 {
            return Err(Error::Usage(
                "cross-entropy needs [0, 1]-bounded features: use sigmoid or relu_l1 normalization"
                    .into(),
            ));
        }
        Ok(())
    }

    /// Short label such as `mse/l2/x1:linear/all`.
    pub fn label(&self) -> String {
        let branches: Vec<String> = self.branches.iter().map(Branch::to_string).collect();
        let blocks = match &self.block_mask {
            None => "all".to_string(),
            Some(m) => m.iter().map(usize::to_string).collect::<Vec<_>>().join("+"),
        };
        let norm = match (self.normalization, self.l2_mode) {
            (NormStrategy::L2, L2Mode::PerLocation) => "l2_per_location".to_string(),
            (n, _) => n.to_string(),
        };
        format!(
            "{}/{}/{}/{}",
            self.measure,
            norm,
            branches.join("+"),
            blocks
        )
    }
}

/// A metric usable by the evaluation harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Metric {
    Deep(MetricConfig),
    /// `1 − SSIM` on luma.
    Ssim,
}

impl Metric {
    pub fn label(&self) -> String {
        match self {
            Metric::Deep(c) => c.label(),
            Metric::Ssim => "ssim".into(),
        }
    }

    pub fn needs_weights(&self) -> bool {
        matches!(self, Metric::Deep(_))
    }

    /// Look up `classical`, `mr`, `ssim`, or an `ablation-<n>` column.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "classical" => Ok(Metric::Deep(MetricConfig::classical())),
            "mr" => Ok(Metric::Deep(MetricConfig::mr())),
            "ssim" => Ok(Metric::Ssim),
            other => ablation_columns()
                .into_iter()
                .find(|(n, _)| *n == other)
                .map(|(_, c)| Metric::Deep(c))
                .ok_or_else(|| {
                    Error::Usage(format!(
                        "unknown preset `{other}`, expected classical, mr, ssim or ablation-1..ablation-9"
                    ))
                }),
        }
    }
}

/// The nine ablation configurations, from the classical metric to the
/// full multi-resolution metric.
pub fn ablation_columns() -> Vec<(&'static str, MetricConfig)> {
    use DissimMeasure::*;
    use NormStrategy::*;
    use Resolution::*;
    use Statistic::*;
    let b = Branch::new;
    vec![
        (
            "ablation-1",
            MetricConfig::new(vec![b(X1, Linear)], L2, Mse),
        ),
        (
            "ablation-2",
            MetricConfig::new(vec![b(X1, Linear)], Sigmoid, Ce),
        ),
        (
            "ablation-3",
            MetricConfig::new(vec![b(X2, Linear)], L2, Mse),
        ),
        (
            "ablation-4",
            MetricConfig::new(vec![b(X1, Linear), b(X2, Linear)], L2, Mse),
        ),
        (
            "ablation-5",
            MetricConfig::new(vec![b(X1, Linear)], Sigmoid, Mse),
        ),
        // column 5 with absolute instead of squared error
        (
            "ablation-6",
            MetricConfig::new(vec![b(X1, Linear)], Sigmoid, Mae),
        ),
        (
            "ablation-7",
            MetricConfig::new(vec![b(X2, Quadratic)], L2, Mse),
        ),
        (
            "ablation-8",
            MetricConfig::new(
                vec![b(X1, Linear), b(X1, Quadratic), b(X2, Linear)],
                ReluL1,
                Ce,
            ),
        ),
        ("ablation-9", MetricConfig::mr()),
    ]
}

/// Distances of one branch, per kept block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchResult {
    pub branch: Branch,
    /// `(block index, distance)` in mask order.
    pub blocks: Vec<(usize, f64)>,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub distance: f64,
    pub per_branch: Vec<BranchResult>,
}

pub type ImageDigest = [u8; 32];

/// SHA-256 over the dimensions and raw values of a tensor.
pub fn image_digest(image: &Tensor3) -> ImageDigest {
    let mut h = Sha256::new();
    let (c, y, x) = image.dims();
    for d in [c, y, x] {
        h.update((d as u64).to_le_bytes());
    }
    for v in image.as_slice() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Forward passes memoized by `(image digest, resolution)`.
pub struct FeatureCache<'s> {
    store: &'s WeightStore,
    entries: HashMap<(ImageDigest, Resolution), Arc<BlockFeatures>>,
    misses: usize,
}

impl<'s> FeatureCache<'s> {
    pub fn new(store: &'s WeightStore) -> Self {
        Self {
            store,
            entries: HashMap::new(),
            misses: 0,
        }
    }

    pub fn store(&self) -> &'s WeightStore {
        self.store
    }

    /// Number of forward passes actually run.
    pub fn misses(&self) -> usize {
        self.misses
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Block features of a raw `[0, 1]` image at the given scale.
    pub fn features(
        &mut self,
        image: &Tensor3,
        resolution: Resolution,
    ) -> Result<Arc<BlockFeatures>> {
        let key = (image_digest(image), resolution);
        if let Some(f) = self.entries.get(&key) {
            return Ok(Arc::clone(f));
        }
        let feats = Arc::new(forward(image, resolution, self.store)?);
        self.misses += 1;
        self.entries.insert(key, Arc::clone(&feats));
        Ok(feats)
    }
}

/// Resize (for ×2), preprocess and run the backbone.
pub fn forward(
    image: &Tensor3,
    resolution: Resolution,
    store: &WeightStore,
) -> Result<BlockFeatures> {
    let scaled;
    let input = match resolution {
        Resolution::X1 => image,
        Resolution::X2 => {
            let f = resolution.factor();
            scaled = tensor::bilinear_resize(image, image.height() * f, image.width() * f)?;
            &scaled
        }
    };
    model::extract_blocks(&model::preprocess(input, store)?, store)
}

fn check_pair(a: &Tensor3, b: &Tensor3) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Input(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    for img in [a, b] {
        if img.min() < 0.0 || img.max() > 1.0 {
            return Err(Error::Input("image values must lie in [0, 1]".into()));
        }
    }
    Ok(())
}

/// Distance between `img_a` (reference side) and `img_b`.
pub fn compute_metric(
    img_a: &Tensor3,
    img_b: &Tensor3,
    store: &WeightStore,
    config: &MetricConfig,
) -> Result<MetricResult> {
    compute_metric_cached(img_a, img_b, config, &mut FeatureCache::new(store))
}

/// [`compute_metric`] reusing forward passes held in `cache`.
pub fn compute_metric_cached(
    img_a: &Tensor3,
    img_b: &Tensor3,
    config: &MetricConfig,
    cache: &mut FeatureCache<'_>,
) -> Result<MetricResult> {
    config.validate()?;
    check_pair(img_a, img_b)?;
    let mask = config.block_mask.as_deref();
    let mut per_branch = Vec::with_capacity(config.branches.len());
    for &branch in &config.branches {
        let fa = cache.features(img_a, branch.resolution)?;
        let fb = cache.features(img_b, branch.resolution)?;
        let da = normalized(&fa, branch, config, mask)?;
        let db = normalized(&fb, branch, config, mask)?;
        let dists = block_dissimilarities(&da, &db, config.measure)?;
        let blocks: Vec<(usize, f64)> = da
            .blocks()
            .iter()
            .map(|b| b.origin.block)
            .zip(dists.iter().copied())
            .collect();
        per_branch.push(BranchResult {
            branch,
            blocks,
            distance: descriptor::mean(&dists),
        });
    }
    let branch_distances: Vec<f64> = per_branch.iter().map(|b| b.distance).collect();
    Ok(MetricResult {
        distance: descriptor::mean(&branch_distances),
        per_branch,
    })
}

fn normalized(
    features: &BlockFeatures,
    branch: Branch,
    config: &MetricConfig,
    mask: Option<&[usize]>,
) -> Result<descriptor::Descriptor> {
    let d = build_descriptor(features, branch.resolution, branch.statistic, mask)?;
    match (config.normalization, config.l2_mode) {
        (NormStrategy::L2, L2Mode::PerLocation) => descriptor::normalize_l2_per_location(d),
        (n, _) => descriptor::normalize(d, n),
    }
}

/// The multi-resolution, multi-statistic metric ([`MetricConfig::mr`]).
pub fn mr_perceptual(
    img_a: &Tensor3,
    img_b: &Tensor3,
    store: &WeightStore,
) -> Result<MetricResult> {
    compute_metric(img_a, img_b, store, &MetricConfig::mr())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn luma(image: &Tensor3) -> Result<Vec<f64>> {
    match image.channels() {
        1 => Ok(image.as_slice().iter().map(|&v| v as f64).collect()),
        3 => {
            let (r, g, b) = (image.channel(0), image.channel(1), image.channel(2));
            Ok(r.iter()
                .zip(g)
                .zip(b)
                .map(|((&r, &g), &b)| 0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64)
                .collect())
        }
        c => Err(Error::Input(format!(
            "SSIM expects 1 or 3 channels, got {c}"
        ))),
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Separable Gaussian filter keeping only windows fully inside the image.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW)
                .map(|i| k[i] * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

/// Mean SSIM over all 11×11 Gaussian windows (σ = 1.5) of the luma planes,
/// dynamic range 1.
pub fn ssim(img_a: &Tensor3, img_b: &Tensor3) -> Result<f64> {
    if img_a.dims() != img_b.dims() {
        return Err(Error::Usage(format!(
            "SSIM needs equal sizes: {:?} vs {:?}",
            img_a.dims(),
            img_b.dims()
        )));
    }
    let (_, h, w) = img_a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Input(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    let x = luma(img_a)?;
    let y = luma(img_b)?;
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(a, b)| a * b).collect() };
    let mu_x = filter_valid(&x, h, w, &k);
    let mu_y = filter_valid(&y, h, w, &k);
    let xx = filter_valid(&prod(&x, &x), h, w, &k);
    let yy = filter_valid(&prod(&y, &y), h, w, &k);
    let xy = filter_valid(&prod(&x, &y), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_x.len())
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mu_x.len() as f64)
}
