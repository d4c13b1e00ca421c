//! Two-alternative forced-choice (2AFC) evaluation.
//!
//! A dataset root holds one directory per distortion category, each with
//! `ref/`, `p0/`, `p1/` and `judge/` subdirectories of files sharing a stem.
//! Judges are the fraction of human raters who picked `p1` as closer to the
//! reference, stored either as plain text (`.txt`) or as a one-element NumPy
//! array (`.npy`).

mod judge;
mod report;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image_io;
use crate::model::WeightStore;
use crate::pipeline::{compute_metric_cached, ssim, FeatureCache, Metric};
use crate::tensor::Tensor3;

pub use judge::read_judge;
pub use report::{grid_to_csv, grid_to_json, grid_to_text, CategoryScore, EvalReport, GridRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Category {
    Trad,
    #[serde(rename = "CNN")]
    Cnn,
    SuperRes,
    Deblur,
    Color,
    FrameInterp,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Trad,
        Category::Cnn,
        Category::SuperRes,
        Category::Deblur,
        Category::Color,
        Category::FrameInterp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Trad => "Trad",
            Category::Cnn => "CNN",
            Category::SuperRes => "SuperRes",
            Category::Deblur => "Deblur",
            Category::Color => "Color",
            Category::FrameInterp => "FrameInterp",
        }
    }

    fn ordinal(self) -> u64 {
        Self::ALL.iter().position(|&c| c == self).unwrap() as u64
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    /// Accepts the display names and the directory names of the public
    /// release (`traditional`, `superres`, `colorization`, ...).
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        Ok(match key.as_str() {
            "trad" | "traditional" => Category::Trad,
            "cnn" => Category::Cnn,
            "superres" | "superresolution" => Category::SuperRes,
            "deblur" | "deblurring" => Category::Deblur,
            "color" | "colorization" => Category::Color,
            "frameinterp" | "frameinterpolation" => Category::FrameInterp,
            _ => return Err(Error::Usage(format!("unknown 2AFC category `{s}`"))),
        })
    }
}

/// One reference image, two distortions and the human vote fraction for `p1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletRecord {
    pub category: Category,
    pub stem: String,
    pub ref_path: PathBuf,
    pub p0_path: PathBuf,
    pub p1_path: PathBuf,
    pub judge: f64,
}

impl TripletRecord {
    pub fn id(&self) -> String {
        format!("{}/{}", self.category, self.stem)
    }

    fn sort_key(&self) -> (&Path, &Path, &Path) {
        (&self.ref_path, &self.p0_path, &self.p1_path)
    }
}

/// Files of one subdirectory keyed by stem. Stems seen twice are recorded as
/// offenders.
fn index_dir(dir: &Path, offenders: &mut Vec<String>) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !path.is_file() {
            continue;
        }
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()).map(str::to_owned) else {
            continue;
        };
        if stem.starts_with('.') {
            continue;
        }
        if let Some(prev) = out.insert(stem.clone(), path.clone()) {
            offenders.push(format!(
                "ambiguous stem `{stem}`: {} and {}",
                prev.display(),
                path.display()
            ));
        }
    }
    Ok(out)
}

fn load_category(
    dir: &Path,
    category: Category,
    offenders: &mut Vec<String>,
) -> Result<Vec<TripletRecord>> {
    let refs = index_dir(&dir.join("ref"), offenders)?;
    let p0s = index_dir(&dir.join("p0"), offenders)?;
    let p1s = index_dir(&dir.join("p1"), offenders)?;
    let judges = index_dir(&dir.join("judge"), offenders)?;

    let mut stems: Vec<&String> = refs
        .keys()
        .chain(p0s.keys())
        .chain(p1s.keys())
        .chain(judges.keys())
        .collect();
    stems.sort();
    stems.dedup();

    let mut records = Vec::new();
    for stem in stems {
        let id = format!("{category}/{stem}");
        let mut missing = Vec::new();
        for (name, map) in [
            ("ref", &refs),
            ("p0", &p0s),
            ("p1", &p1s),
            ("judge", &judges),
        ] {
            if !map.contains_key(stem) {
                missing.push(name);
            }
        }
        if !missing.is_empty() {
            offenders.push(format!("{id}: missing {}", missing.join(", ")));
            continue;
        }
        let judge = match read_judge(&judges[stem]) {
            Ok(j) => j,
            Err(e) => {
                offenders.push(format!("{id}: {e}"));
                continue;
            }
        };
        let mut dims = Vec::with_capacity(3);
        for path in [&refs[stem], &p0s[stem], &p1s[stem]] {
            match image_io::dimensions(path) {
                Ok(d) => dims.push(d),
                Err(e) => offenders.push(format!("{id}: {e}")),
            }
        }
        if dims.len() != 3 {
            continue;
        }
        if dims.iter().any(|d| *d != dims[0]) {
            offenders.push(format!("{id}: image sizes differ {dims:?}"));
            continue;
        }
        records.push(TripletRecord {
            category,
            stem: stem.clone(),
            ref_path: refs[stem].clone(),
            p0_path: p0s[stem].clone(),
            p1_path: p1s[stem].clone(),
            judge,
        });
    }
    Ok(records)
}

/// Load and validate every triplet under `root`, sorted by path.
pub fn load_2afc(root: impl AsRef<Path>) -> Result<Vec<TripletRecord>> {
    let root = root.as_ref();
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<(Category, PathBuf)> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if !path.is_dir() {
            continue;
        }
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        match name.parse::<Category>() {
            Ok(c) => dirs.push((c, path)),
            Err(_) => log::warn!("ignoring unknown category directory {}", path.display()),
        }
    }
    dirs.sort_by(|a, b| a.1.cmp(&b.1));

    let mut offenders = Vec::new();
    let mut records = Vec::new();
    for (category, dir) in &dirs {
        if let Some((_, other)) = dirs.iter().find(|(c, d)| c == category && d != dir) {
            if other < dir {
                offenders.push(format!(
                    "category {category} appears twice: {} and {}",
                    other.display(),
                    dir.display()
                ));
                continue;
            }
        }
        records.extend(load_category(dir, *category, &mut offenders)?);
    }
    if !offenders.is_empty() {
        return Err(Error::Ingestion { offenders });
    }
    for c in Category::ALL {
        if !records.iter().any(|r| r.category == c) {
            log::warn!("category {c} has no triplets under {}", root.display());
        }
    }
    records.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
    Ok(records)
}

/// Agreement of a metric with the human vote on one triplet: the fraction of
/// raters who agree with the image the metric prefers (the one at the smaller
/// distance). Ties score 0.5.
pub fn score_triplet(d0: f64, d1: f64, judge: f64) -> f64 {
    if d1 < d0 {
        judge
    } else if d0 < d1 {
        1.0 - judge
    } else {
        0.5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subsample {
    /// Triplets kept per category.
    pub count: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub subsample: Option<Subsample>,
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
}

/// Canonical order plus the optional per-category seeded subsample.
pub fn select_records(
    records: &[TripletRecord],
    subsample: Option<Subsample>,
) -> Vec<TripletRecord> {
    let mut sorted = records.to_vec();
    sorted.sort_by(|a, b| (a.category, a.sort_key()).cmp(&(b.category, b.sort_key())));
    let Some(sub) = subsample else {
        return sorted;
    };
    let mut out = Vec::new();
    for c in Category::ALL {
        let mut group: Vec<TripletRecord> =
            sorted.iter().filter(|r| r.category == c).cloned().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(sub.seed.wrapping_add(c.ordinal()));
        group.shuffle(&mut rng);
        group.truncate(sub.count);
        group.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
        out.extend(group);
    }
    out
}

fn dataset_digest(records: &[TripletRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(format!(
            "{}\t{}\t{:016x}\n",
            r.category,
            r.stem,
            r.judge.to_bits()
        ));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn run_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    match workers {
        None => Ok(job()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Usage(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(job))
        }
    }
}

/// Score an arbitrary distance function. `distances` maps a triplet to one
/// `(d0, d1)` pair per metric in `metrics`.
pub fn evaluate_grid_with<F>(
    records: &[TripletRecord],
    metrics: &[Metric],
    opts: &EvalOptions,
    distances: F,
) -> Result<Vec<EvalReport>>
where
    F: Fn(&TripletRecord) -> Result<Vec<(f64, f64)>> + Sync,
{
    let selected = select_records(records, opts.subsample);
    let done = AtomicUsize::new(0);
    let total = selected.len();
    let pairs: Vec<Vec<(f64, f64)>> = run_pool(opts.workers, || {
        selected
            .par_iter()
            .map(|r| {
                let d = distances(r)?;
                if d.len() != metrics.len() {
                    return Err(Error::Usage(format!(
                        "distance function returned {} pairs for {} metrics",
                        d.len(),
                        metrics.len()
                    )));
                }
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                if n.is_multiple_of(500) || n == total {
                    log::info!("scored {n}/{total} triplets");
                }
                Ok(d)
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let digest = dataset_digest(&selected);
    Ok(metrics
        .iter()
        .enumerate()
        .map(|(m, metric)| {
            let scores: Vec<(Category, f64)> = selected
                .iter()
                .zip(&pairs)
                .map(|(r, d)| (r.category, score_triplet(d[m].0, d[m].1, r.judge)))
                .collect();
            EvalReport::from_scores(metric.clone(), &scores, digest.clone(), opts.subsample)
        })
        .collect())
}

/// [`evaluate_grid_with`] for a single metric.
pub fn evaluate_with<F>(
    records: &[TripletRecord],
    metric: &Metric,
    opts: &EvalOptions,
    distance: F,
) -> Result<EvalReport>
where
    F: Fn(&TripletRecord) -> Result<(f64, f64)> + Sync,
{
    let mut reports = evaluate_grid_with(records, std::slice::from_ref(metric), opts, |r| {
        distance(r).map(|d| vec![d])
    })?;
    Ok(reports.remove(0))
}

fn load_triplet(r: &TripletRecord) -> Result<[Tensor3; 3]> {
    let load = |p: &Path| {
        image_io::load_rgb(p).map_err(|e| match e {
            e @ (Error::Decode { .. } | Error::Io { .. }) => Error::Ingestion {
                offenders: vec![format!("{}: {e}", r.id())],
            },
            other => other,
        })
    };
    Ok([load(&r.ref_path)?, load(&r.p0_path)?, load(&r.p1_path)?])
}

fn triplet_distances(
    r: &TripletRecord,
    metrics: &[Metric],
    store: Option<&WeightStore>,
) -> Result<Vec<(f64, f64)>> {
    let [reference, p0, p1] = load_triplet(r)?;
    let mut cache = store.map(FeatureCache::new);
    metrics
        .iter()
        .map(|metric| match metric {
            Metric::Ssim => Ok((1.0 - ssim(&reference, &p0)?, 1.0 - ssim(&reference, &p1)?)),
            Metric::Deep(config) => {
                let cache = cache
                    .as_mut()
                    .ok_or_else(|| Error::Usage("deep metrics need a weight file".into()))?;
                let d0 = compute_metric_cached(&reference, &p0, config, cache)?.distance;
                let d1 = compute_metric_cached(&reference, &p1, config, cache)?.distance;
                Ok((d0, d1))
            }
        })
        .collect()
}

fn check_metrics(metrics: &[Metric], store: Option<&WeightStore>) -> Result<()> {
    for m in metrics {
        if let Metric::Deep(c) = m {
            c.validate()?;
            if store.is_none() {
                return Err(Error::Usage(format!(
                    "metric {} needs a weight file",
                    c.label()
                )));
            }
        }
    }
    Ok(())
}

/// Score one metric on a set of triplets. The reference image is always the
/// first argument of the metric.
pub fn evaluate(
    records: &[TripletRecord],
    store: Option<&WeightStore>,
    metric: &Metric,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    check_metrics(std::slice::from_ref(metric), store)?;
    evaluate_with(records, metric, opts, |r| {
        triplet_distances(r, std::slice::from_ref(metric), store).map(|mut d| d.remove(0))
    })
}

/// Score several metrics in one sweep. Each triplet's forward passes are
/// shared by every metric through a per-triplet [`FeatureCache`].
pub fn evaluate_grid(
    records: &[TripletRecord],
    store: Option<&WeightStore>,
    metrics: &[Metric],
    opts: &EvalOptions,
) -> Result<Vec<EvalReport>> {
    check_metrics(metrics, store)?;
    evaluate_grid_with(records, metrics, opts, |r| {
        triplet_distances(r, metrics, store)
    })
}
