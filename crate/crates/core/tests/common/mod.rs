#![allow(dead_code)]

use std::path::PathBuf;

use mrperceptual::model::{load_weights, WeightStore};
use mrperceptual::Tensor3;

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn alexnet() -> WeightStore {
    load_weights(fixtures().join("alexnet.mrpw")).expect("AlexNet fixture loads")
}

pub fn max_abs_diff(a: &Tensor3, b: &Tensor3) -> f32 {
    assert_eq!(a.dims(), b.dims());
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max)
}

pub mod oracles;
pub mod props;
