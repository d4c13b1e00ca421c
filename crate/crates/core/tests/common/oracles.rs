//! Scalar-loop reference implementations and randomized comparisons against
//! the library kernels.

use mrperceptual::descriptor::{
    dissimilarity, gram, normalize, BlockOrigin, Descriptor, DissimMeasure, FeatureBlock,
    FeatureValues, NormStrategy, Resolution, Statistic,
};
use mrperceptual::tensor::{bilinear_resize, conv2d, maxpool2d, KernelView};
use mrperceptual::Tensor3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const TOLERANCE: f64 = 1e-5;
pub const INSTANCES: usize = 120;

/// Outcome of one kernel family.
#[derive(Debug, Clone)]
pub struct OracleStats {
    pub name: &'static str,
    pub instances: usize,
    pub max_abs_err: f64,
}

impl OracleStats {
    pub fn passed(&self) -> bool {
        self.instances >= 100 && self.max_abs_err <= TOLERANCE
    }
}

pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, scale: f32) -> Tensor3 {
    Tensor3::from_fn(c, h, w, |_, _, _| rng.gen_range(-scale..scale)).unwrap()
}

fn max_err(lib: &[f32], oracle: &[f64]) -> f64 {
    assert_eq!(lib.len(), oracle.len(), "output lengths differ");
    lib.iter()
        .zip(oracle)
        .map(|(&a, &b)| (a as f64 - b).abs())
        .fold(0.0, f64::max)
}

#[allow(clippy::too_many_arguments)]
pub fn conv_oracle(
    x: &Tensor3,
    w: &[f32],
    bias: &[f32],
    oc: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> (usize, usize, Vec<f64>) {
    let (ic, h, wd) = x.dims();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for o in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut s = bias[o] as f64;
                for i in 0..ic {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                continue;
                            }
                            let wv = w[((o * ic + i) * kh + ky) * kw + kx] as f64;
                            s += wv * x.get(i, iy as usize, ix as usize) as f64;
                        }
                    }
                }
                out.push(s);
            }
        }
    }
    (oh, ow, out)
}

pub fn maxpool_oracle(x: &Tensor3, size: usize, stride: usize) -> Vec<f64> {
    let (c, h, w) = x.dims();
    let mut out = Vec::new();
    for ch in 0..c {
        for oy in 0..(h - size) / stride + 1 {
            for ox in 0..(w - size) / stride + 1 {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..size {
                    for kx in 0..size {
                        m = m.max(x.get(ch, oy * stride + ky, ox * stride + kx) as f64);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

/// Source taps for one output coordinate: `(low, high, weight of high)`.
fn linear_taps(o: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let src = ((o as f64 + 0.5) * input as f64 / output as f64 - 0.5).max(0.0);
    let lo = (src.floor() as usize).min(input - 1);
    let hi = (lo + 1).min(input - 1);
    (
        lo,
        hi,
        if lo == input - 1 {
            0.0
        } else {
            src - lo as f64
        },
    )
}

pub fn resize_oracle(x: &Tensor3, oh: usize, ow: usize) -> Vec<f64> {
    let (c, h, w) = x.dims();
    let mut out = Vec::new();
    for ch in 0..c {
        for oy in 0..oh {
            let (y0, y1, fy) = linear_taps(oy, h, oh);
            for ox in 0..ow {
                let (x0, x1, fx) = linear_taps(ox, w, ow);
                let v = |y: usize, xx: usize| x.get(ch, y, xx) as f64;
                out.push(
                    (1.0 - fy) * (1.0 - fx) * v(y0, x0)
                        + (1.0 - fy) * fx * v(y0, x1)
                        + fy * (1.0 - fx) * v(y1, x0)
                        + fy * fx * v(y1, x1),
                );
            }
        }
    }
    out
}

pub fn gram_oracle(x: &Tensor3) -> Vec<f64> {
    let (c, h, w) = x.dims();
    let mut out = Vec::new();
    for i in 0..c {
        for j in 0..c {
            let mut s = 0.0;
            for y in 0..h {
                for xx in 0..w {
                    s += x.get(i, y, xx) as f64 * x.get(j, y, xx) as f64;
                }
            }
            out.push(s / (h * w) as f64);
        }
    }
    out
}

pub fn normalize_oracle(values: &[f32], strategy: NormStrategy) -> Vec<f64> {
    let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
    match strategy {
        NormStrategy::L2 => {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| if n > 0.0 { x / n } else { *x }).collect()
        }
        NormStrategy::Sigmoid => v.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect(),
        NormStrategy::ReluL1 => {
            let r: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
            let n: f64 = r.iter().sum();
            r.iter().map(|x| if n > 0.0 { x / n } else { *x }).collect()
        }
    }
}

pub fn measure_oracle(a: &[Vec<f64>], b: &[Vec<f64>], measure: DissimMeasure) -> f64 {
    let eps = 1e-7;
    let per_block: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let mut s = 0.0;
            for (&p, &q) in x.iter().zip(y) {
                s += match measure {
                    DissimMeasure::Mse => (p - q) * (p - q),
                    DissimMeasure::Mae => (p - q).abs(),
                    DissimMeasure::Ce => {
                        let t = p.clamp(eps, 1.0 - eps);
                        let r = q.clamp(eps, 1.0 - eps);
                        -(t * r.ln() + (1.0 - t) * (1.0 - r).ln())
                    }
                };
            }
            s / x.len() as f64
        })
        .collect();
    per_block.iter().sum::<f64>() / per_block.len() as f64
}

pub fn map_descriptor(blocks: Vec<Tensor3>) -> Descriptor {
    Descriptor::new(
        blocks
            .into_iter()
            .enumerate()
            .map(|(i, t)| FeatureBlock {
                origin: BlockOrigin {
                    block: i + 1,
                    resolution: Resolution::X1,
                    statistic: Statistic::Linear,
                },
                values: FeatureValues::Map(t),
            })
            .collect(),
    )
}

pub fn check_conv(rng: &mut ChaCha8Rng) -> OracleStats {
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let ic = rng.gen_range(1..=8);
        let oc = rng.gen_range(1..=8);
        let h = rng.gen_range(1..=8);
        let w = rng.gen_range(1..=8);
        let pad = rng.gen_range(0..=2);
        let kh = rng.gen_range(1..=(h + 2 * pad).min(5));
        let kw = rng.gen_range(1..=(w + 2 * pad).min(5));
        let stride = rng.gen_range(1..=3);
        let x = random_tensor(rng, ic, h, w, 1.0);
        let scale = 1.0 / ((ic * kh * kw) as f32).sqrt();
        let weights: Vec<f32> = (0..oc * ic * kh * kw)
            .map(|_| rng.gen_range(-scale..scale))
            .collect();
        let bias: Vec<f32> = (0..oc).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let kernel = KernelView::new([oc, ic, kh, kw], &weights).unwrap();
        let lib = conv2d(&x, kernel, &bias, stride, pad).unwrap();
        let (oh, ow, oracle) = conv_oracle(&x, &weights, &bias, oc, kh, kw, stride, pad);
        assert_eq!(lib.dims(), (oc, oh, ow));
        worst = worst.max(max_err(lib.as_slice(), &oracle));
    }
    OracleStats {
        name: "conv2d",
        instances: INSTANCES,
        max_abs_err: worst,
    }
}

pub fn check_maxpool(rng: &mut ChaCha8Rng) -> OracleStats {
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (c, h, w) = (
            rng.gen_range(1..=8),
            rng.gen_range(1..=8),
            rng.gen_range(1..=8),
        );
        let size = rng.gen_range(1..=h.min(w).min(4));
        let stride = rng.gen_range(1..=3);
        let x = random_tensor(rng, c, h, w, 2.0);
        let lib = maxpool2d(&x, size, stride).unwrap();
        worst = worst.max(max_err(lib.as_slice(), &maxpool_oracle(&x, size, stride)));
    }
    OracleStats {
        name: "maxpool2d",
        instances: INSTANCES,
        max_abs_err: worst,
    }
}

pub fn check_resize(rng: &mut ChaCha8Rng) -> OracleStats {
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (c, h, w) = (
            rng.gen_range(1..=8),
            rng.gen_range(1..=8),
            rng.gen_range(1..=8),
        );
        let (oh, ow) = (rng.gen_range(1..=16), rng.gen_range(1..=16));
        let x = random_tensor(rng, c, h, w, 1.0);
        let lib = bilinear_resize(&x, oh, ow).unwrap();
        worst = worst.max(max_err(lib.as_slice(), &resize_oracle(&x, oh, ow)));
    }
    OracleStats {
        name: "bilinear_resize",
        instances: INSTANCES,
        max_abs_err: worst,
    }
}

pub fn check_gram(rng: &mut ChaCha8Rng) -> OracleStats {
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (c, h, w) = (
            rng.gen_range(1..=8),
            rng.gen_range(1..=8),
            rng.gen_range(1..=8),
        );
        let x = random_tensor(rng, c, h, w, 1.0);
        let g = gram(&x);
        assert_eq!(g.size(), c);
        worst = worst.max(max_err(g.as_slice(), &gram_oracle(&x)));
    }
    OracleStats {
        name: "gram",
        instances: INSTANCES,
        max_abs_err: worst,
    }
}

fn random_blocks(
    rng: &mut ChaCha8Rng,
    shapes: &[(usize, usize, usize)],
    scale: f32,
) -> Vec<Tensor3> {
    shapes
        .iter()
        .map(|&(c, h, w)| random_tensor(rng, c, h, w, scale))
        .collect()
}

fn random_shapes(rng: &mut ChaCha8Rng) -> Vec<(usize, usize, usize)> {
    (0..rng.gen_range(1..=5))
        .map(|_| {
            (
                rng.gen_range(1..=8),
                rng.gen_range(1..=8),
                rng.gen_range(1..=8),
            )
        })
        .collect()
}

pub fn check_normalization(rng: &mut ChaCha8Rng, strategy: NormStrategy) -> OracleStats {
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let shapes = random_shapes(rng);
        let blocks = random_blocks(rng, &shapes, 4.0);
        let oracle: Vec<Vec<f64>> = blocks
            .iter()
            .map(|t| normalize_oracle(t.as_slice(), strategy))
            .collect();
        let lib = normalize(map_descriptor(blocks), strategy).unwrap();
        for (block, want) in lib.blocks().iter().zip(&oracle) {
            worst = worst.max(max_err(block.values.as_slice(), want));
        }
    }
    OracleStats {
        name: match strategy {
            NormStrategy::L2 => "normalize l2",
            NormStrategy::Sigmoid => "normalize sigmoid",
            NormStrategy::ReluL1 => "normalize relu_l1",
        },
        instances: INSTANCES,
        max_abs_err: worst,
    }
}

pub fn check_measure(rng: &mut ChaCha8Rng, measure: DissimMeasure) -> OracleStats {
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let shapes = random_shapes(rng);
        let (a, b) = (
            random_blocks(rng, &shapes, 3.0),
            random_blocks(rng, &shapes, 3.0),
        );
        let (a, b) = match measure {
            DissimMeasure::Ce => (
                normalize(map_descriptor(a), NormStrategy::Sigmoid).unwrap(),
                normalize(map_descriptor(b), NormStrategy::Sigmoid).unwrap(),
            ),
            _ => (map_descriptor(a), map_descriptor(b)),
        };
        let values = |d: &Descriptor| -> Vec<Vec<f64>> {
            d.blocks()
                .iter()
                .map(|blk| blk.values.as_slice().iter().map(|&v| v as f64).collect())
                .collect()
        };
        let lib = dissimilarity(&a, &b, measure).unwrap();
        worst = worst.max((lib - measure_oracle(&values(&a), &values(&b), measure)).abs());
    }
    OracleStats {
        name: match measure {
            DissimMeasure::Mse => "dissimilarity mse",
            DissimMeasure::Mae => "dissimilarity mae",
            DissimMeasure::Ce => "dissimilarity ce",
        },
        instances: INSTANCES,
        max_abs_err: worst,
    }
}

/// Every kernel family, in a fixed order, from one seed.
pub fn run_all(seed: u64) -> Vec<OracleStats> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![
        check_conv(&mut rng),
        check_maxpool(&mut rng),
        check_resize(&mut rng),
        check_gram(&mut rng),
    ];
    for &s in NormStrategy::ALL {
        out.push(check_normalization(&mut rng, s));
    }
    for &m in DissimMeasure::ALL {
        out.push(check_measure(&mut rng, m));
    }
    out
}
