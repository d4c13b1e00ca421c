//! Invariant checks driven by proptest runners, shared by the `properties`
//! tests and the acceptance harness.

use std::path::PathBuf;

use mrperceptual::descriptor::{dissimilarity, gram, normalize, DissimMeasure, NormStrategy};
use mrperceptual::eval::{
    evaluate, evaluate_with, score_triplet, Category, EvalOptions, EvalReport, Subsample,
    TripletRecord,
};
use mrperceptual::pipeline::{compute_metric, Metric, MetricConfig};
use mrperceptual::tensor::{bilinear_resize, conv2d, maxpool2d, relu, KernelView};
use mrperceptual::Tensor3;
use proptest::collection::vec;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use super::oracles::map_descriptor;

pub type Check = fn() -> Result<(), String>;

fn run<S: Strategy>(
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&strategy, test).map_err(|e| e.to_string())
}

fn tensor(max_c: usize, max_hw: usize, scale: f32) -> impl Strategy<Value = Tensor3> {
    (1..=max_c, 1..=max_hw, 1..=max_hw).prop_flat_map(move |(c, h, w)| {
        vec(-scale..scale, c * h * w).prop_map(move |d| Tensor3::new(c, h, w, d).unwrap())
    })
}

fn tensor_pair(
    max_c: usize,
    max_hw: usize,
    scale: f32,
) -> impl Strategy<Value = (Tensor3, Tensor3)> {
    (1..=max_c, 1..=max_hw, 1..=max_hw).prop_flat_map(move |(c, h, w)| {
        (vec(-scale..scale, c * h * w), vec(-scale..scale, c * h * w)).prop_map(move |(a, b)| {
            (
                Tensor3::new(c, h, w, a).unwrap(),
                Tensor3::new(c, h, w, b).unwrap(),
            )
        })
    })
}

fn close(a: f32, b: f32, tol: f32) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

fn map2(a: &Tensor3, b: &Tensor3, f: impl Fn(f32, f32) -> f32) -> Tensor3 {
    let (c, h, w) = a.dims();
    Tensor3::from_fn(c, h, w, |ch, y, x| f(a.get(ch, y, x), b.get(ch, y, x))).unwrap()
}

/// conv(alpha x + y) == alpha conv(x) + conv(y) for a bias-free kernel.
pub fn conv_linearity() -> Result<(), String> {
    let strat = (
        tensor_pair(3, 6, 1.0),
        -2.0f32..2.0,
        1usize..=3,
        1usize..=2,
        0usize..=1,
        1usize..=3,
    )
        .prop_flat_map(|((x, y), alpha, k, stride, pad, oc)| {
            let ic = x.channels();
            vec(-0.5f32..0.5, oc * ic * k * k)
                .prop_map(move |w| (x.clone(), y.clone(), alpha, k, stride, pad, oc, w))
        });
    run(64, strat, |(x, y, alpha, k, stride, pad, oc, w)| {
        let (ic, h, wd) = x.dims();
        prop_assume!(k <= h + 2 * pad && k <= wd + 2 * pad);
        let kv = KernelView::new([oc, ic, k, k], &w).unwrap();
        let bias = vec![0.0; oc];
        let conv = |t: &Tensor3| conv2d(t, kv, &bias, stride, pad).unwrap();
        let mixed = conv(&map2(&x, &y, |a, b| alpha * a + b));
        let (cx, cy) = (conv(&x), conv(&y));
        let sum = map2(&cx, &cy, |a, b| alpha * a + b);
        for (a, b) in mixed.as_slice().iter().zip(sum.as_slice()) {
            prop_assert!(close(*a, *b, 1e-5), "{a} vs {b}");
        }
        Ok(())
    })
}

/// relu is idempotent and non-negative.
pub fn relu_idempotent() -> Result<(), String> {
    run(128, tensor(4, 8, 3.0), |x| {
        let once = relu(&x);
        prop_assert_eq!(relu(&once), once.clone());
        prop_assert!(once.min() >= 0.0);
        Ok(())
    })
}

/// Pooled values lie within the input range and each window's max is attained.
pub fn maxpool_bounds() -> Result<(), String> {
    let strat = (tensor(4, 8, 3.0), 1usize..=3, 1usize..=3);
    run(128, strat, |(x, size, stride)| {
        prop_assume!(size <= x.height() && size <= x.width());
        let p = maxpool2d(&x, size, stride).unwrap();
        prop_assert!(p.min() >= x.min() && p.max() <= x.max());
        if size == x.height() && size == x.width() {
            for c in 0..x.channels() {
                let m = x
                    .channel(c)
                    .iter()
                    .copied()
                    .fold(f32::NEG_INFINITY, f32::max);
                prop_assert_eq!(p.get(c, 0, 0), m);
            }
        }
        Ok(())
    })
}

/// Resized values stay within the input range; constants are preserved.
pub fn resize_bounds() -> Result<(), String> {
    let strat = (tensor(3, 8, 2.0), 1usize..=16, 1usize..=16, -1.0f32..1.0);
    run(128, strat, |(x, oh, ow, k)| {
        let r = bilinear_resize(&x, oh, ow).unwrap();
        prop_assert!(r.min() >= x.min() - 1e-6 && r.max() <= x.max() + 1e-6);
        let c = Tensor3::filled(x.channels(), x.height(), x.width(), k).unwrap();
        let rc = bilinear_resize(&c, oh, ow).unwrap();
        prop_assert!(rc.as_slice().iter().all(|&v| close(v, k, 1e-6)));
        Ok(())
    })
}

/// Identical inputs give bit-identical kernel outputs.
pub fn kernels_deterministic() -> Result<(), String> {
    run(64, tensor(3, 8, 1.0), |x| {
        let ic = x.channels();
        let w: Vec<f32> = (0..2 * ic).map(|i| (i as f32 * 0.37).sin()).collect();
        let kv = KernelView::new([2, ic, 1, 1], &w).unwrap();
        let a = conv2d(&x, kv, &[0.1, -0.1], 1, 1).unwrap();
        let b = conv2d(&x, kv, &[0.1, -0.1], 1, 1).unwrap();
        prop_assert_eq!(a.as_slice(), b.as_slice());
        prop_assert_eq!(
            bilinear_resize(&x, 7, 5).unwrap(),
            bilinear_resize(&x, 7, 5).unwrap()
        );
        prop_assert_eq!(gram(&x), gram(&x));
        Ok(())
    })
}

/// Gram matrices are symmetric, positive semi-definite and quadratic in scale.
pub fn gram_properties() -> Result<(), String> {
    let strat = tensor(6, 8, 1.0).prop_flat_map(|x| {
        let c = x.channels();
        (Just(x), vec(-1.0f64..1.0, c), -3.0f32..3.0)
    });
    run(128, strat, |(x, v, alpha)| {
        let g = gram(&x);
        let c = g.size();
        for i in 0..c {
            for j in 0..c {
                prop_assert_eq!(g.get(i, j), g.get(j, i));
            }
        }
        let quad: f64 = (0..c)
            .flat_map(|i| (0..c).map(move |j| (i, j)))
            .map(|(i, j)| v[i] * g.get(i, j) as f64 * v[j])
            .sum();
        prop_assert!(quad >= -1e-5, "v'Gv = {quad}");
        let scaled = Tensor3::from_fn(x.channels(), x.height(), x.width(), |ch, y, xx| {
            alpha * x.get(ch, y, xx)
        })
        .unwrap();
        let gs = gram(&scaled);
        for (a, b) in gs.as_slice().iter().zip(g.as_slice()) {
            prop_assert!(
                close(*a, alpha * alpha * b, 1e-5),
                "{a} vs {}",
                alpha * alpha * b
            );
        }
        Ok(())
    })
}

/// Sigmoid output is inside (0, 1) and order preserving.
pub fn sigmoid_range_and_monotone() -> Result<(), String> {
    let strat = tensor(4, 6, 40.0).prop_flat_map(|x| {
        let n = x.len();
        (Just(x), vec(0.0f32..5.0, n))
    });
    run(128, strat, |(x, bump)| {
        let (c, h, w) = x.dims();
        let y = Tensor3::new(
            c,
            h,
            w,
            x.as_slice().iter().zip(&bump).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let sx = normalize(map_descriptor(vec![x]), NormStrategy::Sigmoid).unwrap();
        let sy = normalize(map_descriptor(vec![y]), NormStrategy::Sigmoid).unwrap();
        let (a, b) = (
            sx.blocks()[0].values.as_slice(),
            sy.blocks()[0].values.as_slice(),
        );
        for (&p, &q) in a.iter().zip(b) {
            prop_assert!(p > 0.0 && p < 1.0, "{p} outside (0, 1)");
            prop_assert!(p <= q);
        }
        Ok(())
    })
}

/// CE(a, b) >= CE(a, a) on sigmoid descriptors.
pub fn gibbs_inequality() -> Result<(), String> {
    run(128, tensor_pair(4, 6, 4.0), |(x, y)| {
        let a = normalize(map_descriptor(vec![x]), NormStrategy::Sigmoid).unwrap();
        let b = normalize(map_descriptor(vec![y]), NormStrategy::Sigmoid).unwrap();
        let self_ce = dissimilarity(&a, &a, DissimMeasure::Ce).unwrap();
        let cross = dissimilarity(&a, &b, DissimMeasure::Ce).unwrap();
        prop_assert!(cross >= self_ce - 1e-12, "{cross} < {self_ce}");
        Ok(())
    })
}

/// MSE and MAE are symmetric, non-negative and zero on identical inputs.
pub fn mse_mae_symmetry() -> Result<(), String> {
    let strat = (
        tensor_pair(4, 6, 3.0),
        prop::sample::select(NormStrategy::ALL.to_vec()),
    );
    run(128, strat, |((x, y), norm)| {
        let a = normalize(map_descriptor(vec![x]), norm).unwrap();
        let b = normalize(map_descriptor(vec![y]), norm).unwrap();
        for m in [DissimMeasure::Mse, DissimMeasure::Mae] {
            let ab = dissimilarity(&a, &b, m).unwrap();
            prop_assert_eq!(ab, dissimilarity(&b, &a, m).unwrap());
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(dissimilarity(&a, &a, m).unwrap(), 0.0);
        }
        Ok(())
    })
}

/// Swapping the distortions flips the score; monotone rescaling of the
/// distances leaves it unchanged.
pub fn score_triplet_symmetries() -> Result<(), String> {
    let strat = (0.0f64..10.0, 0.0f64..10.0, 0.0f64..=1.0, any::<bool>());
    run(512, strat, |(d0, d1, judge, tie)| {
        let d1 = if tie { d0 } else { d1 };
        let s = score_triplet(d0, d1, judge);
        prop_assert_eq!(s + score_triplet(d1, d0, judge), 1.0);
        for f in [
            |d: f64| d.exp(),
            |d: f64| d * d * d + d,
            |d: f64| (1.0 + d).ln(),
        ] {
            prop_assert_eq!(score_triplet(f(d0), f(d1), judge), s);
        }
        Ok(())
    })
}

fn synthetic_records(judges: &[(usize, f64)]) -> Vec<TripletRecord> {
    judges
        .iter()
        .enumerate()
        .map(|(i, &(cat, judge))| {
            let category = Category::ALL[cat % 6];
            let stem = format!("{i:06}");
            let p = |k: &str| PathBuf::from(format!("/synthetic/{category}/{k}/{stem}.png"));
            TripletRecord {
                category,
                ref_path: p("ref"),
                p0_path: p("p0"),
                p1_path: p("p1"),
                stem,
                judge,
            }
        })
        .collect()
}

fn judges() -> impl Strategy<Value = Vec<(usize, f64)>> {
    vec((0usize..6, 0.0f64..=1.0), 6..60).prop_map(|mut v| {
        // make sure every category is present
        for (i, item) in v.iter_mut().take(6).enumerate() {
            item.0 = i;
        }
        v
    })
}

/// A metric that ties on every triplet scores exactly 50 everywhere.
pub fn constant_metric_scores_fifty() -> Result<(), String> {
    run(64, (judges(), 0.0f64..5.0), |(j, c)| {
        let records = synthetic_records(&j);
        let report = evaluate_with(&records, &Metric::Ssim, &EvalOptions::default(), |_| {
            Ok((c, c))
        })
        .unwrap();
        for cat in Category::ALL {
            prop_assert_eq!(report.score(cat), Some(50.0));
        }
        prop_assert_eq!(report.average, Some(50.0));
        Ok(())
    })
}

fn fake_distance(r: &TripletRecord) -> (f64, f64) {
    let h = r
        .stem
        .bytes()
        .fold(0u64, |a, b| a.wrapping_mul(31).wrapping_add(b as u64));
    ((h % 97) as f64 / 97.0, (h % 89) as f64 / 89.0)
}

/// Reports do not depend on the worker count or on the input record order.
pub fn evaluation_order_independence() -> Result<(), String> {
    let strat = (
        judges(),
        1usize..=4,
        any::<u64>(),
        proptest::option::of((1usize..5, any::<u64>())),
    );
    run(64, strat, |(j, workers, shuffle_seed, sub)| {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let records = synthetic_records(&j);
        let mut shuffled = records.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(shuffle_seed));
        let subsample = sub.map(|(count, seed)| Subsample { count, seed });
        let eval = |rs: &[TripletRecord], workers: Option<usize>| -> EvalReport {
            let opts = EvalOptions { subsample, workers };
            evaluate_with(rs, &Metric::Ssim, &opts, |r| Ok(fake_distance(r))).unwrap()
        };
        let base = eval(&records, Some(1));
        prop_assert_eq!(&eval(&records, Some(workers)), &base);
        prop_assert_eq!(&eval(&shuffled, Some(workers)), &base);
        prop_assert_eq!(base.to_json(), eval(&shuffled, None).to_json());
        Ok(())
    })
}

/// `evaluate` on the mini corpus is identical for 1 and 3 workers.
pub fn evaluate_worker_independence() -> Result<(), String> {
    let records = mrperceptual::eval::load_2afc(super::fixtures().join("mini2afc"))
        .map_err(|e| e.to_string())?;
    let store = super::alexnet();
    let metrics = [Metric::Ssim, Metric::Deep(MetricConfig::classical())];
    for metric in &metrics {
        let opts = |workers| EvalOptions {
            subsample: Some(Subsample { count: 2, seed: 4 }),
            workers: Some(workers),
        };
        let one = evaluate(&records, Some(&store), metric, &opts(1)).map_err(|e| e.to_string())?;
        let three =
            evaluate(&records, Some(&store), metric, &opts(3)).map_err(|e| e.to_string())?;
        if one.to_json() != three.to_json() {
            return Err(format!(
                "{} differs between 1 and 3 workers",
                metric.label()
            ));
        }
    }
    Ok(())
}

/// The all-blocks distance equals the mean of the single-block distances.
pub fn block_aggregation_identity() -> Result<(), String> {
    let store = super::alexnet();
    let strat = (vec(0.0f32..1.0, 3 * 64 * 64), vec(0.0f32..1.0, 3 * 64 * 64));
    run(4, strat, |(a, b)| {
        let a = Tensor3::new(3, 64, 64, a).unwrap();
        let b = Tensor3::new(3, 64, 64, b).unwrap();
        let all = compute_metric(&a, &b, &store, &MetricConfig::classical())
            .unwrap()
            .distance;
        let singles: Vec<f64> = (1..=store.block_count())
            .map(|k| {
                compute_metric(
                    &a,
                    &b,
                    &store,
                    &MetricConfig::classical().with_blocks(Some(vec![k])),
                )
                .unwrap()
                .distance
            })
            .collect();
        let mean = singles.iter().sum::<f64>() / singles.len() as f64;
        prop_assert_eq!(all, mean);
        Ok(())
    })
}

pub const ALL: &[(&str, Check)] = &[
    ("conv linearity", conv_linearity),
    ("relu idempotence", relu_idempotent),
    ("maxpool bounds", maxpool_bounds),
    ("resize bounds", resize_bounds),
    ("kernel determinism", kernels_deterministic),
    ("gram symmetry/psd/homogeneity", gram_properties),
    ("sigmoid range and monotonicity", sigmoid_range_and_monotone),
    ("gibbs inequality", gibbs_inequality),
    ("mse/mae symmetry and d(x,x)=0", mse_mae_symmetry),
    (
        "score_triplet antisymmetry and monotone invariance",
        score_triplet_symmetries,
    ),
    ("constant metric scores 50", constant_metric_scores_fifty),
    (
        "worker count and record order independence",
        evaluation_order_independence,
    ),
    (
        "evaluate worker independence on mini corpus",
        evaluate_worker_independence,
    ),
];
