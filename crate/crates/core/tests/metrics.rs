use std::f64::consts::PI;

use cfnerf::field::{Architecture, FieldModel};
use cfnerf::metrics::{
    area_between, depth_errors, evaluate_views, nll_metric, psnr, removal_order, sparsification,
    ssim, write_curve_csv, write_heatmap, EvalView, HeatmapRange, MetricReport,
};
use cfnerf::objective::{batch_loss, kde_loglik, EntropyDraws, LossConfig, TrainBatch};
use cfnerf::raster::Raster;
use cfnerf::render::{midpoint_samples, render_rays, Latents, PixelPrediction, Ray, RayBatch};
use cfnerf::rng;
use cfnerf::scenes::{generate_dataset, two_sphere, CameraRig};
use proptest::prelude::*;

fn flat(w: usize, h: usize, v: f64) -> Raster {
    Raster::from_data(w, h, 3, vec![v; w * h * 3]).unwrap()
}

#[test]
fn psnr_closed_forms() {
    let gt = flat(6, 5, 0.5);
    assert_eq!(psnr(&gt, &gt).unwrap(), f64::INFINITY);
    assert!((psnr(&flat(6, 5, 0.6), &gt).unwrap() - 20.0).abs() < 1e-9);
    assert!((psnr(&flat(6, 5, 0.49), &gt).unwrap() - 40.0).abs() < 1e-9);
    assert!(psnr(&flat(5, 5, 0.5), &gt).is_err());
    assert!(psnr(&flat(6, 5, 1.5), &gt).is_err());
}

proptest! {
    #[test]
    fn psnr_decreases_with_noise_amplitude(a in 0.001f64..0.2, extra in 0.001f64..0.2) {
        let gt = flat(4, 4, 0.5);
        let lo = psnr(&flat(4, 4, 0.5 + a), &gt).unwrap();
        let hi = psnr(&flat(4, 4, 0.5 + a + extra), &gt).unwrap();
        prop_assert!(hi < lo);
    }
}

#[test]
fn ssim_cases() {
    let mut r = rng::from_seed(1);
    let gt = Raster::from_data(
        16,
        14,
        3,
        (0..16 * 14 * 3)
            .map(|_| rand::Rng::random(&mut r))
            .collect(),
    )
    .unwrap();
    assert!((ssim(&gt, &gt).unwrap() - 1.0).abs() < 1e-12);

    let bits: Vec<f64> = (0..16 * 14)
        .map(|i| ((i * 7 + i / 16) % 2) as f64)
        .collect();
    let bin = Raster::from_data(16, 14, 1, bits.clone()).unwrap();
    let inv = Raster::from_data(16, 14, 1, bits.iter().map(|b| 1.0 - b).collect()).unwrap();
    assert!(ssim(&inv, &bin).unwrap() < 0.0);

    let (m1, m2) = (0.2, 0.7);
    let c1 = 0.01f64 * 0.01;
    let expect = (2.0 * m1 * m2 + c1) / (m1 * m1 + m2 * m2 + c1);
    let got = ssim(&flat(12, 12, m1), &flat(12, 12, m2)).unwrap();
    assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");

    assert!(ssim(&flat(10, 12, 0.1), &flat(10, 12, 0.1)).is_err());
}

#[test]
fn depth_error_cases() {
    let gt = vec![0.5, 0.25, 0.4, 0.3];
    let all = vec![true; 4];
    let same = depth_errors(&gt, &gt, &all).unwrap();
    assert_eq!((same.rmse, same.mae, same.delta[2]), (0.0, 0.0, 1.0));

    let scaled: Vec<f64> = gt.iter().map(|g| g * 1.2).collect();
    assert_eq!(depth_errors(&scaled, &gt, &all).unwrap().delta[0], 1.0);
    let doubled: Vec<f64> = gt.iter().map(|g| g * 2.0).collect();
    assert_eq!(depth_errors(&doubled, &gt, &all).unwrap().delta, [0.0; 3]);
    let halved: Vec<f64> = gt.iter().map(|g| g / 2.0).collect();
    assert_eq!(depth_errors(&halved, &gt, &all).unwrap().delta, [0.0; 3]);

    let mask = vec![true, false, false, false];
    let one = depth_errors(&[0.6, -1.0, 0.0, 9.0], &gt, &mask).unwrap();
    assert!((one.rmse - 0.1).abs() < 1e-15 && one.count == 1);
    assert!(depth_errors(&gt, &gt, &[false; 4]).is_err());
    assert!(depth_errors(&gt, &gt[..3], &all).is_err());
}

proptest! {
    #[test]
    fn delta_fractions_are_ordered(
        pairs in prop::collection::vec((0.01f64..10.0, 0.01f64..10.0, any::<bool>()), 1..40)
    ) {
        let p: Vec<f64> = pairs.iter().map(|t| t.0).collect();
        let g: Vec<f64> = pairs.iter().map(|t| t.1).collect();
        let mut m: Vec<bool> = pairs.iter().map(|t| t.2).collect();
        m[0] = true;
        let e = depth_errors(&p, &g, &m).unwrap();
        prop_assert!(e.delta[0] <= e.delta[1] && e.delta[1] <= e.delta[2]);
        prop_assert!(e.delta.iter().all(|d| (0.0..=1.0).contains(d)));
        prop_assert!(e.mae <= e.rmse + 1e-15);
    }
}

#[test]
fn nll_at_the_mode_and_under_permutation() {
    let gt = vec![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]];
    let samples: Vec<Vec<[f64; 3]>> = gt.iter().map(|c| vec![*c; 4]).collect();
    let mode = 3.0 * (-0.5 * (2.0 * PI).ln() - 0.1f64.ln());
    assert!((nll_metric(&gt, &samples, 0.1).unwrap() + mode).abs() < 1e-12);

    let s = vec![vec![[0.1, 0.5, 0.3], [0.4, 0.2, 0.6], [0.3, 0.3, 0.3]]];
    let mut p = s.clone();
    p[0].reverse();
    assert_eq!(
        nll_metric(&[[0.2; 3]], &s, 0.05).unwrap(),
        nll_metric(&[[0.2; 3]], &p, 0.05).unwrap()
    );
    assert!(nll_metric(&[[0.2; 3]], &s, 0.0).is_err());
}

/// Expected NLL of a target drawn from N(mu, tau^2) in channel 0, by
/// quadrature, when the samples sit at Gaussian quantiles with spread `s`.
fn expected_nll(spread: f64, tau: f64, h: f64) -> f64 {
    let mu = 0.5;
    let quantiles = [
        -1.5341, -0.8871, -0.4888, -0.1573, 0.1573, 0.4888, 0.8871, 1.5341,
    ];
    let samples: Vec<[f64; 3]> = quantiles
        .iter()
        .map(|q| [mu + spread * q, 0.5, 0.5])
        .collect();
    let n = 4000;
    let (lo, hi) = (mu - 8.0 * tau, mu + 8.0 * tau);
    let step = (hi - lo) / n as f64;
    let mut total = 0.0;
    for i in 0..=n {
        let y = lo + i as f64 * step;
        let w = (-0.5 * ((y - mu) / tau).powi(2)).exp() / (tau * (2.0 * PI).sqrt());
        let ends = if i == 0 || i == n { 0.5 } else { 1.0 };
        total += ends
            * w
            * step
            * nll_metric(&[[y, 0.5, 0.5]], std::slice::from_ref(&samples), h).unwrap();
    }
    total
}

#[test]
fn nll_rewards_the_right_spread() {
    let (tau, h) = (0.1, 0.05);
    let spreads = [0.0, 0.03, 0.06, 0.09, 0.12, 0.2, 0.3];
    let scores: Vec<f64> = spreads.iter().map(|s| expected_nll(*s, tau, h)).collect();
    let best = (0..scores.len())
        .min_by(|a, b| scores[*a].total_cmp(&scores[*b]))
        .unwrap();
    assert!(
        (0.06..=0.12).contains(&spreads[best]),
        "best spread {}",
        spreads[best]
    );
    assert!(scores[best..].windows(2).all(|w| w[1] > w[0]));
    assert!(scores[..=best].windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn nll_metric_matches_training_likelihood_bitwise() {
    let arch = Architecture::compact();
    let m = FieldModel::new(arch, &mut rng::from_seed(3)).unwrap();
    let rays = vec![
        Ray::new([0.1, 0.0, 4.0], [0.0, 0.0, -1.0], 2.0, 6.0).unwrap(),
        Ray::new([-0.3, 0.2, 4.0], [0.0, 0.0, -1.0], 2.0, 6.0).unwrap(),
        Ray::new([0.0, -0.4, 4.0], [0.0, 0.0, -1.0], 2.0, 6.0).unwrap(),
    ];
    let nodes = rays
        .iter()
        .map(|r| midpoint_samples(r, 12).unwrap())
        .collect();
    let batch = RayBatch::new(rays, nodes, vec![0, 1, 2]).unwrap();
    let latents = Latents::draw(m.mode(), 5, &mut rng::from_seed(4));
    let colors = vec![[0.3, 0.2, 0.1], [0.5, 0.5, 0.5], [0.0, 0.1, 0.9]];
    let train = TrainBatch {
        rays: batch.clone(),
        colors: colors.clone(),
        depths: None,
        latents: latents.clone(),
        background: [0.0; 3],
    };
    let draws = EntropyDraws::sample(&two_sphere().bounds, 2, &mut rng::from_seed(5)).unwrap();
    let cfg = LossConfig {
        entropy_weight: 0.0,
        depth_weight: 0.0,
        bandwidth: 0.05,
    };
    let (lb, _) = batch_loss(&m, &train, &draws, &cfg).unwrap();
    let preds = render_rays(&m, &batch, &latents, [0.0; 3], 2).unwrap();
    let samples: Vec<Vec<[f64; 3]>> = preds.iter().map(|p| p.color_samples.clone()).collect();
    let metric = nll_metric(&colors, &samples, 0.05).unwrap();
    assert_eq!(metric.to_bits(), lb.nll.to_bits());
    assert_eq!(
        (-kde_loglik(colors[0], &samples[0], 0.05).unwrap()).to_bits(),
        nll_metric(&colors[..1], &samples[..1], 0.05)
            .unwrap()
            .to_bits()
    );
}

/// Every permutation of `0..n` (Heap's algorithm).
fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut a: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    let mut out = vec![a.clone()];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                a.swap(0, i);
            } else {
                a.swap(c[i], i);
            }
            out.push(a.clone());
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    out
}

/// Normalized retained-mean curve of an explicit removal order, by direct
/// summation.
fn direct_curve(errors: &[f64], order: &[usize]) -> Vec<f64> {
    let n = errors.len();
    let at = |removed: usize| {
        let kept = &order[removed..];
        kept.iter().map(|i| errors[*i]).sum::<f64>() / kept.len() as f64
    };
    let base = at(0);
    (0..100).map(|t| at(t * n / 100) / base).collect()
}

fn trapezoid_gap(a: &[f64], b: &[f64]) -> f64 {
    let g: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - y).abs()).collect();
    let mut s = 0.0;
    for w in g.windows(2) {
        s += 0.5 * (w[0] + w[1]);
    }
    s / (g.len() - 1) as f64
}

#[test]
fn heap_enumerates_all_orderings() {
    let p = permutations(4);
    assert_eq!(p.len(), 24);
    let mut sorted = p.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), 24);
}

#[test]
fn ause_against_brute_force_on_ten_elements() {
    let errors = [0.3, 1.7, 0.05, 0.9, 2.4, 0.6, 1.1, 0.02, 0.45, 1.3];
    let n = errors.len();
    let perms = permutations(n);
    assert_eq!(perms.len(), 3_628_800);

    // distinct removal prefixes for n = 10: floor(t/10) pixels removed
    let mut best = vec![f64::INFINITY; n];
    let mut worst = vec![f64::NEG_INFINITY; n];
    let total: f64 = errors.iter().sum();
    for p in &perms {
        let mut removed_sum = 0.0;
        for r in 0..n {
            let m = (total - removed_sum) / (n - r) as f64;
            best[r] = best[r].min(m);
            worst[r] = worst[r].max(m);
            removed_sum += errors[p[r]];
        }
    }
    let base = total / n as f64;
    let expand = |v: &[f64]| -> Vec<f64> { (0..100).map(|t| v[t * n / 100] / base).collect() };
    let oracle = expand(&best);
    let pessimal = expand(&worst);
    let worst_gap = trapezoid_gap(&pessimal, &oracle);

    let (curve, perfect) = sparsification(&errors, &errors).unwrap();
    assert_eq!(perfect, 0.0);
    for (a, b) in curve.oracle.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-12);
    }

    let reversed: Vec<f64> = errors.iter().map(|e| -e).collect();
    let (rcurve, rause) = sparsification(&errors, &reversed).unwrap();
    assert!((rause - worst_gap).abs() < 1e-12, "{rause} vs {worst_gap}");
    for (a, b) in rcurve.uncertainty.iter().zip(&pessimal) {
        assert!((a - b).abs() < 1e-12);
    }

    // constant uncertainty removes in index order
    let (ccurve, cause) = sparsification(&errors, &[0.5; 10]).unwrap();
    let direct = direct_curve(&errors, &(0..n).collect::<Vec<_>>());
    let expect = trapezoid_gap(&direct, &oracle);
    assert!((cause - expect).abs() < 1e-12);
    assert!(ccurve
        .uncertainty
        .iter()
        .zip(&direct)
        .all(|(a, b)| (a - b).abs() < 1e-12));
    assert_eq!(ccurve.uncertainty[0], 1.0);
}

#[test]
fn sparsification_edge_cases() {
    assert!(sparsification(&[1.0, 2.0], &[1.0]).is_err());
    assert!(sparsification(&[], &[]).is_err());
    let (c, a) = sparsification(&[0.0; 200], &(0..200).map(f64::from).collect::<Vec<_>>()).unwrap();
    assert_eq!(a, 0.0);
    assert!(c.uncertainty.iter().all(|v| *v == 0.0));
    assert_eq!(removal_order(&[1.0, 3.0, 3.0, 2.0]), vec![1, 2, 3, 0]);
    assert_eq!(area_between(&[1.0, 1.0, 1.0], &[1.0, 0.0, 1.0]), 0.5);
}

fn error_vectors() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (100usize..300).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..5.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ause_depends_only_on_the_ranking((errors, unc) in error_vectors()) {
        let (c, a) = sparsification(&errors, &unc).unwrap();
        let warped: Vec<f64> = unc.iter().map(|u| (2.0 * u).exp() + 7.0).collect();
        let (_, b) = sparsification(&errors, &warped).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a >= 0.0);
        prop_assert_eq!(c.uncertainty[0], c.oracle[0]);
        for w in c.oracle.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
        for (u, o) in c.uncertainty.iter().zip(&c.oracle) {
            prop_assert!(*o <= u * (1.0 + 1e-12));
        }
    }
}

fn gt_predictions(view: &cfnerf::scenes::View, k: usize) -> Vec<PixelPrediction> {
    (0..view.image.pixels())
        .map(|i| {
            let c = view.image.pixel(i);
            PixelPrediction::from_samples(
                vec![[c[0], c[1], c[2]]; k],
                vec![view.depth.data[i]; k],
                vec![view.opacity.data[i]; k],
            )
        })
        .collect()
}

#[test]
fn self_evaluation_is_perfect_and_serializes() {
    let ds = generate_dataset(
        &two_sphere(),
        &CameraRig::default(),
        1,
        2,
        (16, 16),
        1024,
        &mut rng::from_seed(2),
    )
    .unwrap();
    let preds: Vec<Vec<PixelPrediction>> = ds.test_views().map(|v| gt_predictions(v, 3)).collect();
    let names = ["a", "b"];
    let views: Vec<EvalView> = ds
        .test_views()
        .zip(&preds)
        .zip(names)
        .map(|((v, p), name)| EvalView {
            name,
            gt_color: &v.image,
            gt_depth: &v.depth,
            gt_opacity: &v.opacity,
            predictions: p,
            near: ds.scene.near,
        })
        .collect();
    let eval = evaluate_views(&views, 0.05).unwrap();
    let r = &eval.report;
    assert_eq!(r.psnr, f64::INFINITY);
    assert_eq!(r.ause_color, 0.0);
    assert_eq!(r.ause_rmse, Some(0.0));
    assert_eq!(r.delta3, Some(1.0));
    assert_eq!(r.rmse, Some(0.0));
    assert!((r.ssim.unwrap() - 1.0).abs() < 1e-12);
    assert!(r.masked_pixels > 0 && r.pixels == 512);

    let json = serde_json::to_value(r).unwrap();
    assert!(json["psnr"].is_null());
    for key in [
        "ssim",
        "rmse",
        "mae",
        "delta1",
        "delta2",
        "delta3",
        "nll",
        "ause_rmse",
        "ause_mae",
        "ause_color",
        "bandwidth",
        "views",
    ] {
        assert!(json.get(key).is_some(), "missing {key}");
    }
    let back: MetricReport = serde_json::from_value(json).unwrap();
    assert_eq!(&back, r);
    assert!(evaluate_views(&[], 0.05).is_err());

    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("curve.csv");
    write_curve_csv(&csv, &eval.curves.color).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 101);
    assert!(text.starts_with("t,uncertainty_curve,oracle_curve"));

    let png = dir.path().join("err.png");
    let sidecar = write_heatmap(&png, &ds.views[1].depth).unwrap();
    let range: HeatmapRange =
        serde_json::from_str(&std::fs::read_to_string(sidecar).unwrap()).unwrap();
    let max = ds.views[1]
        .depth
        .data
        .iter()
        .copied()
        .fold(f64::MIN, f64::max);
    assert_eq!(range.max, max);
    assert_eq!(cfnerf::raster::read_png_rgb(&png).unwrap().width, 16);
}
