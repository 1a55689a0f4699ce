#![allow(clippy::needless_range_loop)]

use cfnerf::field::{Architecture, FieldModel, LatentPrior};
use cfnerf::render::{
    composite, expected_depth, midpoint_samples, render_pixel, render_rays, stratified_samples,
    Camera, Latents, Ray, RayBatch,
};
use cfnerf::rng;
use proptest::prelude::*;

fn axis_ray(near: f64, far: f64) -> Ray {
    Ray::new([0.0, 0.0, 4.0], [0.0, 0.0, -1.0], near, far).unwrap()
}

#[test]
fn stratified_bins_average_to_midpoints() {
    let ray = axis_ray(2.0, 6.0);
    let n = 8;
    let mut r = rng::from_seed(9);
    let mut sums = vec![0.0; n];
    let draws = 10_000;
    for _ in 0..draws {
        let q = stratified_samples(&ray, n, &mut r).unwrap();
        assert!(q.t.windows(2).all(|w| w[0] < w[1]));
        assert!(q.delta.iter().all(|d| *d > 0.0));
        for (s, t) in sums.iter_mut().zip(&q.t) {
            *s += t;
        }
    }
    let mid = midpoint_samples(&ray, n).unwrap();
    for (s, m) in sums.iter().zip(&mid.t) {
        assert!((s / draws as f64 - m).abs() < 0.02 * m);
    }
    assert!(midpoint_samples(&ray, 1).is_err());
}

#[test]
fn constant_medium_converges_at_first_order() {
    // analytic: color = (1 - e^{-a L}) r over the covered interval
    let (a, r) = (1.3, [0.2, 0.6, 0.9]);
    let ray = axis_ray(2.0, 6.0);
    let exact = 1.0 - (-a * 4.0f64).exp();
    let mut errs = Vec::new();
    for n in [64, 128, 256, 512, 1024] {
        let q = midpoint_samples(&ray, n).unwrap();
        let c = composite(&vec![a; n], &vec![r; n], &q.delta).unwrap();
        errs.push((c.color[1] - exact * r[1]).abs());
    }
    for w in errs.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.2).contains(&ratio), "ratio {ratio}");
    }
}

#[test]
fn fog_depth_matches_dense_quadrature() {
    let ray = axis_ray(2.0, 6.0);
    let fog = |n: usize| {
        let q = midpoint_samples(&ray, n).unwrap();
        expected_depth(&vec![0.4; n], &q.delta, &q.t).unwrap().depth
    };
    let dense = fog(8192);
    assert!((fog(128) - dense).abs() < 0.01 * dense);
    // constant density s over [a, a + l]: a + 1/s - l e^{-sl} / (1 - e^{-sl})
    let (a, l, s) = (2.0f64, 4.0f64, 0.4f64);
    let exact = a + 1.0 / s - l * (-s * l).exp() / (1.0 - (-s * l).exp());
    assert!((dense - exact).abs() < 1e-4, "{dense} vs {exact}");
}

fn model(seed: u64) -> FieldModel {
    FieldModel::new(Architecture::compact(), &mut rng::from_seed(seed)).unwrap()
}

#[test]
fn single_sample_has_zero_variance() {
    let m = model(1);
    let ray = axis_ray(2.0, 6.0);
    let q = midpoint_samples(&ray, 16).unwrap();
    let lat = Latents::draw(m.mode(), 1, &mut rng::from_seed(2));
    let p = render_pixel(&m, &ray, &q, &lat, [0.0; 3]).unwrap();
    assert_eq!(p.color_var, [0.0; 3]);
    assert_eq!(p.depth_var, 0.0);
}

#[test]
fn collapsed_prior_gives_identical_samples() {
    let mut m = model(1);
    let prior = LatentPrior {
        mean: vec![0.3, -0.2, 0.1, 0.5],
        scale_pre: vec![-60.0; 4],
    };
    m.set_prior(&prior).unwrap();
    let ray = axis_ray(2.0, 6.0);
    let q = midpoint_samples(&ray, 16).unwrap();
    let lat = Latents::draw(m.mode(), 6, &mut rng::from_seed(2));
    let p = render_pixel(&m, &ray, &q, &lat, [0.0; 3]).unwrap();
    for c in &p.color_samples {
        for i in 0..3 {
            assert!((c[i] - p.color_samples[0][i]).abs() < 1e-12);
        }
    }
    assert!(p.color_var.iter().all(|v| *v < 1e-20));
}

#[test]
fn graph_render_matches_plain_composite() {
    let m = model(4);
    let ray = Ray::new([0.3, 0.1, 4.0], [0.0, 0.0, -1.0], 2.0, 6.0).unwrap();
    let q = stratified_samples(&ray, 12, &mut rng::from_seed(1)).unwrap();
    let lat = Latents::draw(m.mode(), 3, &mut rng::from_seed(7));
    let bg = [0.1, 0.2, 0.05];
    let p = render_pixel(&m, &ray, &q, &lat, bg).unwrap();
    let Latents::Shared(eps) = &lat else {
        unreachable!()
    };
    let prior = m.prior();
    let sigma = prior.sigma();
    for (k, e) in eps.iter().enumerate() {
        let z: Vec<f64> = (0..4).map(|i| prior.mean[i] + sigma[i] * e[i]).collect();
        let mut alpha = Vec::new();
        let mut rgb = Vec::new();
        for t in &q.t {
            let s = m.decode(&z, ray.at(*t), ray.dir).unwrap();
            alpha.push(s.alpha);
            rgb.push(s.rgb);
        }
        let c = composite(&alpha, &rgb, &q.delta).unwrap();
        let d = expected_depth(&alpha, &q.delta, &q.t).unwrap();
        for i in 0..3 {
            let expect = c.color[i] + c.residual * bg[i];
            assert!((p.color_samples[k][i] - expect).abs() < 1e-10);
        }
        assert!((p.depth_samples[k] - d.depth).abs() < 1e-9);
    }
}

#[test]
fn chunking_does_not_change_results() {
    let m = model(5);
    let cam = Camera::look_at([0.0, 0.0, 4.0], [0.0; 3], [0.0, 1.0, 0.0], 8.0, 4, 3).unwrap();
    let rays = cam.rays(2.0, 6.0).unwrap();
    let nodes = rays
        .iter()
        .map(|r| midpoint_samples(r, 8).unwrap())
        .collect();
    let ids = (0..rays.len() as u64).collect();
    let batch = RayBatch::new(rays, nodes, ids).unwrap();
    for mode in [
        cfnerf::field::ModelMode::Cfnerf,
        cfnerf::field::ModelMode::SnerfBaseline,
    ] {
        let arch = Architecture {
            mode,
            ..Architecture::compact()
        };
        let m = if mode == m.mode() {
            m.clone()
        } else {
            FieldModel::new(arch, &mut rng::from_seed(6)).unwrap()
        };
        let lat = Latents::draw(mode, 4, &mut rng::from_seed(3));
        let a = render_rays(&m, &batch, &lat, [0.0; 3], 12).unwrap();
        let b = render_rays(&m, &batch, &lat, [0.0; 3], 5).unwrap();
        assert_eq!(a, b);
    }
}

fn trajectory() -> impl Strategy<Value = (Vec<f64>, Vec<[f64; 3]>, Vec<f64>)> {
    (2usize..24).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..20.0, n),
            prop::collection::vec(prop::array::uniform3(0.0f64..=1.0), n),
            prop::collection::vec(0.001f64..0.5, n),
        )
    })
}

proptest! {
    #[test]
    fn transmittance_and_weight_invariants((alpha, rgb, delta) in trajectory()) {
        let c = composite(&alpha, &rgb, &delta).unwrap();
        prop_assert_eq!(c.transmittance[0], 1.0);
        prop_assert!(c.transmittance.windows(2).all(|w| w[1] <= w[0]));
        let total: f64 = c.weights.iter().sum();
        prop_assert!(total <= 1.0 + 1e-12);
        prop_assert!((1.0 - total - c.residual).abs() < 1e-12);
        prop_assert!(c.color.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
        let mut t = Vec::with_capacity(delta.len());
        let mut acc = 2.0;
        for d in &delta {
            t.push(acc);
            acc += d;
        }
        let d = expected_depth(&alpha, &delta, &t).unwrap();
        if total > 0.0 {
            prop_assert!(!d.vacuum);
            prop_assert!(d.depth >= t[0] - 1e-9 && d.depth <= t[t.len() - 1] + 1e-9);
        } else {
            prop_assert!(d.vacuum && d.depth == 0.0);
        }
    }

    #[test]
    fn pixel_rays_are_unit_and_inside_bounds(u in 0usize..16, v in 0usize..9, f in 1.0f64..50.0) {
        let cam = Camera::look_at([1.0, 2.0, 3.0], [0.0; 3], [0.0, 1.0, 0.0], f, 16, 9).unwrap();
        let r = cam.pixel_ray(u, v, 1.0, 2.0).unwrap();
        let n = (r.dir[0].powi(2) + r.dir[1].powi(2) + r.dir[2].powi(2)).sqrt();
        prop_assert!((n - 1.0).abs() < 1e-12);
    }
}

#[test]
fn many_samples_agree_with_a_large_reference() {
    let m = model(8);
    let ray = Ray::new([0.2, 0.0, 4.0], [0.0, 0.0, -1.0], 2.0, 6.0).unwrap();
    let q = midpoint_samples(&ray, 16).unwrap();
    let mut r = rng::from_seed(10);
    let big = render_pixel(
        &m,
        &ray,
        &q,
        &Latents::draw(m.mode(), 1024, &mut r),
        [0.0; 3],
    )
    .unwrap();
    let small = render_pixel(&m, &ray, &q, &Latents::draw(m.mode(), 32, &mut r), [0.0; 3]).unwrap();
    for c in 0..3 {
        let se = (big.color_var[c] / 32.0).sqrt();
        assert!((small.color_mean[c] - big.color_mean[c]).abs() <= 2.0 * se + 1e-12);
    }
}
