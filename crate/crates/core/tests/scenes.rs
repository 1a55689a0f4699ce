use std::path::Path;

use cfnerf::render::{Camera, Ray};
use cfnerf::rng;
use cfnerf::scenes::{
    generate_dataset, occlusion, two_sphere, Aabb, AnalyticScene, CameraRig, Primitive, RayDataset,
    Shape,
};
use cfnerf::Error;
use rand::Rng;

fn red_sphere() -> Primitive {
    Primitive {
        shape: Shape::Sphere { radius: 0.5 },
        center: [0.0; 3],
        density: 5.0,
        albedo: [1.0, 0.0, 0.0],
    }
}

fn ray(origin: [f64; 3], dir: [f64; 3], near: f64, far: f64) -> Ray {
    let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
    Ray::new(origin, [dir[0] / n, dir[1] / n, dir[2] / n], near, far).unwrap()
}

#[test]
fn field_membership_cases() {
    let mut scene = AnalyticScene::from_primitives(vec![red_sphere()]).unwrap();
    assert_eq!(scene.field([2.0, 0.0, 0.0], [0.0, 0.0, 1.0]).0, 0.0);
    assert_eq!(
        scene.field([0.1, 0.0, 0.0], [0.0, 0.0, 1.0]),
        (5.0, [1.0, 0.0, 0.0])
    );
    scene.primitives.push(Primitive {
        shape: Shape::Box {
            half_extents: [0.3; 3],
        },
        center: [0.2, 0.0, 0.0],
        density: 3.0,
        albedo: [0.0, 0.0, 1.0],
    });
    let (a, r) = scene.field([0.1, 0.0, 0.0], [1.0, 0.0, 0.0]);
    assert_eq!(a, 8.0);
    assert!((r[0] - 5.0 / 8.0).abs() < 1e-15 && (r[2] - 3.0 / 8.0).abs() < 1e-15);
    // density does not depend on direction
    assert_eq!(
        scene.field([0.1, 0.2, 0.0], [1.0, 0.0, 0.0]),
        scene.field([0.1, 0.2, 0.0], [0.0, -1.0, 0.0])
    );
}

#[test]
fn missing_ray_returns_background_and_vacuum() {
    let mut scene = AnalyticScene::from_primitives(vec![red_sphere()]).unwrap();
    scene.background = [0.1, 0.2, 0.3];
    let px = scene
        .oracle_render(&ray([0.0, 3.0, 4.0], [0.0, 0.0, -1.0], 2.0, 6.0), 1024)
        .unwrap();
    assert_eq!(px.color, [0.1, 0.2, 0.3]);
    assert!(px.vacuum);
    assert_eq!(px.depth, 0.0);
}

#[test]
fn opaque_sphere_depth_is_entry_distance() {
    let mut p = red_sphere();
    p.density = 1e5;
    let scene = AnalyticScene::from_primitives(vec![p]).unwrap();
    let r = ray([0.1, 0.2, 4.0], [0.0, 0.0, -1.0], 2.0, 6.0);
    let px = scene.oracle_render(&r, 8192).unwrap();
    let entry = 4.0 - (0.25f64 - 0.05).sqrt();
    assert!((px.depth - entry).abs() < 1e-3, "{} vs {entry}", px.depth);
    assert!((px.opacity - 1.0).abs() < 1e-12);
}

#[test]
fn dense_quadrature_is_converged() {
    let scene = two_sphere();
    let mut r = rng::from_seed(8);
    for _ in 0..20 {
        let target = [
            r.random_range(-0.8..0.8),
            r.random_range(-0.5..0.5),
            r.random_range(-0.5..0.5),
        ];
        let o = [0.5, 1.0, 4.0];
        let d = [target[0] - o[0], target[1] - o[1], target[2] - o[2]];
        let ray = ray(o, d, 2.0, 6.0);
        let a = scene.oracle_render(&ray, 2048).unwrap();
        let b = scene.oracle_render(&ray, 4096).unwrap();
        for c in 0..3 {
            assert!((a.color[c] - b.color[c]).abs() < 1e-4);
        }
    }
}

#[test]
fn overlapping_media_converge_monotonically() {
    let scene = AnalyticScene::from_primitives(vec![
        red_sphere(),
        Primitive {
            shape: Shape::Sphere { radius: 0.4 },
            center: [0.3, 0.0, 0.1],
            density: 2.0,
            albedo: [0.0, 1.0, 0.5],
        },
    ])
    .unwrap();
    let rays: Vec<Ray> = (0..12)
        .map(|i| {
            let y = -0.3 + 0.05 * i as f64;
            ray([0.0, 0.0, 4.0], [0.25, y, -4.0], 2.0, 6.0)
        })
        .collect();
    let reference: Vec<_> = rays
        .iter()
        .map(|r| scene.oracle_render(r, 1 << 17).unwrap())
        .collect();
    let mut last = f64::INFINITY;
    for n in [1024, 2048, 4096, 8192] {
        let worst = rays
            .iter()
            .zip(&reference)
            .map(|(r, gt)| {
                let px = scene.oracle_render(r, n).unwrap();
                (0..3)
                    .map(|c| (px.color[c] - gt.color[c]).abs())
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        assert!(worst <= last, "n={n}: {worst} > {last}");
        last = worst;
    }
}

#[test]
fn dataset_counts_range_and_determinism() {
    let scene = two_sphere();
    let rig = CameraRig::default();
    let a = generate_dataset(&scene, &rig, 4, 2, (12, 10), 1024, &mut rng::from_seed(3)).unwrap();
    let b = generate_dataset(&scene, &rig, 4, 2, (12, 10), 1024, &mut rng::from_seed(3)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.views.len(), 6);
    assert_eq!((a.train.len(), a.test.len()), (4, 2));
    for v in &a.views {
        assert_eq!(v.image.pixels(), 120);
        assert!(v.image.data.iter().all(|c| (0.0..=1.0).contains(c)));
    }
    assert!(generate_dataset(&scene, &rig, 0, 2, (4, 4), 1024, &mut rng::from_seed(3)).is_err());
    assert!(generate_dataset(&scene, &rig, 1, 1, (0, 4), 1024, &mut rng::from_seed(3)).is_err());
}

#[test]
fn forty_eight_pixel_views() {
    let ds = generate_dataset(
        &two_sphere(),
        &CameraRig::default(),
        4,
        2,
        (48, 48),
        1024,
        &mut rng::from_seed(1),
    )
    .unwrap();
    assert_eq!(ds.views.len(), 6);
    assert!(ds.views.iter().all(|v| v.image.pixels() == 2304));
}

fn small_dataset() -> RayDataset {
    generate_dataset(
        &two_sphere(),
        &CameraRig::default(),
        2,
        1,
        (8, 6),
        1024,
        &mut rng::from_seed(5),
    )
    .unwrap()
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset();
    ds.save(dir.path()).unwrap();
    let back = RayDataset::load(dir.path()).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn truncated_payload_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset().save(dir.path()).unwrap();
    let victim = dir.path().join("view_001_depth.pfm");
    let bytes = std::fs::read(&victim).unwrap();
    std::fs::write(&victim, &bytes[..bytes.len() - 5]).unwrap();
    let err = RayDataset::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("view_001_depth.pfm"), "{err}");
}

#[test]
fn unknown_manifest_version_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    small_dataset().save(dir.path()).unwrap();
    let path = dir.path().join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replacen("\"version\": 1", "\"version\": 7", 1)).unwrap();
    match RayDataset::load(dir.path()) {
        Err(Error::UnsupportedVersion { found: 7, .. }) => {}
        other => panic!("expected unsupported version, got {other:?}"),
    }
}

#[test]
fn payload_dims_must_match_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_dataset();
    ds.save(dir.path()).unwrap();
    let wrong = cfnerf::raster::Raster::new(3, 3, 1);
    cfnerf::raster::write_pfm(&dir.path().join("view_000_opacity.pfm"), &wrong).unwrap();
    let err = RayDataset::load(dir.path()).unwrap_err();
    assert!(err.to_string().contains("view_000_opacity.pfm"), "{err}");
}

#[test]
fn scene_json_accepts_list_or_object() {
    let list = r#"[{"shape": "sphere", "radius": 0.5, "center": [0, 0, 0],
                   "density": 5.0, "albedo": [1, 0, 0]}]"#;
    let s = AnalyticScene::from_json(list, Path::new("s.json")).unwrap();
    assert_eq!(s.primitives, vec![red_sphere()]);
    let full = serde_json::to_string(&occlusion()).unwrap();
    assert_eq!(
        AnalyticScene::from_json(&full, Path::new("o.json")).unwrap(),
        occlusion()
    );
    let bad = r#"[{"shape": "sphere", "radius": 0.5, "center": [0, 0, 0],
                  "density": -1.0, "albedo": [1, 0, 2]}]"#;
    match AnalyticScene::from_json(bad, Path::new("b.json")) {
        Err(Error::Config(problems)) => assert_eq!(problems.len(), 2),
        other => panic!("{other:?}"),
    }
    let mut s = two_sphere();
    s.bounds = Aabb {
        min: [0.0; 3],
        max: [0.0; 3],
    };
    assert!(s.validate().is_err());
}

#[test]
fn occlusion_scene_hides_the_back_sphere() {
    let ds = generate_dataset(
        &occlusion(),
        &CameraRig::occlusion(),
        4,
        1,
        (24, 24),
        1024,
        &mut rng::from_seed(2),
    )
    .unwrap();
    let counts = ds.observation_counts(ds.test[0]).unwrap();
    let unobserved = counts.iter().filter(|c| **c == Some(0)).count();
    let observed = counts
        .iter()
        .filter(|c| matches!(c, Some(n) if *n >= 3))
        .count();
    assert!(unobserved >= 10, "unobserved {unobserved}");
    assert!(observed >= 10, "observed {observed}");
    // no training pixel sees the back sphere's albedo
    let cam: &Camera = &ds.views[ds.train[0]].camera;
    let scene = &ds.scene;
    for r in cam.rays(scene.near, scene.far).unwrap() {
        if let Some(hit) = scene.first_hit(&r) {
            let p = r.at(hit + 1e-6);
            assert!(p[2] > 0.0, "training ray reaches the back sphere first");
        }
    }
}
