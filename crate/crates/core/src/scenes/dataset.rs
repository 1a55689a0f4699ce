use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{quantize_u8, read_pfm, read_png_rgb, write_pfm, write_png, Raster};
use crate::render::{Camera, Ray, Vec3};

use super::analytic::AnalyticScene;

pub const MANIFEST_VERSION: u32 = 1;

/// Camera placement on a horizontal arc around `target`.
///
/// Azimuth 0 looks from `+z`; positive azimuths move toward `+x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraRig {
    pub radius: f64,
    pub elevation_deg: f64,
    pub train_arc_deg: [f64; 2],
    pub test_arc_deg: [f64; 2],
    pub fov_deg: f64,
    /// Uniform azimuth jitter applied to training views.
    pub jitter_deg: f64,
    pub target: Vec3,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self {
            radius: 4.0,
            elevation_deg: 15.0,
            train_arc_deg: [-45.0, 45.0],
            test_arc_deg: [-15.0, 15.0],
            fov_deg: 40.0,
            jitter_deg: 1.0,
            target: [0.0; 3],
        }
    }
}

impl CameraRig {
    /// Training views within +-10 degrees of `+z`, test views at 60 degrees,
    /// where the back sphere is fully visible beside the front one.
    pub fn occlusion() -> Self {
        Self {
            elevation_deg: 0.0,
            train_arc_deg: [-10.0, 10.0],
            test_arc_deg: [60.0, 60.0],
            ..Self::default()
        }
    }

    pub fn for_builtin(name: &str) -> Self {
        match name {
            "occlusion" => Self::occlusion(),
            _ => Self::default(),
        }
    }

    fn azimuths(arc: [f64; 2], n: usize) -> Vec<f64> {
        if n == 1 {
            return vec![0.5 * (arc[0] + arc[1])];
        }
        (0..n)
            .map(|i| arc[0] + (arc[1] - arc[0]) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn camera(&self, azimuth_deg: f64, width: usize, height: usize) -> Result<Camera> {
        let (az, el) = (azimuth_deg.to_radians(), self.elevation_deg.to_radians());
        let origin = [
            self.target[0] + self.radius * az.sin() * el.cos(),
            self.target[1] + self.radius * el.sin(),
            self.target[2] + self.radius * az.cos() * el.cos(),
        ];
        let focal = 0.5 * width as f64 / (0.5 * self.fov_deg.to_radians()).tan();
        Camera::look_at(origin, self.target, [0.0, 1.0, 0.0], focal, width, height)
    }
}

/// One rendered view with its analytic ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub image: Raster,
    pub depth: Raster,
    pub opacity: Raster,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayDataset {
    pub scene: AnalyticScene,
    pub views: Vec<View>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestView {
    name: String,
    pose: Vec<f64>,
    image: String,
    depth: String,
    opacity: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    width: usize,
    height: usize,
    focal: f64,
    near: f64,
    far: f64,
    scene: AnalyticScene,
    views: Vec<ManifestView>,
    train: Vec<usize>,
    test: Vec<usize>,
}

/// Render every pixel of `camera` with the dense oracle.
///
/// Colors are stored at 8-bit precision and depth/opacity at f32 precision,
/// the precision of the on-disk formats.
pub fn render_view(scene: &AnalyticScene, camera: &Camera, n_dense: usize) -> Result<View> {
    let (w, h) = (camera.width, camera.height);
    let mut image = Raster::new(w, h, 3);
    let mut depth = Raster::new(w, h, 1);
    let mut opacity = Raster::new(w, h, 1);
    for (i, ray) in camera.rays(scene.near, scene.far)?.iter().enumerate() {
        let px = scene.oracle_render(ray, n_dense)?;
        for c in 0..3 {
            image.pixel_mut(i)[c] = f64::from(quantize_u8(px.color[c])) / 255.0;
        }
        depth.data[i] = f64::from(px.depth as f32);
        opacity.data[i] = f64::from(px.opacity as f32);
    }
    Ok(View {
        camera: camera.clone(),
        image,
        depth,
        opacity,
    })
}

/// Views on the rig's arcs: `n_train` training views followed by `n_test`
/// held-out views.
pub fn generate_dataset<R: Rng + ?Sized>(
    scene: &AnalyticScene,
    rig: &CameraRig,
    n_train: usize,
    n_test: usize,
    resolution: (usize, usize),
    n_dense: usize,
    rng: &mut R,
) -> Result<RayDataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::invalid("need at least one train and one test view"));
    }
    if resolution.0 == 0 || resolution.1 == 0 {
        return Err(Error::invalid("resolution must be at least 1x1"));
    }
    scene.validate()?;
    let mut views = Vec::with_capacity(n_train + n_test);
    for az in CameraRig::azimuths(rig.train_arc_deg, n_train) {
        let jitter = if rig.jitter_deg > 0.0 {
            rng.random_range(-rig.jitter_deg..=rig.jitter_deg)
        } else {
            0.0
        };
        let cam = rig.camera(az + jitter, resolution.0, resolution.1)?;
        views.push(render_view(scene, &cam, n_dense)?);
    }
    for az in CameraRig::azimuths(rig.test_arc_deg, n_test) {
        let cam = rig.camera(az, resolution.0, resolution.1)?;
        views.push(render_view(scene, &cam, n_dense)?);
    }
    Ok(RayDataset {
        scene: scene.clone(),
        views,
        train: (0..n_train).collect(),
        test: (n_train..n_train + n_test).collect(),
    })
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        path: path.to_path_buf(),
        source,
    }
}

impl RayDataset {
    pub fn train_views(&self) -> impl Iterator<Item = &View> {
        self.train.iter().map(|i| &self.views[*i])
    }

    pub fn test_views(&self) -> impl Iterator<Item = &View> {
        self.test.iter().map(|i| &self.views[*i])
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let first = &self.views[0].camera;
        let mut views = Vec::with_capacity(self.views.len());
        for (i, v) in self.views.iter().enumerate() {
            let name = format!("view_{i:03}");
            let entry = ManifestView {
                pose: v.camera.pose().to_vec(),
                image: format!("{name}.png"),
                depth: format!("{name}_depth.pfm"),
                opacity: format!("{name}_opacity.pfm"),
                name,
            };
            write_png(&dir.join(&entry.image), &v.image)?;
            write_pfm(&dir.join(&entry.depth), &v.depth)?;
            write_pfm(&dir.join(&entry.opacity), &v.opacity)?;
            views.push(entry);
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            width: first.width,
            height: first.height,
            focal: first.focal,
            near: self.scene.near,
            far: self.scene.far,
            scene: self.scene.clone(),
            views,
            train: self.train.clone(),
            test: self.test.clone(),
        };
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&manifest).map_err(json_err(&path))?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(json_err(&path))?;
        let version = value.get("version").and_then(serde_json::Value::as_u64);
        match version {
            Some(v) if v == u64::from(MANIFEST_VERSION) => {}
            Some(v) => {
                return Err(Error::UnsupportedVersion {
                    what: path.display().to_string(),
                    found: v as u32,
                    supported: MANIFEST_VERSION,
                })
            }
            None => return Err(Error::corrupt(&path, "manifest has no version")),
        }
        let m: Manifest = serde_json::from_value(value).map_err(json_err(&path))?;
        let check = |img: &Raster, file: &Path, channels: usize| -> Result<()> {
            if img.width != m.width || img.height != m.height || img.channels != channels {
                return Err(Error::corrupt(
                    file,
                    format!(
                        "payload is {}x{}x{}, manifest says {}x{}x{channels}",
                        img.width, img.height, img.channels, m.width, m.height
                    ),
                ));
            }
            Ok(())
        };
        let mut views = Vec::with_capacity(m.views.len());
        for v in &m.views {
            let camera = Camera::from_pose(&v.pose, m.focal, m.width, m.height)?;
            let (ip, dp, op) = (dir.join(&v.image), dir.join(&v.depth), dir.join(&v.opacity));
            let image = read_png_rgb(&ip)?;
            check(&image, &ip, 3)?;
            let depth = read_pfm(&dp)?;
            check(&depth, &dp, 1)?;
            let opacity = read_pfm(&op)?;
            check(&opacity, &op, 1)?;
            views.push(View {
                camera,
                image,
                depth,
                opacity,
            });
        }
        let n = views.len();
        if m.train.is_empty() || m.test.is_empty() {
            return Err(Error::corrupt(
                &path,
                "need at least one train and one test view",
            ));
        }
        if m.train.iter().chain(&m.test).any(|i| *i >= n) {
            return Err(Error::corrupt(&path, "split index out of range"));
        }
        Ok(Self {
            scene: m.scene,
            views,
            train: m.train,
            test: m.test,
        })
    }

    /// Per pixel of view `view`: number of training cameras that see the
    /// pixel's first surface point (transmittance >= 0.5 and inside the
    /// image), or `None` when the pixel's ray hits nothing.
    pub fn observation_counts(&self, view: usize) -> Result<Vec<Option<usize>>> {
        let scene = &self.scene;
        let cam = &self.views[view].camera;
        let rays = cam.rays(scene.near, scene.far)?;
        let mut out = Vec::with_capacity(rays.len());
        for ray in &rays {
            let Some(hit) = scene.first_hit(ray) else {
                out.push(None);
                continue;
            };
            let p = ray.at(hit - 1e-3);
            let count = self
                .train_views()
                .filter(|v| sees(scene, &v.camera, p))
                .count();
            out.push(Some(count));
        }
        Ok(out)
    }
}

fn sees(scene: &AnalyticScene, cam: &Camera, p: Vec3) -> bool {
    let rel = [
        p[0] - cam.origin[0],
        p[1] - cam.origin[1],
        p[2] - cam.origin[2],
    ];
    let r = &cam.rotation;
    let local: Vec<f64> = (0..3)
        .map(|j| (0..3).map(|i| r[i][j] * rel[i]).sum())
        .collect();
    if local[2] >= 0.0 {
        return false;
    }
    let u = local[0] / -local[2] * cam.focal + cam.width as f64 / 2.0;
    let v = -local[1] / -local[2] * cam.focal + cam.height as f64 / 2.0;
    if !(0.0..cam.width as f64).contains(&u) || !(0.0..cam.height as f64).contains(&v) {
        return false;
    }
    let dist = (rel[0] * rel[0] + rel[1] * rel[1] + rel[2] * rel[2]).sqrt();
    let ray = Ray {
        origin: cam.origin,
        dir: [rel[0] / dist, rel[1] / dist, rel[2] / dist],
        near: 0.0,
        far: dist,
    };
    scene.transmittance(&ray, 0.0, dist) >= 0.5
}
