use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::{Ray, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum Shape {
    Sphere { radius: f64 },
    Box { half_extents: Vec3 },
}

/// Homogeneous medium occupying one shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub center: Vec3,
    pub density: f64,
    pub albedo: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn contains(&self, p: Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn is_degenerate(&self) -> bool {
        (0..3).any(|i| !(self.max[i] > self.min[i]))
    }
}

impl Primitive {
    pub fn contains(&self, x: Vec3) -> bool {
        let r = [
            x[0] - self.center[0],
            x[1] - self.center[1],
            x[2] - self.center[2],
        ];
        match self.shape {
            Shape::Sphere { radius } => r[0] * r[0] + r[1] * r[1] + r[2] * r[2] <= radius * radius,
            Shape::Box { half_extents } => (0..3).all(|i| r[i].abs() <= half_extents[i]),
        }
    }

    fn aabb(&self) -> Aabb {
        let h = match self.shape {
            Shape::Sphere { radius } => [radius; 3],
            Shape::Box { half_extents } => half_extents,
        };
        Aabb {
            min: [
                self.center[0] - h[0],
                self.center[1] - h[1],
                self.center[2] - h[2],
            ],
            max: [
                self.center[0] + h[0],
                self.center[1] + h[1],
                self.center[2] + h[2],
            ],
        }
    }

    /// Parameter interval `[t0, t1]` where the line `o + t d` is inside.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let oc = [
            ray.origin[0] - self.center[0],
            ray.origin[1] - self.center[1],
            ray.origin[2] - self.center[2],
        ];
        let d = ray.dir;
        match self.shape {
            Shape::Sphere { radius } => {
                let b = oc[0] * d[0] + oc[1] * d[1] + oc[2] * d[2];
                let c = oc[0] * oc[0] + oc[1] * oc[1] + oc[2] * oc[2] - radius * radius;
                let disc = b * b - c;
                if disc <= 0.0 {
                    return None;
                }
                let s = disc.sqrt();
                Some((-b - s, -b + s))
            }
            Shape::Box { half_extents } => {
                let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
                for i in 0..3 {
                    if d[i] == 0.0 {
                        if oc[i].abs() > half_extents[i] {
                            return None;
                        }
                        continue;
                    }
                    let a = (-half_extents[i] - oc[i]) / d[i];
                    let b = (half_extents[i] - oc[i]) / d[i];
                    t0 = t0.max(a.min(b));
                    t1 = t1.min(a.max(b));
                }
                (t0 < t1).then_some((t0, t1))
            }
        }
    }
}

/// Closed-form volumetric scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticScene {
    pub primitives: Vec<Primitive>,
    #[serde(default)]
    pub background: [f64; 3],
    pub bounds: Aabb,
    pub near: f64,
    pub far: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum SceneFile {
    Full(AnalyticScene),
    List(Vec<Primitive>),
}

impl AnalyticScene {
    /// Scene from primitives alone: black background, bounds padded by 0.2
    /// around the primitives, near/far 2 and 6.
    pub fn from_primitives(primitives: Vec<Primitive>) -> Result<Self> {
        if primitives.is_empty() {
            return Err(Error::invalid("scene needs at least one primitive"));
        }
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &primitives {
            let b = p.aabb();
            for i in 0..3 {
                min[i] = min[i].min(b.min[i] - 0.2);
                max[i] = max[i].max(b.max[i] + 0.2);
            }
        }
        let scene = Self {
            primitives,
            background: [0.0; 3],
            bounds: Aabb { min, max },
            near: 2.0,
            far: 6.0,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        for (i, p) in self.primitives.iter().enumerate() {
            if !(p.density >= 0.0) {
                problems.push(format!("primitive {i}: density must be >= 0"));
            }
            if p.albedo.iter().any(|a| !(0.0..=1.0).contains(a)) {
                problems.push(format!("primitive {i}: albedo must lie in [0, 1]"));
            }
            let b = p.aabb();
            if !(self.bounds.contains(b.min) && self.bounds.contains(b.max)) {
                problems.push(format!("primitive {i} extends outside the scene bounds"));
            }
        }
        if self.background.iter().any(|a| !(0.0..=1.0).contains(a)) {
            problems.push("background must lie in [0, 1]".into());
        }
        if self.bounds.is_degenerate() {
            problems.push("scene bounds are degenerate".into());
        }
        if !(self.near > 0.0 && self.near < self.far) {
            problems.push(format!(
                "need 0 < near < far, got [{}, {}]",
                self.near, self.far
            ));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Parse a scene description: either a full scene object or a bare list
    /// of primitives.
    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        match file {
            SceneFile::Full(s) => {
                s.validate()?;
                Ok(s)
            }
            SceneFile::List(p) => Self::from_primitives(p),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }

    /// Density and density-weighted albedo at `x`; the direction is unused
    /// because the media are isotropic.
    pub fn field(&self, x: Vec3, _d: Vec3) -> (f64, [f64; 3]) {
        let mut alpha = 0.0;
        let mut rgb = [0.0; 3];
        for p in self.primitives.iter().filter(|p| p.contains(x)) {
            alpha += p.density;
            for c in 0..3 {
                rgb[c] += p.density * p.albedo[c];
            }
        }
        if alpha > 0.0 {
            rgb.iter_mut().for_each(|v| *v /= alpha);
            (alpha, rgb)
        } else {
            (0.0, self.background)
        }
    }

    /// Ground-truth color, depth and opacity of one ray.
    ///
    /// `n_dense` uniform cells over `[near, far]` with nodes at the cell
    /// midpoints. Each cell carries the exact cell-averaged density (from
    /// the analytic ray/primitive intervals) and the density-weighted mean
    /// albedo, so transmittance is exact at every cell boundary.
    pub fn oracle_render(&self, ray: &Ray, n_dense: usize) -> Result<OraclePixel> {
        if n_dense < 1024 {
            return Err(Error::invalid(format!(
                "n_dense must be >= 1024, got {n_dense}"
            )));
        }
        let spans: Vec<(f64, f64, &Primitive)> = self
            .primitives
            .iter()
            .filter_map(|p| {
                let (a, b) = p.intersect(ray)?;
                let (a, b) = (a.max(ray.near), b.min(ray.far));
                (a < b && p.density > 0.0).then_some((a, b, p))
            })
            .collect();
        let width = (ray.far - ray.near) / n_dense as f64;
        let mut acc = 0.0f64;
        let mut color = [0.0; 3];
        let mut depth = 0.0;
        let mut opacity = 0.0;
        for i in 0..n_dense {
            let lo = ray.near + i as f64 * width;
            let hi = lo + width;
            let mut tau = 0.0;
            let mut rgb_tau = [0.0; 3];
            for (a, b, p) in &spans {
                let overlap = (hi.min(*b) - lo.max(*a)).max(0.0);
                if overlap > 0.0 {
                    let t = p.density * overlap;
                    tau += t;
                    for c in 0..3 {
                        rgb_tau[c] += t * p.albedo[c];
                    }
                }
            }
            if tau == 0.0 {
                continue;
            }
            let w = (-acc).exp() * -(-tau).exp_m1();
            let mid = lo + 0.5 * width;
            for c in 0..3 {
                color[c] += w * rgb_tau[c] / tau;
            }
            depth += w * mid;
            opacity += w;
            acc += tau;
        }
        let residual = (-acc).exp();
        for c in 0..3 {
            color[c] += residual * self.background[c];
        }
        if opacity > 0.0 {
            depth /= opacity;
        }
        Ok(OraclePixel {
            color,
            depth,
            opacity,
            vacuum: opacity == 0.0,
        })
    }

    /// Entry distance of the first primitive hit inside `[near, far]`.
    pub fn first_hit(&self, ray: &Ray) -> Option<f64> {
        self.primitives
            .iter()
            .filter(|p| p.density > 0.0)
            .filter_map(|p| p.intersect(ray))
            .filter(|(a, b)| *b > ray.near && *a < ray.far)
            .map(|(a, _)| a.max(ray.near))
            .min_by(f64::total_cmp)
    }

    /// Transmittance along the segment `[t0, t1]` of `ray`.
    pub fn transmittance(&self, ray: &Ray, t0: f64, t1: f64) -> f64 {
        let tau: f64 = self
            .primitives
            .iter()
            .filter_map(|p| {
                let (a, b) = p.intersect(ray)?;
                let overlap = (b.min(t1) - a.max(t0)).max(0.0);
                Some(p.density * overlap)
            })
            .sum();
        (-tau).exp()
    }
}

/// Ground truth of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OraclePixel {
    pub color: [f64; 3],
    /// Expected termination depth, 0 when `vacuum`.
    pub depth: f64,
    pub opacity: f64,
    pub vacuum: bool,
}

fn sphere(center: Vec3, radius: f64, density: f64, albedo: [f64; 3]) -> Primitive {
    Primitive {
        shape: Shape::Sphere { radius },
        center,
        density,
        albedo,
    }
}

/// Two separated spheres with distinct albedos.
pub fn two_sphere() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![
            sphere([-0.45, 0.0, 0.0], 0.4, 8.0, [0.9, 0.3, 0.2]),
            sphere([0.5, 0.1, -0.2], 0.35, 8.0, [0.2, 0.4, 0.9]),
        ],
        background: [0.0; 3],
        bounds: Aabb {
            min: [-1.2; 3],
            max: [1.2; 3],
        },
        near: 2.0,
        far: 6.0,
    }
}

/// A small sphere hidden behind a large one when seen from `+z`.
pub fn occlusion() -> AnalyticScene {
    AnalyticScene {
        primitives: vec![
            sphere([0.0, 0.0, 0.8], 0.65, 8.0, [0.85, 0.75, 0.2]),
            sphere([0.0, 0.0, -0.8], 0.35, 8.0, [0.2, 0.8, 0.35]),
        ],
        background: [0.0; 3],
        bounds: Aabb {
            min: [-1.6; 3],
            max: [1.6; 3],
        },
        near: 2.0,
        far: 6.0,
    }
}

pub fn builtin(name: &str) -> Option<AnalyticScene> {
    match name {
        "two-sphere" => Some(two_sphere()),
        "occlusion" => Some(occlusion()),
        _ => None,
    }
}
