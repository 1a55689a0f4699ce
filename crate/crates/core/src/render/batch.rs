//! Batched differentiable rendering of `K` field samples along many rays.
//!
//! Sample rows are laid out `(k, b)` for per-ray outputs and `(k, b, n)` for
//! per-node values.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::{Conditioned, Decoded, FieldModel, ModelMode, ModelVars, LATENT_DIM};
use crate::rng;

use super::camera::Ray;
use super::quadrature::QuadratureNodes;

/// Rays with their quadrature nodes; every ray uses the same node count.
#[derive(Debug, Clone)]
pub struct RayBatch {
    pub rays: Vec<Ray>,
    pub nodes: Vec<QuadratureNodes>,
    /// Stable ray identifiers (pixel index), used to key per-ray noise.
    pub ids: Vec<u64>,
}

impl RayBatch {
    pub fn new(rays: Vec<Ray>, nodes: Vec<QuadratureNodes>, ids: Vec<u64>) -> Result<Self> {
        if rays.is_empty() || rays.len() != nodes.len() || rays.len() != ids.len() {
            return Err(Error::shape(
                "ray_batch",
                format!(
                    "{} rays, {} node sets, {} ids",
                    rays.len(),
                    nodes.len(),
                    ids.len()
                ),
            ));
        }
        let n = nodes[0].len();
        if nodes.iter().any(|q| q.len() != n) {
            return Err(Error::shape("ray_batch", "rays must share the node count"));
        }
        Ok(Self { rays, nodes, ids })
    }

    pub fn len(&self) -> usize {
        self.rays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rays.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes[0].len()
    }

    fn subset(&self, range: std::ops::Range<usize>) -> RayBatch {
        RayBatch {
            rays: self.rays[range.clone()].to_vec(),
            nodes: self.nodes[range.clone()].to_vec(),
            ids: self.ids[range].to_vec(),
        }
    }
}

/// Source of the standard-normal draws behind the `K` field samples.
#[derive(Debug, Clone, PartialEq)]
pub enum Latents {
    /// One standardized global latent per sample, shared by every point.
    Shared(Vec<Vec<f64>>),
    /// Independent per-point noise, reproducible per ray id.
    PerPoint { seed: u64, samples: usize },
}

impl Latents {
    /// Fresh draws suited to the model's posterior family.
    pub fn draw<R: Rng + ?Sized>(mode: ModelMode, samples: usize, rng: &mut R) -> Self {
        match mode {
            ModelMode::Cfnerf => Latents::Shared(
                (0..samples)
                    .map(|_| {
                        (0..LATENT_DIM)
                            .map(|_| rng.sample(StandardNormal))
                            .collect()
                    })
                    .collect(),
            ),
            ModelMode::SnerfBaseline => Latents::PerPoint {
                seed: rng.random(),
                samples,
            },
        }
    }

    pub fn samples(&self) -> usize {
        match self {
            Latents::Shared(e) => e.len(),
            Latents::PerPoint { samples, .. } => *samples,
        }
    }

    /// Noise rows for `ray_ids`, `(k, b, n)` order.
    pub fn eps_rows(&self, ray_ids: &[u64], nodes: usize) -> Tensor {
        let b = ray_ids.len();
        let k = self.samples();
        match self {
            Latents::Shared(eps) => crate::field::tile_eps(eps, b * nodes),
            Latents::PerPoint { seed, .. } => {
                let mut data = vec![0.0; k * b * nodes * LATENT_DIM];
                for (bi, id) in ray_ids.iter().enumerate() {
                    let mut r = rng::from_seed(rng::derive_indexed(*seed, *id));
                    for ki in 0..k {
                        for n in 0..nodes {
                            let row = (ki * b + bi) * nodes + n;
                            for c in 0..LATENT_DIM {
                                data[row * LATENT_DIM + c] = r.sample(StandardNormal);
                            }
                        }
                    }
                }
                Tensor::matrix(k * b * nodes, LATENT_DIM, data).expect("sized above")
            }
        }
    }
}

/// Graph handles of a batched render.
#[derive(Debug, Clone)]
pub struct RenderVars {
    pub samples: usize,
    pub rays: usize,
    pub nodes: usize,
    /// `[K*B, 3]`.
    pub color: Var,
    /// Expected depth `sum_i w_i t_i / sum_i w_i` (0 for empty rays), `[K*B, 1]`.
    pub depth: Var,
    /// `sum_i w_i`, `[K*B, 1]`.
    pub opacity: Var,
    pub decoded: Decoded,
    pub cond: Conditioned,
}

fn channel_selector(nodes: usize) -> Tensor {
    let mut t = Tensor::zeros(nodes * 3, 3);
    for n in 0..nodes {
        for c in 0..3 {
            t.data_mut()[(n * 3 + c) * 3 + c] = 1.0;
        }
    }
    t
}

/// Render `K` samples of every ray in `batch` onto `g`.
#[allow(clippy::too_many_arguments)]
pub fn render_graph(
    g: &mut Graph,
    model: &FieldModel,
    vars: &ModelVars,
    batch: &RayBatch,
    latents: &Latents,
    background: [f64; 3],
    with_log_q: bool,
) -> Result<RenderVars> {
    let (b, n, k) = (batch.len(), batch.node_count(), latents.samples());
    if k == 0 {
        return Err(Error::invalid("need at least one latent sample"));
    }
    let mut xs = Vec::with_capacity(b * n);
    let mut ds = Vec::with_capacity(b * n);
    for (ray, q) in batch.rays.iter().zip(&batch.nodes) {
        for t in &q.t {
            xs.push(ray.at(*t));
            ds.push(ray.dir);
        }
    }
    let cond = model.condition(g, vars, &xs, &ds);
    let eps = latents.eps_rows(&batch.ids, n);
    let decoded = model.decode_rows(g, vars, &cond, k, &eps, with_log_q)?;

    let mut delta = Vec::with_capacity(k * b * n);
    let mut depth_t = Vec::with_capacity(k * b * n);
    for _ in 0..k {
        for q in &batch.nodes {
            delta.extend_from_slice(&q.delta);
            depth_t.extend_from_slice(&q.t);
        }
    }
    let delta = g.input(Tensor::matrix(k * b, n, delta)?);
    let depth_t = g.input(Tensor::matrix(k * b, n, depth_t)?);

    let alpha = g.reshape(decoded.alpha, k * b, n);
    let tau = g.mul(alpha, delta);
    let acc = g.cumsum_exclusive(tau);
    let neg_acc = g.neg(acc);
    let trans = g.exp(neg_acc);
    let neg_tau = g.neg(tau);
    let keep = g.exp(neg_tau);
    let neg_keep = g.neg(keep);
    let absorb = g.offset(neg_keep, 1.0);
    let w = g.mul(trans, absorb);

    let w_col = g.reshape(w, k * b * n, 1);
    let weighted = g.mul(decoded.rgb, w_col);
    let weighted = g.reshape(weighted, k * b, n * 3);
    let sel = g.input(channel_selector(n));
    let mut color = g.matmul(weighted, sel);
    let opacity = g.sum_cols(w);
    if background != [0.0; 3] {
        let neg_op = g.neg(opacity);
        let residual = g.offset(neg_op, 1.0);
        let bg = g.input(Tensor::row(&background));
        let bg_term = g.mul(residual, bg);
        color = g.add(color, bg_term);
    }
    let wt = g.mul(w, depth_t);
    let wt = g.sum_cols(wt);
    // empty rows divide by 1 instead of 0; their numerator is 0
    let empty: Vec<f64> = g
        .value(opacity)
        .data()
        .iter()
        .map(|o| if *o == 0.0 { 1.0 } else { 0.0 })
        .collect();
    let empty = g.input(Tensor::matrix(k * b, 1, empty)?);
    let denom = g.add(opacity, empty);
    let depth = g.div(wt, denom);
    Ok(RenderVars {
        samples: k,
        rays: b,
        nodes: n,
        color,
        depth,
        opacity,
        decoded,
        cond,
    })
}

/// Per-pixel predictive distribution from `K` rendered samples.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPrediction {
    pub color_samples: Vec<[f64; 3]>,
    pub depth_samples: Vec<f64>,
    pub opacity_samples: Vec<f64>,
    pub color_mean: [f64; 3],
    /// Population variance over the `K` samples, per channel.
    pub color_var: [f64; 3],
    pub depth_mean: f64,
    pub depth_var: f64,
}

impl PixelPrediction {
    pub fn from_samples(
        color_samples: Vec<[f64; 3]>,
        depth_samples: Vec<f64>,
        opacity_samples: Vec<f64>,
    ) -> Self {
        let k = color_samples.len() as f64;
        // shifted by the first sample so identical samples average exactly
        let first = color_samples[0];
        let mut color_mean = first;
        for c in &color_samples {
            for i in 0..3 {
                color_mean[i] += (c[i] - first[i]) / k;
            }
        }
        let mut color_var = [0.0; 3];
        for c in &color_samples {
            for i in 0..3 {
                color_var[i] += (c[i] - color_mean[i]).powi(2) / k;
            }
        }
        let d0 = depth_samples[0];
        let depth_mean = d0 + depth_samples.iter().map(|d| d - d0).sum::<f64>() / k;
        let depth_var = depth_samples
            .iter()
            .map(|d| (d - depth_mean).powi(2))
            .sum::<f64>()
            / k;
        Self {
            color_samples,
            depth_samples,
            opacity_samples,
            color_mean,
            color_var,
            depth_mean,
            depth_var,
        }
    }

    /// Channel-averaged color variance.
    pub fn color_var_mean(&self) -> f64 {
        self.color_var.iter().sum::<f64>() / 3.0
    }

    /// Mean opacity; zero marks a vacuum prediction.
    pub fn opacity_mean(&self) -> f64 {
        self.opacity_samples.iter().sum::<f64>() / self.opacity_samples.len() as f64
    }
}

/// Evaluate predictions for every ray, `chunk` rays per graph.
pub fn render_rays(
    model: &FieldModel,
    batch: &RayBatch,
    latents: &Latents,
    background: [f64; 3],
    chunk: usize,
) -> Result<Vec<PixelPrediction>> {
    let chunk = chunk.max(1);
    let k = latents.samples();
    let mut out = Vec::with_capacity(batch.len());
    let mut start = 0;
    while start < batch.len() {
        let end = (start + chunk).min(batch.len());
        let sub = batch.subset(start..end);
        let mut g = Graph::new();
        let vars = model.bind(&mut g);
        let rv = render_graph(&mut g, model, &vars, &sub, latents, background, false)?;
        g.check()?;
        let color = g.value(rv.color);
        let depth = g.value(rv.depth);
        let opacity = g.value(rv.opacity);
        let b = sub.len();
        for bi in 0..b {
            let rows = (0..k).map(|ki| ki * b + bi);
            let cs = rows
                .clone()
                .map(|r| {
                    let c = color.row_slice(r);
                    [c[0], c[1], c[2]]
                })
                .collect();
            let ds = rows.clone().map(|r| depth.get(r, 0)).collect();
            let os = rows.map(|r| opacity.get(r, 0)).collect();
            out.push(PixelPrediction::from_samples(cs, ds, os));
        }
        start = end;
    }
    Ok(out)
}

/// Single-ray convenience wrapper around [`render_rays`].
pub fn render_pixel(
    model: &FieldModel,
    ray: &Ray,
    nodes: &QuadratureNodes,
    latents: &Latents,
    background: [f64; 3],
) -> Result<PixelPrediction> {
    let batch = RayBatch::new(vec![*ray], vec![nodes.clone()], vec![0])?;
    Ok(render_rays(model, &batch, latents, background, 1)?.remove(0))
}
