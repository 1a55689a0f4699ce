use serde::{Deserialize, Serialize};

use crate::diff::{Gradients, Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::FieldModel;
use crate::render::{render_graph, Latents, RayBatch};

use super::entropy::{entropy_graph, EntropyDraws};
use super::kde::kde_graph;

/// Weights of the training objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub entropy_weight: f64,
    pub depth_weight: f64,
    pub bandwidth: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            entropy_weight: 0.01,
            depth_weight: 1e-2,
            bandwidth: 0.05,
        }
    }
}

/// Rays with ground truth and the latent draws shared across the batch.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub rays: RayBatch,
    pub colors: Vec<[f64; 3]>,
    /// Reference expected depths, one per ray; 0 marks an empty ray, which
    /// the depth term skips.
    pub depths: Option<Vec<f64>>,
    pub latents: Latents,
    pub background: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub nll: f64,
    pub neg_entropy: f64,
    pub depth_reg: f64,
    pub total: f64,
    pub entropy_weight: f64,
    pub depth_weight: f64,
}

/// Graph handles of the assembled objective.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub nll: Var,
    pub neg_entropy: Option<Var>,
    pub depth_reg: Option<Var>,
    pub total: Var,
}

/// Build the objective on `g` using parameters from `store`.
///
/// The entropy term is skipped when its weight is zero and the depth term
/// when its weight is zero or no reference depths are given. The depth term
/// is the mean squared error over samples of non-empty reference rays.
pub fn loss_graph(
    g: &mut Graph,
    model: &FieldModel,
    store: &ParamStore,
    batch: &TrainBatch,
    entropy: &EntropyDraws,
    cfg: &LossConfig,
) -> Result<LossVars> {
    if batch.colors.len() != batch.rays.len() {
        return Err(Error::shape(
            "batch_loss",
            format!(
                "{} colors for {} rays",
                batch.colors.len(),
                batch.rays.len()
            ),
        ));
    }
    if cfg.entropy_weight < 0.0 || cfg.depth_weight < 0.0 {
        return Err(Error::invalid("loss weights must be non-negative"));
    }
    let vars = model.bind_params(g, store);
    let k = batch.latents.samples();
    let rv = render_graph(
        g,
        model,
        &vars,
        &batch.rays,
        &batch.latents,
        batch.background,
        false,
    )?;
    let ll = kde_graph(g, rv.color, &batch.colors, k, cfg.bandwidth)?;
    let mean_ll = g.mean(ll);
    let nll = g.neg(mean_ll);
    let mut total = nll;

    let neg_entropy = if cfg.entropy_weight > 0.0 {
        let ev = entropy_graph(g, model, &vars, entropy)?;
        let weighted = g.scale(ev.neg_entropy, cfg.entropy_weight);
        total = g.add(total, weighted);
        Some(ev.neg_entropy)
    } else {
        None
    };

    let depth_reg = match (&batch.depths, cfg.depth_weight > 0.0) {
        (Some(depths), true) => {
            if depths.len() != batch.rays.len() {
                return Err(Error::shape("batch_loss", "one reference depth per ray"));
            }
            let tiled: Vec<f64> = (0..k).flat_map(|_| depths.iter().copied()).collect();
            let mask: Vec<f64> = tiled
                .iter()
                .map(|d| if *d > 0.0 { 1.0 } else { 0.0 })
                .collect();
            let count = mask.iter().sum::<f64>();
            let target = g.input(Tensor::matrix(tiled.len(), 1, tiled)?);
            let mask = g.input(Tensor::matrix(mask.len(), 1, mask)?);
            let diff = g.sub(rv.depth, target);
            let diff = g.mul(diff, mask);
            let sq = g.square(diff);
            let sum = g.sum(sq);
            let reg = g.scale(sum, 1.0 / count.max(1.0));
            let weighted = g.scale(reg, cfg.depth_weight);
            total = g.add(total, weighted);
            Some(reg)
        }
        _ => None,
    };
    Ok(LossVars {
        nll,
        neg_entropy,
        depth_reg,
        total,
    })
}

/// Evaluate the objective and its parameter gradients.
pub fn batch_loss(
    model: &FieldModel,
    batch: &TrainBatch,
    entropy: &EntropyDraws,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let mut g = Graph::new();
    let lv = loss_graph(&mut g, model, model.params(), batch, entropy, cfg)?;
    g.check()?;
    let breakdown = LossBreakdown {
        nll: g.scalar(lv.nll),
        neg_entropy: lv.neg_entropy.map_or(0.0, |v| g.scalar(v)),
        depth_reg: lv.depth_reg.map_or(0.0, |v| g.scalar(v)),
        total: g.scalar(lv.total),
        entropy_weight: cfg.entropy_weight,
        depth_weight: cfg.depth_weight,
    };
    let grads = g.backward(lv.total, &Tensor::scalar(1.0))?;
    Ok((breakdown, grads))
}
