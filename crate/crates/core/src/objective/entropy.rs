use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::field::{FieldModel, ModelVars, LATENT_DIM};
use crate::scenes::Aabb;

/// Monte Carlo points for the entropy term: position uniform in the scene
/// box, direction uniform on the sphere and one latent draw per point.
#[derive(Debug, Clone, PartialEq)]
pub struct EntropyDraws {
    pub xs: Vec<[f64; 3]>,
    pub ds: Vec<[f64; 3]>,
    /// Standard-normal rows `[M, 4]`.
    pub eps: Tensor,
}

impl EntropyDraws {
    pub fn sample<R: Rng + ?Sized>(bounds: &Aabb, count: usize, rng: &mut R) -> Result<Self> {
        if bounds.is_degenerate() {
            return Err(Error::invalid("entropy bounds box is degenerate"));
        }
        if count == 0 {
            return Err(Error::invalid("entropy needs at least one sample"));
        }
        let mut xs = Vec::with_capacity(count);
        let mut ds = Vec::with_capacity(count);
        let mut eps = Vec::with_capacity(count * LATENT_DIM);
        for _ in 0..count {
            xs.push(std::array::from_fn(|i| {
                rng.random_range(bounds.min[i]..bounds.max[i])
            }));
            let d: [f64; 3] = loop {
                let v: [f64; 3] = std::array::from_fn(|_| rng.sample(StandardNormal));
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                if n > 1e-12 {
                    break [v[0] / n, v[1] / n, v[2] / n];
                }
            };
            ds.push(d);
            for _ in 0..LATENT_DIM {
                eps.push(rng.sample(StandardNormal));
            }
        }
        Ok(Self {
            xs,
            ds,
            eps: Tensor::matrix(count, LATENT_DIM, eps)?,
        })
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EntropyVars {
    /// Per-sample `log q(r) + log q(alpha)`, `[M, 1]`.
    pub per_sample: Var,
    /// Mean of `per_sample`: the negative-entropy estimate.
    pub neg_entropy: Var,
    /// Per-sample latent-space part (no activation Jacobians), `[M, 1]`.
    pub latent_per_sample: Var,
}

pub fn entropy_graph(
    g: &mut Graph,
    model: &FieldModel,
    vars: &ModelVars,
    draws: &EntropyDraws,
) -> Result<EntropyVars> {
    let cond = model.condition(g, vars, &draws.xs, &draws.ds);
    let dec = model.decode_rows(g, vars, &cond, 1, &draws.eps, true)?;
    let lq = dec.log_q.expect("requested log densities");
    let per_sample = g.add(lq.rgb, lq.alpha);
    let neg_entropy = g.mean(per_sample);
    let latent_per_sample = g.add(lq.rgb_latent, lq.alpha_latent);
    Ok(EntropyVars {
        per_sample,
        neg_entropy,
        latent_per_sample,
    })
}

/// Negative-entropy estimate with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    pub neg_entropy: f64,
    pub std_error: f64,
    /// `E[log q(z_K)]` without the output-activation Jacobians.
    pub latent: f64,
    pub latent_std_error: f64,
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Evaluate the entropy term on fixed draws.
pub fn entropy_estimate(model: &FieldModel, draws: &EntropyDraws) -> Result<EntropyEstimate> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let ev = entropy_graph(&mut g, model, &vars, draws)?;
    g.check()?;
    let (neg_entropy, std_error) = mean_and_se(g.value(ev.per_sample).data());
    let (latent, latent_std_error) = mean_and_se(g.value(ev.latent_per_sample).data());
    Ok(EntropyEstimate {
        neg_entropy,
        std_error,
        latent,
        latent_std_error,
    })
}

/// Fresh draws from `rng`, then [`entropy_estimate`].
pub fn entropy_mc<R: Rng + ?Sized>(
    model: &FieldModel,
    count: usize,
    bounds: &Aabb,
    rng: &mut R,
) -> Result<EntropyEstimate> {
    let draws = EntropyDraws::sample(bounds, count, rng)?;
    entropy_estimate(model, &draws)
}
