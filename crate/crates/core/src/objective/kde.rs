use std::f64::consts::PI;
use std::rc::Rc;

use crate::diff::{logsumexp, Graph, Tensor, Var};
use crate::error::{Error, Result};

fn check_bandwidth(h: f64) -> Result<()> {
    if !(h > 0.0) {
        return Err(Error::invalid(format!(
            "bandwidth must be positive, got {h}"
        )));
    }
    Ok(())
}

/// `-3 ln(h sqrt(2 pi))`, the log normalizer of an isotropic 3-D kernel.
fn log_norm(h: f64) -> f64 {
    -3.0 * (h * (2.0 * PI).sqrt()).ln()
}

/// `log (1/K) sum_k N(c; samples_k, h^2 I)`.
///
/// Arithmetic follows the graph version ([`kde_graph`]) operation by
/// operation so that both agree bit for bit.
pub fn kde_loglik(c: [f64; 3], samples: &[[f64; 3]], h: f64) -> Result<f64> {
    check_bandwidth(h)?;
    if samples.is_empty() {
        return Err(Error::invalid("KDE needs at least one sample"));
    }
    let scale = -0.5 / (h * h);
    let norm = log_norm(h);
    let terms: Vec<f64> = samples
        .iter()
        .map(|s| {
            let sq = (s[0] - c[0]).powi(2) + (s[1] - c[1]).powi(2) + (s[2] - c[2]).powi(2);
            sq * scale + norm
        })
        .collect();
    Ok(logsumexp(&terms) + -(samples.len() as f64).ln())
}

/// Per-ray KDE log-likelihoods `[B, 1]` from rendered colors `[K*B, 3]`
/// in `(k, b)` order.
pub fn kde_graph(
    g: &mut Graph,
    colors: Var,
    targets: &[[f64; 3]],
    samples: usize,
    h: f64,
) -> Result<Var> {
    check_bandwidth(h)?;
    let b = targets.len();
    let order: Rc<[usize]> = (0..b * samples)
        .map(|i| (i % samples) * b + i / samples)
        .collect();
    let by_ray = g.gather_rows(colors, order);
    let mut tiled = Vec::with_capacity(b * samples * 3);
    for t in targets {
        for _ in 0..samples {
            tiled.extend_from_slice(t);
        }
    }
    let tiled = g.input(Tensor::matrix(b * samples, 3, tiled)?);
    let diff = g.sub(by_ray, tiled);
    let sq = g.square(diff);
    let sq = g.sum_cols(sq);
    let scaled = g.scale(sq, -0.5 / (h * h));
    let terms = g.offset(scaled, log_norm(h));
    let grid = g.reshape(terms, b, samples);
    let lse = g.logsumexp_cols(grid);
    Ok(g.offset(lse, -(samples as f64).ln()))
}
