use rand::Rng;

use crate::error::{Error, Result};

use super::camera::Ray;

/// Sample depths along a ray with their segment lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureNodes {
    pub t: Vec<f64>,
    pub delta: Vec<f64>,
}

impl QuadratureNodes {
    fn from_depths(t: Vec<f64>, far: f64) -> Self {
        let n = t.len();
        let delta = (0..n)
            .map(|i| {
                if i + 1 < n {
                    t[i + 1] - t[i]
                } else {
                    far - t[i]
                }
            })
            .collect();
        Self { t, delta }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

fn check_count(n: usize) -> Result<()> {
    if n < 2 {
        return Err(Error::invalid(format!(
            "need at least 2 nodes per ray, got {n}"
        )));
    }
    Ok(())
}

/// One uniform draw inside each of `n` equal bins of `[near, far]`.
pub fn stratified_samples<R: Rng + ?Sized>(
    ray: &Ray,
    n: usize,
    rng: &mut R,
) -> Result<QuadratureNodes> {
    check_count(n)?;
    let span = ray.far - ray.near;
    let t = (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            ray.near + (i as f64 + u) / n as f64 * span
        })
        .collect();
    Ok(QuadratureNodes::from_depths(t, ray.far))
}

/// Bin midpoints, the deterministic evaluation mode.
pub fn midpoint_samples(ray: &Ray, n: usize) -> Result<QuadratureNodes> {
    check_count(n)?;
    let span = ray.far - ray.near;
    let t = (0..n)
        .map(|i| ray.near + (i as f64 + 0.5) / n as f64 * span)
        .collect();
    Ok(QuadratureNodes::from_depths(t, ray.far))
}

/// Result of alpha compositing one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Composite {
    pub color: [f64; 3],
    pub weights: Vec<f64>,
    pub transmittance: Vec<f64>,
    /// Transmittance past the last node, `1 - sum(weights)`.
    pub residual: f64,
}

pub fn composite(alpha: &[f64], rgb: &[[f64; 3]], delta: &[f64]) -> Result<Composite> {
    if alpha.len() != rgb.len() || alpha.len() != delta.len() {
        return Err(Error::shape(
            "composite",
            format!(
                "{} densities, {} colors, {} lengths",
                alpha.len(),
                rgb.len(),
                delta.len()
            ),
        ));
    }
    if let Some(a) = alpha.iter().find(|a| !(**a >= 0.0)) {
        return Err(Error::invalid(format!("negative density {a}")));
    }
    let mut acc = 0.0f64;
    let mut color = [0.0; 3];
    let mut weights = Vec::with_capacity(alpha.len());
    let mut transmittance = Vec::with_capacity(alpha.len());
    for i in 0..alpha.len() {
        let ti = (-acc).exp();
        let tau = alpha[i] * delta[i];
        let w = ti * -(-tau).exp_m1();
        for c in 0..3 {
            color[c] += w * rgb[i][c];
        }
        transmittance.push(ti);
        weights.push(w);
        acc += tau;
    }
    Ok(Composite {
        color,
        weights,
        transmittance,
        residual: (-acc).exp(),
    })
}

/// Expected termination depth `sum_i w_i t_i / sum_i w_i`; 0 and `vacuum`
/// when the ray carries no weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthEstimate {
    pub depth: f64,
    pub vacuum: bool,
}

pub fn expected_depth(alpha: &[f64], delta: &[f64], t: &[f64]) -> Result<DepthEstimate> {
    if t.len() != alpha.len() {
        return Err(Error::shape(
            "expected_depth",
            format!("{} densities, {} depths", alpha.len(), t.len()),
        ));
    }
    let rgb = vec![[0.0; 3]; alpha.len()];
    let comp = composite(alpha, &rgb, delta)?;
    let total: f64 = comp.weights.iter().sum();
    if total == 0.0 {
        return Ok(DepthEstimate {
            depth: 0.0,
            vacuum: true,
        });
    }
    let weighted: f64 = comp.weights.iter().zip(t).map(|(w, t)| w * t).sum();
    Ok(DepthEstimate {
        depth: weighted / total,
        vacuum: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ray01() -> Ray {
        Ray {
            origin: [0.0; 3],
            dir: [0.0, 0.0, -1.0],
            near: 0.0,
            far: 1.0,
        }
    }

    #[test]
    fn midpoints_of_two_bins() {
        let q = midpoint_samples(&ray01(), 2).unwrap();
        assert_eq!(q.t, vec![0.25, 0.75]);
        assert_eq!(q.delta, vec![0.5, 0.25]);
    }

    #[test]
    fn empty_space_is_black_and_weightless() {
        let c = composite(&[0.0; 4], &[[0.3; 3]; 4], &[0.1; 4]).unwrap();
        assert_eq!(c.color, [0.0; 3]);
        assert!(c.weights.iter().all(|w| *w == 0.0));
        let d = expected_depth(&[0.0; 4], &[0.1; 4], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(d.depth, 0.0);
        assert!(d.vacuum);
    }

    #[test]
    fn single_segment_closed_form() {
        let (a, d, r) = (2.0, 0.3, [0.2, 0.5, 0.9]);
        let c = composite(&[a], &[r], &[d]).unwrap();
        for i in 0..3 {
            assert!((c.color[i] - (1.0 - (-a * d).exp()) * r[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn opaque_first_node_sets_depth() {
        let d = expected_depth(&[1e6, 0.0, 0.0], &[0.5; 3], &[1.0, 1.5, 2.0]).unwrap();
        assert!((d.depth - 1.0).abs() < 1e-12);
        assert!(!d.vacuum);
    }

    #[test]
    fn negative_density_is_rejected() {
        assert!(composite(&[0.1, -0.1], &[[0.0; 3]; 2], &[0.1; 2]).is_err());
    }

    #[test]
    fn reversing_a_trajectory_changes_the_color() {
        let alpha = [0.5, 3.0, 0.1];
        let rgb = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let delta = [0.4; 3];
        let fwd = composite(&alpha, &rgb, &delta).unwrap();
        let mut ra = alpha;
        let mut rr = rgb;
        ra.reverse();
        rr.reverse();
        let back = composite(&ra, &rr, &delta).unwrap();
        // front-to-back: red 1-e^-0.2, green e^-0.2 (1-e^-1.2), ...
        let red = 1.0 - (-0.2f64).exp();
        assert!((fwd.color[0] - red).abs() < 1e-15);
        assert!((fwd.color[0] - back.color[0]).abs() > 0.1);
    }
}
