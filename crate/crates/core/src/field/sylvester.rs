//! Sylvester flow step `z' = z + A tanh(B z + b)` on plain vectors.
//!
//! `A` is `D x M`, `B` is `M x D`, both row-major. The Jacobian
//! `I_D + A diag(tanh'(Bz + b)) B` has the same determinant as the `M x M`
//! matrix `I_M + diag(tanh'(Bz + b)) B A`.

use crate::diff::linalg;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SylvesterParams {
    pub dim: usize,
    pub bottleneck: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub bias: Vec<f64>,
}

impl SylvesterParams {
    pub fn identity(dim: usize, bottleneck: usize) -> Self {
        Self {
            dim,
            bottleneck,
            a: vec![0.0; dim * bottleneck],
            b: vec![0.0; bottleneck * dim],
            bias: vec![0.0; bottleneck],
        }
    }

    fn pre_activation(&self, z: &[f64]) -> Vec<f64> {
        let (d, m) = (self.dim, self.bottleneck);
        (0..m)
            .map(|i| self.bias[i] + (0..d).map(|j| self.b[i * d + j] * z[j]).sum::<f64>())
            .collect()
    }

    /// `I_M + diag(tanh'(u)) B A`.
    fn small_jacobian(&self, u: &[f64]) -> Vec<f64> {
        let (d, m) = (self.dim, self.bottleneck);
        let mut out = vec![0.0; m * m];
        for i in 0..m {
            let tp = 1.0 - u[i].tanh().powi(2);
            for j in 0..m {
                let ba: f64 = (0..d).map(|p| self.b[i * d + p] * self.a[p * m + j]).sum();
                out[i * m + j] = f64::from(u8::from(i == j)) + tp * ba;
            }
        }
        out
    }

    /// Full `D x D` Jacobian `I + A diag(tanh'(u)) B` at `z`.
    pub fn jacobian(&self, z: &[f64]) -> Vec<f64> {
        let (d, m) = (self.dim, self.bottleneck);
        let u = self.pre_activation(z);
        let mut out = vec![0.0; d * d];
        for r in 0..d {
            for c in 0..d {
                let s: f64 = (0..m)
                    .map(|k| self.a[r * m + k] * (1.0 - u[k].tanh().powi(2)) * self.b[k * d + c])
                    .sum();
                out[r * d + c] = f64::from(u8::from(r == c)) + s;
            }
        }
        out
    }
}

/// One flow step: returns `z'` and `ln |det dz'/dz|`.
pub fn sylvester_step(z: &[f64], p: &SylvesterParams) -> Result<(Vec<f64>, f64)> {
    if z.len() != p.dim
        || p.a.len() != p.dim * p.bottleneck
        || p.b.len() != p.dim * p.bottleneck
        || p.bias.len() != p.bottleneck
    {
        return Err(Error::shape(
            "sylvester_step",
            format!(
                "z has {} entries for a D={} M={} flow",
                z.len(),
                p.dim,
                p.bottleneck
            ),
        ));
    }
    let (d, m) = (p.dim, p.bottleneck);
    let u = p.pre_activation(z);
    let t: Vec<f64> = u.iter().map(|v| v.tanh()).collect();
    let out: Vec<f64> = (0..d)
        .map(|r| z[r] + (0..m).map(|k| p.a[r * m + k] * t[k]).sum::<f64>())
        .collect();
    let det = linalg::det(&p.small_jacobian(&u), m);
    if !(det > 0.0) {
        return Err(Error::Invertibility(format!(
            "Sylvester determinant factor {det:e} is not positive"
        )));
    }
    Ok((out, det.ln()))
}

/// Invert one step by Newton iteration.
pub fn sylvester_inverse(y: &[f64], p: &SylvesterParams) -> Result<Vec<f64>> {
    let d = p.dim;
    let mut z = y.to_vec();
    for _ in 0..100 {
        let (fz, _) = sylvester_step(&z, p)?;
        let resid: Vec<f64> = fz.iter().zip(y).map(|(a, b)| a - b).collect();
        if resid
            .iter()
            .all(|r| r.abs() < 1e-14 * (1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max)))
        {
            return Ok(z);
        }
        let jac = p.jacobian(&z);
        let step = linalg::solve(&jac, d, &resid)
            .ok_or_else(|| Error::Invertibility("singular Jacobian during inversion".into()))?;
        for (zi, s) in z.iter_mut().zip(step) {
            *zi -= s;
        }
    }
    let (fz, _) = sylvester_step(&z, p)?;
    let worst = fz
        .iter()
        .zip(y)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if worst < 1e-9 {
        Ok(z)
    } else {
        Err(Error::Invertibility(format!(
            "Newton inversion did not converge (residual {worst:e})"
        )))
    }
}

/// Forward through a stack; returns the output and the summed log-determinant.
pub fn stack_forward(z: &[f64], steps: &[SylvesterParams]) -> Result<(Vec<f64>, f64)> {
    let mut cur = z.to_vec();
    let mut total = 0.0;
    for p in steps {
        let (next, ld) = sylvester_step(&cur, p)?;
        cur = next;
        total += ld;
    }
    Ok((cur, total))
}

/// Inverse of [`stack_forward`], applying step inverses in reverse order.
pub fn stack_inverse(y: &[f64], steps: &[SylvesterParams]) -> Result<Vec<f64>> {
    let mut cur = y.to_vec();
    for p in steps.iter().rev() {
        cur = sylvester_inverse(&cur, p)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_a_is_identity() {
        let mut p = SylvesterParams::identity(3, 3);
        p.b = vec![0.4, -1.0, 2.0, 0.1, 0.2, 0.3, -0.7, 0.0, 1.1];
        p.bias = vec![0.5, 0.1, -0.2];
        let (z, ld) = sylvester_step(&[0.3, -0.4, 1.5], &p).unwrap();
        assert_eq!(z, vec![0.3, -0.4, 1.5]);
        assert_eq!(ld, 0.0);
    }

    #[test]
    fn scalar_flow_at_origin() {
        let p = SylvesterParams {
            dim: 1,
            bottleneck: 1,
            a: vec![1.0],
            b: vec![1.0],
            bias: vec![0.0],
        };
        let (z, ld) = sylvester_step(&[0.0], &p).unwrap();
        assert_eq!(z, vec![0.0]);
        assert!((ld - std::f64::consts::LN_2).abs() < 1e-15);
        let h = 1e-6;
        let fd = (sylvester_step(&[h], &p).unwrap().0[0] - sylvester_step(&[-h], &p).unwrap().0[0])
            / (2.0 * h);
        assert!((fd.ln() - ld).abs() < 1e-9);
    }

    #[test]
    fn non_invertible_parameters_are_rejected() {
        let p = SylvesterParams {
            dim: 1,
            bottleneck: 1,
            a: vec![-2.0],
            b: vec![1.0],
            bias: vec![0.0],
        };
        assert!(matches!(
            sylvester_step(&[0.0], &p),
            Err(Error::Invertibility(_))
        ));
    }

    #[test]
    fn newton_inverse_recovers_input() {
        let p = SylvesterParams {
            dim: 2,
            bottleneck: 2,
            a: vec![0.3, -0.2, 0.1, 0.25],
            b: vec![1.0, 0.5, -0.4, 0.8],
            bias: vec![0.2, -0.1],
        };
        let z = [0.7, -1.3];
        let (y, _) = sylvester_step(&z, &p).unwrap();
        let back = sylvester_inverse(&y, &p).unwrap();
        for (a, b) in back.iter().zip(z) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
