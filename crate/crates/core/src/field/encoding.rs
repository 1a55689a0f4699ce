use std::f64::consts::PI;

/// Sinusoidal encoding `(p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^{L-1} pi p), cos(2^{L-1} pi p))`.
///
/// Within each frequency the sine block covers every component of `p`,
/// followed by the cosine block. Output length is `p.len() * (2 L + 1)`.
pub fn positional_encode(p: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(encoded_dim(p.len(), n_freq));
    encode_into(p, n_freq, &mut out);
    out
}

pub fn encoded_dim(dim: usize, n_freq: usize) -> usize {
    dim * (2 * n_freq + 1)
}

pub(crate) fn encode_into(p: &[f64], n_freq: usize, out: &mut Vec<f64>) {
    out.extend_from_slice(p);
    for l in 0..n_freq {
        let w = f64::from(1u32 << l) * PI;
        out.extend(p.iter().map(|v| (w * v).sin()));
        out.extend(p.iter().map(|v| (w * v).cos()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_input() {
        let e = positional_encode(&[0.0, 0.0], 3);
        for l in 0..3 {
            let base = 2 + l * 4;
            assert_eq!(&e[base..base + 2], &[0.0, 0.0]);
            assert_eq!(&e[base + 2..base + 4], &[1.0, 1.0]);
        }
    }

    #[test]
    fn half_with_one_frequency() {
        let e = positional_encode(&[0.5], 1);
        assert_eq!(e[0], 0.5);
        assert!((e[1] - 1.0).abs() < 1e-15);
        assert!(e[2].abs() < 1e-15);
    }

    #[test]
    fn dimension() {
        assert_eq!(positional_encode(&[0.1, 0.2, 0.3], 10).len(), 63);
        assert_eq!(encoded_dim(3, 4), 27);
    }
}
