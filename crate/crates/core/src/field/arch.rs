use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Radiance channels and density channels of the latent.
pub const RGB_DIM: usize = 3;
pub const ALPHA_DIM: usize = 1;
pub const LATENT_DIM: usize = RGB_DIM + ALPHA_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelMode {
    /// Global latent pushed through conditional Sylvester flows.
    Cfnerf,
    /// Independent per-point Gaussians (fully factorized posterior).
    SnerfBaseline,
}

/// Architecture hyperparameters; persisted as the checkpoint sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub mode: ModelMode,
    pub latent_dim: usize,
    pub flows: usize,
    pub hidden: usize,
    pub layers: usize,
    /// Index of the trunk layer whose input is re-concatenated with the
    /// encoded position; no skip when `>= layers`.
    pub skip_layer: usize,
    pub cond_dim: usize,
    pub pos_freqs: usize,
    pub dir_freqs: usize,
    /// Bound on `||diag(tanh') B A||`; must be in `(0, 1)`.
    pub gamma: f64,
    pub rgb_bottleneck: usize,
    pub alpha_bottleneck: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            mode: ModelMode::Cfnerf,
            latent_dim: LATENT_DIM,
            flows: 4,
            hidden: 512,
            layers: 8,
            skip_layer: 5,
            cond_dim: 64,
            pos_freqs: 10,
            dir_freqs: 4,
            gamma: 0.9,
            rgb_bottleneck: RGB_DIM,
            alpha_bottleneck: ALPHA_DIM,
        }
    }
}

impl Architecture {
    /// Reduced widths for single-core runs and tests.
    pub fn compact() -> Self {
        Self {
            hidden: 48,
            layers: 4,
            skip_layer: 2,
            cond_dim: 16,
            pos_freqs: 6,
            dir_freqs: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.latent_dim != LATENT_DIM {
            problems.push(format!(
                "latent_dim must be {LATENT_DIM}, got {}",
                self.latent_dim
            ));
        }
        for (name, v) in [
            ("flows", self.flows),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("cond_dim", self.cond_dim),
            ("rgb_bottleneck", self.rgb_bottleneck),
            ("alpha_bottleneck", self.alpha_bottleneck),
        ] {
            if v == 0 {
                problems.push(format!("{name} must be >= 1"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            problems.push(format!("gamma must be in (0, 1), got {}", self.gamma));
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }

    /// Raw hypernetwork outputs per flow step: `A`, `B`, bias and gate.
    pub(crate) fn flow_width(dim: usize, bottleneck: usize) -> usize {
        2 * dim * bottleneck + 2 * bottleneck
    }
}
