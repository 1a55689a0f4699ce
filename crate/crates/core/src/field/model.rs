//! The probabilistic radiance field: prior, conditioner MLP, hypernetworks
//! and the two conditional flow stacks, evaluated batch-wise on a [`Graph`].
//!
//! Batched rows follow a `(sample k, point p)` layout: row `k * P + p`.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::rc::Rc;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::diff::{checkpoint, log_sigmoid, Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

use super::arch::{Architecture, ModelMode, ALPHA_DIM, LATENT_DIM, RGB_DIM};
use super::encoding::{encode_into, encoded_dim};
use super::prior::{gaussian_logpdf, inverse_softplus, LatentPrior};
use super::sylvester::{stack_forward, stack_inverse, SylvesterParams};

const NORM_EPS: f64 = 1e-6;
/// Initial prior standard deviation; small so geometry forms before the
/// entropy term widens the latent.
pub const PRIOR_INIT_SCALE: f64 = 0.1;

type Layer = (ParamId, ParamId);

#[derive(Debug, Clone)]
struct Ids {
    prior_mean: Option<ParamId>,
    prior_scale: Option<ParamId>,
    trunk: Vec<Layer>,
    head_alpha: Layer,
    head_rgb: Layer,
    hyper_rgb: Option<Layer>,
    hyper_alpha: Option<Layer>,
    snerf_rgb: Option<Layer>,
    snerf_alpha: Option<Layer>,
}

/// The learned distribution over radiance fields.
#[derive(Debug, Clone)]
pub struct FieldModel {
    arch: Architecture,
    params: ParamStore,
    ids: Ids,
}

/// Parameters bound into one graph.
#[derive(Debug, Clone)]
pub struct ModelVars {
    prior_mean: Option<Var>,
    prior_sigma: Option<Var>,
    prior_log_sigma: Option<Var>,
    trunk: Vec<(Var, Var)>,
    head_alpha: (Var, Var),
    head_rgb: (Var, Var),
    hyper_rgb: Option<(Var, Var)>,
    hyper_alpha: Option<(Var, Var)>,
    snerf_rgb: Option<(Var, Var)>,
    snerf_alpha: Option<(Var, Var)>,
}

/// Per-point flow parameters after the invertibility construction.
#[derive(Debug, Clone, Copy)]
pub struct FlowVars {
    pub a: Var,
    pub b: Var,
    pub bias: Var,
    /// `B A` per point, `[P, M*M]`.
    pub ba: Var,
    pub dim: usize,
    pub bottleneck: usize,
}

/// Point-dependent quantities shared by all latent samples.
#[derive(Debug, Clone)]
pub enum PointVars {
    Flows {
        rgb: Vec<FlowVars>,
        alpha: Vec<FlowVars>,
    },
    Gaussians {
        rgb_mean: Var,
        rgb_sigma: Var,
        alpha_mean: Var,
        alpha_sigma: Var,
    },
}

#[derive(Debug, Clone)]
pub struct Conditioned {
    pub points: usize,
    pub h_rgb: Var,
    pub h_alpha: Var,
    pub per_point: PointVars,
}

/// Decoded batch, rows in `(k, p)` layout.
#[derive(Debug, Clone, Copy)]
pub struct Decoded {
    pub rgb: Var,
    pub alpha: Var,
    pub log_q: Option<LogQ>,
}

#[derive(Debug, Clone, Copy)]
pub struct LogQ {
    /// Full `log q(r | x, d, z)` including the sigmoid Jacobian.
    pub rgb: Var,
    /// Full `log q(alpha | x, z)` including the softplus Jacobian.
    pub alpha: Var,
    /// Density of the pre-activation `z_K` (flows only), radiance part.
    pub rgb_latent: Var,
    pub alpha_latent: Var,
}

/// Single-point decode result.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSample {
    pub rgb: [f64; 3],
    pub alpha: f64,
    pub log_q_rgb: f64,
    pub log_q_alpha: f64,
}

/// Flow parameters materialized for one `(x, d)`.
#[derive(Debug, Clone)]
pub struct PointFlows {
    pub rgb: Vec<SylvesterParams>,
    pub alpha: Vec<SylvesterParams>,
}

fn normal_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::from_parts(rows, cols, data)
}

fn selector_rows(m: usize, dim: usize) -> Tensor {
    // [M*D, M]: sums the entries of each row of a row-major M x D matrix
    let mut t = Tensor::zeros(m * dim, m);
    for r in 0..m {
        for d in 0..dim {
            t.data_mut()[(r * dim + d) * m + r] = 1.0;
        }
    }
    t
}

fn identity_row(m: usize) -> Tensor {
    let mut t = Tensor::zeros(1, m * m);
    for i in 0..m {
        t.data_mut()[i * m + i] = 1.0;
    }
    t
}

impl FieldModel {
    /// Freshly initialized model.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Result<Self> {
        arch.validate()?;
        let mut params = ParamStore::new();
        let ex = encoded_dim(3, arch.pos_freqs);
        let ed = encoded_dim(3, arch.dir_freqs);
        let h = arch.hidden;
        let c = arch.cond_dim;

        let (prior_mean, prior_scale) = if arch.mode == ModelMode::Cfnerf {
            let m = params.add("prior.mean", Tensor::zeros(1, LATENT_DIM), true);
            let s = params.add(
                "prior.scale",
                Tensor::filled(1, LATENT_DIM, inverse_softplus(PRIOR_INIT_SCALE)),
                true,
            );
            (Some(m), Some(s))
        } else {
            (None, None)
        };

        let mut trunk = Vec::with_capacity(arch.layers);
        for i in 0..arch.layers {
            let mut fan_in = if i == 0 { ex } else { h };
            if i == arch.skip_layer && i > 0 {
                fan_in += ex;
            }
            let w = normal_matrix(fan_in, h, (1.0 / fan_in as f64).sqrt(), rng);
            let wi = params.add(format!("trunk.{i}.w"), w, true);
            let bi = params.add(format!("trunk.{i}.b"), Tensor::zeros(1, h), true);
            trunk.push((wi, bi));
        }
        let dense =
            |params: &mut ParamStore, name: &str, fan_in: usize, out: usize, rng: &mut R| {
                let w = normal_matrix(fan_in, out, (1.0 / fan_in as f64).sqrt(), rng);
                let wi = params.add(format!("{name}.w"), w, true);
                let bi = params.add(format!("{name}.b"), Tensor::zeros(1, out), true);
                (wi, bi)
            };
        let head_alpha = dense(&mut params, "head_alpha", h, c, rng);
        let head_rgb = dense(&mut params, "head_rgb", h + ed, c, rng);

        let mut ids = Ids {
            prior_mean,
            prior_scale,
            trunk,
            head_alpha,
            head_rgb,
            hyper_rgb: None,
            hyper_alpha: None,
            snerf_rgb: None,
            snerf_alpha: None,
        };

        match arch.mode {
            ModelMode::Cfnerf => {
                ids.hyper_rgb = Some(Self::init_hyper(
                    &mut params,
                    "hyper_rgb",
                    c,
                    RGB_DIM,
                    arch.rgb_bottleneck,
                    arch.flows,
                    rng,
                ));
                ids.hyper_alpha = Some(Self::init_hyper(
                    &mut params,
                    "hyper_alpha",
                    c,
                    ALPHA_DIM,
                    arch.alpha_bottleneck,
                    arch.flows,
                    rng,
                ));
            }
            ModelMode::SnerfBaseline => {
                let std = 0.1 / (c as f64).sqrt();
                let w = normal_matrix(c, 2 * RGB_DIM, std, rng);
                let wr = params.add("snerf_rgb.w", w, true);
                let br = params.add("snerf_rgb.b", Tensor::zeros(1, 2 * RGB_DIM), true);
                let w = normal_matrix(c, 2 * ALPHA_DIM, std, rng);
                let wa = params.add("snerf_alpha.w", w, true);
                let ba = params.add("snerf_alpha.b", Tensor::zeros(1, 2 * ALPHA_DIM), true);
                ids.snerf_rgb = Some((wr, br));
                ids.snerf_alpha = Some((wa, ba));
            }
        }
        Ok(Self { arch, params, ids })
    }

    fn init_hyper<R: Rng + ?Sized>(
        params: &mut ParamStore,
        name: &str,
        cond: usize,
        dim: usize,
        m: usize,
        flows: usize,
        rng: &mut R,
    ) -> Layer {
        let fw = Architecture::flow_width(dim, m);
        let std = (1.0 / cond as f64).sqrt();
        let w = normal_matrix(cond, fw * flows, std, rng);
        let mut b = Tensor::zeros(1, fw * flows);
        for f in 0..flows {
            let base = f * fw;
            for j in 0..2 * dim * m {
                b.data_mut()[base + j] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let wi = params.add(format!("{name}.w"), w, true);
        let bi = params.add(format!("{name}.b"), b, true);
        (wi, bi)
    }

    /// Sidecar path holding the architecture of checkpoint `path`.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut os = path.as_os_str().to_owned();
        os.push(".json");
        PathBuf::from(os)
    }

    /// Load a checkpoint and its architecture sidecar.
    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = Self::sidecar_path(path);
        let text = fs::read_to_string(&sidecar).map_err(|e| Error::io(&sidecar, e))?;
        let arch: Architecture = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: sidecar.clone(),
            source,
        })?;
        Self::load_with(arch, path)
    }

    /// Rebuild a model skeleton from `arch` and fill it from a checkpoint.
    pub fn load_with(arch: Architecture, path: &Path) -> Result<Self> {
        let mut model = Self::new(arch, &mut crate::rng::from_seed(0))?;
        checkpoint::load_into(&mut model.params, path)?;
        Ok(model)
    }

    /// Write the checkpoint and its architecture sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(&self.params, path)?;
        let sidecar = Self::sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.arch).map_err(|source| Error::Json {
            path: sidecar.clone(),
            source,
        })?;
        fs::write(&sidecar, text + "\n").map_err(|e| Error::io(&sidecar, e))
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn mode(&self) -> ModelMode {
        self.arch.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Current prior (standard normal for the factorized baseline).
    pub fn prior(&self) -> LatentPrior {
        match (self.ids.prior_mean, self.ids.prior_scale) {
            (Some(m), Some(s)) => LatentPrior {
                mean: self.params.get(m).data().to_vec(),
                scale_pre: self.params.get(s).data().to_vec(),
            },
            _ => LatentPrior::standard(LATENT_DIM),
        }
    }

    pub fn set_prior(&mut self, prior: &LatentPrior) -> Result<()> {
        match (self.ids.prior_mean, self.ids.prior_scale) {
            (Some(m), Some(s)) => {
                *self.params.get_mut(m) = Tensor::row(&prior.mean);
                *self.params.get_mut(s) = Tensor::row(&prior.scale_pre);
                Ok(())
            }
            _ => Err(Error::invalid(
                "the factorized baseline has no latent prior",
            )),
        }
    }

    /// Zero the flow gates so every Sylvester step is the identity.
    pub fn set_identity_flows(&mut self) -> Result<()> {
        for (layer, dim, m) in [
            (self.ids.hyper_rgb, RGB_DIM, self.arch.rgb_bottleneck),
            (self.ids.hyper_alpha, ALPHA_DIM, self.arch.alpha_bottleneck),
        ] {
            let Some((w, b)) = layer else {
                return Err(Error::invalid("the factorized baseline has no flows"));
            };
            let fw = Architecture::flow_width(dim, m);
            let total = fw * self.arch.flows;
            let cond = self.arch.cond_dim;
            for f in 0..self.arch.flows {
                for j in f * fw + 2 * dim * m + m..(f + 1) * fw {
                    for r in 0..cond {
                        self.params.get_mut(w).data_mut()[r * total + j] = 0.0;
                    }
                    self.params.get_mut(b).data_mut()[j] = 0.0;
                }
            }
        }
        Ok(())
    }

    pub fn bind(&self, g: &mut Graph) -> ModelVars {
        self.bind_params(g, &self.params)
    }

    /// Bind an external store with this model's layout (e.g. a perturbed
    /// copy during gradient checking).
    pub fn bind_params(&self, g: &mut Graph, p: &ParamStore) -> ModelVars {
        let layer = |g: &mut Graph, l: Layer| (g.param(p, l.0), g.param(p, l.1));
        let (prior_mean, prior_sigma, prior_log_sigma) =
            match (self.ids.prior_mean, self.ids.prior_scale) {
                (Some(m), Some(s)) => {
                    let mv = g.param(p, m);
                    let sv = g.param(p, s);
                    let sigma = g.softplus(sv);
                    let log_sigma = g.log(sigma);
                    (Some(mv), Some(sigma), Some(log_sigma))
                }
                _ => (None, None, None),
            };
        ModelVars {
            prior_mean,
            prior_sigma,
            prior_log_sigma,
            trunk: self.ids.trunk.iter().map(|l| layer(g, *l)).collect(),
            head_alpha: layer(g, self.ids.head_alpha),
            head_rgb: layer(g, self.ids.head_rgb),
            hyper_rgb: self.ids.hyper_rgb.map(|l| layer(g, l)),
            hyper_alpha: self.ids.hyper_alpha.map(|l| layer(g, l)),
            snerf_rgb: self.ids.snerf_rgb.map(|l| layer(g, l)),
            snerf_alpha: self.ids.snerf_alpha.map(|l| layer(g, l)),
        }
    }

    /// Encoded positions and directions for a batch of points.
    pub fn encode_points(&self, xs: &[[f64; 3]], ds: &[[f64; 3]]) -> (Tensor, Tensor) {
        let ex = encoded_dim(3, self.arch.pos_freqs);
        let ed = encoded_dim(3, self.arch.dir_freqs);
        let mut px = Vec::with_capacity(xs.len() * ex);
        let mut pd = Vec::with_capacity(ds.len() * ed);
        for (x, d) in xs.iter().zip(ds) {
            encode_into(x, self.arch.pos_freqs, &mut px);
            encode_into(d, self.arch.dir_freqs, &mut pd);
        }
        (
            Tensor::from_parts(xs.len(), ex, px),
            Tensor::from_parts(ds.len(), ed, pd),
        )
    }

    /// Conditioner MLP and hypernetworks for a batch of points.
    pub fn condition(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        xs: &[[f64; 3]],
        ds: &[[f64; 3]],
    ) -> Conditioned {
        let (enc_x, enc_d) = self.encode_points(xs, ds);
        let ex = g.input(enc_x);
        let ed = g.input(enc_d);
        let mut h = ex;
        for (i, (w, b)) in vars.trunk.iter().enumerate() {
            if i == self.arch.skip_layer && i > 0 {
                h = g.concat(&[h, ex]);
            }
            let pre = g.linear(h, *w, *b);
            h = g.softplus(pre);
        }
        let h_alpha = g.linear(h, vars.head_alpha.0, vars.head_alpha.1);
        let hd = g.concat(&[h, ed]);
        let h_rgb = g.linear(hd, vars.head_rgb.0, vars.head_rgb.1);

        let per_point = match self.arch.mode {
            ModelMode::Cfnerf => {
                let (wr, br) = vars.hyper_rgb.expect("cfnerf has hypernetworks");
                let (wa, ba) = vars.hyper_alpha.expect("cfnerf has hypernetworks");
                let rgb = self.flow_vars(g, h_rgb, wr, br, RGB_DIM, self.arch.rgb_bottleneck);
                let alpha =
                    self.flow_vars(g, h_alpha, wa, ba, ALPHA_DIM, self.arch.alpha_bottleneck);
                PointVars::Flows { rgb, alpha }
            }
            ModelMode::SnerfBaseline => {
                let (wr, br) = vars.snerf_rgb.expect("baseline has heads");
                let (wa, ba) = vars.snerf_alpha.expect("baseline has heads");
                let sr = g.linear(h_rgb, wr, br);
                let sa = g.linear(h_alpha, wa, ba);
                let rgb_mean = g.slice_cols(sr, 0, RGB_DIM);
                let rs = g.slice_cols(sr, RGB_DIM, 2 * RGB_DIM);
                let rgb_sigma = g.softplus(rs);
                let alpha_mean = g.slice_cols(sa, 0, ALPHA_DIM);
                let as_ = g.slice_cols(sa, ALPHA_DIM, 2 * ALPHA_DIM);
                let alpha_sigma = g.softplus(as_);
                PointVars::Gaussians {
                    rgb_mean,
                    rgb_sigma,
                    alpha_mean,
                    alpha_sigma,
                }
            }
        };
        Conditioned {
            points: xs.len(),
            h_rgb,
            h_alpha,
            per_point,
        }
    }

    /// Hypernetwork output turned into invertible Sylvester parameters.
    ///
    /// Column `j` of `A` is the raw column times `tanh(s_j)`; each row of `B`
    /// is unit-normalized and scaled by `gamma / (sqrt(M) sqrt(1 + ||A||_F^2))`,
    /// so that `||B A||_F < gamma < 1` and every determinant factor stays
    /// positive.
    fn flow_vars(
        &self,
        g: &mut Graph,
        h: Var,
        w: Var,
        b: Var,
        dim: usize,
        m: usize,
    ) -> Vec<FlowVars> {
        let fw = Architecture::flow_width(dim, m);
        let raw = g.linear(h, w, b);
        let sel = g.input(selector_rows(m, dim));
        let col_of: Rc<[usize]> = (0..dim * m).map(|i| i % m).collect();
        let row_of: Rc<[usize]> = (0..m * dim).map(|i| i / dim).collect();
        let mut out = Vec::with_capacity(self.arch.flows);
        for f in 0..self.arch.flows {
            let base = f * fw;
            let a_raw = g.slice_cols(raw, base, base + dim * m);
            let b_raw = g.slice_cols(raw, base + dim * m, base + 2 * dim * m);
            let bias = g.slice_cols(raw, base + 2 * dim * m, base + 2 * dim * m + m);
            let gate_raw = g.slice_cols(raw, base + 2 * dim * m + m, base + fw);

            let gate = g.tanh(gate_raw);
            let gate_full = g.gather_cols(gate, col_of.clone());
            let a = g.mul(a_raw, gate_full);
            let a_sq = g.square(a);
            let a_norm_sq = g.sum_cols(a_sq);
            let a_norm_sq = g.offset(a_norm_sq, 1.0);
            let inv_a = inv_sqrt(g, a_norm_sq);
            let b_sq = g.square(b_raw);
            let row_sq = g.matmul(b_sq, sel);
            let row_sq = g.offset(row_sq, NORM_EPS);
            let inv_row = inv_sqrt(g, row_sq);
            let coef = g.mul(inv_row, inv_a);
            let coef = g.scale(coef, self.arch.gamma / (m as f64).sqrt());
            let coef_full = g.gather_cols(coef, row_of.clone());
            let b_mat = g.mul(b_raw, coef_full);
            let ba = g.row_matmul(b_mat, a, m, dim, m);
            out.push(FlowVars {
                a,
                b: b_mat,
                bias,
                ba,
                dim,
                bottleneck: m,
            });
        }
        out
    }

    /// Decode `K` latent samples at every conditioned point.
    ///
    /// `eps` holds standard-normal draws with `K * P` rows in `(k, p)` order:
    /// for the flow model `z = mean + sigma * eps` (the rows of one `k` are
    /// normally identical, sharing the global latent); for the factorized
    /// baseline each row is independent point noise.
    pub fn decode_rows(
        &self,
        g: &mut Graph,
        vars: &ModelVars,
        cond: &Conditioned,
        samples: usize,
        eps: &Tensor,
        with_log_q: bool,
    ) -> Result<Decoded> {
        let p = cond.points;
        if eps.rows() != samples * p || eps.cols() != LATENT_DIM {
            return Err(Error::shape(
                "decode",
                format!("eps {:?} for {samples} samples x {p} points", eps.shape()),
            ));
        }
        let tile: Rc<[usize]> = (0..samples * p).map(|r| r % p).collect();
        let eps_var = g.input(eps.clone());
        let log_base = if with_log_q {
            // -0.5 eps^2 - 0.5 ln 2 pi per coordinate
            let data = eps
                .data()
                .iter()
                .map(|e| -0.5 * e * e - 0.5 * (2.0 * PI).ln())
                .collect();
            Some(g.input(Tensor::from_parts(eps.rows(), LATENT_DIM, data)))
        } else {
            None
        };

        let (pre_rgb, pre_alpha, lat_rgb, lat_alpha) = match &cond.per_point {
            PointVars::Flows { rgb, alpha } => {
                let mean = vars.prior_mean.expect("flow model has a prior");
                let sigma = vars.prior_sigma.expect("flow model has a prior");
                let se = g.mul(eps_var, sigma);
                let z = g.add(se, mean);
                let mut zr = g.slice_cols(z, 0, RGB_DIM);
                let mut za = g.slice_cols(z, RGB_DIM, LATENT_DIM);
                let mut ld_r = None;
                let mut ld_a = None;
                for fv in rgb {
                    let (next, ld) = sylvester_rows(g, fv, &tile, zr, with_log_q);
                    zr = next;
                    ld_r = accumulate(g, ld_r, ld);
                }
                for fv in alpha {
                    let (next, ld) = sylvester_rows(g, fv, &tile, za, with_log_q);
                    za = next;
                    ld_a = accumulate(g, ld_a, ld);
                }
                let (lat_r, lat_a) = match log_base {
                    Some(base) => {
                        let log_sigma = vars.prior_log_sigma.expect("flow model has a prior");
                        let lz = g.sub(base, log_sigma);
                        let lzr = g.slice_cols(lz, 0, RGB_DIM);
                        let lzr = g.sum_cols(lzr);
                        let lza = g.slice_cols(lz, RGB_DIM, LATENT_DIM);
                        let lza = g.sum_cols(lza);
                        let lat_r = match ld_r {
                            Some(ld) => g.sub(lzr, ld),
                            None => lzr,
                        };
                        let lat_a = match ld_a {
                            Some(ld) => g.sub(lza, ld),
                            None => lza,
                        };
                        (Some(lat_r), Some(lat_a))
                    }
                    None => (None, None),
                };
                (zr, za, lat_r, lat_a)
            }
            PointVars::Gaussians {
                rgb_mean,
                rgb_sigma,
                alpha_mean,
                alpha_sigma,
            } => {
                let er = g.slice_cols(eps_var, 0, RGB_DIM);
                let ea = g.slice_cols(eps_var, RGB_DIM, LATENT_DIM);
                let mr = g.gather_rows(*rgb_mean, tile.clone());
                let sr = g.gather_rows(*rgb_sigma, tile.clone());
                let ma = g.gather_rows(*alpha_mean, tile.clone());
                let sa = g.gather_rows(*alpha_sigma, tile.clone());
                let zr = g.mul(er, sr);
                let zr = g.add(zr, mr);
                let za = g.mul(ea, sa);
                let za = g.add(za, ma);
                let (lat_r, lat_a) = match log_base {
                    Some(base) => {
                        let br = g.slice_cols(base, 0, RGB_DIM);
                        let ba = g.slice_cols(base, RGB_DIM, LATENT_DIM);
                        let lsr = g.log(sr);
                        let lsa = g.log(sa);
                        let lr = g.sub(br, lsr);
                        let la = g.sub(ba, lsa);
                        (Some(g.sum_cols(lr)), Some(g.sum_cols(la)))
                    }
                    None => (None, None),
                };
                (zr, za, lat_r, lat_a)
            }
        };

        let rgb = g.sigmoid(pre_rgb);
        let alpha = g.softplus(pre_alpha);
        let log_q = match (lat_rgb, lat_alpha) {
            (Some(lr), Some(la)) => {
                // ln sigmoid'(x) = ln sigmoid(x) + ln sigmoid(-x)
                let ls = g.log_sigmoid(pre_rgb);
                let npr = g.neg(pre_rgb);
                let lsn = g.log_sigmoid(npr);
                let jac = g.add(ls, lsn);
                let jac = g.sum_cols(jac);
                let rgb_full = g.sub(lr, jac);
                // softplus' = sigmoid
                let ja = g.log_sigmoid(pre_alpha);
                let alpha_full = g.sub(la, ja);
                Some(LogQ {
                    rgb: rgb_full,
                    alpha: alpha_full,
                    rgb_latent: lr,
                    alpha_latent: la,
                })
            }
            _ => None,
        };
        Ok(Decoded { rgb, alpha, log_q })
    }

    /// Standard-normal rows equivalent to explicit latent vectors `z`
    /// (flow model only), tiled over `points`.
    pub fn eps_for_latents(&self, latents: &[Vec<f64>], points: usize) -> Result<Tensor> {
        if self.mode() != ModelMode::Cfnerf {
            return Err(Error::invalid("explicit latents require the flow model"));
        }
        let prior = self.prior();
        let std: Vec<Vec<f64>> = latents.iter().map(|z| prior.standardize(z)).collect();
        Ok(tile_eps(&std, points))
    }

    /// Flow parameters at a single location (flow model only).
    pub fn point_flows(&self, x: [f64; 3], d: [f64; 3]) -> Result<PointFlows> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g);
        let cond = self.condition(&mut g, &vars, &[x], &[d]);
        g.check()?;
        let PointVars::Flows { rgb, alpha } = &cond.per_point else {
            return Err(Error::invalid("the factorized baseline has no flows"));
        };
        let extract = |fv: &FlowVars| SylvesterParams {
            dim: fv.dim,
            bottleneck: fv.bottleneck,
            a: g.value(fv.a).data().to_vec(),
            b: g.value(fv.b).data().to_vec(),
            bias: g.value(fv.bias).data().to_vec(),
        };
        Ok(PointFlows {
            rgb: rgb.iter().map(extract).collect(),
            alpha: alpha.iter().map(extract).collect(),
        })
    }

    /// Decode one latent vector at one point on plain vectors.
    ///
    /// For the factorized baseline `z` is read as the point's standard
    /// normal noise.
    pub fn decode(&self, z: &[f64], x: [f64; 3], d: [f64; 3]) -> Result<PointSample> {
        if z.len() != LATENT_DIM {
            return Err(Error::shape(
                "decode",
                format!("latent has {} entries", z.len()),
            ));
        }
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::invalid(format!(
                "direction must be unit-norm, |d| = {norm}"
            )));
        }
        if self.mode() == ModelMode::SnerfBaseline {
            let mut g = Graph::new();
            let vars = self.bind(&mut g);
            let cond = self.condition(&mut g, &vars, &[x], &[d]);
            let dec = self.decode_rows(&mut g, &vars, &cond, 1, &Tensor::row(z), true)?;
            g.check()?;
            let lq = dec.log_q.expect("requested");
            let rgb = g.value(dec.rgb).data();
            return Ok(PointSample {
                rgb: [rgb[0], rgb[1], rgb[2]],
                alpha: g.value(dec.alpha).item(),
                log_q_rgb: g.value(lq.rgb).item(),
                log_q_alpha: g.value(lq.alpha).item(),
            });
        }
        let flows = self.point_flows(x, d)?;
        let prior = self.prior();
        let sigma = prior.sigma();
        let base = |range: std::ops::Range<usize>| -> f64 {
            range
                .map(|i| gaussian_logpdf(z[i], prior.mean[i], sigma[i]))
                .sum()
        };
        let (zr, ld_r) = stack_forward(&z[..RGB_DIM], &flows.rgb)?;
        let (za, ld_a) = stack_forward(&z[RGB_DIM..], &flows.alpha)?;
        let act_r: f64 = zr.iter().map(|v| log_sigmoid(*v) + log_sigmoid(-v)).sum();
        let rgb = [
            crate::diff::sigmoid(zr[0]),
            crate::diff::sigmoid(zr[1]),
            crate::diff::sigmoid(zr[2]),
        ];
        let sample = PointSample {
            rgb,
            alpha: crate::diff::softplus(za[0]),
            log_q_rgb: base(0..RGB_DIM) - ld_r - act_r,
            log_q_alpha: base(RGB_DIM..LATENT_DIM) - ld_a - log_sigmoid(za[0]),
        };
        if !sample.alpha.is_finite() || sample.rgb.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                op: "decode",
                node: 0,
            });
        }
        Ok(sample)
    }

    /// `log q(alpha | x, z_r)` by inverting the density flow (flow model
    /// only). The density channel does not depend on the radiance latent.
    pub fn alpha_log_density(&self, x: [f64; 3], alpha: f64) -> Result<f64> {
        let flows = self.point_flows(x, [0.0, 0.0, 1.0])?;
        self.alpha_log_density_with(&flows, alpha)
    }

    /// As [`FieldModel::alpha_log_density`] with precomputed flows.
    pub fn alpha_log_density_with(&self, flows: &PointFlows, alpha: f64) -> Result<f64> {
        if !(alpha > 0.0) {
            return Err(Error::invalid("density must be positive"));
        }
        let z_k = inverse_softplus(alpha);
        let z0 = stack_inverse(&[z_k], &flows.alpha)?;
        let (_, ld) = stack_forward(&z0, &flows.alpha)?;
        let prior = self.prior();
        let s = prior.sigma()[RGB_DIM];
        Ok(gaussian_logpdf(z0[0], prior.mean[RGB_DIM], s) - ld - log_sigmoid(z_k))
    }
}

fn inv_sqrt(g: &mut Graph, x: Var) -> Var {
    let l = g.log(x);
    let h = g.scale(l, -0.5);
    g.exp(h)
}

fn accumulate(g: &mut Graph, acc: Option<Var>, next: Option<Var>) -> Option<Var> {
    match (acc, next) {
        (Some(a), Some(b)) => Some(g.add(a, b)),
        (None, b) => b,
        (a, None) => a,
    }
}

/// One Sylvester step on `(k, p)` rows; point parameters are tiled by `tile`.
fn sylvester_rows(
    g: &mut Graph,
    fv: &FlowVars,
    tile: &Rc<[usize]>,
    z: Var,
    with_log_det: bool,
) -> (Var, Option<Var>) {
    let (d, m) = (fv.dim, fv.bottleneck);
    let b = g.gather_rows(fv.b, tile.clone());
    let a = g.gather_rows(fv.a, tile.clone());
    let bias = g.gather_rows(fv.bias, tile.clone());
    let bz = g.row_matmul(b, z, m, d, 1);
    let u = g.add(bz, bias);
    let t = g.tanh(u);
    let at = g.row_matmul(a, t, d, m, 1);
    let out = g.add(z, at);
    if !with_log_det {
        return (out, None);
    }
    let t2 = g.square(t);
    let nt2 = g.neg(t2);
    let tp = g.offset(nt2, 1.0);
    let row_of: Rc<[usize]> = (0..m * m).map(|i| i / m).collect();
    let tp_full = g.gather_cols(tp, row_of);
    let ba = g.gather_rows(fv.ba, tile.clone());
    let scaled = g.mul(tp_full, ba);
    let eye = g.input(identity_row(m));
    let mat = g.add(scaled, eye);
    let ld = g.row_logdet(mat, m);
    (out, Some(ld))
}

/// `lambda * z1 + (1 - lambda) * z2`.
pub fn latent_interpolate(z1: &[f64], z2: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if z1.len() != z2.len() {
        return Err(Error::shape(
            "latent_interpolate",
            format!("{} vs {} entries", z1.len(), z2.len()),
        ));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "lambda must be in [0, 1], got {lambda}"
        )));
    }
    Ok(z1
        .iter()
        .zip(z2)
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect())
}

/// Repeat each of `K` latent rows over `points` rows, `(k, p)` order.
pub fn tile_eps(eps: &[Vec<f64>], points: usize) -> Tensor {
    let mut data = Vec::with_capacity(eps.len() * points * LATENT_DIM);
    for e in eps {
        for _ in 0..points {
            data.extend_from_slice(e);
        }
    }
    Tensor::from_parts(eps.len() * points, LATENT_DIM, data)
}
