//! The prognosis network and its three-part loss.
//!
//! ```text
//! image ─ 4×(conv3x3 ─ relu ─ maxpool2) ─ flatten
//!       ─ 3×(dense ─ relu ─ dropout) ─ dense → a (N_k activations)
//! [a | t] ─ dense → ŷ
//! ```
//!
//! In causal mode the loss is `L_y + L_x + L_reg` where `L_x` ties `a[0]` to
//! the collider and `L_reg = max(0, MSE(x̄, x) − MSE(x̂, x))` with `x̂` the
//! in-batch OLS prediction of `x` from `a[1..]`. The OLS coefficients are
//! recomputed every step and enter backpropagation as constants.
//!
//! `L_reg` is evaluated on a second, dropout-free pass through the dense
//! stack (same weights, same trunk features). With dropout active the batch
//! regression sees activations scrambled by the masks, and the network learns
//! to hide `x` in directions the dropout noise masks at train time but that
//! reappear at evaluation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ols::{self, Matrix};
use crate::rng::Stream;
use crate::tensor::{dropout_mask, Gradients, Graph, NamedTensor, Real, Tensor, Var};

/// Smallest batch for which the in-batch regression behind `L_reg` is used.
pub const MIN_CAUSAL_BATCH: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// `L_y + L_x + L_reg`.
    Causal,
    /// `L_y` only.
    Biased,
    /// `MSE(a[0], x) + MSE(a[1], z)`, used to measure how well images reveal
    /// the two factors.
    Calibration,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Causal => "causal",
            Mode::Biased => "biased",
            Mode::Calibration => "calibration",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "causal" => Ok(Mode::Causal),
            "biased" => Ok(Mode::Biased),
            "calibration" => Ok(Mode::Calibration),
            _ => Err(Error::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// Layer widths shared by every network in an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Architecture {
    pub conv_layers: usize,
    pub conv_channels: usize,
    pub fc_sizes: Vec<usize>,
    pub head_width: usize,
    pub dropout_p: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            conv_layers: 4,
            conv_channels: 16,
            fc_sizes: vec![144, 144, 12],
            head_width: 6,
            dropout_p: 0.25,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub arch: Architecture,
    pub input_size: usize,
    pub mode: Mode,
}

impl NetConfig {
    pub fn new(arch: Architecture, input_size: usize, mode: Mode) -> Self {
        NetConfig {
            arch,
            input_size,
            mode,
        }
    }

    /// Spatial sizes entering each conv stage, followed by the final size.
    pub fn spatial_chain(&self) -> Vec<usize> {
        let mut s = vec![self.input_size];
        for _ in 0..self.arch.conv_layers {
            let last = *s.last().expect("non-empty");
            s.push(last / 2);
        }
        s
    }

    pub fn flatten_size(&self) -> usize {
        let side = *self.spatial_chain().last().expect("non-empty");
        self.arch.conv_channels * side * side
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.arch;
        if a.conv_layers == 0 || a.conv_channels == 0 {
            return Err(Error::Config(
                "need at least one conv layer and channel".into(),
            ));
        }
        let chain = self.spatial_chain();
        if chain[..a.conv_layers].iter().any(|&s| s < 2) || chain[a.conv_layers] == 0 {
            return Err(Error::Config(format!(
                "input size {} is too small for {} conv stages (sizes {chain:?})",
                self.input_size, a.conv_layers
            )));
        }
        if a.fc_sizes.contains(&0) {
            return Err(Error::Config("fc sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&a.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p {} outside [0, 1)",
                a.dropout_p
            )));
        }
        let need = match self.mode {
            Mode::Causal | Mode::Calibration => 2,
            Mode::Biased => 1,
        };
        if a.head_width < need {
            return Err(Error::Config(format!(
                "{} mode needs head width ≥ {need}, got {}",
                self.mode.name(),
                a.head_width
            )));
        }
        Ok(())
    }
}

/// How dropout masks are chosen for a forward pass.
#[derive(Debug)]
pub enum Dropout<'a, T> {
    Off,
    Sampled(&'a mut Stream),
    /// One mask per dropout layer, reused verbatim.
    Frozen(&'a [Vec<T>]),
}

/// Parameters of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct CausalNet<T> {
    pub cfg: NetConfig,
    pub params: Vec<NamedTensor<T>>,
}

/// Graph handles produced by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardVars {
    pub y_hat: Var,
    pub acts: Var,
    /// Dropout-free activations, present when requested in training.
    pub acts_eval: Option<Var>,
    pub params: Vec<Var>,
}

/// Plain-value view of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub y_hat: Vec<f64>,
    pub activations: Matrix,
    /// (β₀, β_t, β₁..β_k).
    pub head_coeffs: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_y: f64,
    pub l_x: f64,
    pub l_reg: f64,
    /// Heterogeneity term, non-zero only in calibration mode.
    pub l_z: f64,
    pub total: f64,
}

/// OLS coefficients used inside `L_reg`.
#[derive(Clone, Debug, PartialEq)]
pub enum RegBeta {
    /// Fit on the current batch.
    Fit,
    /// Reuse given coefficients (intercept first), e.g. for gradient checks.
    Fixed(Vec<f64>),
}

impl<T: Real> CausalNet<T> {
    /// He-normal weights, zero biases.
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut s = Stream::new(seed);
        let a = &cfg.arch;
        let mut params = Vec::new();
        let mut push = |name: String, t: Tensor<T>| params.push(NamedTensor { name, tensor: t });
        let mut c_in = 1;
        for i in 0..a.conv_layers {
            let fan = c_in * 9;
            push(
                format!("conv{i}.w"),
                Tensor::he_normal(&[a.conv_channels, c_in, 3, 3], fan, &mut s),
            );
            push(format!("conv{i}.b"), Tensor::zeros(&[a.conv_channels]));
            c_in = a.conv_channels;
        }
        let mut d_in = cfg.flatten_size();
        for (i, &w) in a.fc_sizes.iter().enumerate() {
            push(
                format!("fc{i}.w"),
                Tensor::he_normal(&[d_in, w], d_in, &mut s),
            );
            push(format!("fc{i}.b"), Tensor::zeros(&[w]));
            d_in = w;
        }
        push(
            "act.w".into(),
            Tensor::he_normal(&[d_in, a.head_width], d_in, &mut s),
        );
        push("act.b".into(), Tensor::zeros(&[a.head_width]));
        let h = a.head_width + 1;
        push("head.w".into(), Tensor::he_normal(&[h, 1], h, &mut s));
        push("head.b".into(), Tensor::zeros(&[1]));
        Ok(CausalNet { cfg, params })
    }

    pub fn from_checkpoint(cfg: NetConfig, params: Vec<NamedTensor<T>>) -> Result<Self> {
        let fresh = CausalNet::<T>::init(cfg.clone(), 0)?;
        if fresh.params.len() != params.len()
            || fresh
                .params
                .iter()
                .zip(&params)
                .any(|(a, b)| a.name != b.name || a.tensor.shape != b.tensor.shape)
        {
            return Err(Error::Checkpoint(
                "checkpoint does not match the network layout".into(),
            ));
        }
        Ok(CausalNet { cfg, params })
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn set_tensors(&mut self, ts: Vec<Tensor<T>>) {
        for (p, t) in self.params.iter_mut().zip(ts) {
            p.tensor = t;
        }
    }

    pub fn cast<U: Real>(&self) -> CausalNet<U> {
        CausalNet {
            cfg: self.cfg.clone(),
            params: self
                .params
                .iter()
                .map(|p| NamedTensor {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                })
                .collect(),
        }
    }

    /// Number of dropout layers (one per hidden dense layer).
    pub fn dropout_layers(&self) -> usize {
        self.cfg.arch.fc_sizes.len()
    }

    /// Adds the network to `g` with parameters as gradient-requiring leaves.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        images: Tensor<T>,
        t: &[T],
        dropout: Dropout<'_, T>,
        with_eval_acts: bool,
    ) -> Result<ForwardVars> {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone(), true))
            .collect();
        self.forward_with(g, &vars, images, t, dropout, with_eval_acts)
    }

    /// Like [`forward`](Self::forward) but with parameter nodes supplied by
    /// the caller.
    pub fn forward_with(
        &self,
        g: &mut Graph<T>,
        vars: &[Var],
        images: Tensor<T>,
        t: &[T],
        mut dropout: Dropout<'_, T>,
        with_eval_acts: bool,
    ) -> Result<ForwardVars> {
        let a = &self.cfg.arch;
        let s = self.cfg.input_size;
        let b = match images.shape.as_slice() {
            [b, 1, h, w] if *h == s && *w == s => *b,
            other => {
                return Err(Error::Shape(format!(
                    "expected B×1×{s}×{s} images, got {other:?}"
                )))
            }
        };
        if b == 0 || t.len() != b {
            return Err(Error::Shape(format!(
                "{b} images but {} treatment values",
                t.len()
            )));
        }
        if vars.len() != self.params.len() {
            return Err(Error::Shape("parameter handle count mismatch".into()));
        }
        let mut h = g.constant(images);
        let mut pi = 0;
        for _ in 0..a.conv_layers {
            h = g.conv2d(h, vars[pi], vars[pi + 1])?;
            h = g.relu(h);
            h = g.maxpool2(h)?;
            pi += 2;
        }
        let feat = g.flatten(h)?;
        let fc_start = pi;

        let dense_stack =
            |g: &mut Graph<T>, mut h: Var, drop: &mut Dropout<'_, T>| -> Result<Var> {
                let mut pi = fc_start;
                for (li, &w) in a.fc_sizes.iter().enumerate() {
                    h = g.dense(h, vars[pi], vars[pi + 1])?;
                    h = g.relu(h);
                    let mask = match drop {
                        Dropout::Off => None,
                        Dropout::Sampled(st) => Some(dropout_mask(b * w, a.dropout_p, st)),
                        Dropout::Frozen(ms) => Some(ms.get(li).cloned().ok_or_else(|| {
                            Error::Shape(format!("no frozen mask for dropout layer {li}"))
                        })?),
                    };
                    if let Some(m) = mask {
                        h = g.dropout(h, m)?;
                    }
                    pi += 2;
                }
                g.dense(h, vars[pi], vars[pi + 1])
            };
        let acts = dense_stack(g, feat, &mut dropout)?;
        let acts_eval = match (&dropout, with_eval_acts) {
            (Dropout::Off, _) | (_, false) => None,
            _ => Some(dense_stack(g, feat, &mut Dropout::Off)?),
        };

        let tcol = g.constant(Tensor::new(&[b, 1], t.to_vec())?);
        let joined = g.concat_cols(acts, tcol)?;
        let n = vars.len();
        let yh = g.dense(joined, vars[n - 2], vars[n - 1])?;
        let y_hat = g.reshape(yh, &[b])?;
        Ok(ForwardVars {
            y_hat,
            acts,
            acts_eval,
            params: vars.to_vec(),
        })
    }

    /// Dropout-free forward pass returning plain values.
    pub fn predict(&self, images: Tensor<T>, t: &[T]) -> Result<ForwardOutput> {
        let mut g = Graph::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone(), false))
            .collect();
        let fv = self.forward_with(&mut g, &vars, images, t, Dropout::Off, false)?;
        let av = g.value(fv.acts);
        Ok(ForwardOutput {
            y_hat: g.value(fv.y_hat).data.iter().map(|v| v.f64()).collect(),
            activations: Matrix::new(
                av.shape[0],
                av.shape[1],
                av.data.iter().map(|v| v.f64()).collect(),
            )?,
            head_coeffs: self.head_coeffs(),
        })
    }

    /// (β₀, β_t, β₁..β_k) of the affine head.
    pub fn head_coeffs(&self) -> Vec<f64> {
        let n = self.params.len();
        let w = &self.params[n - 2].tensor.data;
        let k = w.len() - 1;
        let mut out = vec![self.params[n - 1].tensor.data[0].f64(), w[k].f64()];
        out.extend(w[..k].iter().map(|v| v.f64()));
        out
    }

    /// Builds the mode's loss on top of `fv`. Returns the scalar loss node,
    /// its breakdown and the OLS coefficients used by `L_reg` (causal mode).
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        fv: &ForwardVars,
        y: &[f64],
        x: &[f64],
        z: &[f64],
        reg: &RegBeta,
    ) -> Result<(Var, LossBreakdown, Option<Vec<f64>>)> {
        let m = g.value(fv.y_hat).numel();
        let k = self.cfg.arch.head_width;
        if y.len() != m || x.len() != m || z.len() != m {
            return Err(Error::Shape(format!(
                "batch of {m} with targets {}/{}/{}",
                y.len(),
                x.len(),
                z.len()
            )));
        }
        let vec_const = |g: &mut Graph<T>, v: &[f64]| -> Result<Var> {
            Ok(g.constant(Tensor::from_f64(&[v.len()], v)?))
        };
        match self.cfg.mode {
            Mode::Biased => {
                let yv = vec_const(g, y)?;
                let ly = g.mse(fv.y_hat, yv)?;
                let l_y = g.value(ly).item().f64();
                Ok((
                    ly,
                    LossBreakdown {
                        l_y,
                        total: l_y,
                        ..Default::default()
                    },
                    None,
                ))
            }
            Mode::Calibration => {
                let a1 = g.slice_cols(fv.acts, 0, 1)?;
                let a1 = g.reshape(a1, &[m])?;
                let a2 = g.slice_cols(fv.acts, 1, 1)?;
                let a2 = g.reshape(a2, &[m])?;
                let xv = vec_const(g, x)?;
                let zv = vec_const(g, z)?;
                let lx = g.mse(a1, xv)?;
                let lz = g.mse(a2, zv)?;
                let tot = g.add(lx, lz)?;
                let l_x = g.value(lx).item().f64();
                let l_z = g.value(lz).item().f64();
                Ok((
                    tot,
                    LossBreakdown {
                        l_x,
                        l_z,
                        total: g.value(tot).item().f64(),
                        ..Default::default()
                    },
                    None,
                ))
            }
            Mode::Causal => {
                if m < MIN_CAUSAL_BATCH {
                    return Err(Error::BatchSize {
                        need: MIN_CAUSAL_BATCH,
                        got: m,
                    });
                }
                let yv = vec_const(g, y)?;
                let ly = g.mse(fv.y_hat, yv)?;
                let a1 = g.slice_cols(fv.acts, 0, 1)?;
                let a1 = g.reshape(a1, &[m])?;
                let xv = vec_const(g, x)?;
                let lx = g.mse(a1, xv)?;

                let src = fv.acts_eval.unwrap_or(fv.acts);
                let rest = g.slice_cols(src, 1, k - 1)?;
                let beta = match reg {
                    RegBeta::Fixed(b) => {
                        if b.len() != k {
                            return Err(Error::Shape(format!(
                                "L_reg needs {k} coefficients, got {}",
                                b.len()
                            )));
                        }
                        b.clone()
                    }
                    RegBeta::Fit => {
                        let rv = g.value(rest);
                        let design =
                            Matrix::new(m, k - 1, rv.data.iter().map(|v| v.f64()).collect())?;
                        ols::fit(&design, x, ols::DEFAULT_RIDGE)?.coefficients
                    }
                };
                let w = g.constant(Tensor::from_f64(&[k - 1, 1], &beta[1..])?);
                let b0 = g.constant(Tensor::from_f64(&[1], &beta[..1])?);
                let xh = g.dense(rest, w, b0)?;
                let xh = g.reshape(xh, &[m])?;
                let fit_mse = g.mse(xh, xv)?;
                let neg = g.scale(fit_mse, -T::one());
                let var_x = crate::stats::variance(x);
                let gap = g.add_scalar(neg, T::of(var_x));
                let lreg = g.relu(gap);

                let s1 = g.add(ly, lx)?;
                let tot = g.add(s1, lreg)?;
                let br = LossBreakdown {
                    l_y: g.value(ly).item().f64(),
                    l_x: g.value(lx).item().f64(),
                    l_reg: g.value(lreg).item().f64(),
                    l_z: 0.0,
                    total: g.value(tot).item().f64(),
                };
                Ok((tot, br, Some(beta)))
            }
        }
    }

    /// Parameter gradients in parameter order (zeros where nothing flowed).
    pub fn collect_grads(&self, fv: &ForwardVars, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        fv.params
            .iter()
            .zip(&self.params)
            .map(|(v, p)| grads.get_or_zeros(*v, &p.tensor.shape))
            .collect()
    }
}

/// Loss of `mode` computed from plain dropout-free outputs over a whole set,
/// with `L_reg` fitted on that set.
pub fn loss_from_outputs(
    mode: Mode,
    out: &ForwardOutput,
    y: &[f64],
    x: &[f64],
    z: &[f64],
) -> Result<LossBreakdown> {
    let a = &out.activations;
    let col = |j: usize| a.column(j);
    let mse = crate::stats::mse;
    Ok(match mode {
        Mode::Biased => {
            let l_y = mse(&out.y_hat, y);
            LossBreakdown {
                l_y,
                total: l_y,
                ..Default::default()
            }
        }
        Mode::Calibration => {
            let l_x = mse(&col(0), x);
            let l_z = mse(&col(1), z);
            LossBreakdown {
                l_x,
                l_z,
                total: l_x + l_z,
                ..Default::default()
            }
        }
        Mode::Causal => {
            let l_y = mse(&out.y_hat, y);
            let l_x = mse(&col(0), x);
            let rest: Vec<Vec<f64>> = (1..a.cols).map(col).collect();
            let fit = ols::fit_columns(&rest, x, ols::DEFAULT_RIDGE)?;
            let l_reg = (crate::stats::variance(x) - fit.residual_mse).max(0.0);
            LossBreakdown {
                l_y,
                l_x,
                l_reg,
                l_z: 0.0,
                total: l_y + l_x + l_reg,
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(mode: Mode, size: usize) -> NetConfig {
        NetConfig::new(
            Architecture {
                conv_channels: 2,
                fc_sizes: vec![5, 4, 3],
                ..Default::default()
            },
            size,
            mode,
        )
    }

    #[test]
    fn default_flatten_is_144() {
        let cfg = NetConfig::new(Architecture::default(), 51, Mode::Causal);
        assert_eq!(cfg.spatial_chain(), vec![51, 25, 12, 6, 3]);
        assert_eq!(cfg.flatten_size(), 144);
        let ci = NetConfig::new(Architecture::default(), 25, Mode::Causal);
        assert_eq!(ci.flatten_size(), 16);
    }

    #[test]
    fn rejects_tiny_input() {
        assert!(NetConfig::new(Architecture::default(), 12, Mode::Causal)
            .validate()
            .is_err());
    }

    #[test]
    fn causal_batch_minimum() {
        let net = CausalNet::<f64>::init(small(Mode::Causal, 16), 1).unwrap();
        let mut g = Graph::new();
        let m = 4;
        let fv = net
            .forward(
                &mut g,
                Tensor::zeros(&[m, 1, 16, 16]),
                &[0.0; 4],
                Dropout::Off,
                false,
            )
            .unwrap();
        let r = net.loss(&mut g, &fv, &[0.0; 4], &[0.0; 4], &[0.0; 4], &RegBeta::Fit);
        assert!(matches!(r, Err(Error::BatchSize { need: 8, got: 4 })));
    }

    #[test]
    fn wrong_image_shape() {
        let net = CausalNet::<f32>::init(small(Mode::Biased, 16), 1).unwrap();
        assert!(matches!(
            net.predict(Tensor::zeros(&[2, 1, 15, 16]), &[0.0, 1.0]),
            Err(Error::Shape(_))
        ));
    }
}
