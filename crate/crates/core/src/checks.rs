//! Finite-difference gradient checks for every differentiable op and for the
//! full causal loss.

use std::time::Instant;

use crate::error::Result;
use crate::model::{Architecture, CausalNet, Dropout, Mode, NetConfig, RegBeta};
use crate::rng::Stream;
use crate::tensor::{dropout_mask, grad_check, CustomOp, GradCheckReport, Graph, Tensor, Var};

/// Central-difference step.
pub const STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub tolerance: f64,
    pub report: GradCheckReport,
    pub seconds: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }
}

fn randn(shape: &[usize], s: &mut Stream) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n).map(|_| s.std_normal()).collect(),
    }
}

fn timed(
    name: &'static str,
    tolerance: f64,
    f: impl FnOnce() -> Result<GradCheckReport>,
) -> Result<CheckResult> {
    let t0 = Instant::now();
    let report = f()?;
    Ok(CheckResult {
        name,
        tolerance,
        report,
        seconds: t0.elapsed().as_secs_f64(),
    })
}

fn target(g: &mut Graph<f64>, like: Var, s: &mut Stream) -> Var {
    let shape = g.value(like).shape.clone();
    g.constant(randn(&shape, s))
}

pub fn check_conv2d() -> Result<CheckResult> {
    let mut s = Stream::new(101);
    let params = vec![
        randn(&[1, 2, 5, 5], &mut s),
        randn(&[3, 2, 3, 3], &mut s),
        randn(&[3], &mut s),
    ];
    let mut ts = Stream::new(102);
    let tgt = randn(&[1, 3, 5, 5], &mut ts);
    timed("conv2d", 1e-6, || {
        grad_check(&params, STEP, None, |g, v| {
            let y = g.conv2d(v[0], v[1], v[2])?;
            let t = g.constant(tgt.clone());
            g.mse(y, t)
        })
    })
}

pub fn check_dense() -> Result<CheckResult> {
    let mut s = Stream::new(201);
    let params = vec![
        randn(&[4, 3], &mut s),
        randn(&[3, 2], &mut s),
        randn(&[2], &mut s),
    ];
    timed("dense", 1e-6, || {
        grad_check(&params, STEP, None, |g, v| {
            let y = g.dense(v[0], v[1], v[2])?;
            let t = target(g, y, &mut Stream::new(202));
            g.mse(y, t)
        })
    })
}

pub fn check_mse() -> Result<CheckResult> {
    let mut s = Stream::new(301);
    let params = vec![randn(&[7], &mut s), randn(&[7], &mut s)];
    timed("mse", 1e-8, || {
        grad_check(&params, STEP, None, |g, v| g.mse(v[0], v[1]))
    })
}

pub fn check_relu_maxpool() -> Result<CheckResult> {
    let mut s = Stream::new(401);
    let params = vec![randn(&[2, 2, 6, 7], &mut s)];
    timed("relu+maxpool2", 1e-6, || {
        grad_check(&params, STEP, None, |g, v| {
            let r = g.relu(v[0]);
            let p = g.maxpool2(r)?;
            let t = target(g, p, &mut Stream::new(402));
            g.mse(p, t)
        })
    })
}

pub fn check_dropout_frozen() -> Result<CheckResult> {
    let mut s = Stream::new(501);
    let params = vec![
        randn(&[5, 4], &mut s),
        randn(&[4, 6], &mut s),
        randn(&[6], &mut s),
    ];
    let mask: Vec<f64> = dropout_mask(30, 0.25, &mut Stream::new(502));
    timed("dropout (frozen mask)", 1e-6, || {
        grad_check(&params, STEP, None, |g, v| {
            let h = g.dense(v[0], v[1], v[2])?;
            let d = g.dropout(h, mask.clone())?;
            let t = target(g, d, &mut Stream::new(503));
            g.mse(d, t)
        })
    })
}

/// Only affine ops before a quadratic loss, so central differences are exact
/// up to roundoff at any step; a large step keeps that roundoff small.
pub fn check_linear_graph() -> Result<CheckResult> {
    let mut s = Stream::new(601);
    let params = vec![
        randn(&[3, 4], &mut s),
        randn(&[3, 2], &mut s),
        randn(&[6, 5], &mut s),
        randn(&[5], &mut s),
    ];
    timed("linear graph", 1e-9, || {
        grad_check(&params, 1e-2, None, |g, v| {
            let c = g.concat_cols(v[0], v[1])?;
            let d = g.dense(c, v[2], v[3])?;
            let a = g.slice_cols(d, 1, 3)?;
            let b = g.slice_cols(d, 0, 3)?;
            let sum = g.add(a, b)?;
            let sc = g.scale(sum, 0.7);
            let sh = g.add_scalar(sc, -0.3);
            let r = g.reshape(sh, &[9])?;
            let t = target(g, r, &mut Stream::new(602));
            g.mse(r, t)
        })
    })
}

/// Causal loss of a whole network: frozen dropout masks and frozen `L_reg`
/// coefficients. `sample` limits the entries checked per tensor.
///
/// Wide layers put many ReLU and max-pool switch points near any given input,
/// so the wide check uses a smaller step to avoid straddling them.
pub fn check_causal_net(
    name: &'static str,
    arch: Architecture,
    sample: Option<usize>,
    step: f64,
) -> Result<CheckResult> {
    let size = 16;
    let m = 8;
    let cfg = NetConfig::new(arch.clone(), size, Mode::Causal);
    let mut net = CausalNet::<f64>::init(cfg, 701)?;
    let mut s = Stream::new(702);
    // Nonzero biases keep pre-activations off the ReLU kink.
    let jittered = net
        .tensors()
        .into_iter()
        .map(|mut p| {
            if p.shape.len() == 1 {
                p.data.iter_mut().for_each(|v| *v = 0.1 * s.std_normal());
            }
            p
        })
        .collect();
    net.set_tensors(jittered);
    let images = randn(&[m, 1, size, size], &mut s);
    let t: Vec<f64> = (0..m).map(|i| (i % 2) as f64).collect();
    let y: Vec<f64> = (0..m).map(|_| s.normal(0.0, 1.7)).collect();
    let x: Vec<f64> = (0..m).map(|_| s.std_normal()).collect();
    let z: Vec<f64> = (0..m).map(|_| s.std_normal()).collect();
    let masks: Vec<Vec<f64>> = arch
        .fc_sizes
        .iter()
        .map(|&w| dropout_mask(m * w, arch.dropout_p, &mut s))
        .collect();

    // Fit β^reg once at the unperturbed point.
    let beta = {
        let mut g = Graph::new();
        let fv = net.forward(&mut g, images.clone(), &t, Dropout::Frozen(&masks), true)?;
        net.loss(&mut g, &fv, &y, &x, &z, &RegBeta::Fit)?
            .2
            .expect("causal mode fits β")
    };
    let reg = RegBeta::Fixed(beta);
    let params = net.tensors();
    timed(name, 1e-4, || {
        grad_check(&params, step, sample, |g, v| {
            let fv = net.forward_with(g, v, images.clone(), &t, Dropout::Frozen(&masks), true)?;
            Ok(net.loss(g, &fv, &y, &x, &z, &reg)?.0)
        })
    })
}

/// Narrow network small enough to check every parameter entry.
pub fn reduced_architecture() -> Architecture {
    Architecture {
        conv_layers: 4,
        conv_channels: 3,
        fc_sizes: vec![7, 6, 5],
        head_width: 6,
        dropout_p: 0.25,
    }
}

/// Entries per tensor checked on the full-width network.
pub const FULL_WIDTH_SAMPLE: usize = 64;

pub fn run_suite() -> Result<Vec<CheckResult>> {
    Ok(vec![
        check_conv2d()?,
        check_dense()?,
        check_mse()?,
        check_relu_maxpool()?,
        check_dropout_frozen()?,
        check_linear_graph()?,
        check_causal_net(
            "causal loss, reduced width, all entries",
            reduced_architecture(),
            None,
            STEP,
        )?,
        check_causal_net(
            "causal loss, full width, sampled entries",
            Architecture::default(),
            Some(FULL_WIDTH_SAMPLE),
            1e-6,
        )?,
    ])
}

/// Elementwise square whose backward rule is off by a factor of 3/2.
#[derive(Debug)]
struct BrokenSquare;

impl CustomOp<f64> for BrokenSquare {
    fn name(&self) -> &str {
        "broken_square"
    }

    fn forward(&self, inputs: &[&Tensor<f64>]) -> Result<Tensor<f64>> {
        let x = inputs[0];
        Ok(Tensor {
            shape: x.shape.clone(),
            data: x.data.iter().map(|v| v * v).collect(),
        })
    }

    fn backward(
        &self,
        inputs: &[&Tensor<f64>],
        _output: &Tensor<f64>,
        grad_out: &Tensor<f64>,
    ) -> Vec<Tensor<f64>> {
        let x = inputs[0];
        vec![Tensor {
            shape: x.shape.clone(),
            data: x
                .data
                .iter()
                .zip(&grad_out.data)
                .map(|(v, g)| 3.0 * v * g)
                .collect(),
        }]
    }
}

/// Harness sanity fixture: a custom op with a wrong backward rule. A working
/// checker reports this as failed.
pub fn check_corrupted_op() -> Result<CheckResult> {
    let mut s = Stream::new(801);
    let params = vec![randn(&[6], &mut s)];
    timed("corrupted custom op (must fail)", 1e-6, || {
        grad_check(&params, STEP, None, |g, v| {
            let sq = g.custom(&[v[0]], Box::new(BrokenSquare))?;
            let t = target(g, sq, &mut Stream::new(802));
            g.mse(sq, t)
        })
    })
}
