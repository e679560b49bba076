//! End-to-end experiment: cohorts, image matching, training, baselines and
//! reports.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{self, CropMode, ImagePool};
use crate::model::{
    self, Architecture, CausalNet, Dropout, ForwardOutput, LossBreakdown, Mode, NetConfig, RegBeta,
};
use crate::ols::{self, Matrix};
use crate::rng::{derive_seed, Stream};
use crate::scm::{self, Cohort, ScmParams};
use crate::stats;
use crate::tensor::{Adam, AdamConfig, Graph, Tensor};

/// Rows per forward pass when scoring whole splits.
const EVAL_CHUNK: usize = 250;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Seeds {
    pub scm: u64,
    pub pool_train: u64,
    pub pool_val: u64,
    pub init: u64,
    pub train: u64,
    pub noise: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Seeds {
            scm: 1,
            pool_train: 2,
            pool_val: 3,
            init: 4,
            train: 5,
            noise: 6,
        }
    }
}

impl Seeds {
    /// Every seed replaced by the same value mixed with a per-purpose tag.
    pub fn from_base(base: u64) -> Self {
        Seeds {
            scm: derive_seed(base, 1),
            pool_train: derive_seed(base, 2),
            pool_val: derive_seed(base, 3),
            init: derive_seed(base, 4),
            train: derive_seed(base, 5),
            noise: derive_seed(base, 6),
        }
    }

    /// Seeds for replicate `r`; replicate 0 keeps the configured seeds.
    pub fn replicate(&self, r: usize) -> Self {
        if r == 0 {
            return self.clone();
        }
        let d = |s: u64| derive_seed(s, r as u64);
        Seeds {
            scm: d(self.scm),
            pool_train: d(self.pool_train),
            pool_val: d(self.pool_val),
            init: d(self.init),
            train: d(self.train),
            noise: d(self.noise),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub scm: ScmParams,
    pub n_train: usize,
    pub n_val: usize,
    pub pool_size: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    /// Side of the network input crop. 51 crops the full-resolution canvas;
    /// sizes up to 50 crop a 2×2-averaged 50×50 canvas instead.
    pub image_size: usize,
    pub arch: Architecture,
    pub seeds: Seeds,
    pub model_mode: Mode,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scm: ScmParams::default(),
            n_train: 3000,
            n_val: 1000,
            pool_size: 2609,
            batch_size: 40,
            lr: 1e-3,
            max_epochs: 200,
            patience: 10,
            image_size: 51,
            arch: Architecture::default(),
            seeds: Seeds::default(),
            model_mode: Mode::Causal,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("cannot parse config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Side of the canvas crops are taken from.
    pub fn canvas_side(&self) -> usize {
        if self.image_size <= image::CANVAS / 2 {
            image::CANVAS / 2
        } else {
            image::CANVAS
        }
    }

    pub fn net_config(&self, mode: Mode) -> NetConfig {
        NetConfig::new(self.arch.clone(), self.image_size, mode)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        self.scm
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        if self.batch_size == 0 || self.n_train < self.batch_size || self.n_val < self.batch_size {
            return cfg_err(format!(
                "n_train ({}) and n_val ({}) must be at least batch_size ({})",
                self.n_train, self.n_val, self.batch_size
            ));
        }
        if self.pool_size == 0 {
            return cfg_err("pool_size must be positive".into());
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return cfg_err(format!("lr must be positive, got {}", self.lr));
        }
        if self.max_epochs == 0 {
            return cfg_err("max_epochs must be positive".into());
        }
        if self.image_size > image::CANVAS || self.image_size == 0 {
            return cfg_err(format!("image_size {} outside 1..=100", self.image_size));
        }
        if self.seeds.pool_train == self.seeds.pool_val {
            return cfg_err("pool_train and pool_val seeds must differ".into());
        }
        for mode in [Mode::Causal, Mode::Biased, Mode::Calibration] {
            self.net_config(mode).validate()?;
        }
        if self.batch_size < model::MIN_CAUSAL_BATCH {
            return cfg_err(format!(
                "batch_size must be at least {} for the causal loss",
                model::MIN_CAUSAL_BATCH
            ));
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    pub fn with_replicate(&self, r: usize) -> Self {
        ExperimentConfig {
            seeds: self.seeds.replicate(r),
            ..self.clone()
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    hex::encode(h.finalize())
}

/// One cohort together with its matched, preprocessed images.
#[derive(Clone, Debug)]
pub struct Split {
    pub cohort: Cohort,
    /// Matched pool image per subject.
    pub image_ids: Vec<usize>,
    slots: Vec<usize>,
    canvases: Vec<f32>,
    pub side: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.cohort.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cohort.is_empty()
    }

    /// Normalized (and possibly downsampled) canvas of subject `i`.
    pub fn canvas(&self, i: usize) -> &[f32] {
        let n = self.side * self.side;
        let s = self.slots[i];
        &self.canvases[s * n..(s + 1) * n]
    }

    fn build(cohort: Cohort, pool: &ImagePool, side: usize, mean: f64, sd: f64) -> Result<Split> {
        let mut image_ids = Vec::with_capacity(cohort.len());
        for s in &cohort.subjects {
            image_ids.push(image::match_image(pool, s.x, s.z, None)?);
        }
        let mut slot_of = vec![usize::MAX; pool.len()];
        let mut canvases = Vec::new();
        let mut next = 0;
        let mut slots = Vec::with_capacity(image_ids.len());
        for &id in &image_ids {
            if slot_of[id] == usize::MAX {
                let px = pool.normalized_with(id, mean, sd);
                let px = if side == pool.side {
                    px
                } else {
                    image::downsample2(&px, pool.side)
                };
                canvases.extend_from_slice(&px);
                slot_of[id] = next;
                next += 1;
            }
            slots.push(slot_of[id]);
        }
        Ok(Split {
            cohort,
            image_ids,
            slots,
            canvases,
            side,
        })
    }

    fn images(&self, idx: &[usize], size: usize, mut aug: Option<&mut Stream>) -> Tensor<f32> {
        let n = size * size;
        let mut data = vec![0.0f32; idx.len() * n];
        for (k, &i) in idx.iter().enumerate() {
            let mode = match aug.as_deref_mut() {
                Some(s) => CropMode::Random(s),
                None => CropMode::Center,
            };
            image::crop_into(
                self.canvas(i),
                self.side,
                size,
                mode,
                &mut data[k * n..(k + 1) * n],
            );
        }
        Tensor {
            shape: vec![idx.len(), 1, size, size],
            data,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Split,
    pub val: Split,
    pub norm_mean: f64,
    pub norm_sd: f64,
}

/// Training and validation cohorts exactly as `assemble_dataset` samples them.
pub fn assemble_cohorts(cfg: &ExperimentConfig) -> Result<(Cohort, Cohort)> {
    cfg.validate()?;
    let s = &cfg.seeds;
    Ok((
        scm::sample_cohort(&cfg.scm, cfg.n_train, derive_seed(s.scm, 0))?,
        scm::sample_cohort(&cfg.scm, cfg.n_val, derive_seed(s.scm, 1))?,
    ))
}

/// Samples both cohorts, renders disjoint image pools and matches subjects
/// to images. Both pools are standardized with the training pool's pixel
/// statistics.
pub fn assemble_dataset(cfg: &ExperimentConfig) -> Result<Datasets> {
    let (train_c, val_c) = assemble_cohorts(cfg)?;
    let s = &cfg.seeds;
    let side = cfg.canvas_side();
    let train_pool = image::build_pool(cfg.pool_size, s.pool_train)?;
    let (mean, sd) = (train_pool.norm_mean, train_pool.norm_sd);
    let train = Split::build(train_c, &train_pool, side, mean, sd)?;
    drop(train_pool);
    let val_pool = image::build_pool(cfg.pool_size, s.pool_val)?;
    let val = Split::build(val_c, &val_pool, side, mean, sd)?;
    Ok(Datasets {
        train,
        val,
        norm_mean: mean,
        norm_sd: sd,
    })
}

impl Datasets {
    /// Hex sha256 over subjects, matched ids and canvases of both splits.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for sp in [&self.train, &self.val] {
            for (s, id) in sp.cohort.subjects.iter().zip(&sp.image_ids) {
                for v in [s.u1, s.u2, s.z, s.x, s.y] {
                    h.update(v.to_le_bytes());
                }
                h.update([s.t]);
                h.update((*id as u64).to_le_bytes());
            }
            for v in &sp.canvases {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: CausalNet<f32>,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

/// Dropout-free outputs for every subject of a split (center crops).
pub fn split_outputs(net: &CausalNet<f32>, split: &Split) -> Result<ForwardOutput> {
    let size = net.cfg.input_size;
    let k = net.cfg.arch.head_width;
    let t = split.cohort.t();
    let mut y_hat = Vec::with_capacity(split.len());
    let mut acts = Vec::with_capacity(split.len() * k);
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(EVAL_CHUNK) {
        let imgs = split.images(chunk, size, None);
        let tt: Vec<f32> = chunk.iter().map(|&i| t[i] as f32).collect();
        let out = net.predict(imgs, &tt)?;
        y_hat.extend(out.y_hat);
        acts.extend(out.activations.data);
    }
    Ok(ForwardOutput {
        y_hat,
        activations: Matrix::new(split.len(), k, acts)?,
        head_coeffs: net.head_coeffs(),
    })
}

/// Validation loss of `mode`, evaluated over the whole split in one piece.
pub fn split_loss(net: &CausalNet<f32>, split: &Split) -> Result<LossBreakdown> {
    let out = split_outputs(net, split)?;
    let c = &split.cohort;
    model::loss_from_outputs(net.cfg.mode, &out, &c.y(), &c.x(), &c.z())
}

fn finite(b: &LossBreakdown) -> bool {
    [b.l_y, b.l_x, b.l_reg, b.l_z, b.total]
        .iter()
        .all(|v| v.is_finite())
}

/// Minibatch Adam with augmentation and early stopping on validation loss.
///
/// The best-validation parameters are restored before returning. Training
/// stops once validation loss has failed to improve for more than `patience`
/// consecutive epochs, or after `max_epochs`.
pub fn train(cfg: &ExperimentConfig, data: &Datasets, mode: Mode) -> Result<TrainOutcome> {
    let ncfg = cfg.net_config(mode);
    let mut net = CausalNet::<f32>::init(ncfg, derive_seed(cfg.seeds.init, 0))?;
    let mut params = net.tensors();
    let mut opt = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..Default::default()
        },
        &params,
    );
    let tr = &data.train;
    let (t, x, y, z) = (tr.cohort.t(), tr.cohort.x(), tr.cohort.y(), tr.cohort.z());
    let size = cfg.image_size;
    let min_batch = if mode == Mode::Causal {
        model::MIN_CAUSAL_BATCH
    } else {
        1
    };
    let mut best = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut bad = 0;
    let mut log = Vec::new();
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        epochs_run = epoch + 1;
        let mut s = Stream::substream(derive_seed(cfg.seeds.train, 0), epoch as u64);
        let order = s.permutation(tr.len());
        let mut acc = LossBreakdown::default();
        let mut batches = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            if idx.len() < min_batch {
                continue;
            }
            let imgs = tr.images(idx, size, Some(&mut s));
            let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            let tb: Vec<f32> = idx.iter().map(|&i| t[i] as f32).collect();
            let mut g = Graph::new();
            let fv = net.forward(
                &mut g,
                imgs,
                &tb,
                Dropout::Sampled(&mut s),
                mode == Mode::Causal,
            )?;
            let (loss, br, _) =
                net.loss(&mut g, &fv, &pick(&y), &pick(&x), &pick(&z), &RegBeta::Fit)?;
            if !finite(&br) {
                return Err(Error::Training {
                    epoch,
                    msg: format!("non-finite training loss {br:?}"),
                });
            }
            let grads = g.backward(loss)?;
            let gs = net.collect_grads(&fv, &grads);
            opt.update(&mut params, &gs)?;
            net.set_tensors(params.clone());
            acc.l_y += br.l_y;
            acc.l_x += br.l_x;
            acc.l_reg += br.l_reg;
            acc.l_z += br.l_z;
            acc.total += br.total;
            batches += 1;
        }
        let nb = batches.max(1) as f64;
        let train_mean = LossBreakdown {
            l_y: acc.l_y / nb,
            l_x: acc.l_x / nb,
            l_reg: acc.l_reg / nb,
            l_z: acc.l_z / nb,
            total: acc.total / nb,
        };
        let val = split_loss(&net, &data.val)?;
        if !finite(&val) {
            return Err(Error::Training {
                epoch,
                msg: format!("non-finite validation loss {val:?}"),
            });
        }
        log::info!(
            "{} epoch {epoch}: train {:.4} val {:.4} (y {:.4} x {:.4} reg {:.4} z {:.4})",
            mode.name(),
            train_mean.total,
            val.total,
            val.l_y,
            val.l_x,
            val.l_reg,
            val.l_z
        );
        log.push(EpochLog {
            epoch,
            train: train_mean,
            val,
        });
        if val.total < best {
            best = val.total;
            best_params = params.clone();
            best_epoch = epoch;
            bad = 0;
        } else {
            bad += 1;
            if bad > cfg.patience {
                break;
            }
        }
    }
    net.set_tensors(best_params);
    Ok(TrainOutcome {
        net,
        log,
        best_epoch,
        epochs_run,
    })
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from(
        "epoch,train_l_y,train_l_x,train_l_reg,train_l_z,train_total,val_l_y,val_l_x,val_l_reg,val_l_z,val_total\n",
    );
    for e in log {
        let (a, b) = (&e.train, &e.val);
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            e.epoch, a.l_y, a.l_x, a.l_reg, a.l_z, a.total, b.l_y, b.l_x, b.l_reg, b.l_z, b.total
        );
    }
    out
}

/// Activations of a split together with its tabular columns.
#[derive(Clone, Debug)]
pub struct Activations {
    pub matrix: Matrix,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

pub fn extract_activations(net: &CausalNet<f32>, split: &Split) -> Result<Activations> {
    let out = split_outputs(net, split)?;
    Ok(Activations {
        matrix: out.activations,
        t: split.cohort.t(),
        y: split.cohort.y(),
        x: split.cohort.x(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCalibration {
    pub mse_x: f64,
    pub mse_z: f64,
}

/// Validation MSEs of a network trained to read `x` and `z` off the images.
pub fn calibrate_from(net: &CausalNet<f32>, data: &Datasets) -> Result<NoiseCalibration> {
    let out = split_outputs(net, &data.val)?;
    let c = &data.val.cohort;
    Ok(NoiseCalibration {
        mse_x: stats::mse(&out.activations.column(0), &c.x()),
        mse_z: stats::mse(&out.activations.column(1), &c.z()),
    })
}

pub fn calibrate_noise(
    cfg: &ExperimentConfig,
    data: &Datasets,
) -> Result<(NoiseCalibration, TrainOutcome)> {
    let run = train(cfg, data, Mode::Calibration)?;
    Ok((calibrate_from(&run.net, data)?, run))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultsRow {
    pub model: String,
    pub variables: String,
    pub mse_y: f64,
    pub ate: f64,
}

pub const ROW_ORDER: [(&str, &str); 5] = [
    ("Regression", "t"),
    ("Regression", "t,x',z'"),
    ("Regression", "t,z'"),
    ("BiasedNet", "image,t"),
    ("CausalNet", "image,t"),
];

fn row(i: usize, mse_y: f64, ate: f64) -> ResultsRow {
    ResultsRow {
        model: ROW_ORDER[i].0.into(),
        variables: ROW_ORDER[i].1.into(),
        mse_y,
        ate,
    }
}

fn noisy(v: &[f64], var: f64, seed: u64, stream: u64) -> Vec<f64> {
    let mut s = Stream::substream(seed, stream);
    let sd = var.max(0.0).sqrt();
    v.iter().map(|a| a + sd * s.std_normal()).collect()
}

/// Tabular rows: OLS fitted on the training cohort, scored on validation.
/// `x'` and `z'` carry Gaussian noise whose variance is the calibrated MSE.
pub fn run_baselines(
    train: &Cohort,
    val: &Cohort,
    cal: &NoiseCalibration,
    noise_seed: u64,
) -> Result<Vec<ResultsRow>> {
    let (tt, ty) = (train.t(), train.y());
    let (vt, vy) = (val.t(), val.y());
    let txn = noisy(&train.x(), cal.mse_x, noise_seed, 0);
    let tzn = noisy(&train.z(), cal.mse_z, noise_seed, 1);
    let vxn = noisy(&val.x(), cal.mse_x, noise_seed, 2);
    let vzn = noisy(&val.z(), cal.mse_z, noise_seed, 3);
    let score = |trc: Vec<Vec<f64>>, vac: Vec<Vec<f64>>| -> Result<(f64, f64)> {
        let f = ols::fit_columns(&trc, &ty, ols::DEFAULT_RIDGE)?;
        let pred = ols::predict(&f, &Matrix::from_columns(&vac)?)?;
        Ok((stats::mse(&pred, &vy), f.coefficients[1]))
    };
    let (m0, a0) = score(vec![tt.clone()], vec![vt.clone()])?;
    let (m1, a1) = score(
        vec![tt.clone(), txn, tzn.clone()],
        vec![vt.clone(), vxn, vzn.clone()],
    )?;
    let (m2, a2) = score(vec![tt, tzn], vec![vt, vzn])?;
    Ok(vec![row(0, m0, a0), row(1, m1, a1), row(2, m2, a2)])
}

/// Extra per-network numbers logged next to the results table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetDiagnostics {
    /// t coefficient of the trained head.
    pub head_beta_t: f64,
    /// MSE of the head's own predictions on validation.
    pub head_mse_y: f64,
    /// Refit on training activations, scored on validation.
    pub train_refit_ate: f64,
    pub train_refit_mse_y: f64,
    /// R² of x regressed on activations 2..k over validation.
    pub r2_x_on_rest: f64,
    /// MSE of activation 1 against x over validation.
    pub a1_mse_x: f64,
}

fn columns(m: &Matrix, from: usize) -> Matrix {
    let k = m.cols - from;
    let mut out = Matrix::zeros(m.rows, k);
    for i in 0..m.rows {
        out.data[i * k..(i + 1) * k].copy_from_slice(&m.row(i)[from..]);
    }
    out
}

fn with_t(m: &Matrix, t: &[f64]) -> Matrix {
    let k = m.cols + 1;
    let mut out = Matrix::zeros(m.rows, k);
    for i in 0..m.rows {
        out.data[i * k..i * k + m.cols].copy_from_slice(m.row(i));
        out.data[i * k + m.cols] = t[i];
    }
    out
}

fn net_row(
    net: &CausalNet<f32>,
    data: &Datasets,
    skip: usize,
) -> Result<(f64, f64, NetDiagnostics)> {
    let val = split_outputs(net, &data.val)?;
    let tr = split_outputs(net, &data.train)?;
    let vc = &data.val.cohort;
    let (vt, vy, vx) = (vc.t(), vc.y(), vc.x());
    let design = columns(&val.activations, skip);
    let (ate, mse_y) = ols::ate_from_refit(&design, &vt, &vy)?;

    let tr_fit = ols::fit(
        &with_t(&columns(&tr.activations, skip), &data.train.cohort.t()),
        &data.train.cohort.y(),
        ols::DEFAULT_RIDGE,
    )?;
    let tr_pred = ols::predict(&tr_fit, &with_t(&design, &vt))?;
    let rest = columns(&val.activations, 1);
    let r2 = ols::fit(&rest, &vx, ols::DEFAULT_RIDGE)?.r_squared;
    let diag = NetDiagnostics {
        head_beta_t: val.head_coeffs[1],
        head_mse_y: stats::mse(&val.y_hat, &vy),
        train_refit_ate: *tr_fit.coefficients.last().expect("t coefficient"),
        train_refit_mse_y: stats::mse(&tr_pred, &vy),
        r2_x_on_rest: r2,
        a1_mse_x: stats::mse(&val.activations.column(0), &vx),
    };
    Ok((mse_y, ate, diag))
}

/// BiasedNet refits y on all activations plus t; CausalNet drops the first
/// activation. Both refits are fitted and scored on the validation split.
pub fn evaluate_nets(
    causal: &CausalNet<f32>,
    biased: &CausalNet<f32>,
    data: &Datasets,
) -> Result<(Vec<ResultsRow>, NetDiagnostics, NetDiagnostics)> {
    let (bm, ba, bd) = net_row(biased, data, 0)?;
    let (cm, ca, cd) = net_row(causal, data, 1)?;
    Ok((vec![row(3, bm, ba), row(4, cm, ca)], bd, cd))
}

pub fn results_csv(rows: &[ResultsRow]) -> Result<String> {
    if rows.len() != ROW_ORDER.len()
        || rows
            .iter()
            .zip(ROW_ORDER)
            .any(|(r, (m, v))| r.model != m || r.variables != v)
    {
        return Err(Error::Report(
            "results need the five canonical rows in order".into(),
        ));
    }
    let mut out = String::from("model,variables,mse_y,ate\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},\"{}\",{:.6},{:.6}",
            r.model, r.variables, r.mse_y, r.ate
        );
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainingSummary {
    pub mode: Mode,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub best_val: LossBreakdown,
}

impl TrainingSummary {
    pub fn of(mode: Mode, o: &TrainOutcome) -> Self {
        TrainingSummary {
            mode,
            best_epoch: o.best_epoch,
            epochs_run: o.epochs_run,
            best_val: o.log.get(o.best_epoch).map(|e| e.val).unwrap_or_default(),
        }
    }
}

/// Everything one pipeline run produces.
#[derive(Clone, Debug, Serialize)]
pub struct ReplicateResult {
    pub rows: Vec<ResultsRow>,
    pub calibration: NoiseCalibration,
    pub biased: NetDiagnostics,
    pub causal: NetDiagnostics,
    pub training: Vec<TrainingSummary>,
    pub dataset_hash: String,
    #[serde(skip)]
    pub logs: Vec<(Mode, Vec<EpochLog>)>,
    #[serde(skip)]
    pub nets: Vec<(Mode, CausalNet<f32>)>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    config_hash: String,
    config: &'a ExperimentConfig,
    seeds: &'a Seeds,
    dataset_hash: &'a str,
    calibration: &'a NoiseCalibration,
    interventional_ate: f64,
    rows: &'a [ResultsRow],
    diagnostics: Diagnostics<'a>,
    training: &'a [TrainingSummary],
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    biased: &'a NetDiagnostics,
    causal: &'a NetDiagnostics,
}

/// Rendered report files.
#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub results_csv: String,
    pub manifest_json: String,
}

/// Sample size of the interventional reference printed in every manifest.
pub const ORACLE_N: usize = 100_000;

pub fn make_report(cfg: &ExperimentConfig, res: &ReplicateResult) -> Result<Report> {
    let results_csv = results_csv(&res.rows)?;
    let m = Manifest {
        config_hash: cfg.hash(),
        config: cfg,
        seeds: &cfg.seeds,
        dataset_hash: &res.dataset_hash,
        calibration: &res.calibration,
        interventional_ate: scm::interventional_ate(&cfg.scm, ORACLE_N, cfg.seeds.scm)?,
        rows: &res.rows,
        diagnostics: Diagnostics {
            biased: &res.biased,
            causal: &res.causal,
        },
        training: &res.training,
    };
    Ok(Report {
        results_csv,
        manifest_json: serde_json::to_string_pretty(&m)?,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_replicate(dir: &Path, cfg: &ExperimentConfig, res: &ReplicateResult) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let rep = make_report(cfg, res)?;
    write(&dir.join("results.csv"), &rep.results_csv)?;
    write(&dir.join("manifest.json"), &rep.manifest_json)?;
    for (mode, log) in &res.logs {
        write(
            &dir.join(format!("training_log_{}.csv", mode.name())),
            &training_log_csv(log),
        )?;
    }
    Ok(())
}

/// Full pipeline for one seed set.
pub fn run_replicate(cfg: &ExperimentConfig) -> Result<ReplicateResult> {
    let data = assemble_dataset(cfg).map_err(|e| e.at("dataset"))?;
    let (cal, cal_run) = calibrate_noise(cfg, &data).map_err(|e| e.at("calibration"))?;
    let base = run_baselines(&data.train.cohort, &data.val.cohort, &cal, cfg.seeds.noise)
        .map_err(|e| e.at("baselines"))?;
    let biased = train(cfg, &data, Mode::Biased).map_err(|e| e.at("biased training"))?;
    let causal = train(cfg, &data, Mode::Causal).map_err(|e| e.at("causal training"))?;
    let (net_rows, bd, cd) =
        evaluate_nets(&causal.net, &biased.net, &data).map_err(|e| e.at("evaluation"))?;
    let mut rows = base;
    rows.extend(net_rows);
    Ok(ReplicateResult {
        rows,
        calibration: cal,
        biased: bd,
        causal: cd,
        training: vec![
            TrainingSummary::of(Mode::Calibration, &cal_run),
            TrainingSummary::of(Mode::Biased, &biased),
            TrainingSummary::of(Mode::Causal, &causal),
        ],
        dataset_hash: data.hash(),
        logs: vec![
            (Mode::Calibration, cal_run.log),
            (Mode::Biased, biased.log),
            (Mode::Causal, causal.log),
        ],
        nets: vec![(Mode::Biased, biased.net), (Mode::Causal, causal.net)],
    })
}

/// Mean and sample sd per canonical row.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AggregateRow {
    pub model: String,
    pub variables: String,
    pub mse_y_mean: f64,
    pub mse_y_sd: f64,
    pub ate_mean: f64,
    pub ate_sd: f64,
    pub n: usize,
}

pub fn aggregate(results: &[ReplicateResult]) -> Vec<AggregateRow> {
    (0..ROW_ORDER.len())
        .map(|i| {
            let mse: Vec<f64> = results.iter().map(|r| r.rows[i].mse_y).collect();
            let ate: Vec<f64> = results.iter().map(|r| r.rows[i].ate).collect();
            AggregateRow {
                model: ROW_ORDER[i].0.into(),
                variables: ROW_ORDER[i].1.into(),
                mse_y_mean: stats::mean(&mse),
                mse_y_sd: stats::sample_sd(&mse),
                ate_mean: stats::mean(&ate),
                ate_sd: stats::sample_sd(&ate),
                n: results.len(),
            }
        })
        .collect()
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("model,variables,mse_y_mean,mse_y_sd,ate_mean,ate_sd,n\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},\"{}\",{:.6},{:.6},{:.6},{:.6},{}",
            r.model, r.variables, r.mse_y_mean, r.mse_y_sd, r.ate_mean, r.ate_sd, r.n
        );
    }
    out
}

/// Runs `k` replicates (on up to `jobs` threads) and writes per-replicate and
/// aggregate reports under `out/<config hash prefix>/`. Returns that
/// directory and the replicate results in replicate order.
pub fn reproduce(
    cfg: &ExperimentConfig,
    k: usize,
    jobs: usize,
    out: &Path,
) -> Result<(PathBuf, Vec<ReplicateResult>)> {
    cfg.validate()?;
    if k == 0 {
        return Err(Error::Config("need at least one replicate".into()));
    }
    let dir = out.join(&cfg.hash()[..16]);
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write(&dir.join("config.json"), &cfg.to_json())?;
    let cfgs: Vec<ExperimentConfig> = (0..k).map(|r| cfg.with_replicate(r)).collect();
    let results = run_all(&cfgs, jobs.max(1))?;
    for (r, (c, res)) in cfgs.iter().zip(&results).enumerate() {
        write_replicate(&dir.join(format!("replicate-{r}")), c, res)?;
    }
    if k == 1 {
        write(&dir.join("results.csv"), &results_csv(&results[0].rows)?)?;
    }
    write(
        &dir.join("aggregate.csv"),
        &aggregate_csv(&aggregate(&results)),
    )?;
    Ok((dir, results))
}

fn run_all(cfgs: &[ExperimentConfig], jobs: usize) -> Result<Vec<ReplicateResult>> {
    if jobs == 1 || cfgs.len() == 1 {
        return cfgs.iter().map(run_replicate).collect();
    }
    let mut slots: Vec<Option<Result<ReplicateResult>>> = (0..cfgs.len()).map(|_| None).collect();
    for (batch_cfgs, batch_slots) in cfgs.chunks(jobs).zip(slots.chunks_mut(jobs)) {
        std::thread::scope(|sc| {
            let handles: Vec<_> = batch_cfgs
                .iter()
                .map(|c| sc.spawn(move || run_replicate(c)))
                .collect();
            for (h, slot) in handles.into_iter().zip(batch_slots.iter_mut()) {
                *slot = Some(h.join().unwrap_or_else(|_| {
                    Err(Error::Training {
                        epoch: 0,
                        msg: "replicate thread panicked".into(),
                    })
                }));
            }
        });
    }
    slots
        .into_iter()
        .map(|s| s.expect("every replicate ran"))
        .collect()
}
