//! Teacher-student MLP regression trained with AdamW, where every linear
//! layer's backward GEMMs can be routed through the emulated MXFP4 path.
//!
//! The forward pass and the master weights stay in `f64`. Only the two GEMMs
//! of each layer's backward pass are quantized; bias gradients and activation
//! derivatives are exact.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::qgemm::{linear_backward_parts, GemmMode};
use crate::rht::DEFAULT_RHT_G;
use crate::rng::{Domain, StreamKey};

pub const LOSS_CSV_HEADER: &str = "step,loss,mode,seed";

const TAG_TEACHER: u64 = 1;
const TAG_STUDENT: u64 = 2;
const TAG_BATCH: u64 = 3;
const TAG_EVAL: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative in terms of the pre-activation.
    fn derivative(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Backward-pass arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BackwardMode {
    Exact,
    Mxfp4,
    Mxfp4Rht,
    Mxfp4Sr,
    Mxfp4RhtSr,
}

impl BackwardMode {
    pub const ALL: [BackwardMode; 5] = [
        BackwardMode::Exact,
        BackwardMode::Mxfp4,
        BackwardMode::Mxfp4Rht,
        BackwardMode::Mxfp4Sr,
        BackwardMode::Mxfp4RhtSr,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            BackwardMode::Exact => "EXACT",
            BackwardMode::Mxfp4 => "MXFP4",
            BackwardMode::Mxfp4Rht => "MXFP4_RHT",
            BackwardMode::Mxfp4Sr => "MXFP4_SR",
            BackwardMode::Mxfp4RhtSr => "MXFP4_RHT_SR",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::arg(format!("unknown backward mode {s:?}")))
    }

    pub fn gemm_mode(&self, rht_g: usize) -> GemmMode {
        let base = match self {
            BackwardMode::Exact => GemmMode::EXACT,
            BackwardMode::Mxfp4 | BackwardMode::Mxfp4Rht => GemmMode::nearest(),
            BackwardMode::Mxfp4Sr | BackwardMode::Mxfp4RhtSr => GemmMode::stochastic(),
        };
        match self {
            BackwardMode::Mxfp4Rht | BackwardMode::Mxfp4RhtSr => base.with_rht(rht_g),
            _ => GemmMode { rht_g, ..base },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`, so `y = x·Wᵀ + b`.
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub layers: Vec<Layer>,
}

impl MlpModel {
    /// Weights `N(0, 1/fan_in)`; biases `N(0, bias_scale²)`.
    pub fn init(dims: &[usize], activation: Activation, bias_scale: f64, key: &StreamKey) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::arg(format!("invalid layer dims {dims:?}")));
        }
        let mut rng = key.rng();
        let layers = dims
            .windows(2)
            .map(|d| {
                let sd = 1.0 / (d[0] as f64).sqrt();
                let w = Matrix::from_fn(d[1], d[0], |_, _| sd * rng.sample::<f64, _>(StandardNormal));
                let b = (0..d[1])
                    .map(|_| bias_scale * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                Layer { w, b }
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            activation,
            layers,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().expect("at least two dims")
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Cache)> {
        if x.cols() != self.in_dim() {
            return Err(Error::shape(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_acts = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.matmul(&layer.w.transpose())?;
            for r in 0..z.rows() {
                for (v, b) in z.row_mut(r).iter_mut().zip(&layer.b) {
                    *v += b;
                }
            }
            let next = if l + 1 < self.layers.len() {
                z.map(|v| self.activation.apply(v))
            } else {
                z.clone()
            };
            inputs.push(a);
            pre_acts.push(z);
            a = next;
        }
        Ok((a, Cache { inputs, pre_acts }))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.forward(x).map(|(y, _)| y)
    }

    /// Gradients of all parameters given `dL/dy`. Layer `l` draws its
    /// quantization randomness from `key.at(1, l)`.
    pub fn backward(&self, cache: &Cache, dldy: &Matrix, mode: &GemmMode, key: &StreamKey) -> Result<Vec<LayerGrad>> {
        self.backward_with_correction(cache, dldy, mode, key, mode.output_correction())
    }

    pub(crate) fn backward_with_correction(
        &self,
        cache: &Cache,
        dldy: &Matrix,
        mode: &GemmMode,
        key: &StreamKey,
        correction: f64,
    ) -> Result<Vec<LayerGrad>> {
        let n_layers = self.layers.len();
        if cache.inputs.len() != n_layers || dldy.shape() != cache.pre_acts[n_layers - 1].shape() {
            return Err(Error::shape("dL/dy does not match the cached forward pass"));
        }
        let mut grads = Vec::with_capacity(n_layers);
        let mut delta = dldy.clone();
        for l in (0..n_layers).rev() {
            let layer = &self.layers[l];
            let (dx, dw) = linear_backward_parts(
                &delta,
                &cache.inputs[l],
                &layer.w,
                mode,
                &key.at(1, l as u64),
                l > 0,
                correction,
            )?;
            let mut db = vec![0.0; layer.b.len()];
            for r in 0..delta.rows() {
                for (acc, v) in db.iter_mut().zip(delta.row(r)) {
                    *acc += v;
                }
            }
            grads.push(LayerGrad { w: dw, b: db });
            if let Some(mut dx) = dx {
                let pre = &cache.pre_acts[l - 1];
                for (g, &z) in dx.as_mut_slice().iter_mut().zip(pre.as_slice()) {
                    *g *= self.activation.derivative(z);
                }
                delta = dx;
            }
        }
        grads.reverse();
        Ok(grads)
    }
}

/// Forward-pass values needed by the backward pass.
#[derive(Debug, Clone)]
pub struct Cache {
    /// Input to each linear layer.
    pub inputs: Vec<Matrix>,
    /// Output of each linear layer before the activation.
    pub pre_acts: Vec<Matrix>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub w: Matrix,
    pub b: Vec<f64>,
}

/// Mean squared error over all entries, and its gradient.
pub fn mse_loss(y: &Matrix, target: &Matrix) -> Result<(f64, Matrix)> {
    if y.shape() != target.shape() {
        return Err(Error::shape("prediction and target shapes differ"));
    }
    let n = y.as_slice().len() as f64;
    let diff: Vec<f64> = y.as_slice().iter().zip(target.as_slice()).map(|(a, b)| a - b).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = Matrix::from_vec(y.rows(), y.cols(), diff.iter().map(|d| 2.0 * d / n).collect())?;
    Ok((loss, grad))
}

/// Input distribution: `N(0, I)` plus, per entry with probability
/// `outlier_prop`, an additive `N(0, outlier_variance)` component.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputDist {
    pub outlier_prop: f64,
    pub outlier_variance: f64,
}

impl Default for InputDist {
    fn default() -> Self {
        Self {
            outlier_prop: 0.0,
            outlier_variance: 0.0,
        }
    }
}

/// Regression onto a frozen random network.
#[derive(Debug, Clone)]
pub struct TeacherStudentTask {
    pub teacher: MlpModel,
    pub inputs: InputDist,
    key: StreamKey,
}

impl TeacherStudentTask {
    pub fn new(dims: &[usize], activation: Activation, inputs: InputDist, key: &StreamKey) -> Result<Self> {
        let teacher = MlpModel::init(dims, activation, 0.1, &key.derive(TAG_TEACHER))?;
        Ok(Self {
            teacher,
            inputs,
            key: key.derive(TAG_BATCH),
        })
    }

    /// Batch `index`; the same index always gives the same batch.
    pub fn batch(&self, index: u64, batch: usize) -> Result<(Matrix, Matrix)> {
        self.sample(&self.key.at(0, index), batch)
    }

    fn sample(&self, key: &StreamKey, batch: usize) -> Result<(Matrix, Matrix)> {
        let mut rng = key.in_domain(Domain::Data).rng();
        let sd = self.inputs.outlier_variance.sqrt();
        let p = self.inputs.outlier_prop;
        let x = Matrix::from_fn(batch, self.teacher.in_dim(), |_, _| {
            let v: f64 = rng.sample(StandardNormal);
            if p > 0.0 && rng.gen::<f64>() < p {
                v + sd * rng.sample::<f64, _>(StandardNormal)
            } else {
                v
            }
        });
        let y = self.teacher.predict(&x)?;
        Ok((x, y))
    }
}

/// One batch of a teacher-student task whose teacher is drawn from `key`,
/// with Gaussian inputs of width `in_dim`, one hidden layer of the same width
/// and a 32-wide output.
pub fn teacher_student_task(key: &StreamKey, batch: usize, in_dim: usize) -> Result<(Matrix, Matrix)> {
    let task = TeacherStudentTask::new(&[in_dim, in_dim, 32], Activation::Tanh, InputDist::default(), key)?;
    task.batch(0, batch)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Fraction of the run spent in linear warmup.
    pub warmup_frac: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup_frac: 0.01,
        }
    }
}

impl AdamW {
    pub fn warmup_steps(&self, total_steps: usize) -> usize {
        ((self.warmup_frac * total_steps as f64).ceil() as usize).max(1)
    }

    pub fn lr_at(&self, step: usize, total_steps: usize) -> f64 {
        let w = self.warmup_steps(total_steps);
        self.lr * ((step + 1) as f64 / w as f64).min(1.0)
    }
}

/// First and second moment buffers for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Moments {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// Decoupled weight decay: `p ← p(1 − lr·λ) − lr·m̂/(√v̂ + ε)`.
    fn update(&mut self, p: &mut [f64], g: &[f64], opt: &AdamW, lr: f64, t: i32) {
        let bc1 = 1.0 - opt.beta1.powi(t);
        let bc2 = 1.0 - opt.beta2.powi(t);
        let decay = 1.0 - lr * opt.weight_decay;
        for i in 0..p.len() {
            self.m[i] = opt.beta1 * self.m[i] + (1.0 - opt.beta1) * g[i];
            self.v[i] = opt.beta2 * self.v[i] + (1.0 - opt.beta2) * g[i] * g[i];
            let step = (self.m[i] / bc1) / ((self.v[i] / bc2).sqrt() + opt.eps);
            p[i] = p[i] * decay - lr * step;
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdamWState {
    opt: AdamW,
    moments: Vec<(Moments, Moments)>,
    t: i32,
}

impl AdamWState {
    pub fn new(opt: AdamW, model: &MlpModel) -> Self {
        let moments = model
            .layers
            .iter()
            .map(|l| (Moments::new(l.w.as_slice().len()), Moments::new(l.b.len())))
            .collect();
        Self { opt, moments, t: 0 }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &[LayerGrad], lr: f64) -> Result<()> {
        if grads.len() != model.layers.len() {
            return Err(Error::shape("one gradient per layer is required"));
        }
        self.t += 1;
        for ((layer, g), (mw, mb)) in model.layers.iter_mut().zip(grads).zip(&mut self.moments) {
            if g.w.shape() != layer.w.shape() || g.b.len() != layer.b.len() {
                return Err(Error::shape("gradient shape does not match its parameter"));
            }
            mw.update(layer.w.as_mut_slice(), g.w.as_slice(), &self.opt, lr, self.t);
            mb.update(&mut layer.b, &g.b, &self.opt, lr, self.t);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub backward_mode: BackwardMode,
    pub rht_g: usize,
    pub steps: usize,
    pub batch: usize,
    pub eval_batch: usize,
    pub inputs: InputDist,
    pub seed: u64,
    pub optimizer: AdamW,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dims: vec![256, 256, 256, 32],
            activation: Activation::Tanh,
            backward_mode: BackwardMode::Exact,
            rht_g: DEFAULT_RHT_G,
            steps: 400,
            batch: 256,
            eval_batch: 1024,
            inputs: InputDist::default(),
            seed: 0,
            optimizer: AdamW::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.len() < 2 || self.dims.iter().any(|&d| d == 0 || d % 32 != 0) {
            return Err(Error::Config(format!(
                "layer dims {:?} must be positive multiples of 32",
                self.dims
            )));
        }
        if self.batch == 0 || !self.batch.is_multiple_of(32) {
            return Err(Error::Config(format!(
                "batch {} must be a positive multiple of 32",
                self.batch
            )));
        }
        if self.steps == 0 || self.eval_batch == 0 {
            return Err(Error::Config("steps and eval_batch must be positive".into()));
        }
        let i = &self.inputs;
        if !((0.0..1.0).contains(&i.outlier_prop) && i.outlier_variance.is_finite() && i.outlier_variance >= 0.0) {
            return Err(Error::Config(
                "input outlier_prop must be in [0, 1) and outlier_variance non-negative".into(),
            ));
        }
        crate::rht::validate_g(self.rht_g).map_err(|e| Error::Config(e.to_string()))?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config("invalid optimizer hyperparameters".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, in hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&json);
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            write!(s, "{b:02x}").expect("write to string");
            s
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: BackwardMode,
    pub seed: u64,
    pub config_hash: String,
    pub config: TrainConfig,
    /// Training-batch loss before each update.
    pub losses: Vec<f64>,
    pub initial_heldout_loss: f64,
    pub final_heldout_loss: f64,
    /// First step whose loss was not finite, when the run diverged.
    pub diverged_at: Option<usize>,
}

impl RunRecord {
    pub fn failed(&self) -> bool {
        self.diverged_at.is_some()
    }

    pub fn loss_csv(&self) -> String {
        let mut out = String::from(LOSS_CSV_HEADER);
        out.push('\n');
        for (s, l) in self.losses.iter().enumerate() {
            writeln!(out, "{s},{l:e},{},{}", self.mode.as_str(), self.seed).expect("write to string");
        }
        out
    }

    /// Mean training loss over the first `frac` of the run.
    pub fn early_loss(&self, frac: f64) -> f64 {
        let n = ((self.losses.len() as f64 * frac).ceil() as usize).clamp(1, self.losses.len().max(1));
        self.losses[..n].iter().sum::<f64>() / n as f64
    }
}

pub fn heldout_set(cfg: &TrainConfig, task: &TeacherStudentTask) -> Result<(Matrix, Matrix)> {
    task.sample(&StreamKey::new(cfg.seed, Domain::Data).derive(TAG_EVAL), cfg.eval_batch)
}

/// Trains one arm. Data order and initialization depend only on the seed, so
/// arms with the same seed see identical batches and start from identical
/// weights.
pub fn train_run(cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let root = StreamKey::new(cfg.seed, Domain::Data);
    let task = TeacherStudentTask::new(&cfg.dims, cfg.activation, cfg.inputs, &root)?;
    let mut model = MlpModel::init(&cfg.dims, cfg.activation, 0.0, &root.derive(TAG_STUDENT))?;
    let (eval_x, eval_y) = heldout_set(cfg, &task)?;
    let eval = |m: &MlpModel| -> Result<f64> { Ok(mse_loss(&m.predict(&eval_x)?, &eval_y)?.0) };
    let initial_heldout_loss = eval(&model)?;
    let mode = cfg.backward_mode.gemm_mode(cfg.rht_g);
    let dither = StreamKey::new(cfg.seed, Domain::Dither);
    let mut opt = AdamWState::new(cfg.optimizer, &model);
    let mut losses = Vec::with_capacity(cfg.steps);
    let mut diverged_at = None;
    for step in 0..cfg.steps {
        let (x, y) = task.batch(step as u64, cfg.batch)?;
        let (pred, cache) = model.forward(&x)?;
        let (loss, dldy) = mse_loss(&pred, &y)?;
        losses.push(loss);
        if !loss.is_finite() {
            diverged_at = Some(step);
            break;
        }
        let grads = model.backward(&cache, &dldy, &mode, &dither.at(0, step as u64))?;
        opt.step(&mut model, &grads, cfg.optimizer.lr_at(step, cfg.steps))?;
    }
    let final_heldout_loss = if diverged_at.is_some() { f64::NAN } else { eval(&model)? };
    Ok(RunRecord {
        mode: cfg.backward_mode,
        seed: cfg.seed,
        config_hash: cfg.hash(),
        config: cfg.clone(),
        losses,
        initial_heldout_loss,
        final_heldout_loss,
        diverged_at,
    })
}

/// Sample mean with a two-sided 95% Student-t interval. With fewer than two
/// values the interval is unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

pub fn mean_ci(values: &[f64]) -> MeanCi {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return MeanCi {
            mean,
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
            n,
        };
    }
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    let half = t * sd / (n as f64).sqrt();
    MeanCi {
        mean,
        lo: mean - half,
        hi: mean + half,
        n,
    }
}

/// Interval for the mean of the paired differences `a[i] − b[i]`.
pub fn paired_diff_ci(a: &[f64], b: &[f64]) -> MeanCi {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    mean_ci(&d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub mode: BackwardMode,
    pub rht_g: usize,
    pub seeds: Vec<u64>,
    pub final_losses: Vec<f64>,
    pub final_loss: MeanCi,
    /// Mean training loss over the first tenth of each run, averaged over seeds.
    pub early_loss: f64,
}

/// Final-loss comparisons between arms. A field is `None` when the arms it
/// needs were not run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderingVerdict {
    /// Mean EXACT final loss ≤ (1 + tolerance) × mean MXFP4_RHT_SR final loss.
    pub exact_within_tolerance: Option<bool>,
    pub tolerance: f64,
    /// The paired 95% interval of MXFP4 − MXFP4_RHT_SR final loss lies above 0.
    pub plain_above_rht_sr: Option<bool>,
    /// MXFP4_SR has higher early loss than MXFP4_RHT_SR (reported, not gated).
    pub sr_slower_early: Option<bool>,
    /// Arms by increasing mean final loss.
    pub ranking: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub arms: Vec<ArmSummary>,
    pub verdict: OrderingVerdict,
}

pub const ORDERING_TOLERANCE: f64 = 0.05;

impl StudySummary {
    /// Groups runs by `(mode, rht_g)`, keeping seed order within each group.
    pub fn from_runs(runs: &[RunRecord]) -> Self {
        let mut arms: Vec<ArmSummary> = Vec::new();
        for r in runs {
            let g = r.config.rht_g;
            let loss = r.final_heldout_loss;
            match arms.iter_mut().find(|a| a.mode == r.mode && a.rht_g == g) {
                Some(a) => {
                    a.seeds.push(r.seed);
                    a.final_losses.push(loss);
                    a.early_loss += r.early_loss(0.1);
                }
                None => arms.push(ArmSummary {
                    mode: r.mode,
                    rht_g: g,
                    seeds: vec![r.seed],
                    final_losses: vec![loss],
                    final_loss: mean_ci(&[loss]),
                    early_loss: r.early_loss(0.1),
                }),
            }
        }
        for a in &mut arms {
            a.final_loss = mean_ci(&a.final_losses);
            a.early_loss /= a.seeds.len() as f64;
        }
        let verdict = OrderingVerdict::new(&arms);
        Self { arms, verdict }
    }

    pub fn arm(&self, mode: BackwardMode) -> Option<&ArmSummary> {
        self.arms.iter().find(|a| a.mode == mode)
    }
}

impl OrderingVerdict {
    fn new(arms: &[ArmSummary]) -> Self {
        let find = |m| arms.iter().find(|a: &&ArmSummary| a.mode == m);
        let exact = find(BackwardMode::Exact);
        let plain = find(BackwardMode::Mxfp4);
        let sr = find(BackwardMode::Mxfp4Sr);
        let best = find(BackwardMode::Mxfp4RhtSr);
        let exact_within_tolerance = exact
            .zip(best)
            .map(|(e, b)| e.final_loss.mean <= b.final_loss.mean * (1.0 + ORDERING_TOLERANCE));
        let plain_above_rht_sr = plain
            .zip(best)
            .map(|(p, b)| paired_diff_ci(&p.final_losses, &b.final_losses).lo > 0.0);
        let sr_slower_early = sr.zip(best).map(|(s, b)| s.early_loss > b.early_loss);
        let mut order: Vec<&ArmSummary> = arms.iter().collect();
        order.sort_by(|a, b| a.final_loss.mean.total_cmp(&b.final_loss.mean));
        Self {
            exact_within_tolerance,
            tolerance: ORDERING_TOLERANCE,
            plain_above_rht_sr,
            sr_slower_early,
            ranking: order
                .iter()
                .map(|a| format!("{}@g{}", a.mode.as_str(), a.rht_g))
                .collect(),
        }
    }
}
