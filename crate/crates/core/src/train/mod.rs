//! Training: compressed-domain loss, the optimization loop, and the
//! line-based run configuration.

mod data;
mod optim;

pub use data::{mix_seed, synthesize_mixture, MixtureRecipe, SAMPLE_RATE};
pub use optim::{adam_step, OptimizerState, Schedule};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, Tensor, VarId};
use crate::dsp::{compress, stft, AnalysisConfig, ComplexSpectrogram};
use crate::error::{Error, Result};
use crate::model::{net, TaylorConfig, TaylorModel};

/// Loss weighting. The two branch weights must sum to one.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossConfig {
    /// Magnitude compression exponent applied before both branches.
    pub beta: f32,
    /// Weight of the real/imaginary-plane MSE branch.
    pub w_ri: f64,
    /// Weight of the magnitude MSE branch.
    pub w_mag: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { beta: 0.5, w_ri: 0.5, w_mag: 0.5 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Config("loss beta must lie in (0, 1]".into()));
        }
        if (self.w_ri + self.w_mag - 1.0).abs() > 1e-9 || self.w_ri < 0.0 || self.w_mag < 0.0 {
            return Err(Error::Config(format!(
                "loss branch weights must be nonnegative and sum to 1, got {} + {}",
                self.w_ri, self.w_mag
            )));
        }
        Ok(())
    }
}

/// MSE between two already-compressed spectrograms: the plane branch averages
/// squared differences over both RI planes, the magnitude branch over the
/// magnitude grid.
pub(crate) fn compressed_loss(
    est: &ComplexSpectrogram,
    target: &ComplexSpectrogram,
    cfg: &LossConfig,
) -> Result<f64> {
    if !est.same_shape(target) {
        return Err(Error::Shape("loss: spectrogram shapes differ".into()));
    }
    let n = est.cells() as f64;
    let mut sq_ri = 0.0f64;
    for i in 0..est.cells() {
        let dr = (est.real[i] - target.real[i]) as f64;
        let di = (est.imag[i] - target.imag[i]) as f64;
        sq_ri += dr * dr + di * di;
    }
    let em = est.magnitude();
    let tm = target.magnitude();
    let mut sq_mag = 0.0f64;
    for i in 0..est.cells() {
        let d = (em[i] - tm[i]) as f64;
        sq_mag += d * d;
    }
    Ok(cfg.w_ri * sq_ri / (2.0 * n) + cfg.w_mag * sq_mag / n)
}

/// Training objective on raw (uncompressed) spectra: compress both by
/// `cfg.beta`, then the weighted RI + magnitude MSE.
pub fn loss(s_hat: &ComplexSpectrogram, s_clean: &ComplexSpectrogram, cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    let a = compress(s_hat, cfg.beta)?;
    let b = compress(s_clean, cfg.beta)?;
    compressed_loss(&a, &b, cfg)
}

/// The same objective as graph nodes, for backpropagation. `est` and `tgt`
/// are compressed-domain plane pairs shaped `[1, 1, T, K]`.
pub(crate) fn loss_node(
    g: &mut Graph<f32>,
    est: (VarId, VarId),
    tgt: (VarId, VarId),
    cfg: &LossConfig,
) -> Result<VarId> {
    let dr = g.sub(est.0, tgt.0)?;
    let dr2 = g.mul(dr, dr)?;
    let mr = g.mean(dr2);
    let di = g.sub(est.1, tgt.1)?;
    let di2 = g.mul(di, di)?;
    let mi = g.mean(di2);
    let ri_sum = g.add(mr, mi)?;
    let ri = g.scale(ri_sum, 0.5);

    let em = g.hypot(est.0, est.1)?;
    let tm = g.hypot(tgt.0, tgt.1)?;
    let dm = g.sub(em, tm)?;
    let dm2 = g.mul(dm, dm)?;
    let mag = g.mean(dm2);

    let a = g.scale(ri, cfg.w_ri as f32);
    let b = g.scale(mag, cfg.w_mag as f32);
    g.add(a, b)
}

/// Full run configuration, parseable from a `key = value` file.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub model: TaylorConfig,
    pub loss: LossConfig,
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub snr_lo: f64,
    pub snr_hi: f64,
    pub seed: u64,
    pub train_utts: usize,
    pub val_utts: usize,
    pub length_s: f64,
    /// Optional cap on total optimizer steps.
    pub max_steps: Option<usize>,
    /// Optional early stop: halt once the step loss falls to this fraction
    /// of the first step's loss.
    pub stop_frac: Option<f64>,
    /// When set, only parameters whose name starts with this prefix are
    /// updated; everything else stays frozen. Used for staged refinement:
    /// train the magnitude stage end to end first, then attach the
    /// higher-order modules and train them alone against the frozen base.
    pub trainable_prefix: Option<String>,
    /// Learning-rate policy. `Plateau` halves on stalled validation loss;
    /// `Constant` keeps the configured rate, which suits short memorization
    /// runs where validation loss is expected to stall immediately.
    pub schedule: SchedulePolicy,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchedulePolicy {
    Plateau,
    Constant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: TaylorConfig::desk(),
            loss: LossConfig::default(),
            lr: 5e-4,
            epochs: 10,
            batch: 4,
            snr_lo: -5.0,
            snr_hi: 0.0,
            seed: 0,
            train_utts: 16,
            val_utts: 2,
            length_s: 1.0,
            max_steps: None,
            stop_frac: None,
            trainable_prefix: None,
            schedule: SchedulePolicy::Plateau,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.epochs == 0 || self.batch == 0 || self.train_utts == 0 || self.val_utts == 0 {
            return Err(Error::Config("epochs, batch and utterance counts must be positive".into()));
        }
        if self.snr_lo > self.snr_hi {
            return Err(Error::Config(format!(
                "snr_lo {} exceeds snr_hi {}",
                self.snr_lo, self.snr_hi
            )));
        }
        if self.length_s * (SAMPLE_RATE as f64) < 320.0 {
            return Err(Error::Config("length_s must cover at least one analysis window".into()));
        }
        Ok(())
    }

    /// Parse a line-based `key = value` config. `#` starts a comment; blank
    /// lines are ignored; unknown keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| {
                Error::Config(format!("line {}: {key} must be {what}, got `{value}`", lineno + 1))
            };
            match key {
                "q" => cfg.model.q = value.parse().map_err(|_| bad("a nonnegative integer"))?,
                "shared" => {
                    cfg.model.shared_high_order = match value {
                        "true" | "1" => true,
                        "false" | "0" => false,
                        _ => return Err(bad("true or false")),
                    }
                }
                "channels" => cfg.model.channels = value.parse().map_err(|_| bad("an integer"))?,
                "depths" => {
                    cfg.model.unet_depths = value
                        .split(',')
                        .map(|p| p.trim().parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| bad("a comma-separated integer list"))?;
                }
                "stcm_groups" => {
                    cfg.model.stcm_groups = value.parse().map_err(|_| bad("an integer"))?
                }
                "beta" => {
                    let beta: f32 = value.parse().map_err(|_| bad("a number"))?;
                    cfg.model.compression_beta = beta;
                    cfg.loss.beta = beta;
                }
                "w_ri" => {
                    cfg.loss.w_ri = value.parse().map_err(|_| bad("a number"))?;
                    cfg.loss.w_mag = 1.0 - cfg.loss.w_ri;
                }
                "lr" => cfg.lr = value.parse().map_err(|_| bad("a number"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("an integer"))?,
                "batch" => cfg.batch = value.parse().map_err(|_| bad("an integer"))?,
                "snr_lo" => cfg.snr_lo = value.parse().map_err(|_| bad("a number"))?,
                "snr_hi" => cfg.snr_hi = value.parse().map_err(|_| bad("a number"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("an integer"))?,
                "train_utts" => cfg.train_utts = value.parse().map_err(|_| bad("an integer"))?,
                "val_utts" => cfg.val_utts = value.parse().map_err(|_| bad("an integer"))?,
                "length_s" => cfg.length_s = value.parse().map_err(|_| bad("a number"))?,
                "max_steps" => cfg.max_steps = Some(value.parse().map_err(|_| bad("an integer"))?),
                "stop_frac" => cfg.stop_frac = Some(value.parse().map_err(|_| bad("a number"))?),
                "trainable" => cfg.trainable_prefix = Some(value.to_string()),
                "schedule" => {
                    cfg.schedule = match value {
                        "plateau" => SchedulePolicy::Plateau,
                        "constant" => SchedulePolicy::Constant,
                        _ => return Err(bad("`plateau` or `constant`")),
                    }
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown config key `{other}`",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig { compression_beta: self.model.compression_beta, ..AnalysisConfig::default() }
    }
}

/// Outcome of one training run.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: usize,
    pub epochs_run: usize,
    pub first_step_loss: f64,
    pub final_train_loss: f64,
    pub best_val_loss: f64,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// One preprocessed training pair: compressed noisy input and compressed
/// clean target.
struct Pair {
    x: ComplexSpectrogram,
    target: ComplexSpectrogram,
}

const SNR_SALT: u64 = 0x534e_525f_5341_4c54;
const VAL_INDEX_OFFSET: u64 = 1 << 20;

/// The exact mixture recipe the training loop uses for training index `i`.
pub fn training_recipe(cfg: &TrainConfig, index: u64) -> MixtureRecipe {
    let mut snr_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed ^ SNR_SALT, index));
    let snr_db = if cfg.snr_lo == cfg.snr_hi {
        cfg.snr_lo
    } else {
        snr_rng.gen_range(cfg.snr_lo..cfg.snr_hi)
    };
    MixtureRecipe { seed: mix_seed(cfg.seed, index), snr_db, length_s: cfg.length_s }
}

/// The mixture recipe for validation index `i`; validation indices live in a
/// range disjoint from training.
pub fn validation_recipe(cfg: &TrainConfig, index: u64) -> MixtureRecipe {
    training_recipe(cfg, VAL_INDEX_OFFSET + index)
}

fn build_pair(index: u64, cfg: &TrainConfig) -> Result<Pair> {
    let recipe = training_recipe(cfg, index);
    let (noisy, clean, _) = synthesize_mixture(&recipe)?;
    let analysis = cfg.analysis();
    let beta = cfg.model.compression_beta;
    let x = compress(&stft(&noisy, &analysis)?, beta)?;
    let target = compress(&stft(&clean, &analysis)?, beta)?;
    Ok(Pair { x, target })
}

fn plane(data: &[f32], frames: usize, bins: usize) -> Tensor<f32> {
    Tensor::from_vec(&[1, 1, frames, bins], data.to_vec()).expect("plane is dense")
}

/// Forward + backward on one pair; returns the step loss and accumulates
/// per-parameter gradients into `acc`.
fn accumulate_gradients(
    model: &TaylorModel,
    pair: &Pair,
    loss_cfg: &LossConfig,
    acc: &mut BTreeMap<String, Vec<f32>>,
) -> Result<f64> {
    let (frames, bins) = (pair.x.frames, pair.x.bins);
    let mut g: Graph<f32> = Graph::new();
    let mut ctx = net::NetCtx::use_mode(&mut g, model.params(), true);
    let x_r = ctx.g.constant(plane(&pair.x.real, frames, bins));
    let x_i = ctx.g.constant(plane(&pair.x.imag, frames, bins));
    let fwd = net::build_forward(&mut ctx, x_r, x_i, model.config(), frames)?;
    let ids = ctx.ids;
    let t_r = g.constant(plane(&pair.target.real, frames, bins));
    let t_i = g.constant(plane(&pair.target.imag, frames, bins));
    let loss_id = loss_node(&mut g, fwd.estimate, (t_r, t_i), loss_cfg)?;
    let loss_val = g.value(loss_id)[0] as f64;
    let grads = g.backward(loss_id)?;
    for (name, &id) in &ids {
        let src = &grads[id];
        let slot = acc.entry(name.clone()).or_insert_with(|| vec![0.0; src.len()]);
        for (a, &b) in slot.iter_mut().zip(src) {
            *a += b;
        }
    }
    Ok(loss_val)
}

/// Validation loss over a set of pairs, no gradients.
fn validation_loss(model: &TaylorModel, pairs: &[Pair], loss_cfg: &LossConfig) -> Result<f64> {
    let mut total = 0.0;
    for pair in pairs {
        let (est, _) = model.forward(&pair.x)?;
        total += compressed_loss(&est, &pair.target, loss_cfg)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Run the training loop: per-epoch train/validation losses go to
/// `<out_dir>/train_log.csv`, the best-validation parameters to
/// `<out_dir>/best.ckpt`.
pub fn train(model: &mut TaylorModel, cfg: &TrainConfig, out_dir: &Path) -> Result<TrainReport> {
    cfg.validate()?;
    if cfg.model != *model.config() {
        return Err(Error::Config("training config does not match the model architecture".into()));
    }
    std::fs::create_dir_all(out_dir)?;

    let train_pairs: Vec<Pair> = (0..cfg.train_utts as u64)
        .map(|i| build_pair(i, cfg))
        .collect::<Result<_>>()?;
    let val_pairs: Vec<Pair> = (0..cfg.val_utts as u64)
        .map(|i| build_pair(VAL_INDEX_OFFSET + i, cfg))
        .collect::<Result<_>>()?;
    for p in train_pairs.iter().chain(&val_pairs) {
        if p.x.bins != cfg.model.bins {
            return Err(Error::Config(format!(
                "analysis produces {} bins but the model expects {}",
                p.x.bins, cfg.model.bins
            )));
        }
    }

    if let Some(prefix) = &cfg.trainable_prefix {
        if !model.params().names().any(|n| n.starts_with(prefix.as_str())) {
            return Err(Error::Config(format!("no parameter name starts with `{prefix}`")));
        }
    }

    let log_path = out_dir.join("train_log.csv");
    let ckpt_path = out_dir.join("best.ckpt");
    let mut log = std::io::BufWriter::new(std::fs::File::create(&log_path)?);
    writeln!(log, "epoch,train_loss,val_loss,lr")?;

    let mut state = OptimizerState::new(cfg.lr)?;
    let mut schedule = Schedule::with_floor(cfg.lr);
    // The starting parameters are the first best-validation candidate, so a
    // run that never improves on them hands back its input unchanged.
    let mut best_val = validation_loss(model, &val_pairs, &cfg.loss)?;
    model.save(&ckpt_path)?;
    let mut first_step_loss = None;
    let mut final_train_loss = f64::NAN;
    let mut steps = 0usize;
    let mut epochs_run = 0usize;
    let mut stop = false;

    for epoch in 1..=cfg.epochs {
        let mut epoch_loss = 0.0f64;
        let mut epoch_batches = 0usize;
        for chunk in train_pairs.chunks(cfg.batch) {
            let mut grads: BTreeMap<String, Vec<f32>> = BTreeMap::new();
            let mut batch_loss = 0.0f64;
            for pair in chunk {
                batch_loss += accumulate_gradients(model, pair, &cfg.loss, &mut grads)?;
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "training diverged: step {} loss is {batch_loss}",
                    steps + 1
                )));
            }
            if let Some(prefix) = &cfg.trainable_prefix {
                grads.retain(|name, _| name.starts_with(prefix.as_str()));
            }
            let inv = 1.0 / chunk.len() as f32;
            for g in grads.values_mut() {
                for v in g.iter_mut() {
                    *v *= inv;
                }
            }
            adam_step(model.params_mut(), &grads, &mut state)?;
            steps += 1;
            epoch_loss += batch_loss;
            epoch_batches += 1;
            let first = *first_step_loss.get_or_insert(batch_loss);
            if let Some(frac) = cfg.stop_frac {
                if batch_loss <= frac * first {
                    stop = true;
                }
            }
            if let Some(max) = cfg.max_steps {
                if steps >= max {
                    stop = true;
                }
            }
            if stop {
                break;
            }
        }
        epochs_run = epoch;
        final_train_loss = epoch_loss / epoch_batches as f64;

        let val_loss = validation_loss(model, &val_pairs, &cfg.loss)?;
        if !val_loss.is_finite() {
            return Err(Error::Numeric(format!("validation diverged at epoch {epoch}")));
        }
        if val_loss < best_val {
            best_val = val_loss;
            model.save(&ckpt_path)?;
        }
        writeln!(log, "{epoch},{final_train_loss:.8e},{val_loss:.8e},{:.8e}", state.lr)?;
        if cfg.schedule == SchedulePolicy::Plateau {
            schedule.observe(val_loss, &mut state.lr);
        }
        if stop {
            break;
        }
    }
    log.flush()?;

    Ok(TrainReport {
        steps,
        epochs_run,
        first_step_loss: first_step_loss.unwrap_or(f64::NAN),
        final_train_loss,
        best_val_loss: best_val,
        checkpoint: ckpt_path,
        log: log_path,
    })
}
