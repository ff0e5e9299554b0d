use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::moco::{contrastive_step, ContrastiveConfig, MemoryQueue, Temperature};
use crate::numerics::{Rng, Tensor};
use crate::params::ParamSet;
use crate::train::{
    add_noise, denoiser_backward, denoiser_forward_traced, make_pair, mix_ratio, mse_with_grad, upsample_nearest,
    CondLabel, Conditioning, DegradeParams, ModelDims, NoiseSchedule, Stage, StageConfig, SynthConfig, ToyModel,
    Trainable,
};

/// Toy training configuration, read from a TOML file of `key = value` lines.
/// Every key is optional; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub contrastive_lr: f64,
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub features: usize,
    pub time_dim: usize,
    pub state_dim: usize,
    pub embed_dim: usize,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub blur_sigma: [f64; 2],
    pub scale: usize,
    pub noise_sigma: [f64; 2],
    pub tau: f64,
    pub momentum: f64,
    pub grid: usize,
    pub queue_capacity: usize,
    pub use_label: bool,
    /// Overrides the stage's default trainable groups.
    pub trainable: Option<Trainable>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage: 1,
            steps: 200,
            seed: 0,
            lr: 0.05,
            contrastive_lr: 0.05,
            channels: 3,
            frames: 4,
            height: 16,
            width: 16,
            features: 8,
            time_dim: 8,
            state_dim: 4,
            embed_dim: 16,
            diffusion_steps: NoiseSchedule::DEFAULT_STEPS,
            beta_start: 1e-4,
            beta_end: 2e-2,
            blur_sigma: [0.5, 1.5],
            scale: 2,
            noise_sigma: [0.0, 0.05],
            tau: 0.07,
            momentum: 0.999,
            grid: 4,
            queue_capacity: 1024,
            use_label: true,
            trainable: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            channels: self.channels,
            features: self.features,
            time_dim: self.time_dim,
            state_dim: self.state_dim,
            embed_dim: self.embed_dim,
        }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig { channels: self.channels, frames: self.frames, height: self.height, width: self.width, motion: None }
    }

    pub fn degrade(&self) -> DegradeParams {
        DegradeParams { blur_sigma: self.blur_sigma, scale: self.scale, noise_sigma: self.noise_sigma }
    }

    pub fn stage_config(&self) -> Result<StageConfig> {
        let mut sc = StageConfig::new(Stage::from_number(self.stage)?, self.steps);
        sc.use_label = self.use_label;
        if let Some(t) = self.trainable {
            sc.trainable = t;
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn validate(&self) -> Result<()> {
        self.degrade().validate()?;
        if self.height % self.scale != 0 || self.width % self.scale != 0 {
            return Err(Error::Config(format!("{}×{} is not divisible by scale {}", self.height, self.width, self.scale)));
        }
        if !(self.lr >= 0.0 && self.contrastive_lr >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        Temperature::new(self.tau)?;
        self.stage_config()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogRow {
    pub step: usize,
    pub stage: u8,
    pub ratio: f64,
    /// Denoising loss; absent on contrastive steps.
    pub loss: Option<f64>,
    pub contrastive_loss: Option<f64>,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Denoising losses in step order.
    pub fn losses(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.loss).collect()
    }

    pub fn contrastive_losses(&self) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.contrastive_loss).collect()
    }

    /// CSV with header `step,stage,ratio,loss,contrastive_loss,wall_ms`;
    /// without timing the wall-clock column is left out.
    pub fn to_csv(&self, with_timing: bool) -> String {
        let mut out = String::from("step,stage,ratio,loss,contrastive_loss");
        out.push_str(if with_timing { ",wall_ms\n" } else { "\n" });
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9}")).unwrap_or_default();
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{},{}", r.step, r.stage, r.ratio, opt(r.loss), opt(r.contrastive_loss));
            if with_timing {
                let _ = write!(out, ",{:.3}", r.wall_ms);
            }
            out.push('\n');
        }
        out
    }
}

/// Mean of the first and last `fraction` of `values` (at least one each).
pub fn head_tail_means(values: &[f64], fraction: f64) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let k = ((values.len() as f64 * fraction).round() as usize).clamp(1, values.len());
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&values[..k]), mean(&values[values.len() - k..])))
}

fn frame(clip: &Tensor<f32>, t: usize) -> Result<Tensor<f32>> {
    let d = clip.dims();
    let (c, frames, h, w) = (d[0], d[1], d[2], d[3]);
    let plane = h * w;
    let mut data = Vec::with_capacity(c * plane);
    for ch in 0..c {
        let at = (ch * frames + t) * plane;
        data.extend_from_slice(&clip.data()[at..at + plane]);
    }
    Tensor::new(vec![c, h, w], data)
}

/// Runs one training stage in place. Stage 2 needs weights that finished
/// stage 1; stage 3 inserts the scan block and never touches the control
/// encoder. Identical inputs give identical logs apart from `wall_ms`.
pub fn run_stage(model: &mut ToyModel<f32>, cfg: &TrainConfig, seed: u64) -> Result<TrainingLog> {
    cfg.validate()?;
    let sc = cfg.stage_config()?;
    if model.dims != cfg.dims() {
        return Err(Error::Config(format!("model dims {:?} differ from config {:?}", model.dims, cfg.dims())));
    }
    if sc.stage == Stage::Two && model.completed_stage < 1 {
        return Err(Error::MissingPrerequisite("stage 2 starts from weights trained in stage 1".into()));
    }
    let mut log = TrainingLog::default();
    if sc.total_steps == 0 {
        return Ok(log);
    }
    let schedule = NoiseSchedule::linear(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)?;
    let (synth, degrade) = (cfg.synth(), cfg.degrade());
    let mut rng = Rng::new(seed);
    let contrastive = ContrastiveConfig { tau: Temperature::new(cfg.tau)?, grid: cfg.grid, lr: cfg.contrastive_lr };
    let mut queue = match sc.stage {
        Stage::Two => {
            model.control.key = model.control.query.clone();
            model.control.momentum = cfg.momentum;
            Some(MemoryQueue::random(cfg.queue_capacity, cfg.embed_dim, &mut rng.fork(1))?)
        }
        _ => None,
    };
    let lr = cfg.lr as f32;
    for step in 0..sc.total_steps {
        let start = Instant::now();
        let ratio = mix_ratio(&sc, step)?;
        let pair = make_pair::<f32>(&mut rng, &synth, &degrade)?;
        let lr_up = upsample_nearest(&pair.lr, pair.scale)?;
        let mut row = LogRow { step, stage: sc.stage.number(), ratio, loss: None, contrastive_loss: None, wall_ms: 0.0 };
        if let (Some(queue), true) = (queue.as_mut(), step % 2 == 1) {
            let t = rng.below(cfg.frames);
            let loss =
                contrastive_step(&mut model.control, &frame(&lr_up, t)?, &frame(&pair.hr, t)?, queue, &contrastive)?;
            row.contrastive_loss = Some(loss as f64);
        } else {
            let use_hr = rng.next_f64() < ratio;
            let cond_clip = if use_hr { &pair.hr } else { &lr_up };
            let label = sc.use_label.then_some(if use_hr { CondLabel::Reconstruction } else { CondLabel::SuperResolution });
            let t = 1 + rng.below(schedule.steps());
            let eps = rng.normal_tensor::<f32>(pair.hr.dims().to_vec(), 1.0);
            let x_t = add_noise(&pair.hr, t, &eps, &schedule)?;
            let body = &model.control.query.body;
            let (ctrl, ctrl_trace) = body.forward_traced(cond_clip)?;
            let cond = Conditioning { t, label, control: Some(&ctrl), with_block: sc.stage == Stage::Three };
            let (pred, trace) = denoiser_forward_traced(&model.denoiser, &x_t, &cond)?;
            let (loss, dpred) = mse_with_grad(&pred, &eps)?;
            let (g, dctrl) = denoiser_backward(&model.denoiser, &trace, &dpred)?;
            let tr = sc.trainable;
            let d = &mut model.denoiser;
            if tr.backbone {
                d.conv_in.sgd_step(&g.conv_in, lr)?;
                d.time.sgd_step(&g.time, lr)?;
                d.conv_out.sgd_step(&g.conv_out, lr)?;
            }
            if tr.label {
                d.label.sgd_step(&g.label, lr)?;
            }
            if tr.block {
                d.block.sgd_step(&g.block, lr)?;
            }
            if tr.control {
                let (_, gbody) = model.control.query.body.backward(&ctrl_trace, &dctrl)?;
                model.control.query.body.sgd_step(&gbody, lr)?;
            }
            if !loss.is_finite() || !model.denoiser.all_finite() {
                return Err(Error::NonFinite(format!("training diverged at step {step}")));
            }
            row.loss = Some(loss as f64);
        }
        row.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        log.rows.push(row);
    }
    if sc.stage == Stage::One && sc.trainable.control {
        // Outside stage 2 the key encoder simply mirrors the query encoder.
        model.control.key = model.control.query.clone();
    }
    model.completed_stage = model.completed_stage.max(sc.stage.number());
    Ok(log)
}
