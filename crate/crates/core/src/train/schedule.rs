use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Real, Tensor};

/// Diffusion noise schedule with cumulative products `ᾱ_t = Π_{s≤t} (1 − β_s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub const DEFAULT_STEPS: usize = 100;

    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Invalid("noise schedule needs at least one step".into()));
        }
        if betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::Invalid("every beta must lie in (0, 1)".into()));
        }
        if betas.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Invalid("betas must be non-decreasing".into()));
        }
        let mut acc = 1.0;
        let alpha_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    /// Betas spaced evenly from `start` to `end`.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 1 {
            return Self::new(vec![start]);
        }
        Self::new((0..steps).map(|i| start + (end - start) * i as f64 / (steps - 1) as f64).collect())
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.betas[t - 1])
    }

    /// `ᾱ_t` for `1 ≤ t ≤ steps`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    fn check(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(Self::DEFAULT_STEPS, 1e-4, 2e-2).expect("valid default schedule")
    }
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · ε`.
pub fn add_noise<T: Real>(x0: &Tensor<T>, t: usize, eps: &Tensor<T>, schedule: &NoiseSchedule) -> Result<Tensor<T>> {
    let ab = schedule.alpha_bar(t)?;
    eps.ensure_dims(x0.dims(), "noise")?;
    let (s0, s1) = (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()));
    let data = x0.data().iter().zip(eps.data()).map(|(&x, &e)| s0 * x + s1 * e).collect();
    Tensor::new(x0.dims().to_vec(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Control encoder on a decaying HR/LR mixture.
    One,
    /// Adds the contrastive objective at a fixed 1:1 mixture.
    Two,
    /// Inserts the scan block; LR only, control encoder frozen.
    Three,
}

impl Stage {
    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            3 => Ok(Stage::Three),
            _ => Err(Error::Invalid(format!("stage must be 1, 2 or 3, got {n}"))),
        }
    }

    pub fn number(self) -> u8 {
        match self {
            Stage::One => 1,
            Stage::Two => 2,
            Stage::Three => 3,
        }
    }
}

/// Which parameter groups receive updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trainable {
    /// Input/output convolutions and the timestep projection.
    pub backbone: bool,
    pub label: bool,
    pub block: bool,
    pub control: bool,
}

impl Trainable {
    pub fn for_stage(stage: Stage) -> Self {
        match stage {
            Stage::One => Trainable { backbone: true, label: true, block: false, control: true },
            Stage::Two => Trainable { backbone: false, label: true, block: false, control: true },
            Stage::Three => Trainable { backbone: false, label: false, block: true, control: false },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfig {
    pub stage: Stage,
    pub total_steps: usize,
    /// Fraction of HR-conditioned samples at the first and last step.
    pub hr_mix_start: f64,
    pub hr_mix_end: f64,
    pub use_label: bool,
    pub trainable: Trainable,
}

impl StageConfig {
    pub fn new(stage: Stage, total_steps: usize) -> Self {
        let (hr_mix_start, hr_mix_end) = match stage {
            Stage::One => (1.0, 0.3),
            Stage::Two => (0.5, 0.5),
            Stage::Three => (0.0, 0.0),
        };
        StageConfig {
            stage,
            total_steps,
            hr_mix_start,
            hr_mix_end,
            use_label: true,
            trainable: Trainable::for_stage(stage),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for r in [self.hr_mix_start, self.hr_mix_end] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Invalid(format!("mix ratio {r} outside [0, 1]")));
            }
        }
        if self.stage == Stage::Three && (self.hr_mix_start != 0.0 || self.hr_mix_end != 0.0) {
            return Err(Error::Invalid("stage 3 trains on LR clips only".into()));
        }
        if self.stage == Stage::Three && self.trainable.control {
            return Err(Error::Invalid("the control encoder is frozen in stage 3".into()));
        }
        Ok(())
    }
}

/// Fraction of HR-conditioned samples at `step`: linear from start to end
/// over stage 1 (reaching the end value on the final step), constant otherwise.
pub fn mix_ratio(cfg: &StageConfig, step: usize) -> Result<f64> {
    cfg.validate()?;
    if step > cfg.total_steps {
        return Err(Error::Invalid(format!("step {step} past the stage's {} steps", cfg.total_steps)));
    }
    Ok(match cfg.stage {
        Stage::One => {
            let last = cfg.total_steps.saturating_sub(1);
            if last == 0 || step >= last {
                if step == 0 {
                    cfg.hr_mix_start
                } else {
                    cfg.hr_mix_end
                }
            } else {
                let f = step as f64 / last as f64;
                cfg.hr_mix_start + (cfg.hr_mix_end - cfg.hr_mix_start) * f
            }
        }
        Stage::Two | Stage::Three => cfg.hr_mix_start,
    })
}
