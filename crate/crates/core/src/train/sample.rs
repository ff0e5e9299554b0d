//! Deterministic DDIM (η = 0) sampling, used only to run the toy denoiser
//! end to end.

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::train::{denoiser_forward_traced, CondLabel, Conditioning, NoiseSchedule, ToyModel};

pub const DEFAULT_SAMPLE_STEPS: usize = 20;

/// Descending timesteps `T = t_0 > … > t_{n−1} ≥ 1`, evenly spaced.
pub fn sample_timesteps(schedule_steps: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > schedule_steps {
        return Err(Error::Invalid(format!("{steps} sampling steps for a {schedule_steps}-step schedule")));
    }
    Ok((0..steps).map(|i| schedule_steps - i * schedule_steps / steps).collect())
}

/// Walks `x_T` down to `x_0` with `predict(x_t, t) ≈ ε`.
pub fn ddim_sample(
    x_t: Tensor<f32>,
    schedule: &NoiseSchedule,
    steps: usize,
    mut predict: impl FnMut(&Tensor<f32>, usize) -> Result<Tensor<f32>>,
) -> Result<Tensor<f32>> {
    let ts = sample_timesteps(schedule.steps(), steps)?;
    let mut x = x_t;
    for (i, &t) in ts.iter().enumerate() {
        let eps = predict(&x, t)?;
        eps.ensure_dims(x.dims(), "predicted noise")?;
        let ab = schedule.alpha_bar(t)?;
        let ab_prev = match ts.get(i + 1) {
            Some(&tp) => schedule.alpha_bar(tp)?,
            None => 1.0,
        };
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        for (v, &e) in x.data_mut().iter_mut().zip(eps.data()) {
            let (xv, ev) = (*v as f64, e as f64);
            let x0 = (xv - sn * ev) / sa;
            *v = (pa * x0 + pn * ev) as f32;
        }
        x.ensure_finite("sample")?;
    }
    Ok(x)
}

/// Samples an HR clip conditioned on an upsampled LR clip, using the scan
/// block once the model has finished stage 3.
pub fn sample_toy(
    model: &ToyModel<f32>,
    lr_up: &Tensor<f32>,
    schedule: &NoiseSchedule,
    steps: usize,
    rng: &mut Rng,
) -> Result<Tensor<f32>> {
    let (ctrl, _) = model.control.query.body.forward_traced(lr_up)?;
    let with_block = model.completed_stage >= 3;
    let x_t = rng.normal_tensor(lr_up.dims().to_vec(), 1.0);
    ddim_sample(x_t, schedule, steps, |x, t| {
        let cond = Conditioning { t, label: Some(CondLabel::SuperResolution), control: Some(&ctrl), with_block };
        Ok(denoiser_forward_traced(&model.denoiser, x, &cond)?.0)
    })
}
