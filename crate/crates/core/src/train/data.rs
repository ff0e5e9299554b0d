//! Synthetic clips with exact motion, and a blur → downsample → noise degradation.

use crate::error::{Error, Result};
use crate::numerics::{Real, Rng, Tensor};

/// Per-frame displacement in pixels; `dx` moves content along W (columns).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub channels: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// `None` draws an integer velocity in {−1, 0, 1}² from the generator.
    pub motion: Option<Motion>,
}

impl SynthConfig {
    pub fn new(frames: usize, height: usize, width: usize) -> Self {
        SynthConfig { channels: 3, frames, height, width, motion: None }
    }
}

/// A clean clip `C×T×H×W` and its flows `(T−1)×2×H×W`, channel 0 = dy, 1 = dx.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthVideo<T> {
    pub video: Tensor<T>,
    pub flows: Tensor<T>,
    pub motion: Motion,
}

struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    amp: [f64; 3],
}

struct Blob {
    cx: f64,
    cy: f64,
    radius: f64,
    amp: [f64; 3],
}

/// Renders a random scene translating rigidly by `motion` each frame:
/// frame `t` at `(y, x)` samples the scene at `(y − t·dy, x − t·dx)`, so
/// integer motion makes consecutive frames exact shifts of each other.
/// Needs `H, W ≥ 8` and `T ≥ 2`; values lie in `[0, 1]`.
pub fn synth_video<T: Real>(rng: &mut Rng, cfg: &SynthConfig) -> Result<SynthVideo<T>> {
    let SynthConfig { channels, frames, height, width, .. } = *cfg;
    if height < 8 || width < 8 || frames < 2 || channels == 0 {
        return Err(Error::Invalid(format!(
            "synthetic clips need H, W ≥ 8, T ≥ 2, C ≥ 1; got {channels}×{frames}×{height}×{width}"
        )));
    }
    let motion = match cfg.motion {
        Some(m) if m.dx.is_finite() && m.dy.is_finite() => m,
        Some(m) => return Err(Error::Invalid(format!("non-finite motion {m:?}"))),
        None => Motion { dx: rng.below(3) as f64 - 1.0, dy: rng.below(3) as f64 - 1.0 },
    };
    let tau = std::f64::consts::TAU;
    let colour = |rng: &mut Rng, scale: f64| [0; 3].map(|_| rng.uniform(-scale, scale));
    let waves: Vec<Wave> = (0..4)
        .map(|_| {
            let period = rng.uniform(4.0, 12.0);
            let angle = rng.uniform(0.0, tau);
            Wave {
                kx: tau / period * angle.cos(),
                ky: tau / period * angle.sin(),
                phase: rng.uniform(0.0, tau),
                amp: colour(rng, 0.08),
            }
        })
        .collect();
    let extent = (height.max(width) as f64) * 1.5;
    let blobs: Vec<Blob> = (0..5)
        .map(|_| Blob {
            cx: rng.uniform(-0.25 * extent, extent),
            cy: rng.uniform(-0.25 * extent, extent),
            radius: rng.uniform(1.5, 4.0),
            amp: colour(rng, 0.3),
        })
        .collect();
    let scene = |c: usize, y: f64, x: f64| {
        let k = c % 3;
        let mut v = 0.5;
        for w in &waves {
            v += w.amp[k] * (w.kx * x + w.ky * y + w.phase).sin();
        }
        for b in &blobs {
            let d2 = (x - b.cx).powi(2) + (y - b.cy).powi(2);
            v += b.amp[k] * (-d2 / (2.0 * b.radius * b.radius)).exp();
        }
        v.clamp(0.0, 1.0)
    };
    let video = Tensor::from_fn(vec![channels, frames, height, width], |i| {
        let x = (i % width) as f64;
        let y = ((i / width) % height) as f64;
        let t = ((i / (width * height)) % frames) as f64;
        let c = i / (width * height * frames);
        T::lit(scene(c, y - t * motion.dy, x - t * motion.dx))
    });
    let plane = height * width;
    let flows = Tensor::from_fn(vec![frames - 1, 2, height, width], |i| {
        T::lit(if (i / plane) % 2 == 0 { motion.dy } else { motion.dx })
    });
    Ok(SynthVideo { video, flows, motion })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeParams {
    /// Blur sigma range in HR pixels, sampled once per clip.
    pub blur_sigma: [f64; 2],
    pub scale: usize,
    pub noise_sigma: [f64; 2],
}

impl Default for DegradeParams {
    fn default() -> Self {
        DegradeParams { blur_sigma: [0.5, 1.5], scale: 2, noise_sigma: [0.0, 0.05] }
    }
}

impl DegradeParams {
    pub fn validate(&self) -> Result<()> {
        if self.scale == 0 {
            return Err(Error::Invalid("downsample factor must be at least 1".into()));
        }
        for (name, [lo, hi]) in [("blur", self.blur_sigma), ("noise", self.noise_sigma)] {
            if !(lo >= 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Invalid(format!("{name} sigma range [{lo}, {hi}] is invalid")));
            }
        }
        Ok(())
    }
}

fn clip_dims<T: Real>(x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.dims() {
        [c, t, h, w] => Ok([c, t, h, w]),
        _ => Err(Error::Shape(format!("expected a C×T×H×W clip, got {:?}", x.dims()))),
    }
}

fn draw(rng: &mut Rng, [lo, hi]: [f64; 2]) -> f64 {
    let u = rng.next_f64();
    lo + (hi - lo) * u
}

/// Normalized Gaussian taps over `[−r, r]` with `r = ⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// Separable spatial Gaussian blur with replicated borders; `sigma = 0` is the identity.
pub fn gaussian_blur<T: Real>(x: &Tensor<T>, sigma: f64) -> Result<Tensor<T>> {
    let [_, _, h, w] = clip_dims(x)?;
    if sigma <= 0.0 {
        return Ok(x.clone());
    }
    let taps = gaussian_kernel(sigma);
    let r = (taps.len() / 2) as isize;
    let mut tmp = vec![0.0f64; x.len()];
    let src = x.data();
    for (p, plane) in src.chunks(h * w).enumerate() {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (k, &tap) in taps.iter().enumerate() {
                    let sx = (xx as isize + k as isize - r).clamp(0, w as isize - 1) as usize;
                    acc += tap * plane[y * w + sx].as_f64();
                }
                tmp[p * h * w + y * w + xx] = acc;
            }
        }
    }
    let mut out = Tensor::zeros(x.dims().to_vec());
    for (p, plane) in tmp.chunks(h * w).enumerate() {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = 0.0;
                for (k, &tap) in taps.iter().enumerate() {
                    let sy = (y as isize + k as isize - r).clamp(0, h as isize - 1) as usize;
                    acc += tap * plane[sy * w + xx];
                }
                out[p * h * w + y * w + xx] = T::lit(acc);
            }
        }
    }
    Ok(out)
}

/// Mean over non-overlapping `s×s` spatial blocks; H and W must be multiples of `s`.
pub fn box_downsample<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [c, t, h, w] = clip_dims(x)?;
    if s == 0 || h % s != 0 || w % s != 0 {
        return Err(Error::Invalid(format!("cannot downsample {h}×{w} by {s}")));
    }
    if s == 1 {
        return Ok(x.clone());
    }
    let (ho, wo) = (h / s, w / s);
    let norm = 1.0 / (s * s) as f64;
    let src = x.data();
    Ok(Tensor::from_fn(vec![c, t, ho, wo], |i| {
        let (p, y, xx) = (i / (ho * wo), (i / wo) % ho, i % wo);
        let mut acc = 0.0;
        for dy in 0..s {
            for dx in 0..s {
                acc += src[p * h * w + (y * s + dy) * w + xx * s + dx].as_f64();
            }
        }
        T::lit(acc * norm)
    }))
}

/// Repeats every pixel into an `s×s` block.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    let [c, t, h, w] = clip_dims(x)?;
    if s == 0 {
        return Err(Error::Invalid("upsample factor must be at least 1".into()));
    }
    let (ho, wo) = (h * s, w * s);
    let src = x.data();
    Ok(Tensor::from_fn(vec![c, t, ho, wo], |i| {
        let (p, y, xx) = (i / (ho * wo), (i / wo) % ho, i % wo);
        src[p * h * w + (y / s) * w + xx / s]
    }))
}

/// Blur, box-downsample by `s`, add Gaussian noise and clip to `[0, 1]`.
/// Both sigmas are drawn once per clip from their ranges.
pub fn degrade<T: Real>(x_h: &Tensor<T>, params: &DegradeParams, rng: &mut Rng) -> Result<Tensor<T>> {
    params.validate()?;
    let blur = draw(rng, params.blur_sigma);
    let noise = draw(rng, params.noise_sigma);
    let mut out = box_downsample(&gaussian_blur(x_h, blur)?, params.scale)?;
    for v in out.data_mut() {
        let n = rng.normal();
        *v = T::lit((v.as_f64() + noise * n).clamp(0.0, 1.0));
    }
    Ok(out)
}

/// HR clip, its degraded LR version, and the ground-truth flows.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoPair<T> {
    pub hr: Tensor<T>,
    pub lr: Tensor<T>,
    pub scale: usize,
    pub flows: Tensor<T>,
}

pub fn make_pair<T: Real>(rng: &mut Rng, synth: &SynthConfig, degrade_params: &DegradeParams) -> Result<VideoPair<T>> {
    let clip = synth_video::<T>(rng, synth)?;
    let lr = degrade(&clip.video, degrade_params, rng)?;
    Ok(VideoPair { hr: clip.video, lr, scale: degrade_params.scale, flows: clip.flows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn still(motion: Motion) -> SynthConfig {
        SynthConfig { channels: 2, frames: 3, height: 9, width: 10, motion: Some(motion) }
    }

    #[test]
    fn zero_velocity_gives_identical_frames_and_zero_flow() {
        let clip = synth_video::<f64>(&mut Rng::new(1), &still(Motion { dx: 0.0, dy: 0.0 })).unwrap();
        let d = clip.video.data();
        let plane = 90;
        for c in 0..2 {
            for t in 1..3 {
                let base = c * 3 * plane;
                assert_eq!(&d[base..base + plane], &d[base + t * plane..base + (t + 1) * plane]);
            }
        }
        assert!(clip.flows.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_x_velocity_shifts_one_column() {
        let clip = synth_video::<f64>(&mut Rng::new(2), &still(Motion { dx: 1.0, dy: 0.0 })).unwrap();
        let v = &clip.video;
        let at = |c: usize, t: usize, y: usize, x: usize| v[((c * 3 + t) * 9 + y) * 10 + x];
        for c in 0..2 {
            for y in 0..9 {
                for x in 1..10 {
                    assert_eq!(at(c, 1, y, x), at(c, 0, y, x - 1));
                }
            }
        }
        assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn small_clips_rejected() {
        assert!(synth_video::<f32>(&mut Rng::new(0), &SynthConfig::new(4, 7, 8)).is_err());
    }

    #[test]
    fn identity_degradation() {
        let x = synth_video::<f64>(&mut Rng::new(3), &SynthConfig::new(2, 8, 8)).unwrap().video;
        let p = DegradeParams { blur_sigma: [0.0, 0.0], scale: 1, noise_sigma: [0.0, 0.0] };
        assert_eq!(degrade(&x, &p, &mut Rng::new(4)).unwrap(), x);
    }

    #[test]
    fn constant_image_survives_blur_and_downsampling() {
        let x = Tensor::<f64>::full(vec![1, 1, 8, 8], 0.3);
        let p = DegradeParams { blur_sigma: [1.2, 1.2], scale: 2, noise_sigma: [0.0, 0.0] };
        let y = degrade(&x, &p, &mut Rng::new(5)).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        assert!(y.data().iter().all(|&v| (v - 0.3).abs() < 1e-12));
    }

    #[test]
    fn kernel_radius_is_three_sigma() {
        assert_eq!(gaussian_kernel(1.0).len(), 7);
        assert_eq!(gaussian_kernel(0.4).len(), 5);
        assert!((gaussian_kernel(0.7).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bad_scale_rejected() {
        let x = Tensor::<f64>::zeros(vec![1, 1, 9, 8]);
        let p = DegradeParams { scale: 2, ..Default::default() };
        assert!(degrade(&x, &p, &mut Rng::new(0)).is_err());
        assert!(DegradeParams { scale: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn nearest_upsampling_inverts_box_downsampling_on_blocks() {
        let x = Tensor::<f64>::from_fn(vec![1, 2, 3, 2], |i| i as f64);
        let up = upsample_nearest(&x, 2).unwrap();
        assert_eq!(box_downsample(&up, 2).unwrap(), x);
    }
}
