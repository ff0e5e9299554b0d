use crate::error::Result;
use crate::moco::{contrastive_step, KeySource, ContrastiveConfig, EncoderPair, EncoderWeights, MemoryQueue, Temperature};
use crate::numerics::{Rng, Tensor};
use crate::train::{make_pair, upsample_nearest, DegradeParams, SynthConfig};

/// Settings for the toy contrastive loop on synthetic (degraded, clean) frame pairs.
/// The default momentum is lower than the library default so the key encoder
/// moves appreciably within a couple of hundred steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MocoDemoConfig {
    pub steps: usize,
    pub size: usize,
    pub channels: usize,
    pub features: usize,
    pub dim: usize,
    pub grid: usize,
    pub tau: f64,
    pub momentum: f64,
    pub queue_capacity: usize,
    pub lr: f64,
}

impl Default for MocoDemoConfig {
    fn default() -> Self {
        MocoDemoConfig {
            steps: 200,
            size: 16,
            channels: 3,
            features: 16,
            dim: 64,
            grid: 4,
            tau: 0.07,
            momentum: 0.99,
            queue_capacity: 1024,
            lr: 0.02,
        }
    }
}

fn first_frame(clip: &Tensor<f32>) -> Result<Tensor<f32>> {
    let d = clip.dims();
    let (c, t, h, w) = (d[0], d[1], d[2], d[3]);
    let data = (0..c).flat_map(|ch| clip.data()[ch * t * h * w..ch * t * h * w + h * w].iter().copied()).collect();
    Tensor::new(vec![c, h, w], data)
}

/// Fills `queue` with key-encoder embeddings of fresh synthetic clean and
/// degraded frames, so the first steps already see realistic negatives.
pub fn prime_queue(
    queue: &mut MemoryQueue<f32>,
    key: &EncoderWeights<f32>,
    synth: &SynthConfig,
    degrade: &DegradeParams,
    grid: usize,
    rng: &mut Rng,
) -> Result<()> {
    let mut inserted = 0;
    while inserted < queue.capacity() {
        let clip = make_pair::<f32>(rng, synth, degrade)?;
        let lr = upsample_nearest(&clip.lr, clip.scale)?;
        for (frame, source) in [(&clip.hr, KeySource::Hr), (&lr, KeySource::Lr)] {
            let keys = key.encode(&first_frame(frame)?, grid)?.to_keys();
            inserted += keys.len();
            queue.enqueue(&keys, source)?;
        }
    }
    Ok(())
}

/// Runs the loop and returns the loss of every step.
pub fn moco_demo(cfg: &MocoDemoConfig, seed: u64) -> Result<Vec<f64>> {
    let mut rng = Rng::new(seed);
    let encoder = EncoderWeights::init(cfg.channels, cfg.features, cfg.dim, [1, 2, 1], &mut rng.fork(1))?;
    let mut pair = EncoderPair::new(encoder, cfg.momentum);
    let step_cfg = ContrastiveConfig { tau: Temperature::new(cfg.tau)?, grid: cfg.grid, lr: cfg.lr };
    let synth = SynthConfig { channels: cfg.channels, frames: 2, height: cfg.size, width: cfg.size, motion: None };
    let degrade = DegradeParams::default();
    let mut queue = MemoryQueue::new(cfg.queue_capacity, cfg.dim)?;
    prime_queue(&mut queue, &pair.key, &synth, &degrade, cfg.grid, &mut rng.fork(2))?;
    let mut losses = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let clip = make_pair::<f32>(&mut rng, &synth, &degrade)?;
        let hr = first_frame(&clip.hr)?;
        let lr = first_frame(&upsample_nearest(&clip.lr, clip.scale)?)?;
        losses.push(contrastive_step(&mut pair, &lr, &hr, &mut queue, &step_cfg)? as f64);
    }
    Ok(losses)
}
