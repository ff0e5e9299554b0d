//! Wall-clock timing for the scan kernels, the block and the attention
//! comparator.

use std::hint::black_box;
use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mamba3d::{attention_baseline, mamba3d_forward, AttentionWeights, Mamba3dConfig, ScanKind, WeightSharing};
use crate::numerics::{Rng, Tensor};
use crate::scan::ScanPattern;
use crate::ssm::{scan_parallel, scan_sequential, selective_inputs, HiddenState, SelectiveProj, SsmParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Timing {
    pub reps: usize,
    pub mean_ns: f64,
    pub p50_ns: f64,
    pub p95_ns: f64,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

pub fn summarize(samples_ns: &[f64]) -> Result<Timing> {
    if samples_ns.is_empty() {
        return Err(Error::Invalid("no timing samples".into()));
    }
    let mut s = samples_ns.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(Timing {
        reps: s.len(),
        mean_ns: s.iter().sum::<f64>() / s.len() as f64,
        p50_ns: percentile(&s, 0.5),
        p95_ns: percentile(&s, 0.95),
    })
}

/// One untimed warm-up call, then `reps` timed calls.
pub fn time_reps(reps: usize, mut f: impl FnMut()) -> Result<Timing> {
    if reps == 0 {
        return Err(Error::Invalid("reps must be positive".into()));
    }
    f();
    let samples: Vec<f64> = (0..reps)
        .map(|_| {
            let start = Instant::now();
            f();
            start.elapsed().as_nanos() as f64
        })
        .collect();
    summarize(&samples)
}

/// Alternates `a` and `b` so slow drift hits both equally; returns both medians.
pub fn interleaved_medians(reps: usize, mut a: impl FnMut(), mut b: impl FnMut()) -> Result<(f64, f64)> {
    if reps == 0 {
        return Err(Error::Invalid("reps must be positive".into()));
    }
    a();
    b();
    let (mut ta, mut tb) = (Vec::with_capacity(reps), Vec::with_capacity(reps));
    for _ in 0..reps {
        let start = Instant::now();
        a();
        ta.push(start.elapsed().as_nanos() as f64);
        let start = Instant::now();
        b();
        tb.push(start.elapsed().as_nanos() as f64);
    }
    Ok((summarize(&ta)?.p50_ns, summarize(&tb)?.p50_ns))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub size: String,
    pub variant: String,
    pub timing: Timing,
}

/// `first_col,variant,reps,mean_ns,p50_ns,p95_ns`.
pub fn rows_to_csv(first_col: &str, rows: &[BenchRow]) -> String {
    let mut out = format!("{first_col},variant,reps,mean_ns,p50_ns,p95_ns\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.0},{:.0},{:.0}\n",
            r.size, r.variant, r.timing.reps, r.timing.mean_ns, r.timing.p50_ns, r.timing.p95_ns
        ));
    }
    out
}

/// A random selective-scan problem of length `len` and state size `n`.
pub struct ScanProblem {
    pub params: SsmParams<f32>,
    pub proj: SelectiveProj<f32>,
    pub x: Vec<f32>,
}

impl ScanProblem {
    pub fn new(len: usize, n: usize, rng: &mut Rng) -> Self {
        let params = SsmParams::init(n, rng);
        let proj = SelectiveProj::init(n, 0.1, rng);
        let x = (0..len).map(|_| rng.normal() as f32).collect();
        ScanProblem { params, proj, x }
    }

    /// Projection plus sequential recurrence: the full selective scan.
    pub fn run_sequential(&self) -> Result<Vec<f32>> {
        let sel = selective_inputs(&self.params, &self.proj, &self.x)?;
        Ok(scan_sequential(&self.params, &sel, &self.x, &HiddenState::zeros(self.params.state_dim()))?.y)
    }

    pub fn run_parallel(&self) -> Result<Vec<f32>> {
        let sel = selective_inputs(&self.params, &self.proj, &self.x)?;
        Ok(scan_parallel(&self.params, &sel, &self.x, &HiddenState::zeros(self.params.state_dim()))?.y)
    }
}

pub fn ssm_bench(len: usize, state: usize, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if len == 0 || state == 0 {
        return Err(Error::Invalid("len and state must be positive".into()));
    }
    let problem = ScanProblem::new(len, state, &mut Rng::new(seed));
    let seq = time_reps(reps, || {
        black_box(problem.run_sequential().expect("validated scan"));
    })?;
    let par = time_reps(reps, || {
        black_box(problem.run_parallel().expect("validated scan"));
    })?;
    Ok(vec![
        BenchRow { size: len.to_string(), variant: "sequential".into(), timing: seq },
        BenchRow { size: len.to_string(), variant: "parallel".into(), timing: par },
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockVariant {
    /// Six continuous-scan branches.
    Stcm,
    /// The same block on row-major sweeps.
    Sweep,
    /// Full self-attention over all voxels.
    Attn,
}

impl BlockVariant {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "stcm" => Ok(BlockVariant::Stcm),
            "sweep" => Ok(BlockVariant::Sweep),
            "attn" => Ok(BlockVariant::Attn),
            _ => Err(Error::Invalid(format!("unknown block variant {name:?} (stcm, sweep, attn)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockVariant::Stcm => "stcm",
            BlockVariant::Sweep => "sweep",
            BlockVariant::Attn => "attn",
        }
    }
}

pub fn block_bench(dims: [usize; 4], variants: &[BlockVariant], state: usize, reps: usize, seed: u64) -> Result<Vec<BenchRow>> {
    let [c, t, h, w] = dims;
    let mut rng = Rng::new(seed);
    let v: Tensor<f32> = rng.normal_tensor(dims.to_vec(), 1.0);
    let size = format!("{c}x{t}x{h}x{w}");
    let mut rows = Vec::new();
    for &variant in variants {
        let timing = match variant {
            BlockVariant::Stcm | BlockVariant::Sweep => {
                let mut cfg = Mamba3dConfig::<f32>::init(
                    c,
                    state,
                    [3, 3, 3],
                    &ScanPattern::ALL,
                    WeightSharing::Independent,
                    &mut rng.fork(1),
                )?;
                if variant == BlockVariant::Sweep {
                    cfg.scan = ScanKind::Sweep;
                }
                mamba3d_forward(&v, &cfg)?;
                time_reps(reps, || {
                    black_box(mamba3d_forward(&v, &cfg).expect("validated block"));
                })?
            }
            BlockVariant::Attn => {
                let mut wts = AttentionWeights::<f32>::init(c, &mut rng.fork(2));
                wts.max_tokens = wts.max_tokens.max(t * h * w);
                time_reps(reps, || {
                    black_box(attention_baseline(&v, &wts).expect("validated attention"));
                })?
            }
        };
        rows.push(BenchRow { size: size.clone(), variant: variant.name().into(), timing });
    }
    Ok(rows)
}
