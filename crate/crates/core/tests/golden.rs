//! Pinned outputs. A change here means files or seeded data changed on disk.

use scst_core::metrics::psnr;
use scst_core::numerics::io::{encode, tensor_read, tensor_write};
use scst_core::train::{box_downsample, degrade, synth_video, DegradeParams, Motion, SynthConfig};
use scst_core::{Rng, Tensor};
use sha2::{Digest, Sha256};

fn sha(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[test]
fn random_tensor_file_hash() {
    let t: Tensor<f32> = Rng::new(42).normal_tensor(vec![1000], 1.0);
    let path = std::env::temp_dir().join(format!("scst-golden-{}.scst", std::process::id()));
    tensor_write(&t, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(bytes.len(), 4 + 2 + 1 + 1 + 8 + 4000);
    assert_eq!(sha(&bytes), "589f25fe85363404c19c29100921b69fcd6cc0f05ae76dff78df0fcff86c1271");
    assert_eq!(bytes, encode(&t));
    assert_eq!(tensor_read::<f32>(&path).unwrap(), t);
    std::fs::remove_file(path).unwrap();
}

#[test]
fn synthetic_clip_hash() {
    let clip = synth_video::<f32>(&mut Rng::new(7), &SynthConfig::new(4, 16, 16)).unwrap();
    assert_eq!(clip.motion, Motion { dx: 1.0, dy: -1.0 });
    assert_eq!(sha(&encode(&clip.video)), "308f7174a7dfafd76290d2db2180d1052741939c1b86c15ff4d7655ada664cdb");
}

#[test]
fn degradation_psnr() {
    let clip = synth_video::<f32>(&mut Rng::new(7), &SynthConfig::new(4, 16, 16)).unwrap();
    let lr = degrade(&clip.video, &DegradeParams::default(), &mut Rng::new(8)).unwrap();
    let reference = box_downsample(&clip.video, 2).unwrap();
    let db = psnr(&reference, &lr, 1.0).unwrap().value;
    assert!((db - 27.5388).abs() < 0.01, "{db}");
}
