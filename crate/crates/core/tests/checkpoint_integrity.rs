//! Checkpoint durability: a thousand randomized round-trips must be
//! bit-exact, every single-byte corruption must be caught by the checksum,
//! and a loaded model must evaluate identically to the one that was saved.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use szoo_core::arch::{FamilySpec, Model, ModelConfig};
use szoo_core::checkpoint::{checkpoint_bytes, model_from_bytes, CheckpointError};
use szoo_core::data::{synth_generate, Split, SynthSpec};
use szoo_core::train::evaluate;

fn tiny_config() -> ModelConfig {
    let mut cfg = ModelConfig::new(FamilySpec::MlpMixer {
        patch: 4,
        hidden: 6,
        layers: 1,
        token_dim: 3,
        channel_dim: 5,
    });
    cfg.resolution = 8;
    cfg.in_channels = 3;
    cfg.num_classes = 4;
    cfg
}

#[test]
fn thousand_randomized_roundtrips_bit_exact() {
    let mut model = Model::<f32>::build(tiny_config(), 0).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    for round in 0..1000 {
        for e in model.params.entries_mut() {
            for v in e.data.iter_mut() {
                *v = rng.gen::<f32>() * 4.0 - 2.0;
            }
        }
        let bytes = checkpoint_bytes(&model).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        for (a, b) in back.params.entries().iter().zip(model.params.entries()) {
            assert_eq!(a.data, b.data, "round {round}, tensor {}", a.name);
        }
    }
}

#[test]
fn every_single_byte_corruption_is_rejected() {
    let model = Model::<f32>::build(tiny_config(), 5).unwrap();
    let bytes = checkpoint_bytes(&model).unwrap();
    for i in 0..bytes.len() {
        let mut corrupted = bytes.clone();
        corrupted[i] ^= 0x01;
        match model_from_bytes(&corrupted) {
            Err(CheckpointError::Crc { .. }) => {}
            other => panic!("byte {i}/{}: expected CRC rejection, got {other:?}", bytes.len()),
        }
    }
    assert!(model_from_bytes(&bytes).is_ok());
}

#[test]
fn loaded_model_evaluates_identically() {
    let spec = SynthSpec::new(4, 3, 8, 42);
    let ds = synth_generate(&spec, Split::Test, 0, 16).unwrap();
    let mut model = Model::<f32>::build(tiny_config(), 7).unwrap();
    let (before, _) = evaluate(&mut model, &ds, 0.5).unwrap();
    let bytes = checkpoint_bytes(&model).unwrap();
    let mut back = model_from_bytes(&bytes).unwrap();
    let (after, _) = evaluate(&mut back, &ds, 0.5).unwrap();
    assert_eq!(before, after, "evaluation must survive the round-trip exactly");
}
