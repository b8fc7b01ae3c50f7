mod common;

use common::{evaluate, model_for, train};
use ltr::checkpoint::{decode, encode, load_checkpoint, save_checkpoint, FORMAT_VERSION};
use ltr::synth::{generate, CategoricalSpec, SyntheticSpec};
use ltr::{CheckpointError, LtrError};
use ltr_core::{Model, RankingConfig};
use proptest::prelude::*;
use std::sync::OnceLock;

fn trained() -> &'static (Model, Vec<u8>) {
    static CELL: OnceLock<(Model, Vec<u8>)> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = SyntheticSpec {
            queries: 40,
            dim: 4,
            categorical: Some(CategoricalSpec {
                vocab_size: 12,
                token_scale: 1.0,
                dense_scale: 0.1,
            }),
            ..SyntheticSpec::default()
        };
        let data = generate(&spec).unwrap();
        let cfg = RankingConfig {
            hidden_dims: vec![8],
            group_size: 2,
            num_steps: 15,
            batch_size: 8,
            ..RankingConfig::default()
        };
        let mut model = model_for(&spec, &data.train, cfg, true);
        train(&mut model, data.train);
        let bytes = encode(&model);
        (model, bytes)
    })
}

fn checkpoint_err(bytes: &[u8]) -> CheckpointError {
    match decode(bytes) {
        Err(LtrError::Checkpoint(e)) => e,
        Err(e) => panic!("unexpected error kind: {e}"),
        Ok(_) => panic!("corrupt checkpoint accepted"),
    }
}

#[test]
fn round_trip_is_exact() {
    let (model, bytes) = trained();
    let back = decode(bytes).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.optimizer(), model.optimizer());
    assert_eq!(back.config(), model.config());
    assert_eq!(back.global_step(), 15);
    assert_eq!(&encode(&back), bytes);
}

#[test]
fn save_and_load_through_a_file() {
    let (model, bytes) = trained();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/model.ltrf");
    save_checkpoint(model, &path).unwrap();
    assert_eq!(&std::fs::read(&path).unwrap(), bytes);
    let mut back = load_checkpoint(&path).unwrap();
    let spec = SyntheticSpec {
        queries: 10,
        dim: 4,
        seed: 3,
        categorical: Some(CategoricalSpec {
            vocab_size: 12,
            token_scale: 1.0,
            dense_scale: 0.1,
        }),
        ..SyntheticSpec::default()
    };
    let lists = generate(&spec).unwrap().train;
    let mut original = model.clone();
    assert_eq!(evaluate(&mut back, &lists), evaluate(&mut original, &lists));
    assert!(matches!(
        load_checkpoint(&dir.path().join("absent")),
        Err(LtrError::Io { .. })
    ));
}

#[test]
fn header_damage_is_classified() {
    let (_, bytes) = trained();
    let mut b = bytes.clone();
    b[0] = b'X';
    assert_eq!(checkpoint_err(&b), CheckpointError::BadMagic);

    let mut b = bytes.clone();
    b[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(checkpoint_err(&b), CheckpointError::Version { found, .. } if found == FORMAT_VERSION + 1));

    let b = &bytes[..bytes.len() - 1];
    assert!(matches!(checkpoint_err(b), CheckpointError::Truncated { .. }));
    assert!(matches!(
        checkpoint_err(&bytes[..10]),
        CheckpointError::Truncated { .. }
    ));

    let mut b = bytes.clone();
    b.push(0);
    assert!(matches!(checkpoint_err(&b), CheckpointError::Malformed(_)));

    let mut b = bytes.clone();
    let last = b.len() - 1;
    b[last] ^= 1;
    assert!(matches!(checkpoint_err(&b), CheckpointError::Checksum { .. }));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn any_single_byte_change_is_rejected(pos in any::<prop::sample::Index>(), flip in 1u8..=255) {
        let (_, bytes) = trained();
        let mut b = bytes.clone();
        let i = pos.index(b.len());
        b[i] ^= flip;
        prop_assert!(decode(&b).is_err());
    }
}
