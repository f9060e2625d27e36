use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vsrf::model::{decode, encode, load_model, read_header, save_model, FORMAT_VERSION};
use vsrf::phantom::{make_phantom, PhantomKind};
use vsrf::Error;
use vsrf_core::{DegradationSpec, EnsembleMode, ForestConfig, SrConfig, SrModel};

fn small_model() -> SrModel {
    let cfg = SrConfig {
        forest: ForestConfig {
            n_trees: 2,
            max_depth: 5,
            min_leaf_samples: 40,
            ..ForestConfig::default()
        },
        pca_target: 0.99,
        ..SrConfig::default()
    };
    let v = make_phantom(PhantomKind::Blobs, [16; 3], 3).unwrap();
    vsrf_core::pipeline::train_model(&[("b3".into(), v)], &DegradationSpec::default(), &cfg, 9).unwrap()
}

#[test]
fn round_trip_preserves_model_and_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vsrf");
    let model = small_model();
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let d = model.forest.input_dim();
    for _ in 0..100 {
        let x: Vec<f32> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        for mode in [EnsembleMode::Median, EnsembleMode::Average] {
            let a = model.forest.predict(&x, mode).unwrap();
            let b = back.forest.predict(&x, mode).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    let h = read_header(&path).unwrap();
    assert_eq!(h.trees.len(), 2);
    assert_eq!(h.training_ids, vec!["b3"]);
    assert_eq!(encode(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn damaged_files_are_rejected() {
    let p = std::path::Path::new("m.vsrf");
    let bytes = encode(&small_model()).unwrap();

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 0x40;
    assert!(matches!(decode(p, &flipped), Err(Error::ChecksumMismatch { .. })));

    let mut newer = bytes.clone();
    newer[4..8].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(
        decode(p, &newer),
        Err(Error::VersionMismatch { found, .. }) if found == FORMAT_VERSION + 1
    ));

    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode(p, &magic), Err(Error::BadMagic { .. })));

    for cut in [2, 10, 100, bytes.len() - 5] {
        assert!(matches!(decode(p, &bytes[..cut]), Err(Error::Truncated { .. })), "cut {cut}");
    }

    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode(p, &extra).is_err());

    // the header alone is intact, but reading it still checks the tensors
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.vsrf");
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(read_header(&path), Err(Error::ChecksumMismatch { .. })));
}

#[test]
fn error_codes_follow_the_failure_class() {
    let p = std::path::Path::new("m.vsrf");
    let bytes = encode(&small_model()).unwrap();
    let err = decode(p, &bytes[..20]).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert_eq!(Error::Config("x".into()).exit_code(), 1);
}
