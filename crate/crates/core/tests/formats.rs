//! On-disk formats against committed golden files.

use std::path::Path;

use repbank::mlp::{decode_stack, encode_stack, Mlp};
use repbank::store::{
    decode_features, decode_labels, encode_features, encode_labels, load_ensemble, read_features, write_features,
    write_labels, LabelVector, Manifest, Split,
};
use repbank::synth::{generate, write_corpus, SynthSpec};
use repbank::{Error, Matrix};

const FSTR: &[u8] = include_bytes!("fixtures/golden.fstr");
const LBLS: &[u8] = include_bytes!("fixtures/golden.lbls");

#[test]
fn golden_feature_file() {
    let m = decode_features(FSTR, Path::new("golden.fstr")).unwrap();
    assert_eq!(m.shape(), (2, 3));
    assert_eq!(m.row(0), &[0.6f32 as f64, 0.8f32 as f64, 0.0]);
    assert_eq!(m.row(1), &[0.0, 0.0, 1.0]);
    assert_eq!(encode_features(&m).unwrap(), FSTR);
}

#[test]
fn golden_label_file() {
    let l = decode_labels(LBLS, Path::new("golden.lbls")).unwrap();
    assert_eq!(l.ids(), &[2, 0, 1]);
    assert_eq!(l.num_classes(), 3);
    assert_eq!(encode_labels(&l), LBLS);
}

#[test]
fn corrupted_files_are_reported() {
    let p = Path::new("x.fstr");
    assert!(matches!(decode_features(&FSTR[..40], p), Err(Error::Truncated { .. })));
    let mut magic = FSTR.to_vec();
    magic[0] = b'X';
    assert!(matches!(decode_features(&magic, p), Err(Error::BadMagic { .. })));
    let mut version = FSTR.to_vec();
    version[4] = 2;
    assert!(matches!(decode_features(&version, p), Err(Error::UnsupportedVersion { .. })));
    let mut nan = FSTR.to_vec();
    nan[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(matches!(decode_features(&nan, p), Err(Error::NonFinite { index: 0 })));
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate(&SynthSpec {
        n_train: 20,
        n_test: 10,
        dim: 6,
        models: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let path = write_corpus(&c, "tiny", dir.path()).unwrap();
    let manifest = Manifest::load(&path).unwrap();
    assert_eq!(manifest.models, ["view0", "view1"]);
    assert!(manifest.referenced_files().iter().all(|f| f.exists()));
    let (train, labels) = load_ensemble(&manifest, Split::Train).unwrap();
    assert_eq!(labels, c.train.labels);
    for j in 0..2 {
        let (a, b) = (train.member(j).matrix(), c.train.ensemble.member(j).matrix());
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    let f = dir.path().join("one.fstr");
    write_features(c.test.ensemble.member(0), &f).unwrap();
    assert!(read_features(&f).unwrap().is_normalized());
    write_labels(&LabelVector::new(vec![1, 1], 2).unwrap(), dir.path().join("l.lbls")).unwrap();
}

#[test]
fn checkpoint_stack_round_trips() {
    let m = Mlp::from_layers(vec![repbank::mlp::Layer {
        weight: Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25]]).unwrap(),
        bias: vec![0.125, -0.5],
    }])
    .unwrap();
    let stack = vec![m.clone(), Mlp::identity(2, 1).unwrap()];
    let bytes = encode_stack(&stack);
    assert_eq!(&bytes[..4], b"MLPW");
    assert_eq!(decode_stack(&bytes, Path::new("c.mlpw")).unwrap(), stack);
    assert!(decode_stack(&bytes[..bytes.len() - 1], Path::new("c.mlpw")).is_err());
}
