//! On-disk format guarantees: bit-exact round-trips through the dataset
//! store and the checkpoint container, and well-defined error classes for
//! corrupted or incompatible files.

use std::fs;
use std::path::PathBuf;

use graphmark::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
use graphmark::data::{load_dataset, write_dataset, GeneratorConfig};
use graphmark::experiment::build_split_dataset;
use graphmark::graph::{GraphTopology, MeanShape};
use graphmark::model::{ArchDescriptor, ModelParams};
use graphmark::optim::AdamState;
use graphmark::Error;

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("graphmark-fmt-{tag}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_dataset() -> graphmark::data::Dataset {
    let generator = GeneratorConfig { k: 4, image_h: 16, image_w: 16, ..Default::default() };
    build_split_dataset(&generator, 11, 3, 4, 2, 3).unwrap()
}

fn small_arch() -> ArchDescriptor {
    ArchDescriptor {
        image_h: 16,
        image_w: 16,
        enc_channels: vec![4, 8],
        enc_strides: vec![2, 2],
        gcn_width: 8,
        gcn_depth: 1,
        cascade_len: 2,
        k: 4,
    }
}

fn mean_shape(k: usize) -> MeanShape {
    let pts = (0..k).map(|i| [0.2 + 0.1 * i as f64, 0.5]).collect();
    graphmark::graph::compute_mean_shape(&[graphmark::graph::LandmarkSet::new(pts)]).unwrap()
}

#[test]
fn dataset_round_trip_is_bit_exact() {
    let dir = temp_dir("ds");
    let ds = small_dataset();
    write_dataset(&dir, &ds).unwrap();
    let loaded = load_dataset(&dir).unwrap();
    assert_eq!(loaded, ds, "loaded dataset differs from the written one");

    // Writing what was loaded must reproduce the files byte for byte.
    let dir2 = temp_dir("ds2");
    write_dataset(&dir2, &loaded).unwrap();
    let m1 = fs::read(dir.join("manifest.json")).unwrap();
    let m2 = fs::read(dir2.join("manifest.json")).unwrap();
    assert_eq!(m1, m2, "manifest bytes changed across a round trip");
    for s in &ds.samples {
        let name = format!("images/{}.pgm", s.id);
        let i1 = fs::read(dir.join(&name)).unwrap();
        let i2 = fs::read(dir2.join(&name)).unwrap();
        assert_eq!(i1, i2, "image bytes changed for {name}");
    }
    fs::remove_dir_all(&dir).unwrap();
    fs::remove_dir_all(&dir2).unwrap();
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = temp_dir("ck");
    let arch = small_arch();
    let student = ModelParams::init(&arch, 5).unwrap();
    let teacher = ModelParams::init(&arch, 6).unwrap();
    let optimizer = AdamState::new(&student);
    let ckpt = Checkpoint {
        t: 123,
        student,
        teacher: Some(teacher),
        optimizer: Some(optimizer),
        mean_shape: mean_shape(4),
        topology: GraphTopology::chain(4).unwrap(),
    };

    let p1 = dir.join("a.bin");
    let p2 = dir.join("b.bin");
    save_checkpoint(&p1, &ckpt).unwrap();
    let loaded = load_checkpoint(&p1).unwrap();
    assert_eq!(loaded.t, ckpt.t);
    assert!(loaded.teacher.is_some());
    assert!(loaded.optimizer.is_some());
    assert_eq!(loaded.student.desc, ckpt.student.desc);

    // The container stores weights in 32-bit form; one save/load settles to
    // a fixed point that later round trips must preserve exactly.
    save_checkpoint(&p2, &loaded).unwrap();
    let b1 = fs::read(&p1).unwrap();
    let b2 = fs::read(&p2).unwrap();
    assert_eq!(b1, b2, "checkpoint bytes changed across a round trip");
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn optional_blocks_round_trip_independently() {
    let dir = temp_dir("ckopt");
    let arch = small_arch();
    let ckpt = Checkpoint {
        t: 0,
        student: ModelParams::init(&arch, 5).unwrap(),
        teacher: None,
        optimizer: None,
        mean_shape: mean_shape(4),
        topology: GraphTopology::chain(4).unwrap(),
    };
    let path = dir.join("bare.bin");
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert!(loaded.teacher.is_none());
    assert!(loaded.optimizer.is_none());
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn truncated_manifest_is_a_format_error() {
    let dir = temp_dir("trunc");
    write_dataset(&dir, &small_dataset()).unwrap();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, &text[..text.len() / 2]).unwrap();
    match load_dataset(&dir) {
        Err(Error::Format(_)) => {}
        other => panic!("expected Format error, got {other:?}"),
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn unknown_manifest_field_is_a_format_error() {
    let dir = temp_dir("unk");
    write_dataset(&dir, &small_dataset()).unwrap();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("\"k\":", "\"kk\": 1, \"k\":", 1)).unwrap();
    match load_dataset(&dir) {
        Err(Error::Format(msg)) => {
            assert!(msg.contains("kk"), "error should name the unknown field: {msg}")
        }
        other => panic!("expected Format error, got {other:?}"),
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn future_manifest_version_is_a_version_error() {
    let dir = temp_dir("ver");
    write_dataset(&dir, &small_dataset()).unwrap();
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).unwrap();
    fs::write(&path, text.replacen("\"format_version\": 1", "\"format_version\": 999", 1))
        .unwrap();
    match load_dataset(&dir) {
        Err(Error::Version { found: 999, .. }) => {}
        other => panic!("expected Version error, got {other:?}"),
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn missing_image_file_is_an_io_error() {
    let dir = temp_dir("noimg");
    let ds = small_dataset();
    write_dataset(&dir, &ds).unwrap();
    let victim = dir.join("images").join(format!("{}.pgm", ds.samples[0].id));
    fs::remove_file(&victim).unwrap();
    match load_dataset(&dir) {
        Err(Error::Io { path, .. }) => assert_eq!(path, victim),
        other => panic!("expected Io error, got {other:?}"),
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn inconsistent_annotations_are_a_format_error() {
    let dir = temp_dir("badlm");
    write_dataset(&dir, &small_dataset()).unwrap();
    let path = dir.join("manifest.json");
    // Drop one coordinate pair from the first annotated sample: the count
    // no longer matches the declared landmark count.
    let text = fs::read_to_string(&path).unwrap();
    let manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    let mut edited = manifest;
    let samples = edited["samples"].as_array_mut().unwrap();
    let lm = samples
        .iter_mut()
        .find_map(|s| s.get_mut("landmarks").and_then(|l| l.as_array_mut()))
        .unwrap();
    lm.pop();
    fs::write(&path, serde_json::to_string_pretty(&edited).unwrap()).unwrap();
    // A parseable file whose contents are inconsistent is corrupt, which is
    // a format problem of the artifact rather than an API misuse.
    match load_dataset(&dir) {
        Err(Error::Format(msg)) => {
            assert!(msg.contains("landmarks"), "unexpected message: {msg}")
        }
        other => panic!("expected Format error, got {other:?}"),
    }
    fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn corrupt_checkpoints_report_distinct_error_classes() {
    let dir = temp_dir("ckbad");
    let arch = small_arch();
    let ckpt = Checkpoint {
        t: 1,
        student: ModelParams::init(&arch, 5).unwrap(),
        teacher: None,
        optimizer: None,
        mean_shape: mean_shape(4),
        topology: GraphTopology::chain(4).unwrap(),
    };
    let path = dir.join("ck.bin");
    save_checkpoint(&path, &ckpt).unwrap();
    let good = fs::read(&path).unwrap();

    // Wrong magic.
    let mut bad = good.clone();
    bad[0] ^= 0xFF;
    let p = dir.join("magic.bin");
    fs::write(&p, &bad).unwrap();
    match load_checkpoint(&p) {
        Err(Error::Format(_)) => {}
        other => panic!("expected Format error for bad magic, got {other:?}"),
    }

    // Unsupported version.
    let mut bad = good.clone();
    bad[4] = CHECKPOINT_VERSION as u8 + 1;
    let p = dir.join("version.bin");
    fs::write(&p, &bad).unwrap();
    match load_checkpoint(&p) {
        Err(Error::Version { .. }) => {}
        other => panic!("expected Version error, got {other:?}"),
    }

    // Truncation.
    let p = dir.join("short.bin");
    fs::write(&p, &good[..good.len() - 7]).unwrap();
    match load_checkpoint(&p) {
        Err(Error::Format(_)) => {}
        other => panic!("expected Format error for truncation, got {other:?}"),
    }

    // Missing file.
    match load_checkpoint(&dir.join("absent.bin")) {
        Err(Error::Io { .. }) => {}
        other => panic!("expected Io error, got {other:?}"),
    }
    fs::remove_dir_all(&dir).unwrap();
}
