//! Image to prediction through the public API: detection, mouth crop,
//! preprocessing, training, checkpointing and evaluation.

use emorec_core::checkpoint::{load_checkpoint, save_checkpoint};
use emorec_core::datapipe::{encode_pgm, load_pgm, preprocess, stack_batch, Sample};
use emorec_core::haar::fixtures::{mouth_cascade, plant_edge, plant_mouth, top_bottom_cascade};
use emorec_core::haar::{detect_multiscale, export_cascade, extract_mouth_roi, import_cascade, DetectParams, RoiSource};
use emorec_core::net::{build_emex, predict, NetworkState};
use emorec_core::solver::{evaluate, train, SolverConfig};
use emorec_core::{SeededRng, Tensor};

/// A 48x48 face whose mouth is either lips-apart (class 1) or a flat band (class 0).
fn face(class: usize, jitter: f64, rng: &mut SeededRng) -> Tensor {
    let mut img = Tensor::new(&[80, 80], 100.0).unwrap();
    plant_edge(&mut img, 16, 12, 48, 48);
    if class == 1 {
        plant_mouth(&mut img, 34, 46);
    }
    for v in img.data_mut() {
        *v = (*v + jitter * (rng.next_f64() - 0.5)).clamp(0.0, 255.0).round();
    }
    img
}

fn mouth_sample(img: &Tensor, label: usize, id: String) -> Sample {
    // Through the on-disk encoding, as the command-line tools see it.
    let img = load_pgm(&encode_pgm(img).unwrap()).unwrap();
    let face_cascade = import_cascade(&export_cascade(&top_bottom_cascade(), "face")).unwrap();
    let params = DetectParams {
        min_neighbors: 1,
        min_size: Some((40, 40)),
        ..DetectParams::default()
    };
    let faces = detect_multiscale(&face_cascade, &img, &params).unwrap();
    let face = faces.iter().max_by_key(|b| b.w * b.h).expect("face detected");
    let mouth_params = DetectParams {
        min_neighbors: 1,
        ..DetectParams::default()
    };
    let roi = extract_mouth_roi(&img, face, &mouth_cascade(), &mouth_params).unwrap();
    let lower = face.y + face.h / 2;
    assert!(roi.rect.y >= lower && roi.rect.bottom() <= face.y + face.h);
    if label == 0 {
        assert_eq!(roi.source, RoiSource::Fallback);
    }
    Sample {
        image: preprocess(&roi.crop, 16).unwrap(),
        label,
        source_id: id,
    }
}

#[test]
fn faces_to_trained_classifier() {
    let mut rng = SeededRng::new(8);
    let samples: Vec<Sample> = (0..24)
        .map(|i| {
            let label = i % 2;
            mouth_sample(&face(label, 6.0, &mut rng), label, format!("f{i}"))
        })
        .collect();
    let spec = build_emex([1, 16, 16], 2).unwrap();
    let cfg = SolverConfig {
        max_iterations: 100,
        test_interval: 50,
        test_batch_size: 8,
        test_iterations: 1,
        learning_rate: 0.005,
        ..SolverConfig::default()
    };
    let mut rng = SeededRng::new(cfg.seed);
    let state = NetworkState::init(&spec, &mut rng);
    let tmp = tempfile::tempdir().unwrap();
    let out = train(&spec, state, &samples, &samples, &cfg, Some(1), &mut rng, Some(tmp.path())).unwrap();
    assert_eq!(out.checkpoints.len(), 2);
    assert_eq!(out.log.rows.len(), 2);

    let report = evaluate(&spec, &out.state, &samples, Some(1)).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.positive_f1, Some(1.0));

    // The last checkpoint reproduces the final weights and predictions.
    let path = tmp.path().join("final.emrc");
    save_checkpoint(&path, &out.state, Some(&out.adam), 100).unwrap();
    let ck = load_checkpoint(&path, &spec).unwrap();
    assert_eq!(ck.state, out.state);
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&out.checkpoints[1]).unwrap());
    let images: Vec<&Tensor> = samples.iter().map(|s| &s.image).collect();
    let batch = stack_batch(&images).unwrap();
    assert_eq!(
        predict(&spec, &ck.state, &batch).unwrap(),
        predict(&spec, &out.state, &batch).unwrap()
    );
}
