mod common;

use std::fs;
use std::path::Path;

use common::*;
use emorec_core::datapipe::{read_pgm, write_pgm};
use emorec_core::Tensor;

fn exit_code(o: &std::process::Output) -> i32 {
    o.status.code().expect("exit code")
}

#[test]
fn detect_planted_face_and_flat_image() {
    let tmp = tempfile::tempdir().unwrap();
    let (face, _) = write_cascades(tmp.path());
    let hit = tmp.path().join("hit.pgm");
    let flat = tmp.path().join("flat.pgm");
    write_pgm(&hit, &face_image(30, 40)).unwrap();
    write_pgm(&flat, &Tensor::new(&[90, 80], 100.0).unwrap()).unwrap();

    let o = emorec(&[
        "detect",
        "--cascade",
        face.to_str().unwrap(),
        "--min-neighbors",
        "1",
        hit.to_str().unwrap(),
        flat.to_str().unwrap(),
    ]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "file,x,y,w,h,neighbors");
    assert_eq!(lines.len(), 2, "{text}");
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert!(fields[0].ends_with("hit.pgm"));
    let xywh: Vec<usize> = fields[1..5].iter().map(|f| f.parse().unwrap()).collect();
    assert_eq!(xywh, vec![30, 40, 24, 24]);
}

#[test]
fn detect_missing_cascade_is_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let img = tmp.path().join("a.pgm");
    write_pgm(&img, &face_image(0, 0)).unwrap();
    let missing = tmp.path().join("nope.xml");
    let o = emorec(&["detect", "--cascade", missing.to_str().unwrap(), img.to_str().unwrap()]);
    assert_eq!(exit_code(&o), 2);
    assert!(stderr(&o).contains("nope.xml"), "{}", stderr(&o));
}

#[test]
fn bad_arguments_exit_2() {
    assert_eq!(exit_code(&emorec(&["detect"])), 2);
    assert_eq!(exit_code(&emorec(&["frobnicate"])), 2);
    assert_eq!(exit_code(&emorec(&["eval", "--config", "x.cfg"])), 2);
}

fn extract(input: &Path, out: &Path, cascades: &(std::path::PathBuf, std::path::PathBuf)) -> std::process::Output {
    emorec(&[
        "extract",
        "--cascade",
        cascades.0.to_str().unwrap(),
        "--mouth-cascade",
        cascades.1.to_str().unwrap(),
        "--min-size",
        "40",
        "--min-neighbors",
        "1",
        "--out",
        out.to_str().unwrap(),
        input.to_str().unwrap(),
    ])
}

#[test]
fn extract_empty_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cascades = write_cascades(tmp.path());
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    let out = tmp.path().join("out");
    let o = extract(&input, &out, &cascades);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 1);
}

#[test]
fn extract_crop_lies_in_lower_face_half() {
    let tmp = tempfile::tempdir().unwrap();
    let cascades = write_cascades(tmp.path());
    let input = tmp.path().join("in");
    fs::create_dir_all(input.join("Joy")).unwrap();
    write_pgm(&input.join("Joy/a.pgm"), &face_with_mouth(20, 10)).unwrap();
    let out = tmp.path().join("out");
    let o = extract(&input, &out, &cascades);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));

    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    let row: Vec<&str> = manifest.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "Joy/a.pgm");
    let n: Vec<usize> = row[1..9].iter().map(|f| f.parse().unwrap()).collect();
    let (fx, fy, fw, fh) = (n[0], n[1], n[2], n[3]);
    let (mx, my, mw, mh) = (n[4], n[5], n[6], n[7]);
    match row[9] {
        "detected" => {
            assert!(mx >= fx && mx + mw <= fx + fw);
            assert!(my >= fy + fh / 2 && my + mh <= fy + fh);
        }
        "fallback" => {
            assert_eq!(mh, fh - fh * 2 / 3);
            assert_eq!(my + mh, fy + fh);
        }
        other => panic!("unexpected source {other}"),
    }
    let crop = read_pgm(&out.join("Joy/a.pgm")).unwrap();
    assert_eq!(crop.dims(), &[mh, mw]);
}

#[test]
fn extract_without_face_is_domain_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cascades = write_cascades(tmp.path());
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    write_pgm(&input.join("flat.pgm"), &Tensor::new(&[60, 60], 90.0).unwrap()).unwrap();
    let out = tmp.path().join("out");
    let o = extract(&input, &out, &cascades);
    assert_eq!(exit_code(&o), 1);
    assert!(stderr(&o).contains("flat.pgm"));
    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert!(manifest.lines().nth(1).unwrap().ends_with("no_face"));
}

#[test]
fn extract_unwritable_output_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cascades = write_cascades(tmp.path());
    let input = tmp.path().join("in");
    fs::create_dir(&input).unwrap();
    write_pgm(&input.join("a.pgm"), &face_with_mouth(20, 10)).unwrap();
    // A regular file where the output directory should be.
    let out = tmp.path().join("blocker");
    fs::write(&out, b"x").unwrap();
    let o = extract(&input, &out, &cascades);
    assert_eq!(exit_code(&o), 2);
}

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = dir.join("run.cfg");
    write_config(
        &cfg,
        &format!(
            "classes = Disgust, Joy, Neutral\n\
             input_size = 16\n\
             train_per_class = 7\n\
             val_per_class = 1\n\
             train_batch_size = 10\n\
             test_batch_size = 3\n\
             test_iterations = 1\n\
             test_interval = 50\n\
             dataset = data\n\
             {extra}"
        ),
    );
    cfg
}

#[test]
fn split_is_stratified_and_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_dataset(&tmp.path().join("data"), 10, "s", 5);
    let cfg = small_config(tmp.path(), "");
    let a = emorec(&["split", "--config", cfg.to_str().unwrap()]);
    assert_eq!(exit_code(&a), 0, "{}", stderr(&a));
    let b = emorec(&["split", "--config", cfg.to_str().unwrap()]);
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(text.lines().next(), Some("source_id,class,split"));
    for class in CLASSES {
        let count = |split: &str| {
            text.lines()
                .filter(|l| l.contains(&format!(",{class},{split}")))
                .count()
        };
        assert_eq!((count("train"), count("validation"), count("test")), (7, 1, 2));
    }
    let other = emorec(&["split", "--config", cfg.to_str().unwrap(), "--seed", "99"]);
    assert_ne!(other.stdout, a.stdout);
}

#[test]
fn train_eval_report_round() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_dataset(&tmp.path().join("data"), 10, "s", 5);
    let cfg = small_config(tmp.path(), "max_iterations = 50\npositive_class = Joy\n");
    let run = |name: &str| {
        let out = tmp.path().join(name);
        let o = emorec(&["train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
        out
    };
    let first = run("run1");
    let log = fs::read_to_string(first.join("train_log.csv")).unwrap();
    let lines: Vec<&str> = log.lines().collect();
    assert_eq!(lines[0], "step,accuracy,f1");
    assert_eq!(lines.len(), 2);
    assert!(lines[1].starts_with("50,"));
    let ckpt = first.join("checkpoint_000050.emrc");
    assert!(ckpt.exists());
    assert!(first.join("split.csv").exists());

    // Byte-identical rerun.
    let second = run("run2");
    for f in ["train_log.csv", "checkpoint_000050.emrc", "split.csv"] {
        assert_eq!(fs::read(first.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }

    let o = emorec(&[
        "eval",
        "--config",
        cfg.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--split",
        "test",
    ]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[1], "50");
    assert_eq!(row[2], "test");
    assert_eq!(row[3], "6");
    let acc: f64 = row[4].parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));

    let report = emorec(&["report", first.join("train_log.csv").to_str().unwrap()]);
    assert_eq!(exit_code(&report), 0);
    let rtext = stdout(&report);
    assert_eq!(rtext.lines().next(), Some("log,step,accuracy,f1,best"));
    assert!(rtext.lines().nth(1).unwrap().starts_with("train_log,50,"));
    assert!(rtext.lines().nth(1).unwrap().ends_with(",1"));
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    synthetic_dataset(&tmp.path().join("data"), 10, "s", 5);
    let cfg = small_config(tmp.path(), "");
    let bogus = tmp.path().join("bogus.emrc");
    fs::write(&bogus, b"EMRC\x01\0\0\0").unwrap();
    let o = emorec(&["eval", "--config", cfg.to_str().unwrap(), "--checkpoint", bogus.to_str().unwrap()]);
    assert_eq!(exit_code(&o), 2);
    assert!(stderr(&o).contains("bogus.emrc"));
}

const EMEX_LOG: &str = "step,accuracy,f1\n\
100,0.6344,0.6793\n\
200,0.4301,0.4647\n\
300,0.8065,0.7568\n\
400,0.8602,0.8354\n\
500,0.8925,0.8781\n\
600,0.8495,0.8205\n\
700,0.8280,0.7895\n\
800,0.8172,0.7733\n\
900,0.8172,0.7733\n\
1000,0.8172,0.7733\n";

#[test]
fn report_marks_best_step() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("emex.csv");
    fs::write(&log, EMEX_LOG).unwrap();
    let out = tmp.path().join("report.csv");
    let o = emorec(&["report", "--out", out.to_str().unwrap(), log.to_str().unwrap()]);
    assert_eq!(exit_code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    let best: Vec<&str> = text.lines().filter(|l| l.ends_with(",1")).collect();
    assert_eq!(best, vec!["emex,500,0.8925,0.8781,1"]);
    assert_eq!(text.lines().count(), 11);
}

#[test]
fn report_rejects_malformed_log() {
    let tmp = tempfile::tempdir().unwrap();
    let log = tmp.path().join("bad.csv");
    fs::write(&log, "step,accuracy\n1,0.5\n").unwrap();
    assert_eq!(exit_code(&emorec(&["report", log.to_str().unwrap()])), 2);
}
