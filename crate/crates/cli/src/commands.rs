use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use emorec_core::checkpoint::load_checkpoint;
use emorec_core::datapipe::{load_dataset, read_pgm, split_indices, write_pgm, LabelMap, Sample, SplitName};
use emorec_core::haar::{
    detect_multiscale, extract_mouth_roi, load_cascade, DetectParams, DetectionBox, RoiSource,
};
use emorec_core::metrics::fmt4;
use emorec_core::net::NetworkState;
use emorec_core::solver::{evaluate, train, EvalReport, TrainLog};
use emorec_core::SeededRng;

use crate::config::RunConfig;

/// How a command that ran to completion ended.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Status {
    Success,
    /// The inputs were readable but the task could not be carried out,
    /// e.g. no face in an image that needed one.
    DomainFailure(String),
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

/// Writes CSV rows to `out`, or to stdout when `out` is `None`.
fn emit_csv(out: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut buf = Vec::new();
    {
        let mut w = csv_writer(&mut buf);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    match out {
        Some(path) => fs::write(path, &buf).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(&buf)?,
    }
    Ok(())
}

pub struct DetectArgs<'a> {
    pub images: &'a [PathBuf],
    pub cascade: &'a Path,
    pub params: DetectParams,
    pub out: Option<&'a Path>,
}

/// One CSV row per detection: `file,x,y,w,h,neighbors`.
pub fn cmd_detect(args: &DetectArgs<'_>) -> Result<Status> {
    let cascade = load_cascade(args.cascade)?;
    let mut rows = Vec::new();
    for path in args.images {
        let img = read_pgm(path)?;
        for b in detect_multiscale(&cascade, &img, &args.params)? {
            rows.push(vec![
                path.display().to_string(),
                b.x.to_string(),
                b.y.to_string(),
                b.w.to_string(),
                b.h.to_string(),
                b.neighbors.to_string(),
            ]);
        }
    }
    emit_csv(args.out, &["file", "x", "y", "w", "h", "neighbors"], &rows)?;
    Ok(Status::Success)
}

/// Graymaps directly under `dir` and one level of subdirectories, as paths
/// relative to `dir`, sorted.
fn graymaps_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let is_pgm = |p: &Path| {
        p.is_file()
            && p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
    };
    let list = |d: &Path| -> Result<Vec<PathBuf>> {
        let mut v = fs::read_dir(d)
            .with_context(|| format!("reading {}", d.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?;
        v.sort();
        Ok(v)
    };
    let mut out = Vec::new();
    for p in list(dir)? {
        if p.is_dir() {
            out.extend(list(&p)?.into_iter().filter(|q| is_pgm(q)));
        } else if is_pgm(&p) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out
        .into_iter()
        .map(|p| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or(p))
        .collect())
}

/// Largest area wins; ties follow the most-neighbors, topmost, leftmost order.
fn largest_face(faces: &[DetectionBox]) -> Option<DetectionBox> {
    faces
        .iter()
        .copied()
        .min_by_key(|b| (std::cmp::Reverse(b.w * b.h), std::cmp::Reverse(b.neighbors), b.y, b.x))
}

pub struct ExtractArgs<'a> {
    pub input_dir: &'a Path,
    pub face_cascade: &'a Path,
    pub mouth_cascade: &'a Path,
    pub params: DetectParams,
    pub out_dir: &'a Path,
}

pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes a mouth crop per input image, mirroring the input layout, plus a
/// manifest. Images without a face get a `no_face` manifest row and make
/// the command end in a domain failure.
pub fn cmd_extract(args: &ExtractArgs<'_>) -> Result<Status> {
    let face_cascade = load_cascade(args.face_cascade)?;
    let mouth_cascade = load_cascade(args.mouth_cascade)?;
    let mouth_params = DetectParams {
        min_size: None,
        ..args.params
    };
    fs::create_dir_all(args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;

    let mut rows = Vec::new();
    let mut missing = Vec::new();
    for rel in graymaps_under(args.input_dir)? {
        let img = read_pgm(&args.input_dir.join(&rel))?;
        let name = rel.display().to_string();
        let Some(face) = largest_face(&detect_multiscale(&face_cascade, &img, &args.params)?) else {
            log::warn!("{name}: no face found");
            let mut row = vec![name.clone()];
            row.extend(std::iter::repeat_n(String::new(), 8));
            row.push("no_face".into());
            rows.push(row);
            missing.push(name);
            continue;
        };
        let roi = extract_mouth_roi(&img, &face, &mouth_cascade, &mouth_params)?;
        let target = args.out_dir.join(&rel);
        if let Some(parent) = target.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        write_pgm(&target, &roi.crop).with_context(|| format!("writing {}", target.display()))?;
        let r = roi.rect;
        let mut row = vec![name];
        row.extend([face.x, face.y, face.w, face.h, r.x, r.y, r.w, r.h].iter().map(ToString::to_string));
        row.push(
            match roi.source {
                RoiSource::Detected => "detected",
                RoiSource::Fallback => "fallback",
            }
            .into(),
        );
        rows.push(row);
    }
    let header = [
        "file", "face_x", "face_y", "face_w", "face_h", "mouth_x", "mouth_y", "mouth_w", "mouth_h", "source",
    ];
    emit_csv(Some(&args.out_dir.join(MANIFEST_NAME)), &header, &rows)?;
    if missing.is_empty() {
        Ok(Status::Success)
    } else {
        Ok(Status::DomainFailure(format!(
            "no face found in {} image(s): {}",
            missing.len(),
            missing.join(", ")
        )))
    }
}

fn dataset_dir(cfg: &RunConfig, flag: Option<&Path>) -> Result<PathBuf> {
    flag.map(Path::to_path_buf)
        .or_else(|| cfg.dataset.clone())
        .ok_or_else(|| anyhow!("no dataset given (use --dataset or the dataset config key)"))
}

struct Prepared {
    labels: LabelMap,
    samples: Vec<Sample>,
    assignment: Vec<SplitName>,
}

fn prepare(cfg: &RunConfig, dataset: &Path) -> Result<Prepared> {
    let labels = cfg.label_map()?;
    let samples = load_dataset(dataset, &labels, cfg.input_size())?;
    let sample_labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let mut rng = SeededRng::new(cfg.solver.seed);
    let split = split_indices(&sample_labels, &cfg.split_plan(labels.len()), &mut rng)?;
    let assignment = split.assignments(samples.len());
    Ok(Prepared {
        labels,
        samples,
        assignment,
    })
}

fn split_rows(p: &Prepared) -> Vec<Vec<String>> {
    p.samples
        .iter()
        .zip(&p.assignment)
        .map(|(s, a)| {
            vec![
                s.source_id.clone(),
                p.labels.name(s.label).unwrap_or_default().to_string(),
                a.as_str().to_string(),
            ]
        })
        .collect()
}

const SPLIT_HEADER: [&str; 3] = ["source_id", "class", "split"];

/// Split manifest `source_id,class,split` in dataset order.
pub fn cmd_split(cfg: &RunConfig, dataset: Option<&Path>, out: Option<&Path>) -> Result<Status> {
    let p = prepare(cfg, &dataset_dir(cfg, dataset)?)?;
    emit_csv(out, &SPLIT_HEADER, &split_rows(&p))?;
    Ok(Status::Success)
}

pub const TRAIN_LOG_NAME: &str = "train_log.csv";
pub const SPLIT_NAME: &str = "split.csv";

fn select(p: &Prepared, which: SplitName) -> Vec<Sample> {
    p.samples
        .iter()
        .zip(&p.assignment)
        .filter(|(_, a)| **a == which)
        .map(|(s, _)| s.clone())
        .collect()
}

/// Trains per the config, writing checkpoints, the training log and the
/// split manifest into `out_dir`.
pub fn cmd_train(cfg: &RunConfig, dataset: Option<&Path>, out_dir: Option<&Path>) -> Result<(Status, TrainLog)> {
    let out_dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| anyhow!("no output directory given (use --out or the output_dir config key)"))?;
    let p = prepare(cfg, &dataset_dir(cfg, dataset)?)?;
    let positive = cfg.positive_index(&p.labels)?;
    let spec = cfg.network_spec(p.labels.len())?;
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    emit_csv(Some(&out_dir.join(SPLIT_NAME)), &SPLIT_HEADER, &split_rows(&p))?;

    let train_set = select(&p, SplitName::Train);
    let val_set = select(&p, SplitName::Validation);
    log::info!(
        "{} network, {} parameters, {} train / {} validation samples",
        spec.layers().len(),
        spec.param_count(),
        train_set.len(),
        val_set.len()
    );
    // The split and the training run each start their own generator from
    // the seed, so changing the split plan does not move the initial weights.
    let mut rng = SeededRng::new(cfg.solver.seed);
    let state = NetworkState::init(&spec, &mut rng);
    let outcome = train(
        &spec,
        state,
        &train_set,
        &val_set,
        &cfg.solver,
        positive,
        &mut rng,
        Some(&out_dir),
    )?;
    let log_path = out_dir.join(TRAIN_LOG_NAME);
    fs::write(&log_path, outcome.log.to_csv()).with_context(|| format!("writing {}", log_path.display()))?;
    Ok((Status::Success, outcome.log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    All,
    Only(SplitName),
}

impl EvalSplit {
    pub fn parse(s: &str) -> Result<EvalSplit> {
        Ok(match s {
            "all" => EvalSplit::All,
            "train" => EvalSplit::Only(SplitName::Train),
            "validation" => EvalSplit::Only(SplitName::Validation),
            "test" => EvalSplit::Only(SplitName::Test),
            other => bail!("unknown split {other:?} (expected all, train, validation or test)"),
        })
    }

    fn as_str(self) -> &'static str {
        match self {
            EvalSplit::All => "all",
            EvalSplit::Only(s) => s.as_str(),
        }
    }
}

/// Evaluates a checkpoint; emits `checkpoint,step,split,samples,accuracy,f1`.
pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    dataset: Option<&Path>,
    split: EvalSplit,
    out: Option<&Path>,
) -> Result<(Status, EvalReport)> {
    let p = prepare(cfg, &dataset_dir(cfg, dataset)?)?;
    let positive = cfg.positive_index(&p.labels)?;
    let spec = cfg.network_spec(p.labels.len())?;
    let ck = load_checkpoint(checkpoint, &spec)?;
    let samples = match split {
        EvalSplit::All => p.samples.clone(),
        EvalSplit::Only(which) => select(&p, which),
    };
    let report = evaluate(&spec, &ck.state, &samples, positive)?;
    let row = vec![
        checkpoint.display().to_string(),
        ck.step.to_string(),
        split.as_str().to_string(),
        samples.len().to_string(),
        fmt4(report.accuracy),
        fmt4(report.f1()),
    ];
    emit_csv(out, &["checkpoint", "step", "split", "samples", "accuracy", "f1"], &[row])?;
    Ok((Status::Success, report))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub log: String,
    pub step: u64,
    pub accuracy: f64,
    pub f1: f64,
    pub best: bool,
}

/// Reads a `step,accuracy,f1` log.
pub fn read_log(path: &Path) -> Result<Vec<(u64, f64, f64)>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let headers = rd.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| anyhow!("{}: missing column {name}", path.display()))
    };
    let (si, ai, fi) = (col("step")?, col("accuracy")?, col("f1")?);
    let mut rows = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("").trim().to_string();
        let parse_f = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|_| anyhow!("{} row {}: bad number {:?}", path.display(), n + 1, field(i)))
        };
        let step = field(si)
            .parse::<u64>()
            .map_err(|_| anyhow!("{} row {}: bad step {:?}", path.display(), n + 1, field(si)))?;
        rows.push((step, parse_f(ai)?, parse_f(fi)?));
    }
    Ok(rows)
}

/// Index of the best row: highest accuracy, ties to the lower step.
pub fn best_row(rows: &[(u64, f64, f64)]) -> Option<usize> {
    (0..rows.len()).reduce(|best, i| {
        let (b, r) = (rows[best], rows[i]);
        if r.1 > b.1 || (r.1 == b.1 && r.0 < b.0) {
            i
        } else {
            best
        }
    })
}

/// Merges logs into `log,step,accuracy,f1,best`, one best row per log.
pub fn cmd_report(logs: &[PathBuf], out: Option<&Path>) -> Result<(Status, Vec<ReportRow>)> {
    let mut merged = Vec::new();
    for path in logs {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        let rows = read_log(path)?;
        let best = best_row(&rows);
        for (i, (step, accuracy, f1)) in rows.into_iter().enumerate() {
            merged.push(ReportRow {
                log: name.clone(),
                step,
                accuracy,
                f1,
                best: Some(i) == best,
            });
        }
    }
    let rows: Vec<Vec<String>> = merged
        .iter()
        .map(|r| {
            vec![
                r.log.clone(),
                r.step.to_string(),
                fmt4(r.accuracy),
                fmt4(r.f1),
                u8::from(r.best).to_string(),
            ]
        })
        .collect();
    emit_csv(out, &["log", "step", "accuracy", "f1", "best"], &rows)?;
    Ok((Status::Success, merged))
}
