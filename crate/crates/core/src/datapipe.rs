//! Image decoding, preprocessing, dataset loading and splitting.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Decodes a binary (P5) graymap into a `height x width` tensor of raw values.
pub fn load_pgm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != "P5" {
        return Err(Error::Format(format!("expected P5 graymap, found magic {magic:?}")));
    }
    let mut field = |what: &str| -> Result<usize> {
        let tok = header_token(bytes, &mut pos)?;
        tok.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad {what} {tok:?} in graymap header")))
    };
    let width = field("width")?;
    let height = field("height")?;
    let maxval = field("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("graymap has empty size {width}x{height}")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format(format!("graymap maxval {maxval} outside 1..=255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Format("graymap header not followed by whitespace".into())),
    }
    let n = width * height;
    let raster = &bytes[pos..];
    if raster.len() < n {
        return Err(Error::Format(format!(
            "graymap payload has {} bytes, expected {n}",
            raster.len()
        )));
    }
    let data = raster[..n].iter().map(|&b| f64::from(b)).collect();
    Tensor::from_vec(&[height, width], data)
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Format("truncated graymap header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Encodes a rank-2 tensor as P5, rounding and clamping values to 0..=255.
pub fn encode_pgm(img: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = img.shape2()?;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(img.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8));
    Ok(out)
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    load_pgm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn write_pgm(path: &Path, img: &Tensor) -> Result<()> {
    fs::write(path, encode_pgm(img)?)?;
    Ok(())
}

/// Bilinear resize to `size x size` with corner-aligned sampling, scaled to [0, 1].
pub fn preprocess(gray: &Tensor, size: usize) -> Result<Tensor> {
    let (h, w) = gray.shape2()?;
    if size == 0 {
        return Err(Error::Parameter("target size must be >= 1".into()));
    }
    let src = gray.data();
    let coord = |i: usize, len: usize| -> (usize, usize, f64) {
        if size == 1 || len == 1 {
            return (0, 0, 0.0);
        }
        let s = (i * (len - 1)) as f64 / (size - 1) as f64;
        let lo = (s.floor() as usize).min(len - 1);
        let hi = (lo + 1).min(len - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Vec::with_capacity(size * size);
    for i in 0..size {
        let (y0, y1, fy) = coord(i, h);
        for j in 0..size {
            let (x0, x1, fx) = coord(j, w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            let v = top * (1.0 - fy) + bottom * fy;
            out.push((v / 255.0).clamp(0.0, 1.0));
        }
    }
    Tensor::from_vec(&[size, size], out)
}

/// Class names in alphabetical order; a class's index is its position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    pub fn new<S: AsRef<str>>(names: &[S]) -> Result<LabelMap> {
        let mut names: Vec<String> = names.iter().map(|s| s.as_ref().trim().to_string()).collect();
        names.sort();
        if names.len() < 2 {
            return Err(Error::Parameter("need at least two classes".into()));
        }
        if names.iter().any(String::is_empty) {
            return Err(Error::Parameter("empty class name".into()));
        }
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Parameter("duplicate class name".into()));
        }
        Ok(LabelMap { names })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.binary_search_by(|n| n.as_str().cmp(name)).ok()
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Rank-2 grayscale image.
    pub image: Tensor,
    pub label: usize,
    /// File stem of the source image.
    pub source_id: String,
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
        paths.push(entry.path());
    }
    paths.sort();
    Ok(paths)
}

fn is_pgm(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

/// Loads `root/<Class>/*.pgm`, preprocessing every image to `size x size`.
/// Samples are ordered by class index, then file name.
pub fn load_dataset(root: &Path, labels: &LabelMap, size: usize) -> Result<Vec<Sample>> {
    let mut samples = Vec::new();
    let mut dirs = Vec::new();
    for path in sorted_entries(root)? {
        if !path.is_dir() {
            continue;
        }
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let label = labels.index(&name).ok_or_else(|| {
            Error::Data(format!(
                "{}: class {name:?} not among {:?}",
                path.display(),
                labels.names()
            ))
        })?;
        dirs.push((label, path));
    }
    dirs.sort();
    for (label, dir) in dirs {
        for path in sorted_entries(&dir)?.into_iter().filter(|p| is_pgm(p)) {
            let raw = read_pgm(&path).map_err(|e| Error::Data(e.to_string()))?;
            samples.push(Sample {
                image: preprocess(&raw, size)?,
                label,
                source_id: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            });
        }
    }
    Ok(samples)
}

/// Per-class training and validation counts; whatever remains is test data.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub per_class: Vec<(usize, usize)>,
}

impl SplitPlan {
    pub fn uniform(num_classes: usize, train: usize, validation: usize) -> SplitPlan {
        SplitPlan {
            per_class: vec![(train, validation); num_classes],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

/// Indices into the input list, per split.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Split of every input index, in input order.
    pub fn assignments(&self, n: usize) -> Vec<SplitName> {
        let mut out = vec![SplitName::Test; n];
        for &i in &self.train {
            out[i] = SplitName::Train;
        }
        for &i in &self.validation {
            out[i] = SplitName::Validation;
        }
        out
    }
}

/// Per class, shuffles the samples with `rng` and deals the first `train`
/// to training, the next `validation` to validation and the rest to test.
/// Classes are processed in index order.
pub fn split_indices(labels: &[usize], plan: &SplitPlan, rng: &mut SeededRng) -> Result<Split> {
    let mut split = Split::default();
    for (class, &(train, validation)) in plan.per_class.iter().enumerate() {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < train + validation {
            return Err(Error::Data(format!(
                "class {class} has {} samples, plan needs {train} train + {validation} validation",
                members.len()
            )));
        }
        rng.shuffle(&mut members);
        split.train.extend_from_slice(&members[..train]);
        split.validation.extend_from_slice(&members[train..train + validation]);
        split.test.extend_from_slice(&members[train + validation..]);
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= plan.per_class.len()) {
        return Err(Error::Label(format!(
            "label {l} has no entry in a {}-class split plan",
            plan.per_class.len()
        )));
    }
    Ok(split)
}

pub fn split_dataset(
    samples: &[Sample],
    plan: &SplitPlan,
    rng: &mut SeededRng,
) -> Result<(Vec<Sample>, Vec<Sample>, Vec<Sample>)> {
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let split = split_indices(&labels, plan, rng)?;
    let take = |idx: &[usize]| idx.iter().map(|&i| samples[i].clone()).collect();
    Ok((take(&split.train), take(&split.validation), take(&split.test)))
}

/// Stacks rank-2 images of identical size into an `N x 1 x H x W` batch.
pub fn stack_batch(images: &[&Tensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Data("cannot build an empty batch".into()))?;
    let (h, w) = first.shape2()?;
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.dims() != [h, w] {
            return Err(Error::Shape(format!(
                "image dims {:?} differ from batch dims [{h}, {w}]",
                img.dims()
            )));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec(&[images.len(), 1, h, w], data)
}
