use crate::error::{Error, Result};
use crate::haar::cascade::Cascade;
use crate::haar::integral::{IntegralImage, Rect};
use crate::tensor::Tensor;

pub const DEFAULT_SCALE_FACTOR: f64 = 1.1;
pub const DEFAULT_MIN_NEIGHBORS: usize = 3;
pub const DEFAULT_GROUP_EPS: f64 = 0.2;

/// Fallback mouth region, as fractions of the face box.
pub const FALLBACK_WIDTH_FRACTION: f64 = 0.6;
pub const FALLBACK_HEIGHT_FRACTION: f64 = 1.0 / 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DetectionBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub neighbors: usize,
}

impl DetectionBox {
    pub fn rect(&self) -> Rect {
        Rect::new(self.x, self.y, self.w, self.h)
    }

    fn from_rect(r: Rect, neighbors: usize) -> DetectionBox {
        DetectionBox {
            x: r.x,
            y: r.y,
            w: r.w,
            h: r.h,
            neighbors,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub scale_factor: f64,
    pub min_neighbors: usize,
    pub group_eps: f64,
    /// Smallest window searched; `None` means the cascade base size.
    pub min_size: Option<(usize, usize)>,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            scale_factor: DEFAULT_SCALE_FACTOR,
            min_neighbors: DEFAULT_MIN_NEIGHBORS,
            group_eps: DEFAULT_GROUP_EPS,
            min_size: None,
        }
    }
}

/// Sliding-window search over a geometric pyramid of window scales,
/// followed by rectangle grouping.
///
/// The stride at scale `s` is `max(1, round(s))` pixels. Results are sorted
/// by `(y, x, w)`.
pub fn detect_multiscale(cascade: &Cascade, gray: &Tensor, params: &DetectParams) -> Result<Vec<DetectionBox>> {
    let ii = IntegralImage::new(gray)?;
    detect_multiscale_integral(cascade, &ii, params)
}

pub fn detect_multiscale_integral(
    cascade: &Cascade,
    ii: &IntegralImage,
    params: &DetectParams,
) -> Result<Vec<DetectionBox>> {
    if !params.scale_factor.is_finite() || params.scale_factor <= 1.0 {
        return Err(Error::Parameter(format!(
            "scale factor must exceed 1, got {}",
            params.scale_factor
        )));
    }
    let (bw, bh) = (cascade.base_width(), cascade.base_height());
    let (min_w, min_h) = params.min_size.unwrap_or((bw, bh));
    if min_w < bw || min_h < bh {
        return Err(Error::Parameter(format!(
            "min size {min_w}x{min_h} smaller than cascade base {bw}x{bh}"
        )));
    }
    let start = (min_w as f64 / bw as f64).max(min_h as f64 / bh as f64);

    let mut raw = Vec::new();
    let mut last_size = None;
    for k in 0.. {
        let scale = start * params.scale_factor.powi(k);
        let scaled = cascade.scaled(scale);
        let (ww, wh) = (scaled.width, scaled.height);
        if ww > ii.width() || wh > ii.height() {
            break;
        }
        if last_size == Some((ww, wh)) {
            continue;
        }
        last_size = Some((ww, wh));
        let stride = (scale.round() as usize).max(1);
        for y in (0..=ii.height() - wh).step_by(stride) {
            for x in (0..=ii.width() - ww).step_by(stride) {
                if scaled.accepts(ii, x, y) {
                    raw.push(Rect::new(x, y, ww, wh));
                }
            }
        }
    }

    let mut boxes = group_rectangles(&raw, params.min_neighbors, params.group_eps);
    for b in &mut boxes {
        // The rounded mean of in-image boxes can overshoot an edge by a pixel.
        b.w = b.w.min(ii.width() - b.x);
        b.h = b.h.min(ii.height() - b.y);
    }
    Ok(boxes)
}

fn similar(a: &Rect, b: &Rect, eps: f64) -> bool {
    let delta = eps * a.w.min(a.h).min(b.w).min(b.h) as f64;
    let close = |p: usize, q: usize| (p as f64 - q as f64).abs() <= delta;
    close(a.x, b.x) && close(a.y, b.y) && close(a.right(), b.right()) && close(a.bottom(), b.bottom())
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Clusters rectangles by transitive similarity and replaces every cluster
/// larger than `min_neighbors` with its rounded mean rectangle.
///
/// Two rectangles are similar when each of their four edges differs by at
/// most `eps` times the smallest side among the pair.
pub fn group_rectangles(rects: &[Rect], min_neighbors: usize, eps: f64) -> Vec<DetectionBox> {
    let eps = eps.max(0.0);
    let n = rects.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if similar(&rects[i], &rects[j], eps) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }

    // Accumulate per root in first-seen order.
    let mut sums: Vec<(usize, [usize; 4], usize)> = Vec::new();
    for (i, r) in rects.iter().enumerate() {
        let root = find(&mut parent, i);
        match sums.iter_mut().find(|(k, _, _)| *k == root) {
            Some((_, acc, count)) => {
                acc[0] += r.x;
                acc[1] += r.y;
                acc[2] += r.w;
                acc[3] += r.h;
                *count += 1;
            }
            None => sums.push((root, [r.x, r.y, r.w, r.h], 1)),
        }
    }

    let mean = |s: usize, n: usize| (s as f64 / n as f64).round() as usize;
    let mut out: Vec<DetectionBox> = sums
        .into_iter()
        .filter(|&(_, _, count)| count > min_neighbors)
        .map(|(_, acc, count)| {
            DetectionBox::from_rect(
                Rect::new(
                    mean(acc[0], count),
                    mean(acc[1], count),
                    mean(acc[2], count).max(1),
                    mean(acc[3], count).max(1),
                ),
                count,
            )
        })
        .collect();
    sort_boxes(&mut out);
    out
}

fn sort_boxes(boxes: &mut [DetectionBox]) {
    boxes.sort_by_key(|b| (b.y, b.x, b.w, b.h, b.neighbors));
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiSource {
    Detected,
    Fallback,
}

#[derive(Debug, Clone)]
pub struct MouthRoi {
    pub rect: Rect,
    pub source: RoiSource,
    pub crop: Tensor,
}

/// The lower half of a face box: rows from `y + h/2` (rounded down) to the bottom.
pub fn lower_face_half(face: &Rect) -> Rect {
    let top = face.y + face.h / 2;
    Rect::new(face.x, top, face.w, face.bottom() - top)
}

/// Centered, 60% of the face width, spanning the bottom third of the face.
pub fn fallback_mouth_rect(face: &Rect) -> Rect {
    let w = ((face.w as f64 * FALLBACK_WIDTH_FRACTION).round() as usize).clamp(1, face.w);
    let h = ((face.h as f64 * FALLBACK_HEIGHT_FRACTION).round() as usize).clamp(1, face.h);
    Rect::new(face.x + (face.w - w) / 2, face.bottom() - h, w, h)
}

/// Locates the mouth inside a detected face and crops it.
///
/// The mouth cascade only searches the lower half of the face. The
/// detection with the most neighbors wins, ties going to the topmost and
/// then leftmost box. Without any detection the fallback rectangle is used.
pub fn extract_mouth_roi(
    gray: &Tensor,
    face: &DetectionBox,
    mouth_cascade: &Cascade,
    params: &DetectParams,
) -> Result<MouthRoi> {
    let (rows, cols) = gray.shape2()?;
    let face = face.rect();
    if face.w == 0 || face.h == 0 || face.right() > cols || face.bottom() > rows {
        return Err(Error::Bounds(format!(
            "face box {face:?} outside {cols}x{rows} image"
        )));
    }

    let region = lower_face_half(&face);
    let mut best: Option<DetectionBox> = None;
    if region.w >= mouth_cascade.base_width() && region.h >= mouth_cascade.base_height() {
        let sub = gray.crop2(region.x, region.y, region.w, region.h)?;
        let found = detect_multiscale(mouth_cascade, &sub, params)?;
        best = pick_best(&found);
    }

    let (rect, source) = match best {
        Some(b) => (
            Rect::new(region.x + b.x, region.y + b.y, b.w, b.h),
            RoiSource::Detected,
        ),
        None => (fallback_mouth_rect(&face), RoiSource::Fallback),
    };
    let crop = gray.crop2(rect.x, rect.y, rect.w, rect.h)?;
    Ok(MouthRoi { rect, source, crop })
}

/// Most neighbors, then topmost, then leftmost.
pub fn pick_best(boxes: &[DetectionBox]) -> Option<DetectionBox> {
    boxes
        .iter()
        .copied()
        .min_by_key(|b| (std::cmp::Reverse(b.neighbors), b.y, b.x))
}
