use crate::error::{Error, Result};
use crate::haar::integral::{IntegralImage, Rect};

/// Weighted rectangle in base-window coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HaarRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub weight: f64,
}

impl HaarRect {
    pub fn new(x: usize, y: usize, w: usize, h: usize, weight: f64) -> HaarRect {
        HaarRect { x, y, w, h, weight }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaarFeature {
    pub rects: Vec<HaarRect>,
}

impl HaarFeature {
    /// Sum of `weight * area`; close to zero for conventional features.
    pub fn weighted_area(&self) -> f64 {
        self.rects
            .iter()
            .map(|r| r.weight * (r.w * r.h) as f64)
            .sum()
    }
}

/// Single-feature threshold classifier voting `left_value` when the
/// normalized feature response falls below `threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stump {
    pub feature: HaarFeature,
    pub threshold: f64,
    pub left_value: f64,
    pub right_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeStage {
    pub stumps: Vec<Stump>,
    pub threshold: f64,
}

/// Ordered stages of boosted stumps over a fixed base window.
#[derive(Debug, Clone, PartialEq)]
pub struct Cascade {
    base_width: usize,
    base_height: usize,
    stages: Vec<CascadeStage>,
}

pub const MIN_BASE_SIZE: usize = 4;

impl Cascade {
    pub fn new(base_width: usize, base_height: usize, stages: Vec<CascadeStage>) -> Result<Cascade> {
        if base_width < MIN_BASE_SIZE || base_height < MIN_BASE_SIZE {
            return Err(Error::Parameter(format!(
                "cascade base window {base_width}x{base_height} below {MIN_BASE_SIZE}x{MIN_BASE_SIZE}"
            )));
        }
        if stages.is_empty() {
            return Err(Error::Parameter("cascade has no stages".into()));
        }
        for (si, stage) in stages.iter().enumerate() {
            if stage.stumps.is_empty() {
                return Err(Error::Parameter(format!("stage {si} has no stumps")));
            }
            for (ti, stump) in stage.stumps.iter().enumerate() {
                let n = stump.feature.rects.len();
                if !(2..=3).contains(&n) {
                    return Err(Error::Parameter(format!(
                        "stage {si} stump {ti}: feature has {n} rects, expected 2 or 3"
                    )));
                }
                for (ri, r) in stump.feature.rects.iter().enumerate() {
                    if r.w == 0 || r.h == 0 || r.x + r.w > base_width || r.y + r.h > base_height {
                        return Err(Error::Parameter(format!(
                            "stage {si} stump {ti} rect {ri} {r:?} outside {base_width}x{base_height} window"
                        )));
                    }
                }
            }
        }
        Ok(Cascade {
            base_width,
            base_height,
            stages,
        })
    }

    /// One stage with one stump whose two votes are both `vote`, passing iff
    /// `vote >= stage_threshold`. Used for vacuous accept/reject cascades.
    pub fn constant(base_width: usize, base_height: usize, vote: f64, stage_threshold: f64) -> Result<Cascade> {
        let half = (base_height / 2).max(1);
        let feature = HaarFeature {
            rects: vec![
                HaarRect::new(0, 0, base_width, half, 1.0),
                HaarRect::new(0, half, base_width, half, -1.0),
            ],
        };
        Cascade::new(
            base_width,
            base_height,
            vec![CascadeStage {
                stumps: vec![Stump {
                    feature,
                    threshold: 0.0,
                    left_value: vote,
                    right_value: vote,
                }],
                threshold: stage_threshold,
            }],
        )
    }

    pub fn base_width(&self) -> usize {
        self.base_width
    }

    pub fn base_height(&self) -> usize {
        self.base_height
    }

    pub fn stages(&self) -> &[CascadeStage] {
        &self.stages
    }

    /// Window size at `scale`, in pixels.
    pub fn window_size(&self, scale: f64) -> (usize, usize) {
        (
            ((self.base_width as f64 * scale).round() as usize).max(1),
            ((self.base_height as f64 * scale).round() as usize).max(1),
        )
    }

    /// Runs every stage on the window at `(x, y)` scaled by `scale`.
    ///
    /// Stump responses are compared against `threshold * stddev * area`
    /// where `stddev` is the window's pixel standard deviation, clamped to at
    /// least 1.
    pub fn eval_window(&self, ii: &IntegralImage, x: usize, y: usize, scale: f64) -> Result<bool> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Parameter(format!("invalid window scale {scale}")));
        }
        let scaled = self.scaled(scale);
        let window = Rect::new(x, y, scaled.width, scaled.height);
        ii.check_rect(&window)?;
        Ok(scaled.accepts(ii, x, y))
    }

    /// Rectangles and weights of every stump resolved to whole pixels at `scale`.
    pub(crate) fn scaled(&self, scale: f64) -> ScaledCascade<'_> {
        let (width, height) = self.window_size(scale);
        let area_ratio = (width * height) as f64 / (self.base_width * self.base_height) as f64;
        let stages = self
            .stages
            .iter()
            .map(|stage| {
                stage
                    .stumps
                    .iter()
                    .map(|stump| scale_feature(&stump.feature, width, height, scale, area_ratio))
                    .collect()
            })
            .collect();
        ScaledCascade {
            cascade: self,
            width,
            height,
            stages,
        }
    }
}

pub(crate) struct ScaledCascade<'a> {
    cascade: &'a Cascade,
    pub width: usize,
    pub height: usize,
    /// Window-relative rects with weights, per stage, per stump.
    stages: Vec<Vec<Vec<(Rect, f64)>>>,
}

impl ScaledCascade<'_> {
    /// Caller guarantees the window lies inside the integral image.
    pub(crate) fn accepts(&self, ii: &IntegralImage, x: usize, y: usize) -> bool {
        let window = Rect::new(x, y, self.width, self.height);
        let area = (window.w * window.h) as f64;
        let mean = ii.rect_sum_unchecked(&window) / area;
        let variance = ii.rect_squared_sum_unchecked(&window) / area - mean * mean;
        let norm = variance.max(0.0).sqrt().max(1.0);
        let bound = norm * area;

        for (stage, features) in self.cascade.stages.iter().zip(&self.stages) {
            let mut score = 0.0;
            for (stump, rects) in stage.stumps.iter().zip(features) {
                let response: f64 = rects
                    .iter()
                    .map(|(r, weight)| {
                        weight * ii.rect_sum_unchecked(&Rect::new(x + r.x, y + r.y, r.w, r.h))
                    })
                    .sum();
                score += if response < stump.threshold * bound {
                    stump.left_value
                } else {
                    stump.right_value
                };
            }
            if score < stage.threshold {
                return false;
            }
        }
        true
    }
}

/// Scales each rect, rounds to whole pixels, and clips it to the window. The
/// first rect's weight is then re-derived so the feature's weighted area
/// scales exactly with the window; otherwise rounding makes zero-sum
/// features respond to flat regions.
fn scale_feature(feature: &HaarFeature, width: usize, height: usize, scale: f64, area_ratio: f64) -> Vec<(Rect, f64)> {
    let mut rects: Vec<(Rect, f64)> = feature
        .rects
        .iter()
        .map(|r| {
            let sx = ((r.x as f64 * scale).round() as usize).min(width - 1);
            let sy = ((r.y as f64 * scale).round() as usize).min(height - 1);
            let sw = ((r.w as f64 * scale).round() as usize).clamp(1, width - sx);
            let sh = ((r.h as f64 * scale).round() as usize).clamp(1, height - sy);
            (Rect::new(sx, sy, sw, sh), r.weight)
        })
        .collect();
    let target = feature.weighted_area() * area_ratio;
    let rest: f64 = rects[1..].iter().map(|(r, w)| w * (r.w * r.h) as f64).sum();
    let first_area = (rects[0].0.w * rects[0].0.h) as f64;
    rects[0].1 = (target - rest) / first_area;
    rects
}
