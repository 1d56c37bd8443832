//! Hand-built cascades and matching planted patterns.
//!
//! These are small enough to verify by hand and are used by the test
//! suites and the command-line examples.

use crate::haar::cascade::{Cascade, CascadeStage, HaarFeature, HaarRect, Stump};
use crate::tensor::Tensor;

pub const EDGE_BRIGHT: f64 = 200.0;
pub const EDGE_DARK: f64 = 50.0;
pub const LIP: f64 = 200.0;
pub const MOUTH_GAP: f64 = 30.0;
pub const MOUTH_WIDTH: usize = 12;
pub const MOUTH_HEIGHT: usize = 6;

fn single_stump(base_w: usize, base_h: usize, rects: Vec<HaarRect>, threshold: f64) -> Cascade {
    Cascade::new(
        base_w,
        base_h,
        vec![CascadeStage {
            stumps: vec![Stump {
                feature: HaarFeature { rects },
                threshold,
                left_value: -1.0,
                right_value: 1.0,
            }],
            threshold: 0.0,
        }],
    )
    .expect("fixture cascade is valid")
}

/// 24x24 bright-top/dark-bottom detector. A perfectly aligned
/// [`plant_edge`] pattern scores a normalized response of exactly 1.0; the
/// stump accepts from 0.9.
pub fn top_bottom_cascade() -> Cascade {
    single_stump(
        24,
        24,
        vec![
            HaarRect::new(0, 0, 24, 12, 1.0),
            HaarRect::new(0, 12, 24, 12, -1.0),
        ],
        0.9,
    )
}

/// 12x6 detector for a dark horizontal band (rows 2..4) between bright lips.
/// A planted mouth scores about 1.41; the stump accepts from 1.2.
pub fn mouth_cascade() -> Cascade {
    single_stump(
        MOUTH_WIDTH,
        MOUTH_HEIGHT,
        vec![
            HaarRect::new(0, 0, 12, 6, 1.0),
            HaarRect::new(0, 2, 12, 2, -3.0),
        ],
        1.2,
    )
}

/// Paints a `w x h` block at `(x, y)` whose top half is bright and bottom half dark.
pub fn plant_edge(img: &mut Tensor, x: usize, y: usize, w: usize, h: usize) {
    for r in 0..h {
        let v = if r < h / 2 { EDGE_BRIGHT } else { EDGE_DARK };
        for c in 0..w {
            img.set(&[y + r, x + c], v);
        }
    }
}

/// Paints a 12x6 mouth at `(x, y)`: two bright rows, two dark, two bright.
pub fn plant_mouth(img: &mut Tensor, x: usize, y: usize) {
    for r in 0..MOUTH_HEIGHT {
        let v = if (2..4).contains(&r) { MOUTH_GAP } else { LIP };
        for c in 0..MOUTH_WIDTH {
            img.set(&[y + r, x + c], v);
        }
    }
}
