use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Rect {
        Rect { x, y, w, h }
    }

    pub fn right(&self) -> usize {
        self.x + self.w
    }

    pub fn bottom(&self) -> usize {
        self.y + self.h
    }

    pub fn contains(&self, other: &Rect) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }
}

/// Summed-area tables of pixel values and squared pixel values, each
/// `(height + 1) x (width + 1)` with a zero first row and column.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    sums: Vec<f64>,
    squared_sums: Vec<f64>,
}

impl IntegralImage {
    pub fn new(gray: &Tensor) -> Result<IntegralImage> {
        let (height, width) = gray.shape2()?;
        let stride = width + 1;
        let mut sums = vec![0.0; stride * (height + 1)];
        let mut squared_sums = vec![0.0; stride * (height + 1)];
        let px = gray.data();
        for y in 0..height {
            let mut row = 0.0;
            let mut row_sq = 0.0;
            for x in 0..width {
                let v = px[y * width + x];
                row += v;
                row_sq += v * v;
                let i = (y + 1) * stride + x + 1;
                sums[i] = sums[i - stride] + row;
                squared_sums[i] = squared_sums[i - stride] + row_sq;
            }
        }
        Ok(IntegralImage {
            width,
            height,
            sums,
            squared_sums,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Entry of the running-sum table at row `y`, column `x` (both inclusive of the zero border).
    pub fn sum_at(&self, x: usize, y: usize) -> f64 {
        self.sums[y * (self.width + 1) + x]
    }

    pub fn check_rect(&self, r: &Rect) -> Result<()> {
        if r.w == 0 || r.h == 0 || r.right() > self.width || r.bottom() > self.height {
            return Err(Error::Bounds(format!(
                "rect {r:?} not inside {}x{} image",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Sum of the pixels covered by `r`.
    pub fn rect_sum(&self, r: &Rect) -> Result<f64> {
        self.check_rect(r)?;
        Ok(self.rect_sum_unchecked(r))
    }

    pub(crate) fn rect_sum_unchecked(&self, r: &Rect) -> f64 {
        corner_sum(&self.sums, self.width + 1, r)
    }

    pub(crate) fn rect_squared_sum_unchecked(&self, r: &Rect) -> f64 {
        corner_sum(&self.squared_sums, self.width + 1, r)
    }
}

#[inline]
fn corner_sum(table: &[f64], stride: usize, r: &Rect) -> f64 {
    let (x0, y0, x1, y1) = (r.x, r.y, r.right(), r.bottom());
    table[y1 * stride + x1] - table[y0 * stride + x1] - table[y1 * stride + x0]
        + table[y0 * stride + x0]
}
