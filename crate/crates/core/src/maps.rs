//! Single-channel rasters shared by the model, metrics and data modules.

use crate::error::{dim_err, Result};

/// Per-pixel road probability, row-major, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ScoreMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(dim_err!(
                "score map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            ));
        }
        Ok(ScoreMap {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, v: f64) -> Self {
        ScoreMap {
            height,
            width,
            values: vec![v; height * width],
        }
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Binary mask at `score >= threshold`.
    pub fn threshold(&self, threshold: f64) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            data: self.values.iter().map(|&v| v >= threshold).collect(),
        }
    }
}

/// Default binarization threshold for score maps.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Binary road mask, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Mask {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// `get` with out-of-bounds reading as background.
    #[inline]
    pub fn get_signed(&self, y: isize, x: isize) -> bool {
        y >= 0
            && x >= 0
            && (y as usize) < self.height
            && (x as usize) < self.width
            && self.get(y as usize, x as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn same_shape(&self, other: &Mask) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn to_scores(&self) -> ScoreMap {
        ScoreMap {
            height: self.height,
            width: self.width,
            values: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
        }
    }
}
