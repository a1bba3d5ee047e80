//! Synthetic grid-of-shapes dataset.
//!
//! Images are 28x28 RGB rasters of a 3x3 grid where every cell holds one
//! shape (circle, triangle, square) in one pure color (red, green, blue).
//! An image belongs to class 1 exactly when some row has a triangle in its
//! first column and a circle in its third column; colors never matter.

mod generate;
mod io;
mod render;

pub use generate::generate;
pub use io::{load, save};
pub use render::render;

use crate::tensor::Tensor;
use thiserror::Error;

pub const IMAGE_SIZE: usize = 28;
pub const GRID_SIDE: usize = 3;
/// Each cell owns a 9x9 pixel region; the 28th row/column stays background.
pub const CELL_PIXELS: usize = 9;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset needs at least 2 samples, got {0}")]
    TooSmall(usize),
    #[error("bad magic: expected \"SHPS\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported container version {0}")]
    BadVersion(u32),
    #[error("file truncated while reading {context}")]
    Truncated { context: &'static str },
    #[error("header declares {header} samples but file holds {actual}")]
    CountMismatch { header: usize, actual: usize },
    #[error("invalid {what} byte {value}")]
    BadEncoding { what: &'static str, value: u8 },
    #[error("sample {index}: stored label {stored} contradicts grid rule label {derived}")]
    LabelMismatch { index: usize, stored: usize, derived: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Circle,
    Triangle,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Color {
    Red,
    Green,
    Blue,
}

impl Shape {
    pub fn to_byte(self) -> u8 {
        match self {
            Shape::Circle => 0,
            Shape::Triangle => 1,
            Shape::Square => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, DataError> {
        match b {
            0 => Ok(Shape::Circle),
            1 => Ok(Shape::Triangle),
            2 => Ok(Shape::Square),
            other => Err(DataError::BadEncoding { what: "shape", value: other }),
        }
    }

    pub fn from_index(i: u64) -> Self {
        match i % 3 {
            0 => Shape::Circle,
            1 => Shape::Triangle,
            _ => Shape::Square,
        }
    }
}

impl Color {
    pub fn to_byte(self) -> u8 {
        match self {
            Color::Red => 0,
            Color::Green => 1,
            Color::Blue => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, DataError> {
        match b {
            0 => Ok(Color::Red),
            1 => Ok(Color::Green),
            2 => Ok(Color::Blue),
            other => Err(DataError::BadEncoding { what: "color", value: other }),
        }
    }

    pub fn from_index(i: u64) -> Self {
        match i % 3 {
            0 => Color::Red,
            1 => Color::Green,
            _ => Color::Blue,
        }
    }

    /// RGB channel carrying this color.
    pub fn channel(self) -> usize {
        self.to_byte() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Cell {
    pub shape: Shape,
    pub color: Color,
}

/// The symbolic 3x3 grid behind an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub cells: [[Cell; GRID_SIDE]; GRID_SIDE],
}

/// Class rule: 1 iff some row has a triangle in column 0 and a circle in
/// column 2. Colors are irrelevant.
pub fn label_of(grid: &GridSpec) -> usize {
    for row in &grid.cells {
        if row[0].shape == Shape::Triangle && row[2].shape == Shape::Circle {
            return 1;
        }
    }
    0
}

#[derive(Clone, Debug)]
pub struct ShapesSample {
    pub grid: GridSpec,
    /// [28,28,3] tensor with values in [0,1].
    pub image: Tensor,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<ShapesSample>,
    pub seed: u64,
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

impl Dataset {
    pub fn class_counts(&self) -> [usize; 2] {
        let ones = self.samples.iter().filter(|s| s.label == 1).count();
        [self.samples.len() - ones, ones]
    }

    pub fn train_samples(&self) -> impl Iterator<Item = &ShapesSample> {
        self.train_idx.iter().map(|&i| &self.samples[i])
    }

    pub fn test_samples(&self) -> impl Iterator<Item = &ShapesSample> {
        self.test_idx.iter().map(|&i| &self.samples[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_grid(shape: Shape, color: Color) -> GridSpec {
        GridSpec { cells: [[Cell { shape, color }; 3]; 3] }
    }

    #[test]
    fn rule_fires_on_planted_row() {
        let mut grid = uniform_grid(Shape::Square, Color::Red);
        grid.cells[0][0].shape = Shape::Triangle;
        grid.cells[0][2].shape = Shape::Circle;
        assert_eq!(label_of(&grid), 1);
    }

    #[test]
    fn rule_requires_same_row() {
        let mut grid = uniform_grid(Shape::Square, Color::Green);
        grid.cells[1][0].shape = Shape::Triangle;
        grid.cells[2][2].shape = Shape::Circle;
        assert_eq!(label_of(&grid), 0);
    }

    #[test]
    fn all_squares_is_class_zero() {
        assert_eq!(label_of(&uniform_grid(Shape::Square, Color::Blue)), 0);
    }

    #[test]
    fn recoloring_never_changes_label() {
        let mut grid = uniform_grid(Shape::Square, Color::Red);
        grid.cells[2][0].shape = Shape::Triangle;
        grid.cells[2][2].shape = Shape::Circle;
        let before = label_of(&grid);
        for r in 0..3 {
            for c in 0..3 {
                for color in [Color::Red, Color::Green, Color::Blue] {
                    let mut recolored = grid;
                    recolored.cells[r][c].color = color;
                    assert_eq!(label_of(&recolored), before);
                }
            }
        }
    }
}
