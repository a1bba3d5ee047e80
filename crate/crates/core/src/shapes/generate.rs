//! Deterministic dataset generation.
//!
//! Balance is constructive: exactly half the samples (rounding down) get a
//! planted (triangle, column 0) / (circle, column 2) pair in a random row,
//! the rest are rejection-sampled until the rule does not fire. A random
//! unconditioned grid is class 1 with probability 1-(8/9)^3, about 0.30, so
//! rejection for class 0 is cheap while planting guarantees exact balance.
//!
//! Every sample draws from its own sub-stream of the seed, so generation
//! order (or parallelism) cannot change the result.

use super::{label_of, render, Cell, Color, Dataset, DataError, GridSpec, Shape, ShapesSample, GRID_SIDE};
use crate::rng::Rng;
use rayon::prelude::*;

// Stream ids carving up the seed; samples use 2 + index.
const STREAM_LABELS: u64 = 0;
const STREAM_SPLIT: u64 = 1;
const STREAM_SAMPLE_BASE: u64 = 2;

pub fn generate(seed: u64, n: usize) -> Result<Dataset, DataError> {
    if n < 2 {
        return Err(DataError::TooSmall(n));
    }

    let mut labels = vec![0usize; n];
    for l in labels.iter_mut().take(n / 2) {
        *l = 1;
    }
    Rng::derive(seed, STREAM_LABELS).shuffle(&mut labels);

    let samples: Vec<ShapesSample> = labels
        .par_iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = Rng::derive(seed, STREAM_SAMPLE_BASE + i as u64);
            let grid = if label == 1 {
                planted_grid(&mut rng)
            } else {
                rejection_grid(&mut rng)
            };
            debug_assert_eq!(label_of(&grid), label);
            ShapesSample { grid, image: render(&grid), label }
        })
        .collect();

    let (train_idx, test_idx) = split_indices(seed, n);
    Ok(Dataset { samples, seed, train_idx, test_idx })
}

/// 80/20 split over a seeded shuffle of the sample indices.
pub(super) fn split_indices(seed: u64, n: usize) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    Rng::derive(seed, STREAM_SPLIT).shuffle(&mut idx);
    let test_count = n / 5;
    let train_count = n - test_count;
    let test = idx.split_off(train_count);
    (idx, test)
}

fn random_cell(rng: &mut Rng) -> Cell {
    Cell {
        shape: Shape::from_index(rng.below(3)),
        color: Color::from_index(rng.below(3)),
    }
}

fn random_grid(rng: &mut Rng) -> GridSpec {
    let mut cells = [[Cell { shape: Shape::Square, color: Color::Red }; GRID_SIDE]; GRID_SIDE];
    for row in cells.iter_mut() {
        for cell in row.iter_mut() {
            *cell = random_cell(rng);
        }
    }
    GridSpec { cells }
}

fn planted_grid(rng: &mut Rng) -> GridSpec {
    let mut grid = random_grid(rng);
    let row = rng.below(GRID_SIDE as u64) as usize;
    grid.cells[row][0] = Cell { shape: Shape::Triangle, color: Color::from_index(rng.below(3)) };
    grid.cells[row][2] = Cell { shape: Shape::Circle, color: Color::from_index(rng.below(3)) };
    grid
}

fn rejection_grid(rng: &mut Rng) -> GridSpec {
    loop {
        let grid = random_grid(rng);
        if label_of(&grid) == 0 {
            return grid;
        }
    }
}
