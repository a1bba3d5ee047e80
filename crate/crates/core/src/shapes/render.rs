//! Grid rasterization.
//!
//! Each cell owns a disjoint 9x9 region at origin (9r, 9c); the shape fills
//! the inner 7x7 box with its pure color channel at full intensity, leaving a
//! 1-pixel gutter. Rendering is a pure function of the grid, so identical
//! grids give identical rasters.

use super::{GridSpec, Shape, CELL_PIXELS, GRID_SIDE, IMAGE_SIZE};
use crate::tensor::Tensor;

pub fn render(grid: &GridSpec) -> Tensor {
    let mut data = vec![0.0; IMAGE_SIZE * IMAGE_SIZE * 3];
    for r in 0..GRID_SIDE {
        for c in 0..GRID_SIDE {
            let cell = grid.cells[r][c];
            let channel = cell.color.channel();
            let y0 = r * CELL_PIXELS + 1;
            let x0 = c * CELL_PIXELS + 1;
            for (dy, dx) in shape_pixels(cell.shape) {
                let y = y0 + dy;
                let x = x0 + dx;
                data[(y * IMAGE_SIZE + x) * 3 + channel] = 1.0;
            }
        }
    }
    Tensor::new(vec![IMAGE_SIZE, IMAGE_SIZE, 3], data).expect("fixed raster shape")
}

/// Filled pixels of a shape inside its 7x7 box, as (dy, dx) offsets.
fn shape_pixels(shape: Shape) -> Vec<(usize, usize)> {
    let mut px = Vec::new();
    match shape {
        Shape::Square => {
            for dy in 0..7 {
                for dx in 0..7 {
                    px.push((dy, dx));
                }
            }
        }
        Shape::Circle => {
            // Filled disk of radius 3 around the box center.
            for dy in 0..7i32 {
                for dx in 0..7i32 {
                    if (dy - 3).pow(2) + (dx - 3).pow(2) <= 9 {
                        px.push((dy as usize, dx as usize));
                    }
                }
            }
        }
        Shape::Triangle => {
            // Upward isoceles triangle: apex on top, 7-wide base.
            for dy in 0..7usize {
                let half = dy / 2;
                for dx in (3 - half)..=(3 + half) {
                    px.push((dy, dx));
                }
            }
        }
    }
    px
}
