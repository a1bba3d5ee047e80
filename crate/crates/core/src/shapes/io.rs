//! Binary dataset container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "SHPS"
//! version u32      1
//! n       u32      sample count
//! seed    u64      generation seed
//! then per sample:
//!   9 cells, row-major: shape u8, color u8
//!   label   u8
//!   pixels  28*28*3 u8, value = round(255 * p)
//! ```
//!
//! The train/test split is not stored; it is a pure function of (seed, n)
//! and is recomputed on load.

use super::generate::split_indices;
use super::{label_of, Cell, Color, Dataset, DataError, GridSpec, Shape, ShapesSample, GRID_SIDE, IMAGE_SIZE};
use crate::tensor::Tensor;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: [u8; 4] = *b"SHPS";
const VERSION: u32 = 1;
const PIXELS: usize = IMAGE_SIZE * IMAGE_SIZE * 3;

pub fn save(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(dataset.samples.len() as u32).to_le_bytes())?;
    w.write_all(&dataset.seed.to_le_bytes())?;
    for sample in &dataset.samples {
        for row in &sample.grid.cells {
            for cell in row {
                w.write_all(&[cell.shape.to_byte(), cell.color.to_byte()])?;
            }
        }
        w.write_all(&[sample.label as u8])?;
        let mut px = [0u8; PIXELS];
        for (b, v) in px.iter_mut().zip(sample.image.data()) {
            *b = (255.0 * v).round() as u8;
        }
        w.write_all(&px)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset, DataError> {
    let mut r = BufReader::new(File::open(path)?);

    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(DataError::BadMagic { found: magic });
    }
    let version = read_u32(&mut r, "version")?;
    if version != VERSION {
        return Err(DataError::BadVersion(version));
    }
    let n = read_u32(&mut r, "sample count")? as usize;
    let seed = read_u64(&mut r, "seed")?;

    let mut samples = Vec::with_capacity(n);
    for index in 0..n {
        let mut cells = [[Cell { shape: Shape::Square, color: Color::Red }; GRID_SIDE]; GRID_SIDE];
        for row in cells.iter_mut() {
            for cell in row.iter_mut() {
                let mut pair = [0u8; 2];
                read_exact(&mut r, &mut pair, "grid cell")?;
                *cell = Cell { shape: Shape::from_byte(pair[0])?, color: Color::from_byte(pair[1])? };
            }
        }
        let grid = GridSpec { cells };
        let mut label_byte = [0u8; 1];
        read_exact(&mut r, &mut label_byte, "label")?;
        let label = label_byte[0] as usize;
        let derived = label_of(&grid);
        if label != derived {
            return Err(DataError::LabelMismatch { index, stored: label, derived });
        }
        let mut px = vec![0u8; PIXELS];
        read_exact(&mut r, &mut px, "pixels")?;
        let data: Vec<f64> = px.iter().map(|&b| b as f64 / 255.0).collect();
        let image = Tensor::new(vec![IMAGE_SIZE, IMAGE_SIZE, 3], data).expect("fixed raster shape");
        samples.push(ShapesSample { grid, image, label });
    }

    // A well-formed file ends exactly after the declared samples.
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(DataError::CountMismatch { header: n, actual: n + 1 });
    }

    let (train_idx, test_idx) = split_indices(seed, n);
    Ok(Dataset { samples, seed, train_idx, test_idx })
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], context: &'static str) -> Result<(), DataError> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => DataError::Truncated { context },
        _ => DataError::Io(e),
    })
}

fn read_u32<R: Read>(r: &mut R, context: &'static str) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, context)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R, context: &'static str) -> Result<u64, DataError> {
    let mut buf = [0u8; 8];
    read_exact(r, &mut buf, context)?;
    Ok(u64::from_le_bytes(buf))
}
