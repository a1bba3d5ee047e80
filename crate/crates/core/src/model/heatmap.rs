//! Receptive-field upscaling of latent maps into image coordinates.

use crate::shapes::IMAGE_SIZE;
use crate::tensor::Tensor;

/// Nearest-neighbor upscale of an [H,W] latent map to 28x28, mapping latent
/// cell (h,w) to the pixel block it was computed from. With the default
/// backbone (stride 4, 7x7 latent) blocks tile the image exactly.
pub fn upscale_heatmap(map: &Tensor, scale: usize) -> Tensor {
    assert_eq!(map.shape().len(), 2, "expected an [H,W] map");
    let (h, w) = (map.shape()[0], map.shape()[1]);
    let mut out = vec![0.0; IMAGE_SIZE * IMAGE_SIZE];
    for y in 0..IMAGE_SIZE {
        let src_y = (y / scale).min(h - 1);
        for x in 0..IMAGE_SIZE {
            let src_x = (x / scale).min(w - 1);
            out[y * IMAGE_SIZE + x] = map.data()[src_y * w + src_x];
        }
    }
    Tensor::new(vec![IMAGE_SIZE, IMAGE_SIZE], out).expect("fixed heatmap shape")
}
