//! Spatial stochastic transforms: block mixing with a donor image, FIA-style
//! pixel dropping, and the composed block+spectral probe used for gradient
//! aggregation.
//!
//! Every transform is a pure function of its inputs and the stream state:
//! with the same stream, the output is identical. Draw order is part of the
//! contract — block decisions go row-major, pixel drops row-major by
//! location — so recorded streams can be replayed by independent oracles.

use crate::attack::AttackConfig;
use crate::data::{DatasetHandle, ImageTensor};
use crate::error::{Error, Result};
use crate::frequency::self_mix;
use crate::rng::RandomStream;
use crate::tensor::Tensor;

/// Partition of an `H×W` image into `n_b × n_b` rectangular blocks whose
/// extents differ by at most one pixel.
#[derive(Debug, Clone)]
pub struct BlockGrid {
    row_bounds: Vec<usize>,
    col_bounds: Vec<usize>,
}

/// `round(i·extent / n)` computed in integers (half rounds up).
fn cut(i: usize, extent: usize, n: usize) -> usize {
    (2 * i * extent + n) / (2 * n)
}

impl BlockGrid {
    pub fn new(h: usize, w: usize, n_b: usize) -> Result<BlockGrid> {
        if n_b < 1 || n_b > h.min(w) {
            return Err(Error::InvalidArgument(format!(
                "block count {n_b} outside [1, {}] for {h}x{w}",
                h.min(w)
            )));
        }
        Ok(BlockGrid {
            row_bounds: (0..=n_b).map(|i| cut(i, h, n_b)).collect(),
            col_bounds: (0..=n_b).map(|i| cut(i, w, n_b)).collect(),
        })
    }

    pub fn n_b(&self) -> usize {
        self.row_bounds.len() - 1
    }

    pub fn row_bounds(&self) -> &[usize] {
        &self.row_bounds
    }

    pub fn col_bounds(&self) -> &[usize] {
        &self.col_bounds
    }

    /// Half-open pixel ranges of block `(i, j)`.
    pub fn block(&self, i: usize, j: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        (
            self.row_bounds[i]..self.row_bounds[i + 1],
            self.col_bounds[j]..self.col_bounds[j + 1],
        )
    }
}

/// Replace each of `n_b × n_b` blocks of `x` by the co-located donor block
/// with probability `1 − p` (independent draws, row-major block order).
/// The output keeps the label and id of `x`.
pub fn block_mix(
    x: &ImageTensor,
    donor: &ImageTensor,
    n_b: usize,
    p: f64,
    rng: &mut RandomStream,
) -> Result<ImageTensor> {
    if x.pixels.shape() != donor.pixels.shape() {
        return Err(Error::ShapeMismatch {
            op: "block_mix",
            detail: format!("{:?} vs {:?}", x.pixels.shape(), donor.pixels.shape()),
        });
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!(
            "keep probability {p} outside [0, 1]"
        )));
    }
    let s = x.pixels.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let grid = BlockGrid::new(h, w, n_b)?;
    let mut pixels = x.pixels.clone();
    for i in 0..n_b {
        for j in 0..n_b {
            let keep = rng.uniform() < p;
            if keep {
                continue;
            }
            let (rows, cols) = grid.block(i, j);
            for y in rows {
                for xcol in cols.clone() {
                    let base = (y * w + xcol) * c;
                    pixels.data_mut()[base..base + c]
                        .copy_from_slice(&donor.pixels.data()[base..base + c]);
                }
            }
        }
    }
    Ok(ImageTensor {
        pixels,
        label: x.label,
        id: x.id,
    })
}

/// Zero each pixel location (all channels jointly) with probability `p_d`,
/// row-major location order. Keeps label and id.
pub fn pixel_drop(x: &ImageTensor, p_d: f64, rng: &mut RandomStream) -> Result<ImageTensor> {
    if !(0.0..=1.0).contains(&p_d) {
        return Err(Error::InvalidArgument(format!(
            "drop probability {p_d} outside [0, 1]"
        )));
    }
    let s = x.pixels.shape();
    let (h, w, c) = (s[0], s[1], s[2]);
    let mut pixels = x.pixels.clone();
    for y in 0..h {
        for xcol in 0..w {
            if rng.uniform() < p_d {
                let base = (y * w + xcol) * c;
                for v in &mut pixels.data_mut()[base..base + c] {
                    *v = 0.0;
                }
            }
        }
    }
    Ok(ImageTensor {
        pixels,
        label: x.label,
        id: x.id,
    })
}

/// The composed probe transform: sample a donor from another class, block-mix
/// it into `x`, then spectrum-mix the result with a fresh rotation angle drawn
/// uniformly from the config's angle range.
///
/// Draw order per call: donor index, `n_b²` block decisions, rotation angle.
/// The output tensor is not clipped (it is a gradient probe, not an image).
pub fn mixed_probe(
    x: &ImageTensor,
    data: &DatasetHandle,
    cfg: &AttackConfig,
    rng: &mut RandomStream,
) -> Result<Tensor> {
    let donor = data.sample_donor(x.label, rng)?.clone();
    let blocked = block_mix(x, &donor, cfg.n_b, cfg.keep_p, rng)?;
    let beta = rng.uniform_in(cfg.beta_min, cfg.beta_max);
    self_mix(&blocked.pixels, cfg.mix_mu, beta)
}
