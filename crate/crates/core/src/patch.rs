//! Splitting rasters into flat non-overlapping square patches.
//!
//! Patches are emitted in row-major order; each vector is laid out as
//! `[channel][row-in-patch][col-in-patch]`.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};

pub fn patchify(grid: &Array3<f64>, patch: usize) -> Result<Array2<f64>> {
    let (c, h, w) = grid.dim();
    check(h, w, patch)?;
    let (ph, pw) = (h / patch, w / patch);
    let mut out = Array2::zeros((ph * pw, c * patch * patch));
    for pi in 0..ph {
        for pj in 0..pw {
            let mut row = out.row_mut(pi * pw + pj);
            let mut k = 0;
            for ch in 0..c {
                for di in 0..patch {
                    for dj in 0..patch {
                        row[k] = grid[[ch, pi * patch + di, pj * patch + dj]];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn unpatchify(
    patches: &Array2<f64>,
    channels: usize,
    height: usize,
    width: usize,
    patch: usize,
) -> Result<Array3<f64>> {
    check(height, width, patch)?;
    let (ph, pw) = (height / patch, width / patch);
    if patches.dim() != (ph * pw, channels * patch * patch) {
        return Err(Error::invalid(format!(
            "patch matrix {:?} does not match {channels}x{height}x{width} with patch {patch}",
            patches.dim()
        )));
    }
    let mut grid = Array3::zeros((channels, height, width));
    for pi in 0..ph {
        for pj in 0..pw {
            let row = patches.row(pi * pw + pj);
            let mut k = 0;
            for ch in 0..channels {
                for di in 0..patch {
                    for dj in 0..patch {
                        grid[[ch, pi * patch + di, pj * patch + dj]] = row[k];
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(grid)
}

fn check(h: usize, w: usize, patch: usize) -> Result<()> {
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::invalid(format!(
            "patch size {patch} must divide {h}x{w}"
        )));
    }
    Ok(())
}
