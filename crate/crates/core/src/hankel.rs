//! Block-Hankel lifting of multi-coil k-space and its multiplicity-weighted
//! pseudo-inverse.
//!
//! Sliding a `w x w x nc` window over the `nx x ny` grid produces one column
//! per window position. Column `i * (ny - w + 1) + j` holds the window whose
//! top-left corner sits at `(i, j)`; row `coil * w² + lr * w + lc` holds the
//! sample at local offset `(lr, lc)` of that coil.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::matrix::CMatrix;
use crate::volume::KSpaceVolume;

/// Lifted matrix together with the extents it was lifted from.
#[derive(Clone, Debug, PartialEq)]
pub struct HankelMatrix {
    matrix: CMatrix,
    window: usize,
    nx: usize,
    ny: usize,
    nc: usize,
}

impl HankelMatrix {
    /// Wraps an arbitrary matrix (e.g. a thresholded lift) with source
    /// extents so it can be unlifted.
    pub fn from_matrix(
        matrix: CMatrix,
        window: usize,
        nx: usize,
        ny: usize,
        nc: usize,
    ) -> Result<Self> {
        let shape = lifted_shape(nx, ny, nc, window)?;
        if matrix.shape() != shape {
            return dim_err(format!(
                "matrix shape {:?} does not match lifted shape {shape:?}",
                matrix.shape()
            ));
        }
        Ok(Self {
            matrix,
            window,
            nx,
            ny,
            nc,
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn matrix_mut(&mut self) -> &mut CMatrix {
        &mut self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn source_dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nc)
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }
}

fn check_window(nx: usize, ny: usize, w: usize) -> Result<()> {
    if w == 0 || w > nx.min(ny) {
        return dim_err(format!("window {w} must lie in [1, {}]", nx.min(ny)));
    }
    Ok(())
}

/// `(w² · nc, (nx - w + 1) · (ny - w + 1))`
pub fn lifted_shape(nx: usize, ny: usize, nc: usize, w: usize) -> Result<(usize, usize)> {
    check_window(nx, ny, w)?;
    Ok((w * w * nc, (nx - w + 1) * (ny - w + 1)))
}

/// Ratio of lifted-matrix cells to k-space samples.
pub fn redundancy_factor(nx: usize, ny: usize, nc: usize, w: usize) -> Result<f64> {
    let (r, c) = lifted_shape(nx, ny, nc, w)?;
    Ok((r as f64 * c as f64) / (nx * ny * nc) as f64)
}

pub fn lift(k: &KSpaceVolume, w: usize) -> Result<HankelMatrix> {
    let (nx, ny, nc) = k.dims();
    let (rows, cols) = lifted_shape(nx, ny, nc, w)?;
    let pos_y = ny - w + 1;
    let mut m = CMatrix::zeros(rows, cols);
    for coil in 0..nc {
        let src = k.coil(coil);
        for lr in 0..w {
            for lc in 0..w {
                let out = m.row_mut(coil * w * w + lr * w + lc);
                for i in 0..nx - w + 1 {
                    let from = (i + lr) * ny + lc;
                    out[i * pos_y..(i + 1) * pos_y].copy_from_slice(&src[from..from + pos_y]);
                }
            }
        }
    }
    Ok(HankelMatrix {
        matrix: m,
        window: w,
        nx,
        ny,
        nc,
    })
}

/// Number of windows covering each grid location, row-major `nx x ny`.
pub fn count_multiplicity(nx: usize, ny: usize, w: usize) -> Result<Vec<usize>> {
    check_window(nx, ny, w)?;
    let along = |x: usize, n: usize| (x + 1).min(w).min(n - x).min(n - w + 1);
    let mut out = Vec::with_capacity(nx * ny);
    for x in 0..nx {
        let mx = along(x, nx);
        for y in 0..ny {
            out.push(mx * along(y, ny));
        }
    }
    Ok(out)
}

/// Pseudo-inverse of [`lift`]: every sample becomes the mean of the matrix
/// cells mapped onto it.
pub fn unlift(h: &HankelMatrix) -> KSpaceVolume {
    let (nx, ny, nc, w) = (h.nx, h.ny, h.nc, h.window);
    let pos_y = ny - w + 1;
    let mult = count_multiplicity(nx, ny, w).expect("validated on construction");
    let mut out = KSpaceVolume::zeros(nx, ny, nc);
    for coil in 0..nc {
        let dst = out.coil_mut(coil);
        for lr in 0..w {
            for lc in 0..w {
                let row = h.matrix.row(coil * w * w + lr * w + lc);
                for i in 0..nx - w + 1 {
                    let to = (i + lr) * ny + lc;
                    for (d, s) in dst[to..to + pos_y]
                        .iter_mut()
                        .zip(&row[i * pos_y..(i + 1) * pos_y])
                    {
                        *d += s;
                    }
                }
            }
        }
        for (d, &m) in dst.iter_mut().zip(&mult) {
            *d /= m as f64;
        }
    }
    out
}

/// Random square crops of a lifted matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub size: usize,
    pub patches: Vec<CMatrix>,
    /// Top-left `(row, col)` of each crop.
    pub origins: Vec<(usize, usize)>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Draws `count` top-left corners uniformly, with replacement, from the
/// valid range of a `rows x cols` matrix.
pub fn patch_origins(
    rows: usize,
    cols: usize,
    size: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<(usize, usize)>> {
    if size == 0 || size > rows || size > cols {
        return dim_err(format!(
            "patch size {size} does not fit a {rows}x{cols} matrix"
        ));
    }
    if count == 0 {
        return dim_err("patch count must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            (
                rng.random_range(0..=rows - size),
                rng.random_range(0..=cols - size),
            )
        })
        .collect())
}

pub fn extract_patches(h: &HankelMatrix, size: usize, count: usize, seed: u64) -> Result<PatchSet> {
    let origins = patch_origins(h.rows(), h.cols(), size, count, seed)?;
    let patches = origins
        .iter()
        .map(|&(r, c)| h.matrix.submatrix(r, c, size, size))
        .collect::<Result<Vec<_>>>()?;
    Ok(PatchSet {
        size,
        patches,
        origins,
    })
}
