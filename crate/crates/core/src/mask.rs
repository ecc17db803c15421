//! Undersampling masks and the masked acquisition model `y = M (k + n)`.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, param_err, HkgmError, Result};
use crate::volume::KSpaceVolume;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MaskPattern {
    /// Variable-density Poisson disc.
    Poisson,
    /// Uniform random locations with an exact sample count.
    Random2d,
    /// Fully sampled central band of rows.
    PartialFourier,
    /// Read from a file; generation parameters unknown.
    External,
}

impl fmt::Display for MaskPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskPattern::Poisson => "poisson",
            MaskPattern::Random2d => "random2d",
            MaskPattern::PartialFourier => "partial",
            MaskPattern::External => "external",
        })
    }
}

impl FromStr for MaskPattern {
    type Err = HkgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(MaskPattern::Poisson),
            "random2d" | "random" => Ok(MaskPattern::Random2d),
            "partial" | "partial-fourier" => Ok(MaskPattern::PartialFourier),
            other => param_err(format!("unknown mask pattern `{other}`")),
        }
    }
}

/// Radius law of the variable-density Poisson disc: `r = scale * (floor + ρ)`
/// where `ρ ∈ [0, 1]` is the normalized distance from the grid center.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoissonRadius {
    pub scale: f64,
    pub floor: f64,
}

const POISSON_FLOOR: f64 = 0.1;

impl PoissonRadius {
    pub fn at(&self, nx: usize, ny: usize, x: usize, y: usize) -> f64 {
        self.scale * (self.floor + normalized_radius(nx, ny, x, y))
    }
}

fn normalized_radius(nx: usize, ny: usize, x: usize, y: usize) -> f64 {
    let dx = (x as f64 - (nx / 2) as f64) / (nx as f64 / 2.0);
    let dy = (y as f64 - (ny / 2) as f64) / (ny as f64 / 2.0);
    ((dx * dx + dy * dy) / 2.0).sqrt()
}

/// Binary `nx x ny` sampling grid, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMask {
    nx: usize,
    ny: usize,
    grid: Vec<bool>,
    pub pattern: MaskPattern,
    pub acceleration: f64,
    pub acs: usize,
    pub poisson_radius: Option<PoissonRadius>,
}

impl SamplingMask {
    pub fn from_grid(nx: usize, ny: usize, grid: Vec<bool>) -> Result<Self> {
        if nx == 0 || ny == 0 || grid.len() != nx * ny {
            return dim_err(format!(
                "mask grid of length {} does not match {nx}x{ny}",
                grid.len()
            ));
        }
        let count = grid.iter().filter(|&&b| b).count();
        Ok(Self {
            nx,
            ny,
            grid,
            pattern: MaskPattern::External,
            acceleration: if count == 0 {
                f64::INFINITY
            } else {
                (nx * ny) as f64 / count as f64
            },
            acs: 0,
            poisson_radius: None,
        })
    }

    pub fn full(nx: usize, ny: usize) -> Self {
        Self::from_grid(nx, ny, vec![true; nx * ny]).expect("positive extents")
    }

    pub fn empty(nx: usize, ny: usize) -> Self {
        Self::from_grid(nx, ny, vec![false; nx * ny]).expect("positive extents")
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn is_sampled(&self, x: usize, y: usize) -> bool {
        self.grid[x * self.ny + y]
    }

    pub fn grid(&self) -> &[bool] {
        &self.grid
    }

    pub fn count(&self) -> usize {
        self.grid.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        self.count() as f64 / self.grid.len() as f64
    }

    /// Whether `(x, y)` lies in the centered calibration block.
    pub fn in_acs(&self, x: usize, y: usize) -> bool {
        in_block(self.nx, self.ny, self.acs, x, y)
    }

    pub fn descriptor(&self) -> String {
        format!("{}-R{}-acs{}", self.pattern, self.acceleration, self.acs)
    }
}

fn block_start(n: usize, side: usize) -> usize {
    (n / 2).saturating_sub(side / 2)
}

fn in_block(nx: usize, ny: usize, side: usize, x: usize, y: usize) -> bool {
    if side == 0 {
        return false;
    }
    let (x0, y0) = (block_start(nx, side), block_start(ny, side));
    (x0..x0 + side).contains(&x) && (y0..y0 + side).contains(&y)
}

/// Generates a mask with `⌊nx·ny/R⌋` samples (partial Fourier: a central
/// band of `round(nx/R)` rows) and a fully sampled `acs x acs` center.
pub fn make_mask(
    pattern: MaskPattern,
    nx: usize,
    ny: usize,
    accel: f64,
    acs: usize,
    seed: u64,
) -> Result<SamplingMask> {
    if nx == 0 || ny == 0 {
        return dim_err("mask extents must be positive");
    }
    if !(accel > 1.0 && accel.is_finite()) {
        return param_err(format!("acceleration must exceed 1, got {accel}"));
    }
    if acs >= nx.min(ny) && acs > 0 {
        return param_err(format!(
            "calibration block {acs} must be smaller than {}",
            nx.min(ny)
        ));
    }
    let budget = ((nx * ny) as f64 / accel).floor() as usize;
    if acs * acs > budget {
        return param_err(format!(
            "calibration block of {} samples exceeds the budget of {budget}",
            acs * acs
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut grid = vec![false; nx * ny];
    for x in 0..nx {
        for y in 0..ny {
            if in_block(nx, ny, acs, x, y) {
                grid[x * ny + y] = true;
            }
        }
    }
    let mut poisson_radius = None;
    match pattern {
        MaskPattern::Random2d => {
            for g in grid.iter_mut() {
                if !*g && rng.random::<f64>() < 1.0 / accel {
                    *g = true;
                }
            }
            fix_count(&mut grid, nx, ny, acs, budget, &mut rng);
        }
        MaskPattern::PartialFourier => {
            let band = ((nx as f64 / accel).round() as usize).max(1);
            let x0 = block_start(nx, band);
            for x in x0..x0 + band {
                grid[x * ny..(x + 1) * ny].fill(true);
            }
        }
        MaskPattern::Poisson => {
            let (g, radius) = poisson_disc(nx, ny, acs, budget, &mut rng);
            grid = g;
            poisson_radius = Some(radius);
        }
        MaskPattern::External => return param_err("cannot generate an external mask"),
    }
    Ok(SamplingMask {
        nx,
        ny,
        grid,
        pattern,
        acceleration: accel,
        acs,
        poisson_radius,
    })
}

/// Adds or removes random non-calibration samples until exactly `target`
/// locations are set.
fn fix_count(
    grid: &mut [bool],
    nx: usize,
    ny: usize,
    acs: usize,
    target: usize,
    rng: &mut ChaCha8Rng,
) {
    let count = grid.iter().filter(|&&b| b).count();
    if count > target {
        let mut on: Vec<usize> = (0..grid.len())
            .filter(|&i| grid[i] && !in_block(nx, ny, acs, i / ny, i % ny))
            .collect();
        on.shuffle(rng);
        for &i in &on[..count - target] {
            grid[i] = false;
        }
    } else if count < target {
        let mut off: Vec<usize> = (0..grid.len()).filter(|&i| !grid[i]).collect();
        off.shuffle(rng);
        for &i in &off[..target - count] {
            grid[i] = true;
        }
    }
}

/// Dart throwing over a shuffled candidate list; a candidate is accepted
/// when no earlier sample lies closer than its own radius.
fn throw_darts(
    nx: usize,
    ny: usize,
    acs: usize,
    order: &[usize],
    radius: PoissonRadius,
) -> Vec<bool> {
    let mut grid = vec![false; nx * ny];
    for x in 0..nx {
        for y in 0..ny {
            if in_block(nx, ny, acs, x, y) {
                grid[x * ny + y] = true;
            }
        }
    }
    for &i in order {
        if grid[i] {
            continue;
        }
        let (x, y) = (i / ny, i % ny);
        let r = radius.at(nx, ny, x, y);
        let reach = r.ceil() as usize;
        let (x0, x1) = (x.saturating_sub(reach), (x + reach).min(nx - 1));
        let (y0, y1) = (y.saturating_sub(reach), (y + reach).min(ny - 1));
        let mut free = true;
        'scan: for qx in x0..=x1 {
            let dx = qx as f64 - x as f64;
            for qy in y0..=y1 {
                let dy = qy as f64 - y as f64;
                if dx * dx + dy * dy < r * r && grid[qx * ny + qy] {
                    free = false;
                    break 'scan;
                }
            }
        }
        if free {
            grid[i] = true;
        }
    }
    grid
}

fn poisson_disc(
    nx: usize,
    ny: usize,
    acs: usize,
    budget: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<bool>, PoissonRadius) {
    let mut order: Vec<usize> = (0..nx * ny).collect();
    order.shuffle(rng);
    let count = |g: &[bool]| g.iter().filter(|&&b| b).count();

    // Largest radius scale whose dart pattern still meets the budget.
    let radius = |scale| PoissonRadius {
        scale,
        floor: POISSON_FLOOR,
    };
    let mut lo = 0.0;
    let mut best = throw_darts(nx, ny, acs, &order, radius(lo));
    let mut hi = 2.0 * (accel_hint(nx, ny, budget)).sqrt() + 1.0;
    loop {
        let g = throw_darts(nx, ny, acs, &order, radius(hi));
        if count(&g) < budget {
            break;
        }
        lo = hi;
        best = g;
        hi *= 2.0;
    }
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        let g = throw_darts(nx, ny, acs, &order, radius(mid));
        if count(&g) >= budget {
            lo = mid;
            best = g;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-3 * hi.max(1e-9) {
            break;
        }
    }
    // Removing samples never shortens a pairwise distance.
    fix_count(&mut best, nx, ny, acs, budget, rng);
    (best, radius(lo))
}

fn accel_hint(nx: usize, ny: usize, budget: usize) -> f64 {
    (nx * ny) as f64 / budget.max(1) as f64
}

/// `M k`, the same mask for every coil.
pub fn apply_mask(k: &KSpaceVolume, mask: &SamplingMask) -> Result<KSpaceVolume> {
    if (k.nx(), k.ny()) != (mask.nx, mask.ny) {
        return dim_err(format!(
            "mask {}x{} does not match volume {}x{}",
            mask.nx,
            mask.ny,
            k.nx(),
            k.ny()
        ));
    }
    let mut out = k.clone();
    for c in 0..k.nc() {
        for (z, &m) in out.coil_mut(c).iter_mut().zip(&mask.grid) {
            if !m {
                *z = Complex64::new(0.0, 0.0);
            }
        }
    }
    Ok(out)
}

/// `M (k + n)` with `n` i.i.d. circular complex Gaussian, `E|n|² = std²`.
pub fn acquire(
    k: &KSpaceVolume,
    mask: &SamplingMask,
    noise_std: f64,
    seed: u64,
) -> Result<KSpaceVolume> {
    if noise_std < 0.0 {
        return param_err("noise standard deviation must be non-negative");
    }
    if noise_std == 0.0 {
        return apply_mask(k, mask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = noise_std / 2f64.sqrt();
    let mut noisy = k.clone();
    for z in noisy.as_mut_slice() {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *z += Complex64::new(re * s, im * s);
    }
    apply_mask(&noisy, mask)
}
