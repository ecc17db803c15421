//! Synthetic multi-coil phantoms: piecewise-constant ellipse images weighted
//! by smooth complex coil sensitivities.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, param_err, Result};
use crate::volume::{fft2c, ImageVolume, KSpaceVolume, RealImage};

/// Ellipse in normalized coordinates (`[-1, 1]` across the field of view).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub center: (f64, f64),
    pub axes: (f64, f64),
    /// Rotation in degrees.
    pub angle: f64,
    pub intensity: f64,
}

impl Ellipse {
    const fn new(cx: f64, cy: f64, a: f64, b: f64, angle: f64, intensity: f64) -> Self {
        Ellipse {
            center: (cx, cy),
            axes: (a, b),
            angle,
            intensity,
        }
    }

    fn contains(&self, u: f64, v: f64) -> bool {
        let (s, c) = self.angle.to_radians().sin_cos();
        let (du, dv) = (u - self.center.0, v - self.center.1);
        let p = du * c + dv * s;
        let q = -du * s + dv * c;
        (p / self.axes.0).powi(2) + (q / self.axes.1).powi(2) <= 1.0
    }
}

/// Modified Shepp-Logan head layout (intensities in `[0, 1]`).
pub const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse::new(0.0, 0.0, 0.69, 0.92, 0.0, 1.0),
    Ellipse::new(0.0, -0.0184, 0.6624, 0.874, 0.0, -0.8),
    Ellipse::new(0.22, 0.0, 0.11, 0.31, -18.0, -0.2),
    Ellipse::new(-0.22, 0.0, 0.16, 0.41, 18.0, -0.2),
    Ellipse::new(0.0, 0.35, 0.21, 0.25, 0.0, 0.1),
    Ellipse::new(0.0, 0.1, 0.046, 0.046, 0.0, 0.1),
    Ellipse::new(0.0, -0.1, 0.046, 0.046, 0.0, 0.1),
    Ellipse::new(-0.08, -0.605, 0.046, 0.023, 0.0, 0.1),
    Ellipse::new(0.0, -0.606, 0.023, 0.023, 0.0, 0.1),
    Ellipse::new(0.06, -0.605, 0.023, 0.046, 0.0, 0.1),
];

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub nx: usize,
    pub ny: usize,
    pub nc: usize,
    pub ellipses: Vec<Ellipse>,
    /// Width of the Gaussian sensitivity bumps in normalized units;
    /// `None` gives every coil a uniform unit sensitivity.
    pub coil_width: Option<f64>,
    /// Fraction of the field of view spanned by the ellipse layout.
    pub extent: f64,
    pub seed: u64,
}

/// Default [`PhantomSpec::extent`]: leaves a background margin around the
/// head, which keeps the lifted k-space strongly low-rank.
pub const DEFAULT_EXTENT: f64 = 0.65;

impl PhantomSpec {
    pub fn new(nx: usize, ny: usize, nc: usize, seed: u64) -> Self {
        PhantomSpec {
            nx,
            ny,
            nc,
            ellipses: SHEPP_LOGAN.to_vec(),
            coil_width: Some(0.9),
            extent: DEFAULT_EXTENT,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 || self.nc == 0 {
            return dim_err(format!(
                "phantom needs at least 2x2 pixels and one coil, got {}x{}x{}",
                self.nx, self.ny, self.nc
            ));
        }
        if let Some(w) = self.coil_width {
            if !(w > 0.0 && w.is_finite()) {
                return param_err(format!("coil width must be positive, got {w}"));
            }
        }
        if !(self.extent > 0.0 && self.extent.is_finite()) {
            return param_err(format!("extent must be positive, got {}", self.extent));
        }
        for e in &self.ellipses {
            if !(e.axes.0 > 0.0 && e.axes.1 > 0.0) {
                return param_err(format!("ellipse axes must be positive, got {:?}", e.axes));
            }
        }
        Ok(())
    }
}

/// Normalized coordinates of pixel `(row, col)`: `u` along columns, `v`
/// along rows, both `0` at the grid center.
fn coords(nx: usize, ny: usize, x: usize, y: usize) -> (f64, f64) {
    let u = (y as f64 - (ny / 2) as f64) / (ny as f64 / 2.0);
    let v = ((nx / 2) as f64 - x as f64) / (nx as f64 / 2.0);
    (u, v)
}

/// Sum of the ellipse intensities covering each pixel. The default layout
/// stays within `[0, 1]`.
pub fn ellipse_image(spec: &PhantomSpec) -> RealImage {
    let mut img = RealImage::zeros(spec.nx, spec.ny);
    for x in 0..spec.nx {
        for y in 0..spec.ny {
            let (u, v) = coords(spec.nx, spec.ny, x, y);
            let (u, v) = (u / spec.extent, v / spec.extent);
            let val: f64 = spec
                .ellipses
                .iter()
                .filter(|e| e.contains(u, v))
                .map(|e| e.intensity)
                .sum();
            img.as_mut_slice()[x * spec.ny + y] = val;
        }
    }
    img
}

/// Complex coil sensitivities, normalized pointwise so their root sum of
/// squares is one everywhere.
pub fn coil_maps(spec: &PhantomSpec) -> ImageVolume {
    let (nx, ny, nc) = (spec.nx, spec.ny, spec.nc);
    let Some(width) = spec.coil_width else {
        return ImageVolume::from_fn(nx, ny, nc, |_, _, _| Complex64::new(1.0, 0.0));
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let offsets: Vec<f64> = (0..nc).map(|_| rng.random_range(-PI..PI)).collect();
    let mut maps = ImageVolume::from_fn(nx, ny, nc, |c, x, y| {
        let theta = 2.0 * PI * c as f64 / nc as f64;
        let (cu, cv) = (theta.cos(), theta.sin());
        let (u, v) = coords(nx, ny, x, y);
        let d2 = (u - cu).powi(2) + (v - cv).powi(2);
        let mag = (-d2 / (2.0 * width * width)).exp();
        let phase = offsets[c] + 0.4 * PI * (u * cu + v * cv);
        Complex64::from_polar(mag, phase)
    });
    for x in 0..nx {
        for y in 0..ny {
            let norm = (0..nc)
                .map(|c| maps.get(c, x, y).norm_sqr())
                .sum::<f64>()
                .sqrt();
            for c in 0..nc {
                let z = maps.get(c, x, y) / norm;
                maps.set(c, x, y, z);
            }
        }
    }
    maps
}

/// Coil images and their k-space.
pub fn make_phantom(spec: &PhantomSpec) -> Result<(ImageVolume, KSpaceVolume)> {
    spec.validate()?;
    let rho = ellipse_image(spec);
    let maps = coil_maps(spec);
    let img = ImageVolume::from_fn(spec.nx, spec.ny, spec.nc, |c, x, y| {
        maps.get(c, x, y) * rho.get(x, y)
    });
    let k = fft2c(&img);
    Ok((img, k))
}

/// Multi-coil k-space made of `terms` plane waves
/// `k_c(x, y) = Σ_j a_cj exp(i(ω_j x + ν_j y))` with seeded frequencies and
/// complex Gaussian amplitudes. Every lift of it has rank at most `terms`.
pub fn plane_wave_kspace(
    nx: usize,
    ny: usize,
    nc: usize,
    terms: usize,
    seed: u64,
) -> Result<KSpaceVolume> {
    if nx == 0 || ny == 0 || nc == 0 {
        return dim_err(format!("empty plane-wave grid {nx}x{ny}x{nc}"));
    }
    if terms == 0 {
        return param_err("plane-wave k-space needs at least one term");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let freqs: Vec<(f64, f64)> = (0..terms)
        .map(|_| (rng.random_range(-PI..PI), rng.random_range(-PI..PI)))
        .collect();
    let amps: Vec<Complex64> = (0..terms * nc)
        .map(|_| {
            let n: Complex64 = Complex64::new(
                rng.sample(rand_distr::StandardNormal),
                rng.sample(rand_distr::StandardNormal),
            );
            n / 2f64.sqrt()
        })
        .collect();
    Ok(KSpaceVolume::from_fn(nx, ny, nc, |c, x, y| {
        freqs
            .iter()
            .enumerate()
            .map(|(j, &(w, v))| {
                amps[c * terms + j] * Complex64::from_polar(1.0, w * x as f64 + v * y as f64)
            })
            .sum()
    }))
}
