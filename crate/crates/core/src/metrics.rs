//! Image quality metrics on magnitude images. Both images are divided by the
//! reference maximum before comparison, so the peak is one.

use std::fmt::Write as _;

use crate::error::{dim_err, Result};
use crate::volume::RealImage;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_pair(x: &RealImage, reference: &RealImage) -> Result<()> {
    if (x.nx(), x.ny()) != (reference.nx(), reference.ny()) {
        return dim_err(format!(
            "image {}x{} does not match reference {}x{}",
            x.nx(),
            x.ny(),
            reference.nx(),
            reference.ny()
        ));
    }
    Ok(())
}

fn normalizer(reference: &RealImage) -> f64 {
    let peak = reference.max();
    if peak > 0.0 {
        1.0 / peak
    } else {
        1.0
    }
}

/// `10 log10(1 / MSE)` after normalizing by the reference peak, capped at
/// [`PSNR_CAP`].
pub fn psnr(x: &RealImage, reference: &RealImage) -> Result<f64> {
    check_pair(x, reference)?;
    let s = normalizer(reference);
    let n = x.as_slice().len() as f64;
    let mse = x
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| ((a - b) * s).powi(2))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = g.iter().sum();
    g.into_iter().map(|v| v / total).collect()
}

/// Separable Gaussian filter evaluated at every valid window position.
fn filter_valid(data: &[f64], nx: usize, ny: usize, g: &[f64]) -> Vec<f64> {
    let w = g.len();
    let (ox, oy) = (nx - w + 1, ny - w + 1);
    let mut rows = vec![0.0; nx * oy];
    for x in 0..nx {
        let src = &data[x * ny..(x + 1) * ny];
        for y in 0..oy {
            rows[x * oy + y] = g.iter().zip(&src[y..y + w]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ox * oy];
    for x in 0..ox {
        for (i, gi) in g.iter().enumerate() {
            let src = &rows[(x + i) * oy..(x + i + 1) * oy];
            for (o, v) in out[x * oy..(x + 1) * oy].iter_mut().zip(src) {
                *o += gi * v;
            }
        }
    }
    out
}

/// Single-scale SSIM with an 11x11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, unit dynamic range; mean over valid windows.
pub fn ssim(x: &RealImage, reference: &RealImage) -> Result<f64> {
    check_pair(x, reference)?;
    let (nx, ny) = (x.nx(), x.ny());
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return dim_err(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {nx}x{ny}"
        ));
    }
    let s = normalizer(reference);
    let a: Vec<f64> = x.as_slice().iter().map(|v| v * s).collect();
    let b: Vec<f64> = reference.as_slice().iter().map(|v| v * s).collect();
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();

    let g = gaussian_window();
    let mu_a = filter_valid(&a, nx, ny, &g);
    let mu_b = filter_valid(&b, nx, ny, &g);
    let e_aa = filter_valid(&aa, nx, ny, &g);
    let e_bb = filter_valid(&bb, nx, ny, &g);
    let e_ab = filter_valid(&ab, nx, ny, &g);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

pub const REPORT_HEADER: &str = "method,pattern,R,window,thresh,npatch,psnr,ssim";

/// One row of an evaluation report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub method: String,
    pub pattern: String,
    pub acceleration: f64,
    pub window: usize,
    pub threshold: f64,
    pub npatch: usize,
    pub psnr: f64,
    pub ssim: f64,
}

impl MetricReport {
    pub fn csv_row(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{:.4},{:.4}",
            self.method,
            self.pattern,
            self.acceleration,
            self.window,
            self.threshold,
            self.npatch,
            self.psnr,
            self.ssim
        )
        .unwrap();
        s
    }
}

pub fn reports_to_csv(rows: &[MetricReport]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}
