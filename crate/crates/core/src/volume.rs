//! Multi-coil complex volumes, centered orthonormal 2-D Fourier transforms,
//! sum-of-squares coil combination and real/imaginary channel packing.
//!
//! Volumes are stored coil-slowest, then row, then column (column-fastest).
//! `nx` is the number of rows and `ny` the number of columns.

use std::marker::PhantomData;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::error::{dim_err, HkgmError, Result};
use crate::matrix::CMatrix;

/// Marker for frequency-domain volumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KSpace;

/// Marker for image-domain volumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Image;

/// Complex `nc x nx x ny` array tagged with the domain it lives in.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<D> {
    nx: usize,
    ny: usize,
    nc: usize,
    data: Vec<Complex64>,
    _domain: PhantomData<D>,
}

pub type KSpaceVolume = Volume<KSpace>;
pub type ImageVolume = Volume<Image>;

impl<D> Volume<D> {
    /// Builds a volume, rejecting empty extents, length mismatch and
    /// non-finite samples.
    pub fn new(nx: usize, ny: usize, nc: usize, data: Vec<Complex64>) -> Result<Self> {
        if nx == 0 || ny == 0 || nc == 0 {
            return dim_err(format!(
                "volume extents must be positive, got {nx}x{ny}x{nc}"
            ));
        }
        if data.len() != nx * ny * nc {
            return dim_err(format!(
                "volume data length {} does not match {nx}x{ny}x{nc}",
                data.len()
            ));
        }
        if let Some(i) = data
            .iter()
            .position(|z| !(z.re.is_finite() && z.im.is_finite()))
        {
            return Err(HkgmError::Numerical(format!(
                "non-finite sample at flat index {i}"
            )));
        }
        Ok(Self::from_raw(nx, ny, nc, data))
    }

    pub(crate) fn from_raw(nx: usize, ny: usize, nc: usize, data: Vec<Complex64>) -> Self {
        debug_assert_eq!(data.len(), nx * ny * nc);
        Self {
            nx,
            ny,
            nc,
            data,
            _domain: PhantomData,
        }
    }

    pub fn zeros(nx: usize, ny: usize, nc: usize) -> Self {
        Self::from_raw(nx, ny, nc, vec![Complex64::new(0.0, 0.0); nx * ny * nc])
    }

    /// `f(coil, row, col)`
    pub fn from_fn(
        nx: usize,
        ny: usize,
        nc: usize,
        mut f: impl FnMut(usize, usize, usize) -> Complex64,
    ) -> Self {
        let mut data = Vec::with_capacity(nx * ny * nc);
        for c in 0..nc {
            for x in 0..nx {
                for y in 0..ny {
                    data.push(f(c, x, y));
                }
            }
        }
        Self::from_raw(nx, ny, nc, data)
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn nc(&self) -> usize {
        self.nc
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.nx, self.ny, self.nc)
    }

    #[inline]
    pub fn index(&self, coil: usize, row: usize, col: usize) -> usize {
        (coil * self.nx + row) * self.ny + col
    }

    #[inline]
    pub fn get(&self, coil: usize, row: usize, col: usize) -> Complex64 {
        self.data[self.index(coil, row, col)]
    }

    #[inline]
    pub fn set(&mut self, coil: usize, row: usize, col: usize, v: Complex64) {
        let i = self.index(coil, row, col);
        self.data[i] = v;
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<Complex64> {
        self.data
    }

    pub fn coil(&self, c: usize) -> &[Complex64] {
        let n = self.nx * self.ny;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn coil_mut(&mut self, c: usize) -> &mut [Complex64] {
        let n = self.nx * self.ny;
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn coils(&self) -> impl Iterator<Item = &[Complex64]> {
        self.data.chunks_exact(self.nx * self.ny)
    }

    /// One coil as an `nx x ny` matrix.
    pub fn coil_matrix(&self, c: usize) -> CMatrix {
        CMatrix::from_vec(self.nx, self.ny, self.coil(c).to_vec()).expect("coil extents")
    }

    pub fn same_shape<E>(&self, other: &Volume<E>) -> bool {
        self.dims() == other.dims()
    }

    pub(crate) fn check_shape<E>(&self, other: &Volume<E>, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            dim_err(format!(
                "{what}: shape {:?} does not match {:?}",
                self.dims(),
                other.dims()
            ))
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self::from_raw(
            self.nx,
            self.ny,
            self.nc,
            self.data.iter().map(|z| z * s).collect(),
        )
    }

    /// `‖self - other‖₂`
    pub fn distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Real-valued 2-D image, row-major `nx x ny`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl RealImage {
    pub fn new(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return dim_err(format!(
                "image data length {} does not match {nx}x{ny}",
                data.len()
            ));
        }
        Ok(Self { nx, ny, data })
    }

    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            data: vec![0.0; nx * ny],
        }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.ny + col]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }
}

/// Real multi-channel field `[channel][row][col]`; the score network's
/// input and output carrier.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelField {
    channels: usize,
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl ChannelField {
    pub fn new(channels: usize, nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * nx * ny {
            return dim_err(format!(
                "field data length {} does not match {channels}x{nx}x{ny}",
                data.len()
            ));
        }
        Ok(Self {
            channels,
            nx,
            ny,
            data,
        })
    }

    pub fn zeros(channels: usize, nx: usize, ny: usize) -> Self {
        Self {
            channels,
            nx,
            ny,
            data: vec![0.0; channels * nx * ny],
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.nx * self.ny;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Splits a complex field into channel 0 (real part) and channel 1
/// (imaginary part).
pub fn pack_channels(field: &CMatrix) -> ChannelField {
    let n = field.rows() * field.cols();
    let mut data = vec![0.0; 2 * n];
    let (re, im) = data.split_at_mut(n);
    for ((r, i), z) in re.iter_mut().zip(im.iter_mut()).zip(field.as_slice()) {
        *r = z.re;
        *i = z.im;
    }
    ChannelField {
        channels: 2,
        nx: field.rows(),
        ny: field.cols(),
        data,
    }
}

pub fn unpack_channels(field: &ChannelField) -> Result<CMatrix> {
    if field.channels != 2 {
        return dim_err(format!(
            "unpacking needs exactly 2 channels, got {}",
            field.channels
        ));
    }
    let data = field
        .channel(0)
        .iter()
        .zip(field.channel(1))
        .map(|(&re, &im)| Complex64::new(re, im))
        .collect();
    CMatrix::from_vec(field.nx, field.ny, data)
}

struct Plans {
    row: Arc<dyn Fft<f64>>,
    col: Arc<dyn Fft<f64>>,
}

impl Plans {
    fn new(nx: usize, ny: usize, inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        if inverse {
            Plans {
                row: planner.plan_fft_inverse(ny),
                col: planner.plan_fft_inverse(nx),
            }
        } else {
            Plans {
                row: planner.plan_fft_forward(ny),
                col: planner.plan_fft_forward(nx),
            }
        }
    }
}

/// Circular shift of a row-major `nx x ny` slice by (`sx`, `sy`).
fn circshift2(buf: &mut [Complex64], nx: usize, ny: usize, sx: usize, sy: usize) {
    if !sy.is_multiple_of(ny) {
        for row in buf.chunks_exact_mut(ny) {
            row.rotate_right(sy % ny);
        }
    }
    if !sx.is_multiple_of(nx) {
        buf.rotate_right((sx % nx) * ny);
    }
}

fn centered_fft_coil(buf: &mut [Complex64], nx: usize, ny: usize, plans: &Plans) {
    // ifftshift moves the center to the origin, fftshift moves it back.
    circshift2(buf, nx, ny, nx / 2 + nx % 2, ny / 2 + ny % 2);

    let mut scratch = vec![Complex64::new(0.0, 0.0); plans.row.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(ny) {
        plans.row.process_with_scratch(row, &mut scratch);
    }

    let mut column = vec![Complex64::new(0.0, 0.0); nx];
    let mut scratch = vec![Complex64::new(0.0, 0.0); plans.col.get_inplace_scratch_len()];
    for y in 0..ny {
        for x in 0..nx {
            column[x] = buf[x * ny + y];
        }
        plans.col.process_with_scratch(&mut column, &mut scratch);
        for x in 0..nx {
            buf[x * ny + y] = column[x];
        }
    }

    circshift2(buf, nx, ny, nx / 2, ny / 2);

    let scale = 1.0 / ((nx * ny) as f64).sqrt();
    for z in buf.iter_mut() {
        *z *= scale;
    }
}

fn transform_coils(data: &mut [Complex64], nx: usize, ny: usize, inverse: bool) {
    let plans = Plans::new(nx, ny, inverse);
    data.par_chunks_exact_mut(nx * ny)
        .for_each(|coil| centered_fft_coil(coil, nx, ny, &plans));
}

/// Centered, orthonormal per-coil 2-D DFT (zero frequency at `(nx/2, ny/2)`).
pub fn fft2c(img: &ImageVolume) -> KSpaceVolume {
    let mut data = img.data.clone();
    transform_coils(&mut data, img.nx, img.ny, false);
    KSpaceVolume::from_raw(img.nx, img.ny, img.nc, data)
}

/// Inverse of [`fft2c`].
pub fn ifft2c(k: &KSpaceVolume) -> ImageVolume {
    let mut data = k.data.clone();
    transform_coils(&mut data, k.nx, k.ny, true);
    ImageVolume::from_raw(k.nx, k.ny, k.nc, data)
}

/// Root-sum-of-squares coil combination.
pub fn sos(img: &ImageVolume) -> RealImage {
    let n = img.nx * img.ny;
    let mut acc = vec![0.0; n];
    for coil in img.coils() {
        for (a, z) in acc.iter_mut().zip(coil) {
            *a += z.norm_sqr();
        }
    }
    for a in acc.iter_mut() {
        *a = a.sqrt();
    }
    RealImage {
        nx: img.nx,
        ny: img.ny,
        data: acc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(nx: usize, ny: usize, nc: usize, seed: u64) -> ImageVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageVolume::from_fn(nx, ny, nc, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn constant_image_maps_to_center_bin() {
        let img = ImageVolume::from_fn(4, 4, 1, |_, _, _| Complex64::new(1.0, 0.0));
        let k = fft2c(&img);
        for x in 0..4 {
            for y in 0..4 {
                let v = k.get(0, x, y);
                if (x, y) == (2, 2) {
                    assert!((v - Complex64::new(4.0, 0.0)).norm() < 1e-12);
                } else {
                    assert!(v.norm() < 1e-12, "bin ({x},{y}) = {v}");
                }
            }
        }
    }

    #[test]
    fn center_bin_maps_to_constant_image() {
        let mut k = KSpaceVolume::zeros(4, 6, 1);
        k.set(0, 2, 3, Complex64::new(2.0, 0.0));
        let img = ifft2c(&k);
        let expect = 2.0 / (24f64).sqrt();
        for z in img.as_slice() {
            assert!((z - Complex64::new(expect, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn round_trip_and_parseval_32x32x4() {
        let img = random_image(32, 32, 4, 7);
        let k = fft2c(&img);
        assert!((k.norm() - img.norm()).abs() <= 1e-10 * img.norm());
        let back = ifft2c(&k);
        assert!(back.distance(&img) <= 1e-10 * img.norm());
    }

    #[test]
    fn inverse_then_forward_16x16x2() {
        let k = KSpaceVolume::from_fn(16, 16, 2, |c, x, y| {
            Complex64::new((c + x) as f64 * 0.1, (y as f64).sin())
        });
        let img = ifft2c(&k);
        assert!((img.norm() - k.norm()).abs() <= 1e-10 * k.norm());
        assert!(fft2c(&img).distance(&k) <= 1e-10 * k.norm());
    }

    #[test]
    fn odd_extents_round_trip() {
        let img = random_image(5, 7, 2, 3);
        let back = ifft2c(&fft2c(&img));
        assert!(back.distance(&img) <= 1e-12 * img.norm());
    }

    #[test]
    fn sos_single_real_coil_is_abs() {
        let img = ImageVolume::from_fn(3, 3, 1, |_, x, y| Complex64::new(x as f64 - y as f64, 0.0));
        let s = sos(&img);
        for x in 0..3 {
            for y in 0..3 {
                assert_eq!(s.get(x, y), (x as f64 - y as f64).abs());
            }
        }
    }

    #[test]
    fn sos_two_identical_coils() {
        let m = Complex64::from_polar(0.7, 0.3);
        let img = ImageVolume::from_fn(4, 4, 2, |_, _, _| m);
        for v in sos(&img).as_slice() {
            assert!((v - 2f64.sqrt() * 0.7).abs() < 1e-14);
        }
    }

    #[test]
    fn sos_matches_per_pixel_loop() {
        let img = random_image(8, 8, 3, 11);
        let s = sos(&img);
        for x in 0..8 {
            for y in 0..8 {
                let mut acc = 0.0;
                for c in 0..3 {
                    let z = img.get(c, x, y);
                    acc += z.re * z.re + z.im * z.im;
                }
                assert!((s.get(x, y) - acc.sqrt()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn sos_ignores_coil_phase() {
        let img = random_image(6, 5, 3, 5);
        let rotated = ImageVolume::from_fn(6, 5, 3, |c, x, y| {
            img.get(c, x, y) * Complex64::from_polar(1.0, 0.9 * c as f64 + 0.2)
        });
        let a = sos(&img);
        let b = sos(&rotated);
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() < 1e-12);
        }
    }

    #[test]
    fn pack_examples() {
        let f = CMatrix::from_vec(2, 2, vec![Complex64::new(1.0, 2.0); 4]).unwrap();
        let p = pack_channels(&f);
        assert_eq!(p.channels(), 2);
        assert!(p.channel(0).iter().all(|&v| v == 1.0));
        assert!(p.channel(1).iter().all(|&v| v == 2.0));

        let real = CMatrix::from_fn(3, 2, |r, c| Complex64::new((r * c) as f64, 0.0));
        assert!(pack_channels(&real).channel(1).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unpack_rejects_wrong_channel_count() {
        let f = ChannelField::zeros(3, 2, 2);
        assert!(matches!(unpack_channels(&f), Err(HkgmError::Dimension(_))));
    }

    #[test]
    fn volume_rejects_bad_input() {
        assert!(KSpaceVolume::new(0, 2, 1, vec![]).is_err());
        assert!(KSpaceVolume::new(2, 2, 1, vec![Complex64::new(0.0, 0.0); 3]).is_err());
        let mut d = vec![Complex64::new(0.0, 0.0); 4];
        d[2].im = f64::NAN;
        assert!(matches!(
            KSpaceVolume::new(2, 2, 1, d),
            Err(HkgmError::Numerical(_))
        ));
    }

    proptest! {
        #[test]
        fn pack_unpack_is_bit_exact(
            rows in 1usize..6,
            cols in 1usize..6,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = CMatrix::from_fn(rows, cols, |_, _| {
                Complex64::new(rng.random::<f64>() * 1e3 - 5e2, rng.random::<f64>() - 0.5)
            });
            prop_assert_eq!(unpack_channels(&pack_channels(&m)).unwrap(), m);
        }

        #[test]
        fn fft_is_unitary(nx in 1usize..12, ny in 1usize..12, nc in 1usize..3, seed in any::<u64>()) {
            let img = random_image(nx, ny, nc, seed);
            let k = fft2c(&img);
            prop_assert!((k.norm() - img.norm()).abs() <= 1e-10 * img.norm().max(1e-300));
            prop_assert!(ifft2c(&k).distance(&img) <= 1e-10 * img.norm().max(1e-300));
        }
    }
}
