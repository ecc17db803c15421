//! Reconstruction from undersampled multi-coil k-space: the score-prior
//! sampler with low-rank projection and data consistency, a SAKE-style
//! alternating projection, and the zero-filled transform.

use std::fmt::Write as _;

use num_complex::Complex64;

use crate::error::{param_err, HkgmError, Result};
use crate::lowrank::{lowrank_project, ThresholdPolicy};
use crate::mask::SamplingMask;
use crate::metrics::{psnr, ssim};
use crate::noise::{GaussianNoise, NoiseSource};
use crate::score::{score_volume, NoiseSchedule, ScoreFn};
use crate::volume::{ifft2c, sos, KSpaceVolume, RealImage};

#[derive(Clone, Debug, PartialEq)]
pub struct HkgmConfig {
    /// Noise levels; its length is the number of outer iterations.
    pub schedule: NoiseSchedule,
    /// Corrector steps per outer iteration.
    pub inner: usize,
    pub window: usize,
    pub policy: ThresholdPolicy,
    /// Corrector signal-to-noise ratio.
    pub snr: f64,
    /// Data-consistency weight; `f64::INFINITY` replaces sampled entries.
    pub lambda: f64,
    pub seed: u64,
    /// Skip the low-rank projection after the corrector when `inner == 1`.
    pub fast: bool,
    pub trace: bool,
}

impl Default for HkgmConfig {
    fn default() -> Self {
        HkgmConfig {
            schedule: NoiseSchedule::default(),
            inner: 1,
            window: 8,
            policy: ThresholdPolicy::Absolute(0.8),
            snr: 0.075,
            lambda: f64::INFINITY,
            seed: 0,
            fast: false,
            trace: false,
        }
    }
}

impl HkgmConfig {
    /// Default configuration over `n` geometric noise levels in `[0.01, 1]`.
    pub fn with_steps(n: usize) -> Result<Self> {
        Ok(HkgmConfig {
            schedule: NoiseSchedule::geometric(
                crate::score::schedule::DEFAULT_SIGMA_MIN,
                crate::score::schedule::DEFAULT_SIGMA_MAX,
                n,
            )?,
            ..HkgmConfig::default()
        })
    }

    pub fn steps(&self) -> usize {
        self.schedule.len()
    }

    fn validate(&self, k: &KSpaceVolume) -> Result<()> {
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return param_err(format!("corrector SNR must be positive, got {}", self.snr));
        }
        check_lambda(self.lambda)?;
        check_window(k, self.window)?;
        self.policy.validate()
    }
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda.is_nan() || lambda <= 0.0 {
        return param_err(format!(
            "data-consistency weight must be positive, got {lambda}"
        ));
    }
    Ok(())
}

fn check_window(k: &KSpaceVolume, w: usize) -> Result<()> {
    if w == 0 || w > k.nx() || w > k.ny() {
        return param_err(format!(
            "window {w} does not fit a {}x{} grid",
            k.nx(),
            k.ny()
        ));
    }
    Ok(())
}

/// One row of a reconstruction trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    /// Completed outer iterations.
    pub iter: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    /// `‖M k − y‖₂` after data consistency.
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReconTrace {
    pub records: Vec<TraceRecord>,
}

pub const TRACE_HEADER: &str = "iter,psnr,ssim,residual";

impl ReconTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(TRACE_HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{:e}",
                r.iter,
                opt(r.psnr),
                opt(r.ssim),
                r.residual
            )
            .unwrap();
        }
        out
    }

    /// Highest PSNR seen, if a reference was available.
    pub fn best_psnr(&self) -> Option<f64> {
        self.records.iter().filter_map(|r| r.psnr).reduce(f64::max)
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }
}

fn add_scaled_noise(k: &mut KSpaceVolume, scale: f64, noise: &mut dyn NoiseSource) {
    let mut z = vec![0.0; 2 * k.as_slice().len()];
    noise.fill(&mut z);
    for (v, pair) in k.as_mut_slice().iter_mut().zip(z.chunks_exact(2)) {
        *v += Complex64::new(scale * pair[0], scale * pair[1]);
    }
}

/// Reverse-diffusion step from `sigma_hi` down to `sigma_lo`:
/// `k + (σ_hi² − σ_lo²) s(k, σ_hi) + sqrt(σ_hi² − σ_lo²) z`.
pub fn predictor_step(
    k: &KSpaceVolume,
    model: &dyn ScoreFn,
    sigma_lo: f64,
    sigma_hi: f64,
    noise: &mut dyn NoiseSource,
) -> Result<KSpaceVolume> {
    if !(sigma_lo >= 0.0 && sigma_hi > sigma_lo && sigma_hi.is_finite()) {
        return param_err(format!(
            "predictor needs σ_hi > σ_lo ≥ 0, got {sigma_hi} and {sigma_lo}"
        ));
    }
    let delta = sigma_hi * sigma_hi - sigma_lo * sigma_lo;
    let s = score_volume(model, k, sigma_hi)?;
    let mut out = k.clone();
    for (v, g) in out.as_mut_slice().iter_mut().zip(s.as_slice()) {
        *v += g * delta;
    }
    add_scaled_noise(&mut out, delta.sqrt(), noise);
    Ok(out)
}

/// Langevin correction at `sigma`: `k + ε s(k, σ) + sqrt(2ε) z` with
/// `ε = 2 (snr ‖z‖ / ‖s‖)²`. A vanishing score gives `ε = 0`.
pub fn corrector_step(
    k: &KSpaceVolume,
    model: &dyn ScoreFn,
    sigma: f64,
    snr: f64,
    noise: &mut dyn NoiseSource,
) -> Result<KSpaceVolume> {
    if sigma.is_nan() || sigma <= 0.0 {
        return param_err(format!("corrector needs σ > 0, got {sigma}"));
    }
    let s = score_volume(model, k, sigma)?;
    let mut z = vec![0.0; 2 * k.as_slice().len()];
    noise.fill(&mut z);
    let s_norm = s.norm();
    let z_norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let eps = if s_norm > 0.0 {
        2.0 * (snr * z_norm / s_norm).powi(2)
    } else {
        0.0
    };
    let amp = (2.0 * eps).sqrt();
    let mut out = k.clone();
    for ((v, g), pair) in out
        .as_mut_slice()
        .iter_mut()
        .zip(s.as_slice())
        .zip(z.chunks_exact(2))
    {
        *v += g * eps + Complex64::new(amp * pair[0], amp * pair[1]);
    }
    Ok(out)
}

fn check_mask(k: &KSpaceVolume, mask: &SamplingMask) -> Result<()> {
    if (k.nx(), k.ny()) != (mask.nx(), mask.ny()) {
        return crate::error::dim_err(format!(
            "mask {}x{} does not match volume {}x{}",
            mask.nx(),
            mask.ny(),
            k.nx(),
            k.ny()
        ));
    }
    Ok(())
}

/// Sampled entries become `(k + λ y) / (1 + λ)`, or `y` itself when
/// `λ = ∞`; the rest keep `k_lr`.
pub fn data_consistency(
    k_lr: &KSpaceVolume,
    y: &KSpaceVolume,
    mask: &SamplingMask,
    lambda: f64,
) -> Result<KSpaceVolume> {
    k_lr.check_shape(y, "data consistency")?;
    check_mask(k_lr, mask)?;
    check_lambda(lambda)?;
    let mut out = k_lr.clone();
    let plane = k_lr.nx() * k_lr.ny();
    for (i, (v, m)) in out.as_mut_slice().iter_mut().zip(y.as_slice()).enumerate() {
        if mask.grid()[i % plane] {
            *v = if lambda.is_infinite() {
                *m
            } else {
                (*v + m * lambda) / (1.0 + lambda)
            };
        }
    }
    Ok(out)
}

/// `‖M k − y‖₂`.
pub fn residual(k: &KSpaceVolume, y: &KSpaceVolume, mask: &SamplingMask) -> f64 {
    let plane = k.nx() * k.ny();
    k.as_slice()
        .iter()
        .zip(y.as_slice())
        .enumerate()
        .filter(|(i, _)| mask.grid()[i % plane])
        .map(|(_, (a, b))| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// `sos(ifft2c(y))`.
pub fn reconstruct_zero_fill(y: &KSpaceVolume) -> RealImage {
    sos(&ifft2c(y))
}

/// Scale taking `y` to unit maximum magnitude (one for an all-zero `y`).
fn unit_scale(y: &KSpaceVolume) -> f64 {
    let m = y.max_abs();
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

struct Tracer<'a> {
    enabled: bool,
    reference: Option<&'a RealImage>,
    trace: ReconTrace,
}

impl Tracer<'_> {
    fn record(
        &mut self,
        iter: usize,
        k: &KSpaceVolume,
        y: &KSpaceVolume,
        mask: &SamplingMask,
        scale: f64,
    ) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        let (p, s) = match self.reference {
            Some(r) => {
                let img = reconstruct_zero_fill(&k.scaled(scale));
                (Some(psnr(&img, r)?), ssim(&img, r).ok())
            }
            None => (None, None),
        };
        self.trace.records.push(TraceRecord {
            iter,
            psnr: p,
            ssim: s,
            residual: residual(k, y, mask) * scale,
        });
        Ok(())
    }
}

fn ensure_finite(k: &KSpaceVolume, iter: usize, stage: &str) -> Result<()> {
    if !k.is_finite() {
        return Err(HkgmError::Numerical(format!(
            "non-finite k-space after {stage} at iteration {iter}"
        )));
    }
    Ok(())
}

fn ensure_measured(
    k: &KSpaceVolume,
    y: &KSpaceVolume,
    mask: &SamplingMask,
    iter: usize,
) -> Result<()> {
    let plane = k.nx() * k.ny();
    let intact = k
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .enumerate()
        .all(|(i, (a, b))| !mask.grid()[i % plane] || a == b);
    if !intact {
        return Err(HkgmError::Numerical(format!(
            "measured samples altered at iteration {iter}"
        )));
    }
    Ok(())
}

/// Score-prior reconstruction with the seeded Gaussian noise of `cfg`.
pub fn reconstruct_hkgm(
    y: &KSpaceVolume,
    mask: &SamplingMask,
    model: &dyn ScoreFn,
    cfg: &HkgmConfig,
    reference: Option<&RealImage>,
) -> Result<(KSpaceVolume, ReconTrace)> {
    reconstruct_hkgm_with(
        y,
        mask,
        model,
        cfg,
        reference,
        &mut GaussianNoise::new(cfg.seed),
    )
}

/// [`reconstruct_hkgm`] drawing every random number from `noise`.
///
/// `y` is scaled to unit maximum magnitude, the chain starts from
/// `σ_max`-scaled noise, and each outer step runs predictor, low-rank
/// projection and data consistency, then `inner` rounds of corrector,
/// projection and data consistency.
pub fn reconstruct_hkgm_with(
    y: &KSpaceVolume,
    mask: &SamplingMask,
    model: &dyn ScoreFn,
    cfg: &HkgmConfig,
    reference: Option<&RealImage>,
    noise: &mut dyn NoiseSource,
) -> Result<(KSpaceVolume, ReconTrace)> {
    cfg.validate(y)?;
    check_mask(y, mask)?;
    let scale = unit_scale(y);
    let yn = y.scaled(1.0 / scale);
    let hard = cfg.lambda.is_infinite();
    let sigmas = cfg.schedule.sigmas();
    let n = sigmas.len();
    let mut tracer = Tracer {
        enabled: cfg.trace,
        reference,
        trace: ReconTrace::default(),
    };
    let project = |k: &KSpaceVolume| lowrank_project(k, cfg.window, cfg.policy);

    let mut k = KSpaceVolume::zeros(y.nx(), y.ny(), y.nc());
    add_scaled_noise(&mut k, cfg.schedule.sigma_max(), noise);
    for i in (0..n).rev() {
        let iter = n - i;
        let hi = sigmas[i];
        let lo = if i > 0 { sigmas[i - 1] } else { 0.0 };
        k = predictor_step(&k, model, lo, hi, noise)?;
        ensure_finite(&k, iter, "predictor")?;
        k = data_consistency(&project(&k)?, &yn, mask, cfg.lambda)?;
        for _ in 0..cfg.inner {
            let sigma = lo.max(cfg.schedule.sigma_min());
            k = corrector_step(&k, model, sigma, cfg.snr, noise)?;
            ensure_finite(&k, iter, "corrector")?;
            if !(cfg.fast && cfg.inner == 1) {
                k = project(&k)?;
            }
            k = data_consistency(&k, &yn, mask, cfg.lambda)?;
        }
        ensure_finite(&k, iter, "data consistency")?;
        if hard {
            ensure_measured(&k, &yn, mask, iter)?;
        }
        tracer.record(iter, &k, &yn, mask, scale)?;
        log::debug!("hkgm iteration {iter}/{n} at σ = {hi:.4}");
    }
    let mut out = k.scaled(scale);
    if hard {
        out = data_consistency(&out, y, mask, f64::INFINITY)?;
    }
    Ok((out, tracer.trace))
}

pub const SAKE_DEFAULT_ITERS: usize = 100;

/// SAKE-style completion: `k ← DC(lowrank_project(k))` from `k = y`.
pub fn reconstruct_sake(
    y: &KSpaceVolume,
    mask: &SamplingMask,
    window: usize,
    policy: ThresholdPolicy,
    iters: usize,
    reference: Option<&RealImage>,
    trace: bool,
) -> Result<(KSpaceVolume, ReconTrace)> {
    check_window(y, window)?;
    check_mask(y, mask)?;
    policy.validate()?;
    let scale = unit_scale(y);
    let yn = y.scaled(1.0 / scale);
    let mut tracer = Tracer {
        enabled: trace,
        reference,
        trace: ReconTrace::default(),
    };
    let mut k = yn.clone();
    for iter in 1..=iters {
        k = data_consistency(
            &lowrank_project(&k, window, policy)?,
            &yn,
            mask,
            f64::INFINITY,
        )?;
        ensure_finite(&k, iter, "SAKE projection")?;
        ensure_measured(&k, &yn, mask, iter)?;
        tracer.record(iter, &k, &yn, mask, scale)?;
    }
    let out = data_consistency(&k.scaled(scale), y, mask, f64::INFINITY)?;
    Ok((out, tracer.trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{apply_mask, make_mask, MaskPattern};
    use crate::noise::ConstantNoise;
    use crate::score::{GaussianScore, ZeroScore};
    use crate::volume::ChannelField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(nx: usize, ny: usize, nc: usize, seed: u64) -> KSpaceVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        KSpaceVolume::from_fn(nx, ny, nc, |_, _, _| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn predictor_zero_model_zero_noise_is_identity() {
        let k = random_volume(6, 5, 2, 0);
        let out = predictor_step(&k, &ZeroScore, 0.2, 0.5, &mut ConstantNoise(0.0)).unwrap();
        assert_eq!(out, k);
        assert!(predictor_step(&k, &ZeroScore, 0.5, 0.5, &mut ConstantNoise(0.0)).is_err());
    }

    #[test]
    fn predictor_unit_noise_adds_step() {
        let k = random_volume(4, 4, 2, 1);
        let out = predictor_step(&k, &ZeroScore, 0.0, 0.1, &mut ConstantNoise(1.0)).unwrap();
        for (a, b) in out.as_slice().iter().zip(k.as_slice()) {
            assert!((a.re - b.re - 0.1).abs() < 1e-15 && (a.im - b.im - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn predictor_score_term() {
        // s = -(x - 0)/(1 + σ²) at σ_hi = 1: step 0.75 · (-x/2)
        let k = random_volume(3, 3, 1, 2);
        let g = GaussianScore {
            mean: 0.0,
            var: 1.0,
        };
        let out = predictor_step(&k, &g, 0.5, 1.0, &mut ConstantNoise(0.0)).unwrap();
        for (a, b) in out.as_slice().iter().zip(k.as_slice()) {
            assert!((a - b * (1.0 - 0.375)).norm() < 1e-15);
        }
    }

    #[test]
    fn predictor_noise_variance() {
        let k = KSpaceVolume::zeros(100, 50, 1);
        let (lo, hi) = (0.3, 0.5);
        let out = predictor_step(&k, &ZeroScore, lo, hi, &mut GaussianNoise::new(3)).unwrap();
        let n = 2.0 * out.as_slice().len() as f64;
        let var = out
            .as_slice()
            .iter()
            .map(|z| z.re * z.re + z.im * z.im)
            .sum::<f64>()
            / n;
        let expect = hi * hi - lo * lo;
        let se = expect * (2.0 / n).sqrt();
        assert!((var - expect).abs() < 3.0 * se, "{var} vs {expect}");
    }

    #[test]
    fn corrector_zero_score_is_identity() {
        let k = random_volume(5, 5, 2, 3);
        assert_eq!(
            corrector_step(&k, &ZeroScore, 0.1, 0.075, &mut GaussianNoise::new(0)).unwrap(),
            k
        );
    }

    #[test]
    fn corrector_step_size_formula() {
        // constant score 1, z = 1: ‖s‖ = ‖z‖, ε = 2 r², step ε + sqrt(2ε)
        let one = crate::score::FnScore(|x: &ChannelField, _| {
            ChannelField::new(x.channels(), x.nx(), x.ny(), vec![1.0; x.len()]).unwrap()
        });
        let k = random_volume(4, 3, 2, 4);
        let r = 0.075;
        let out = corrector_step(&k, &one, 0.3, r, &mut ConstantNoise(1.0)).unwrap();
        let eps = 2.0 * r * r;
        let step = eps + (2.0 * eps).sqrt();
        for (a, b) in out.as_slice().iter().zip(k.as_slice()) {
            assert!((a - b - Complex64::new(step, step)).norm() < 1e-14);
        }
        // doubling the score halves ε
        let two = crate::score::FnScore(|x: &ChannelField, _| {
            ChannelField::new(x.channels(), x.nx(), x.ny(), vec![2.0; x.len()]).unwrap()
        });
        let out = corrector_step(&k, &two, 0.3, r, &mut ConstantNoise(1.0)).unwrap();
        let eps = 2.0 * (r / 2.0) * (r / 2.0);
        let step = 2.0 * eps + (2.0 * eps).sqrt();
        assert!((out.get(0, 0, 0) - k.get(0, 0, 0) - Complex64::new(step, step)).norm() < 1e-14);
    }

    #[test]
    fn corrector_moves_toward_gaussian_mean() {
        let mu = 0.3;
        let g = GaussianScore {
            mean: mu,
            var: 0.25,
        };
        let mut k = KSpaceVolume::from_fn(64, 64, 4, |_, _, _| Complex64::new(mu + 5.0, mu + 5.0));
        let mut noise = GaussianNoise::new(8);
        let mean_error = |k: &KSpaceVolume| {
            let n = 2.0 * k.as_slice().len() as f64;
            (k.as_slice().iter().map(|z| z.re + z.im).sum::<f64>() / n - mu).abs()
        };
        let mut prev = mean_error(&k);
        for _ in 0..50 {
            k = corrector_step(&k, &g, 0.5, 0.075, &mut noise).unwrap();
            let e = mean_error(&k);
            assert!(e < prev, "{e} !< {prev}");
            prev = e;
        }
        assert!(prev < 5.0);
    }

    fn mask_and_data(seed: u64) -> (SamplingMask, KSpaceVolume, KSpaceVolume) {
        let mask = make_mask(MaskPattern::Random2d, 8, 6, 2.0, 0, seed).unwrap();
        let k = random_volume(8, 6, 2, seed + 1);
        let y = apply_mask(&random_volume(8, 6, 2, seed + 2), &mask).unwrap();
        (mask, k, y)
    }

    #[test]
    fn hard_data_consistency() {
        let (mask, k, y) = mask_and_data(0);
        let out = data_consistency(&k, &y, &mask, f64::INFINITY).unwrap();
        for c in 0..2 {
            for x in 0..8 {
                for j in 0..6 {
                    let want = if mask.is_sampled(x, j) {
                        y.get(c, x, j)
                    } else {
                        k.get(c, x, j)
                    };
                    assert_eq!(out.get(c, x, j), want);
                }
            }
        }
        assert_eq!(residual(&out, &y, &mask), 0.0);
    }

    #[test]
    fn soft_data_consistency() {
        let (mask, k, y) = mask_and_data(1);
        let out = data_consistency(&k, &y, &mask, 1.0).unwrap();
        for (i, (o, (a, b))) in out
            .as_slice()
            .iter()
            .zip(k.as_slice().iter().zip(y.as_slice()))
            .enumerate()
        {
            let want = if mask.grid()[i % 48] {
                (a + b) / 2.0
            } else {
                *a
            };
            assert!((o - want).norm() < 1e-15);
        }
        let empty = SamplingMask::empty(8, 6);
        assert_eq!(data_consistency(&k, &y, &empty, 1.0).unwrap(), k);
        assert!(data_consistency(&k, &y, &mask, 0.0).is_err());
        assert!(data_consistency(&k, &random_volume(8, 6, 3, 0), &mask, 1.0).is_err());
    }

    #[test]
    fn zero_fill_basics() {
        let k = random_volume(8, 8, 3, 5);
        assert_eq!(reconstruct_zero_fill(&k), sos(&ifft2c(&k)));
        let z = reconstruct_zero_fill(&KSpaceVolume::zeros(4, 4, 2));
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        let single = random_volume(8, 8, 1, 6);
        let a = reconstruct_zero_fill(&single);
        let b = reconstruct_zero_fill(&single.scaled(3.0));
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((3.0 * u - v).abs() < 1e-12);
        }
    }

    fn small_cfg(n: usize, inner: usize) -> HkgmConfig {
        HkgmConfig {
            inner,
            window: 3,
            trace: true,
            ..HkgmConfig::with_steps(n).unwrap()
        }
    }

    #[test]
    fn full_mask_returns_measurements() {
        let y = random_volume(8, 8, 2, 7);
        let mask = SamplingMask::full(8, 8);
        let truth = reconstruct_zero_fill(&y);
        let (k, trace) =
            reconstruct_hkgm(&y, &mask, &ZeroScore, &small_cfg(3, 1), Some(&truth)).unwrap();
        assert_eq!(k, y);
        assert_eq!(trace.len(), 3);
        assert!(trace
            .records
            .iter()
            .all(|r| r.residual == 0.0 && r.psnr.unwrap() > 99.0 - 1e-9));
        let (k, _) =
            reconstruct_sake(&y, &mask, 3, ThresholdPolicy::FixedRank(2), 1, None, false).unwrap();
        assert_eq!(k, y);
    }

    #[test]
    fn single_step_is_projection_then_consistency() {
        let (mask, _, y) = mask_and_data(3);
        let cfg = HkgmConfig {
            policy: ThresholdPolicy::FixedRank(3),
            ..small_cfg(1, 0)
        };
        let init = random_volume(8, 6, 2, 11);
        // the chain starts from σ_max·z with z replayed from this stream
        let draws: Vec<f64> = init.as_slice().iter().flat_map(|z| [z.re, z.im]).collect();
        struct Replay(Vec<f64>, usize);
        impl NoiseSource for Replay {
            fn fill(&mut self, out: &mut [f64]) {
                for v in out.iter_mut() {
                    *v = self.0.get(self.1).copied().unwrap_or(0.0);
                    self.1 += 1;
                }
            }
        }
        let scale = y.max_abs();
        let (k, _) =
            reconstruct_hkgm_with(&y, &mask, &ZeroScore, &cfg, None, &mut Replay(draws, 0))
                .unwrap();
        let expect = data_consistency(
            &lowrank_project(&init, 3, cfg.policy).unwrap().scaled(scale),
            &y,
            &mask,
            f64::INFINITY,
        )
        .unwrap();
        assert!(k.distance(&expect) < 1e-12 * expect.norm());
    }

    #[test]
    fn measured_entries_are_exact() {
        let (mask, _, y) = mask_and_data(4);
        let g = GaussianScore {
            mean: 0.0,
            var: 0.5,
        };
        let (k, trace) = reconstruct_hkgm(&y, &mask, &g, &small_cfg(4, 1), None).unwrap();
        assert_eq!(residual(&k, &y, &mask), 0.0);
        assert!(trace
            .records
            .iter()
            .all(|r| r.residual == 0.0 && r.psnr.is_none()));
        assert!(trace
            .to_csv()
            .starts_with("iter,psnr,ssim,residual\n1,,,0e0\n"));
    }

    #[test]
    fn seeded_reconstruction_repeats() {
        let (mask, _, y) = mask_and_data(5);
        let g = GaussianScore {
            mean: 0.0,
            var: 0.5,
        };
        let cfg = small_cfg(3, 1);
        let a = reconstruct_hkgm(&y, &mask, &g, &cfg, None).unwrap().0;
        let b = reconstruct_hkgm(&y, &mask, &g, &cfg, None).unwrap().0;
        assert_eq!(a, b);
    }

    #[test]
    fn sake_zero_iterations_is_input() {
        let (mask, _, y) = mask_and_data(6);
        let (k, trace) =
            reconstruct_sake(&y, &mask, 3, ThresholdPolicy::FixedRank(2), 0, None, true).unwrap();
        assert_eq!(k, y);
        assert!(trace.is_empty());
    }

    #[test]
    fn rejects_bad_configs() {
        let (mask, _, y) = mask_and_data(7);
        let mut cfg = small_cfg(2, 1);
        cfg.window = 9;
        assert!(reconstruct_hkgm(&y, &mask, &ZeroScore, &cfg, None).is_err());
        cfg.window = 3;
        cfg.snr = 0.0;
        assert!(reconstruct_hkgm(&y, &mask, &ZeroScore, &cfg, None).is_err());
        let wrong = SamplingMask::full(6, 8);
        assert!(
            reconstruct_sake(&y, &wrong, 3, ThresholdPolicy::FixedRank(2), 1, None, false).is_err()
        );
    }
}
