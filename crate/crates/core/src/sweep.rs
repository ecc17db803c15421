//! Ablation grids over window size, singular-value threshold and patch count.

use std::fmt;
use std::str::FromStr;

use crate::error::{param_err, HkgmError, Result};
use crate::hankel::{extract_patches, lift};
use crate::lowrank::ThresholdPolicy;
use crate::mask::{apply_mask, SamplingMask};
use crate::metrics::{psnr, ssim, MetricReport};
use crate::recon::{reconstruct_hkgm, reconstruct_zero_fill, HkgmConfig};
use crate::score::{train, ScoreModel, TrainConfig};
use crate::volume::{ifft2c, sos, KSpaceVolume};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    Window,
    Threshold,
    Npatch,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::Window => "window",
            SweepAxis::Threshold => "thresh",
            SweepAxis::Npatch => "npatch",
        })
    }
}

impl FromStr for SweepAxis {
    type Err = HkgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "window" => Ok(SweepAxis::Window),
            "thresh" | "threshold" => Ok(SweepAxis::Threshold),
            "npatch" => Ok(SweepAxis::Npatch),
            other => param_err(format!("unknown sweep axis {other:?}")),
        }
    }
}

/// Which stage a window sweep varies.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SweepStage {
    /// Lifting window used to cut training patches.
    #[default]
    Train,
    /// Lifting window of the low-rank projection.
    Recon,
}

impl FromStr for SweepStage {
    type Err = HkgmError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SweepStage::Train),
            "recon" => Ok(SweepStage::Recon),
            other => param_err(format!("unknown sweep stage {other:?}")),
        }
    }
}

pub const TRAIN_WINDOWS: [usize; 3] = [6, 8, 10];
pub const RECON_WINDOWS: [usize; 5] = [2, 4, 6, 8, 10];
pub const THRESHOLDS: [f64; 5] = [0.4, 0.8, 1.2, 1.6, 2.0];

/// Everything shared by the cells of one sweep.
#[derive(Clone, Debug)]
pub struct SweepSetup {
    /// Fully sampled k-space: training data and ground truth.
    pub kspace: KSpaceVolume,
    pub mask: SamplingMask,
    pub recon: HkgmConfig,
    pub train: TrainConfig,
    pub train_window: usize,
    pub patch: usize,
    pub npatch: usize,
    pub patch_seed: u64,
}

impl SweepSetup {
    fn train_model(&self, window: usize, npatch: usize) -> Result<ScoreModel> {
        let h = lift(&self.kspace, window)?;
        let patch = self.patch.min(h.rows()).min(h.cols());
        let patches = extract_patches(&h, patch, npatch, self.patch_seed)?;
        train(&patches, &self.train, &self.recon.schedule)
    }

    fn report(
        &self,
        k: &KSpaceVolume,
        cfg: &HkgmConfig,
        window: usize,
        npatch: usize,
    ) -> Result<MetricReport> {
        let truth = sos(&ifft2c(&self.kspace));
        let img = reconstruct_zero_fill(k);
        let threshold = match cfg.policy {
            ThresholdPolicy::Absolute(t) | ThresholdPolicy::Relative(t) => t,
            ThresholdPolicy::FixedRank(r) => r as f64,
        };
        Ok(MetricReport {
            method: "hkgm".into(),
            pattern: self.mask.pattern.to_string(),
            acceleration: self.mask.acceleration,
            window,
            threshold,
            npatch,
            psnr: psnr(&img, &truth)?,
            ssim: ssim(&img, &truth)?,
        })
    }
}

fn as_count(v: f64, what: &str) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v.is_finite() {
        Ok(v as usize)
    } else {
        param_err(format!("{what} must be a positive integer, got {v}"))
    }
}

/// Runs one reconstruction per value and reports each cell. The `window`
/// column holds the training window for `SweepStage::Train` and the
/// reconstruction window otherwise. Training-window and patch-count sweeps
/// train one model per value; the other axes share a single model.
pub fn run_sweep(
    setup: &SweepSetup,
    axis: SweepAxis,
    values: &[f64],
    stage: SweepStage,
) -> Result<Vec<MetricReport>> {
    if values.is_empty() {
        return param_err("sweep needs at least one value");
    }
    let y = apply_mask(&setup.kspace, &setup.mask)?;
    let shared = match (axis, stage) {
        (SweepAxis::Window, SweepStage::Train) | (SweepAxis::Npatch, _) => None,
        _ => Some(setup.train_model(setup.train_window, setup.npatch)?),
    };
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut cfg = setup.recon.clone();
        let (mut train_window, mut npatch) = (setup.train_window, setup.npatch);
        match (axis, stage) {
            (SweepAxis::Window, SweepStage::Train) => train_window = as_count(v, "window")?,
            (SweepAxis::Window, SweepStage::Recon) => cfg.window = as_count(v, "window")?,
            (SweepAxis::Threshold, _) => cfg.policy = ThresholdPolicy::Absolute(v),
            (SweepAxis::Npatch, _) => npatch = as_count(v, "patch count")?,
        }
        let owned;
        let model = match &shared {
            Some(m) => m,
            None => {
                owned = setup.train_model(train_window, npatch)?;
                &owned
            }
        };
        log::info!("sweep {axis} = {v}");
        let (k, _) = reconstruct_hkgm(&y, &setup.mask, model, &cfg, None)?;
        let window = if stage == SweepStage::Train {
            train_window
        } else {
            cfg.window
        };
        rows.push(setup.report(&k, &cfg, window, npatch)?);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{make_mask, MaskPattern};
    use crate::phantom::{make_phantom, PhantomSpec};
    use crate::score::Architecture;

    fn setup() -> SweepSetup {
        let (_, k) = make_phantom(&PhantomSpec::new(16, 16, 2, 0)).unwrap();
        SweepSetup {
            kspace: k,
            mask: make_mask(MaskPattern::Random2d, 16, 16, 3.0, 0, 0).unwrap(),
            recon: HkgmConfig {
                window: 4,
                ..HkgmConfig::with_steps(2).unwrap()
            },
            train: TrainConfig {
                epochs: 1,
                architecture: Architecture::with_width(4),
                ..TrainConfig::default()
            },
            train_window: 4,
            patch: 8,
            npatch: 4,
            patch_seed: 0,
        }
    }

    #[test]
    fn one_row_per_value() {
        let s = setup();
        let rows = run_sweep(&s, SweepAxis::Threshold, &THRESHOLDS, SweepStage::Train).unwrap();
        assert_eq!(rows.len(), 5);
        let t: Vec<f64> = rows.iter().map(|r| r.threshold).collect();
        assert_eq!(t, THRESHOLDS.to_vec());
        let rows = run_sweep(&s, SweepAxis::Window, &[2.0, 4.0], SweepStage::Recon).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.window).collect::<Vec<_>>(),
            vec![2, 4]
        );
        let rows = run_sweep(&s, SweepAxis::Window, &[2.0, 3.0], SweepStage::Train).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.window).collect::<Vec<_>>(),
            vec![2, 3]
        );
        let rows = run_sweep(&s, SweepAxis::Npatch, &[2.0, 3.0], SweepStage::Train).unwrap();
        assert_eq!(
            rows.iter().map(|r| r.npatch).collect::<Vec<_>>(),
            vec![2, 3]
        );
        assert!(rows
            .iter()
            .all(|r| r.psnr.is_finite() && r.pattern == "random2d"));
    }

    #[test]
    fn rejects_bad_values() {
        let s = setup();
        assert!(run_sweep(&s, SweepAxis::Window, &[2.5], SweepStage::Recon).is_err());
        assert!(run_sweep(&s, SweepAxis::Npatch, &[], SweepStage::Train).is_err());
        assert!("bogus".parse::<SweepAxis>().is_err());
        assert_eq!("thresh".parse::<SweepAxis>().unwrap(), SweepAxis::Threshold);
    }
}
