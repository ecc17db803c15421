//! Hankel k-space generative-prior reconstruction for parallel MRI.
//!
//! A score model is trained on patches cropped from the block-Hankel lifting
//! of a single fully sampled multi-coil k-space. Reconstruction alternates
//! predictor-corrector sampling with that model, singular value hard
//! thresholding of the re-lifted k-space and data consistency against the
//! acquired samples. A SAKE-style structured low-rank completion and the
//! zero-filled transform are provided as references.

pub mod error;
pub mod hankel;
pub mod io;
pub mod lowrank;
pub mod mask;
pub mod matrix;
pub mod metrics;
pub mod noise;
pub mod phantom;
pub mod recon;
pub mod score;
pub mod sweep;
pub mod volume;

pub use error::{HkgmError, Result};
pub use hankel::{
    count_multiplicity, extract_patches, lift, lifted_shape, unlift, HankelMatrix, PatchSet,
};
pub use lowrank::{
    hard_threshold, lowrank_project, svd, threshold_matrix, SvdFactors, ThresholdPolicy,
};
pub use mask::{acquire, apply_mask, make_mask, MaskPattern, SamplingMask};
pub use matrix::CMatrix;
pub use metrics::{psnr, ssim, MetricReport};
pub use noise::{GaussianNoise, NoiseSource};
pub use num_complex::Complex64;
pub use phantom::{make_phantom, plane_wave_kspace, PhantomSpec};
pub use recon::{
    reconstruct_hkgm, reconstruct_sake, reconstruct_zero_fill, HkgmConfig, ReconTrace,
};
pub use score::{NoiseSchedule, ScoreFn, ScoreModel, TrainConfig};
pub use volume::{
    fft2c, ifft2c, pack_channels, sos, unpack_channels, ChannelField, ImageVolume, KSpaceVolume,
    RealImage,
};
