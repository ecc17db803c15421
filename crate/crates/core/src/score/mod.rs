//! Score prior: noise schedule, convolutional score network, training and
//! checkpoints.

pub mod checkpoint;
pub mod net;
pub mod schedule;
pub mod train;

pub use checkpoint::{decode_model, encode_model, load_model, save_model};
pub use net::{
    Architecture, Conditioning, Conv3x3, FnScore, GaussianScore, LayerShape, ScheduleParams,
    ScoreFn, ScoreModel, TrainingMeta, ZeroScore,
};
pub use schedule::NoiseSchedule;
pub use train::{dsm_loss, perturb, perturb_with, train, train_fields, TrainConfig};

use crate::error::{dim_err, Result};
use crate::volume::{pack_channels, unpack_channels, KSpaceVolume};

/// Applies `model` to every coil of `k` independently.
pub fn score_volume(model: &dyn ScoreFn, k: &KSpaceVolume, sigma: f64) -> Result<KSpaceVolume> {
    let mut out = Vec::with_capacity(k.as_slice().len());
    for c in 0..k.nc() {
        let s = model.score(&pack_channels(&k.coil_matrix(c)), sigma)?;
        if (s.channels(), s.nx(), s.ny()) != (2, k.nx(), k.ny()) {
            return dim_err(format!(
                "score of shape {}x{}x{} for a {}x{} coil",
                s.channels(),
                s.nx(),
                s.ny(),
                k.nx(),
                k.ny()
            ));
        }
        out.extend_from_slice(unpack_channels(&s)?.as_slice());
    }
    KSpaceVolume::new(k.nx(), k.ny(), k.nc(), out)
}
