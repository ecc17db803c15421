//! Denoising score matching with hand-written backpropagation and Adam.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{param_err, HkgmError, Result};
use crate::hankel::PatchSet;
use crate::noise::{GaussianNoise, NoiseSource};
use crate::score::net::{Architecture, ScheduleParams, ScoreFn, ScoreModel, TrainingMeta};
use crate::score::schedule::NoiseSchedule;
use crate::volume::{pack_channels, ChannelField};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Scale every training field to unit maximum magnitude.
    pub normalize: bool,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 2,
            beta1: 0.9,
            beta2: 0.999,
            learning_rate: 1e-3,
            epochs: 10,
            seed: 0,
            normalize: true,
            architecture: Architecture::reference(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return param_err("batch size must be at least 1");
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return param_err(format!("{name} must lie in (0, 1), got {b}"));
            }
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return param_err(format!(
                "learning rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        self.architecture.validate()
    }
}

/// `x̃ = x + σ z` with `z` drawn from `noise`. Returns `(x̃, z)`.
pub fn perturb_with(
    x: &ChannelField,
    sigma: f64,
    noise: &mut impl NoiseSource,
) -> (ChannelField, ChannelField) {
    let mut z = ChannelField::zeros(x.channels(), x.nx(), x.ny());
    noise.fill(z.as_mut_slice());
    let mut xt = x.clone();
    for (a, b) in xt.as_mut_slice().iter_mut().zip(z.as_slice()) {
        *a += sigma * b;
    }
    (xt, z)
}

/// Seeded [`perturb_with`].
pub fn perturb(x: &ChannelField, sigma: f64, seed: u64) -> Result<(ChannelField, ChannelField)> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return param_err(format!("noise level must be positive, got {sigma}"));
    }
    Ok(perturb_with(x, sigma, &mut GaussianNoise::new(seed)))
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed derived from the field contents, so each item's noise does not
/// depend on its position in a batch.
fn item_seed(seed: u64, x: &ChannelField) -> u64 {
    let mut h =
        splitmix(seed ^ ((x.channels() as u64) << 48 ^ (x.nx() as u64) << 24 ^ x.ny() as u64));
    for v in x.as_slice() {
        h = splitmix(h ^ v.to_bits());
    }
    h
}

fn sq_norm_sum(a: &ChannelField, b: &ChannelField) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(u, v)| (u + v) * (u + v))
        .sum()
}

/// Mean over the batch of `‖σ s(x̃, σ) + z‖²`, with `σ` drawn uniformly
/// from the schedule for every item.
pub fn dsm_loss(
    model: &dyn ScoreFn,
    batch: &[ChannelField],
    schedule: &NoiseSchedule,
    seed: u64,
) -> Result<f64> {
    if batch.is_empty() {
        return param_err("loss needs a non-empty batch");
    }
    let mut terms = batch
        .iter()
        .map(|x| {
            let mut rng = ChaCha8Rng::seed_from_u64(item_seed(seed, x));
            let sigma = schedule.sigma(rng.random_range(0..schedule.len()));
            let (xt, z) = perturb_with(x, sigma, &mut GaussianNoise::new(rng.random()));
            let mut s = model.score(&xt, sigma)?;
            for v in s.as_mut_slice() {
                *v *= sigma;
            }
            Ok(sq_norm_sum(&s, &z))
        })
        .collect::<Result<Vec<f64>>>()?;
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>() / batch.len() as f64)
}

/// Loss `‖σ s(x̃, σ) + z‖²` of one item and its gradient with respect to
/// every parameter, flattened in checkpoint order.
pub fn loss_and_gradient(
    model: &ScoreModel,
    xt: &ChannelField,
    z: &ChannelField,
    sigma: f64,
) -> (f64, Vec<f32>) {
    let (h, w) = (xt.nx(), xt.ny());
    let act = model.forward_cached(&model.input_for(xt, sigma), h, w);
    let mut loss = 0.0;
    let mut g: Vec<f32> = act
        .output
        .iter()
        .zip(z.as_slice())
        .map(|(&o, &zv)| {
            let r = o as f64 + zv;
            loss += r * r;
            (2.0 * r) as f32
        })
        .collect();
    let mut per_layer = Vec::with_capacity(model.layers.len());
    for l in (0..model.layers.len()).rev() {
        let grad = model.layers[l].backward(&act.inputs[l], &g, h, w);
        if l > 0 {
            g = grad
                .input
                .iter()
                .zip(&act.pre[l - 1])
                .map(|(&gi, &p)| if p > 0.0 { gi } else { 0.0 })
                .collect();
        }
        per_layer.push((grad.weight, grad.bias));
    }
    per_layer.reverse();
    let flat = per_layer
        .into_iter()
        .flat_map(|(w, b)| w.into_iter().chain(b))
        .collect();
    (loss, flat)
}

struct Adam {
    beta1: f64,
    beta2: f64,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const EPS: f64 = 1e-8;

    fn new(cfg: &TrainConfig, n: usize) -> Self {
        Adam {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            lr: cfg.learning_rate,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, model: &mut ScoreModel, grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let params = model
            .layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()));
        for (((p, g), m), v) in params
            .zip(grad)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let update = self.lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
            *p = (*p as f64 - update) as f32;
        }
    }
}

/// Scales `x` so its largest complex magnitude is one.
pub fn normalize_field(x: &ChannelField) -> ChannelField {
    let pixels = x.nx() * x.ny();
    let mut peak = 0.0f64;
    for p in 0..pixels {
        let m: f64 = (0..x.channels())
            .map(|c| x.as_slice()[c * pixels + p].powi(2))
            .sum();
        peak = peak.max(m.sqrt());
    }
    let mut out = x.clone();
    if peak > 0.0 {
        for v in out.as_mut_slice() {
            *v /= peak;
        }
    }
    out
}

/// Exponential smoothing factor of the per-step loss.
const LOSS_EMA: f64 = 0.9;

/// Trains a fresh model on `fields`.
pub fn train_fields(
    fields: &[ChannelField],
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<ScoreModel> {
    cfg.validate()?;
    if fields.is_empty() {
        return param_err("training needs at least one field");
    }
    let fields: Vec<ChannelField> = if cfg.normalize {
        fields.iter().map(normalize_field).collect()
    } else {
        fields.to_vec()
    };
    let params = ScheduleParams {
        sigma_min: schedule.sigma_min(),
        sigma_max: schedule.sigma_max(),
        levels: schedule.len() as u32,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = ScoreModel::init(cfg.architecture.clone(), params, &mut rng)?;
    let initial_loss = dsm_loss(&model, &fields, schedule, cfg.seed)?;
    let mut adam = Adam::new(cfg, model.parameter_count());
    let mut order: Vec<usize> = (0..fields.len()).collect();
    let mut ema = 0.0;
    let mut steps = 0;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut smoothed_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (step, chunk) in order.chunks(cfg.batch).enumerate() {
            let draws: Vec<(f64, u64)> = chunk
                .iter()
                .map(|_| {
                    (
                        schedule.sigma(rng.random_range(0..schedule.len())),
                        rng.random(),
                    )
                })
                .collect();
            let results: Vec<(f64, Vec<f32>)> = chunk
                .par_iter()
                .zip(draws.par_iter())
                .map(|(&i, &(sigma, noise_seed))| {
                    let (xt, z) =
                        perturb_with(&fields[i], sigma, &mut GaussianNoise::new(noise_seed));
                    loss_and_gradient(&model, &xt, &z, sigma)
                })
                .collect();
            let scale = 1.0 / chunk.len() as f64;
            let mut grad = vec![0.0f64; model.parameter_count()];
            let mut loss = 0.0;
            for (l, g) in &results {
                loss += l * scale;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += *v as f64 * scale;
                }
            }
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                let sigmas: Vec<f64> = draws.iter().map(|d| d.0).collect();
                return Err(HkgmError::Training(format!(
                    "loss diverged to {loss} at epoch {epoch}, step {step} (σ = {sigmas:?}, lr = {}, initial loss {initial_loss})",
                    cfg.learning_rate
                )));
            }
            adam.step(&mut model, &grad);
            steps += 1;
            ema = LOSS_EMA * ema + (1.0 - LOSS_EMA) * loss;
            epoch_total += loss * chunk.len() as f64;
        }
        let smoothed = ema / (1.0 - LOSS_EMA.powi(steps));
        let epoch_loss = epoch_total / fields.len() as f64;
        log::debug!("epoch {epoch}: loss {epoch_loss:.4}, smoothed {smoothed:.4}");
        epoch_losses.push(epoch_loss);
        smoothed_losses.push(smoothed);
    }
    model.meta = TrainingMeta {
        seed: cfg.seed,
        epochs: cfg.epochs,
        initial_loss,
        epoch_losses,
        smoothed_losses,
    };
    Ok(model)
}

/// Packs every patch into a two-channel field and trains on the result.
pub fn train(
    patches: &PatchSet,
    cfg: &TrainConfig,
    schedule: &NoiseSchedule,
) -> Result<ScoreModel> {
    let fields: Vec<ChannelField> = patches.patches.iter().map(pack_channels).collect();
    train_fields(&fields, cfg, schedule)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::ConstantNoise;
    use crate::score::net::{GaussianScore, ZeroScore};

    fn random_field(c: usize, n: usize, seed: u64) -> ChannelField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ChannelField::new(
            c,
            n,
            n,
            (0..c * n * n)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect(),
        )
        .unwrap()
    }

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::geometric(0.01, 1.0, 10).unwrap()
    }

    /// `−(x̃ − x)/σ²`: the exact conditional score for one known clean field.
    struct Conditional(ChannelField);

    impl ScoreFn for Conditional {
        fn score(&self, x: &ChannelField, sigma: f64) -> Result<ChannelField> {
            let data = x
                .as_slice()
                .iter()
                .zip(self.0.as_slice())
                .map(|(a, b)| -(a - b) / (sigma * sigma))
                .collect();
            ChannelField::new(x.channels(), x.nx(), x.ny(), data)
        }
    }

    #[test]
    fn perturb_limits_and_seeding() {
        let x = random_field(2, 4, 0);
        let (xt, z) = perturb_with(&x, 1e-12, &mut ConstantNoise(1.0));
        assert!(xt
            .as_slice()
            .iter()
            .zip(x.as_slice())
            .all(|(a, b)| (a - b).abs() < 1e-11));
        assert!(z.as_slice().iter().all(|&v| v == 1.0));
        assert_eq!(perturb(&x, 0.5, 3).unwrap(), perturb(&x, 0.5, 3).unwrap());
        assert!(perturb(&x, 0.0, 3).is_err());
    }

    #[test]
    fn perturb_moments() {
        let x = ChannelField::new(2, 1, 1, vec![0.3, -0.7]).unwrap();
        let sigma = 0.4;
        let n = 10_000;
        let mut noise = GaussianNoise::new(11);
        let (mut s1, mut s2) = ([0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let (xt, _) = perturb_with(&x, sigma, &mut noise);
            for c in 0..2 {
                let d = xt.as_slice()[c] - x.as_slice()[c];
                s1[c] += d;
                s2[c] += d * d;
            }
        }
        for c in 0..2 {
            let mean = s1[c] / n as f64;
            let var = s2[c] / n as f64 - mean * mean;
            let se_mean = sigma / (n as f64).sqrt();
            let se_var = sigma * sigma * (2.0 / n as f64).sqrt();
            assert!(mean.abs() < 3.0 * se_mean, "mean {mean}");
            assert!((var - sigma * sigma).abs() < 3.0 * se_var, "var {var}");
        }
    }

    #[test]
    fn conditional_score_has_zero_loss() {
        let x = random_field(2, 6, 1);
        let loss = dsm_loss(&Conditional(x.clone()), &[x.clone(), x], &schedule(), 4).unwrap();
        assert!(loss < 1e-20, "{loss}");
    }

    #[test]
    fn zero_model_loss_is_field_size() {
        let batch: Vec<ChannelField> = (0..400).map(|i| random_field(2, 5, i)).collect();
        let loss = dsm_loss(&ZeroScore, &batch, &schedule(), 9).unwrap();
        let size = 50.0;
        // ‖z‖² ~ χ²(50): variance 100 per item
        let se = (2.0 * size / batch.len() as f64).sqrt();
        assert!((loss - size).abs() < 3.0 * se, "{loss}");
    }

    #[test]
    fn loss_ignores_batch_order() {
        let batch: Vec<ChannelField> = (0..5).map(|i| random_field(2, 4, i)).collect();
        let mut rev = batch.clone();
        rev.reverse();
        let g = GaussianScore {
            mean: 0.1,
            var: 0.3,
        };
        assert_eq!(
            dsm_loss(&g, &batch, &schedule(), 2).unwrap(),
            dsm_loss(&g, &rev, &schedule(), 2).unwrap()
        );
        assert!(dsm_loss(&g, &[], &schedule(), 2).is_err());
    }

    fn tiny_model(seed: u64) -> ScoreModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ScheduleParams {
            sigma_min: 0.01,
            sigma_max: 1.0,
            levels: 10,
        };
        let mut m = ScoreModel::init(Architecture::with_width(4), params, &mut rng).unwrap();
        for l in m.layers.iter_mut() {
            for b in l.bias.iter_mut() {
                *b = rng.random_range(-0.2..0.2);
            }
        }
        m
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = tiny_model(5);
        let xt = random_field(2, 5, 6);
        let z = random_field(2, 5, 7);
        let (_, grad) = loss_and_gradient(&model, &xt, &z, 0.3);
        let n = model.parameter_count();
        let mut checked = 0;
        for idx in (0..n).step_by(7) {
            let eps = 1e-3f32;
            let bump = |delta: f32| {
                let mut m = model.clone();
                let p = m
                    .layers
                    .iter_mut()
                    .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
                    .nth(idx)
                    .unwrap();
                *p += delta;
                loss_and_gradient(&m, &xt, &z, 0.3).0
            };
            let fd = (bump(eps) - bump(-eps)) / (2.0 * eps as f64);
            let g = grad[idx] as f64;
            assert!(
                (fd - g).abs() < 2e-2 * (1.0 + g.abs()),
                "param {idx}: fd {fd} vs {g}"
            );
            checked += 1;
        }
        assert!(checked > 20);
    }

    #[test]
    fn zero_learning_rate_keeps_weights() {
        let fields: Vec<ChannelField> = (0..4).map(|i| random_field(2, 6, i)).collect();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 1,
            architecture: Architecture::with_width(4),
            ..TrainConfig::default()
        };
        let trained = train_fields(&fields, &cfg, &schedule()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let fresh = ScoreModel::init(cfg.architecture.clone(), trained.schedule, &mut rng).unwrap();
        assert_eq!(trained.layers, fresh.layers);
    }

    #[test]
    fn training_is_deterministic() {
        let fields: Vec<ChannelField> = (0..6).map(|i| random_field(2, 6, i)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            seed: 17,
            architecture: Architecture::with_width(4),
            ..TrainConfig::default()
        };
        let a = train_fields(&fields, &cfg, &schedule()).unwrap();
        let b = train_fields(&fields, &cfg, &schedule()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.meta.epoch_losses.len(), 3);
    }

    #[test]
    fn divergence_is_reported() {
        let fields = vec![random_field(2, 4, 0)];
        let cfg = TrainConfig {
            learning_rate: 1e300,
            epochs: 5,
            architecture: Architecture::with_width(4),
            ..TrainConfig::default()
        };
        match train_fields(&fields, &cfg, &schedule()) {
            Err(HkgmError::Training(msg)) => assert!(msg.contains("epoch")),
            other => panic!("expected a training error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            batch: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            beta2: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn normalization_gives_unit_peak() {
        let x = ChannelField::new(2, 1, 2, vec![3.0, 0.0, 4.0, 1.0]).unwrap();
        let n = normalize_field(&x);
        assert_eq!(n.as_slice(), &[0.6, 0.0, 0.8, 0.2]);
    }
}
