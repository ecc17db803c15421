use crate::error::{param_err, Result};

/// Geometric variance-exploding noise levels
/// `σ_i = σ_min (σ_max / σ_min)^{i / (N - 1)}`, increasing in `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    sigma_min: f64,
    sigma_max: f64,
    sigmas: Vec<f64>,
}

pub const DEFAULT_SIGMA_MIN: f64 = 0.01;
pub const DEFAULT_SIGMA_MAX: f64 = 1.0;
pub const DEFAULT_LEVELS: usize = 1000;

impl NoiseSchedule {
    /// A single level (`n == 1`) is `σ_max`.
    pub fn geometric(sigma_min: f64, sigma_max: f64, n: usize) -> Result<Self> {
        if !(sigma_min > 0.0 && sigma_min.is_finite() && sigma_max.is_finite()) {
            return param_err(format!(
                "noise levels must be positive and finite, got [{sigma_min}, {sigma_max}]"
            ));
        }
        if n == 0 {
            return param_err("schedule needs at least one level");
        }
        if n > 1 && sigma_max <= sigma_min {
            return param_err(format!(
                "σ_max = {sigma_max} must exceed σ_min = {sigma_min}"
            ));
        }
        let sigmas = if n == 1 {
            vec![sigma_max]
        } else {
            let ratio = sigma_max / sigma_min;
            (0..n)
                .map(|i| {
                    if i == n - 1 {
                        sigma_max
                    } else {
                        sigma_min * ratio.powf(i as f64 / (n - 1) as f64)
                    }
                })
                .collect()
        };
        Ok(NoiseSchedule {
            sigma_min,
            sigma_max,
            sigmas,
        })
    }

    pub fn sigma_min(&self) -> f64 {
        self.sigma_min
    }

    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn sigma(&self, i: usize) -> f64 {
        self.sigmas[i]
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        NoiseSchedule::geometric(DEFAULT_SIGMA_MIN, DEFAULT_SIGMA_MAX, DEFAULT_LEVELS)
            .expect("valid defaults")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let s = NoiseSchedule::default();
        assert_eq!(s.len(), 1000);
        assert_eq!(s.sigma(0), 0.01);
        assert_eq!(s.sigma(999), 1.0);
        assert!(s.sigmas().windows(2).all(|w| w[1] > w[0]));
        let mid = s.sigma(333) / s.sigma(332);
        assert!((mid - 100f64.powf(1.0 / 999.0)).abs() < 1e-12);
    }

    #[test]
    fn invalid() {
        assert!(NoiseSchedule::geometric(0.0, 1.0, 10).is_err());
        assert!(NoiseSchedule::geometric(1.0, 0.5, 10).is_err());
        assert!(NoiseSchedule::geometric(0.1, 1.0, 0).is_err());
        assert_eq!(
            NoiseSchedule::geometric(0.1, 1.0, 1).unwrap().sigmas(),
            &[1.0]
        );
    }
}
