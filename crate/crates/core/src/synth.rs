//! Synthetic tabular data with controllable group structure and injected
//! group-dependent label disparity.
//!
//! Features are standard normal. Group membership for each sensitive
//! attribute comes from a Gaussian copula, so attributes can be correlated.
//! Labels follow a logistic model whose intercept is shifted for group `b`
//! of any attribute with a `bias_shift`, and are then flipped with a
//! per-group probability.

use indexmap::IndexMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{FairError, Result};
use crate::model::sigmoid;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    /// Attribute name to the probability of group `b` (value 1).
    pub attributes: IndexMap<String, f64>,
    /// Correlation of each later attribute's latent draw with the first one.
    pub attr_correlation: f64,
    pub class_positive_rate: f64,
    /// Additive logit shift applied to group `b`.
    pub bias_shift: IndexMap<String, f64>,
    /// Label-flip probability for (group a, group b).
    pub flip_rate: IndexMap<String, (f64, f64)>,
    /// Multiplier on the `1/sqrt(d)` scale of the true weights.
    pub signal_scale: f64,
    /// Append one `<attr>_group` indicator column per attribute to the
    /// features.
    pub attributes_as_features: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 1000,
            d: 5,
            attributes: IndexMap::new(),
            attr_correlation: 0.0,
            class_positive_rate: 0.5,
            bias_shift: IndexMap::new(),
            flip_rate: IndexMap::new(),
            signal_scale: 1.0,
            attributes_as_features: true,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 100 {
            return Err(FairError::config(format!(
                "synthetic n must be >= 100, got {}",
                self.n
            )));
        }
        if self.d < 1 {
            return Err(FairError::config("synthetic d must be >= 1"));
        }
        if self.attributes.is_empty() {
            return Err(FairError::config("at least one sensitive attribute is required"));
        }
        for (name, &p) in &self.attributes {
            if !(0.0..=1.0).contains(&p) {
                return Err(FairError::config(format!("marginal of {name} must lie in [0,1]")));
            }
        }
        if !(-1.0..=1.0).contains(&self.attr_correlation) {
            return Err(FairError::config("attr_correlation must lie in [-1,1]"));
        }
        if !(self.class_positive_rate > 0.0 && self.class_positive_rate < 1.0) {
            return Err(FairError::config("class_positive_rate must lie in (0,1)"));
        }
        for (name, &s) in &self.bias_shift {
            if !self.attributes.contains_key(name) || !s.is_finite() {
                return Err(FairError::config(format!(
                    "bias_shift for unknown attribute {name}"
                )));
            }
        }
        for (name, &(a, b)) in &self.flip_rate {
            if !self.attributes.contains_key(name) {
                return Err(FairError::config(format!(
                    "flip_rate for unknown attribute {name}"
                )));
            }
            if !((0.0..0.5).contains(&a) && (0.0..0.5).contains(&b)) {
                return Err(FairError::config(format!(
                    "flip rates of {name} must lie in [0,0.5)"
                )));
            }
        }
        if !(self.signal_scale >= 0.0 && self.signal_scale.is_finite()) {
            return Err(FairError::config("signal_scale must be non-negative"));
        }
        Ok(())
    }
}

pub const PRESETS: [&str; 2] = ["sud-like", "sepsis-like"];

/// Shipped configurations whose class balance and group marginals follow
/// two clinical cohorts, with disparity injected on both attributes.
///
/// Group `b` is the majority race and female sex. Both presets give the race
/// minority a higher outcome risk and the female group a higher risk with
/// noisier labels, and correlate the two attributes mildly, so that fixing
/// one attribute's odds tends to widen the other's gap.
pub fn preset(name: &str) -> Result<SynthConfig> {
    let attrs = |race: f64, sex: f64| -> IndexMap<String, f64> {
        [("race".to_string(), race), ("sex".to_string(), sex)].into()
    };
    match name {
        "sud-like" => Ok(SynthConfig {
            n: 10_673,
            d: 8,
            attributes: attrs(0.897, 0.355),
            attr_correlation: 0.2,
            class_positive_rate: 0.143,
            bias_shift: [("race".to_string(), -1.5), ("sex".to_string(), 1.5)].into(),
            flip_rate: [("sex".to_string(), (0.0, 0.1))].into(),
            signal_scale: 2.0,
            attributes_as_features: true,
            seed: 2024,
        }),
        "sepsis-like" => Ok(SynthConfig {
            n: 9_349,
            d: 8,
            attributes: attrs(0.834, 0.426),
            attr_correlation: 0.2,
            class_positive_rate: 0.165,
            bias_shift: [("race".to_string(), -1.5), ("sex".to_string(), 1.0)].into(),
            flip_rate: [("sex".to_string(), (0.0, 0.1))].into(),
            signal_scale: 1.5,
            attributes_as_features: true,
            seed: 2025,
        }),
        other => Err(FairError::config(format!(
            "unknown preset {other:?}; expected one of {PRESETS:?}"
        ))),
    }
}

/// Maximum distance between the realized and requested positive rate.
pub const CALIBRATION_TOLERANCE: f64 = 0.02;

pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (n, d) = (config.n, config.d);
    let m = config.attributes.len();

    let scale = config.signal_scale / (d as f64).sqrt();
    let true_weights: Vec<f64> = (0..d)
        .map(|_| {
            let w: f64 = StandardNormal.sample(&mut rng);
            scale * w
        })
        .collect();

    let std_normal = Normal::standard();
    let cutoffs: Vec<f64> = config
        .attributes
        .values()
        .map(|&p| std_normal.inverse_cdf(p))
        .collect();
    let rho = config.attr_correlation;
    let rho_c = (1.0 - rho * rho).sqrt();

    let mut features = Vec::with_capacity(n * d);
    let mut groups = vec![Vec::with_capacity(n); m];
    let mut base_logit = Vec::with_capacity(n);
    let mut label_draw = Vec::with_capacity(n);
    let mut flip_draws = vec![Vec::with_capacity(n); m];
    for _ in 0..n {
        let mut logit = 0.0;
        for w in &true_weights {
            let x: f64 = StandardNormal.sample(&mut rng);
            logit += w * x;
            features.push(x);
        }
        let mut first = 0.0;
        for (j, ((name, _), cut)) in config.attributes.iter().zip(&cutoffs).enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            let latent = if j == 0 {
                first = e;
                e
            } else {
                rho * first + rho_c * e
            };
            let z = u8::from(latent < *cut);
            groups[j].push(z);
            if z == 1 {
                logit += config.bias_shift.get(name).copied().unwrap_or(0.0);
            }
        }
        base_logit.push(logit);
        label_draw.push(rng.random::<f64>());
        for draws in flip_draws.iter_mut() {
            draws.push(rng.random::<f64>());
        }
    }

    let flip_rates: Vec<(f64, f64)> = config
        .attributes
        .keys()
        .map(|k| config.flip_rate.get(k).copied().unwrap_or((0.0, 0.0)))
        .collect();
    let flipped: Vec<bool> = (0..n)
        .map(|i| {
            (0..m).fold(false, |acc, j| {
                let (ra, rb) = flip_rates[j];
                let rate = if groups[j][i] == 1 { rb } else { ra };
                acc ^ (flip_draws[j][i] < rate)
            })
        })
        .collect();
    let labels_at = |intercept: f64| -> Vec<u8> {
        (0..n)
            .map(|i| {
                let y = label_draw[i] < sigmoid(base_logit[i] + intercept);
                u8::from(y ^ flipped[i])
            })
            .collect()
    };
    let rate_at = |intercept: f64| -> f64 {
        labels_at(intercept).iter().map(|&y| f64::from(y)).sum::<f64>() / n as f64
    };

    let target = config.class_positive_rate;
    let (mut lo, mut hi) = (-40.0f64, 40.0f64);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let rate = rate_at(mid);
        if (rate - target).abs() < best.0 {
            best = ((rate - target).abs(), mid);
        }
        if rate < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if best.0 > CALIBRATION_TOLERANCE {
        return Err(FairError::Generation(format!(
            "could not calibrate intercept: closest positive rate is {:.4} away from {target}",
            best.0
        )));
    }
    let labels = labels_at(best.1);

    let mut feature_names: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    if config.attributes_as_features {
        let width = d + m;
        let mut widened = Vec::with_capacity(n * width);
        for i in 0..n {
            widened.extend_from_slice(&features[i * d..(i + 1) * d]);
            widened.extend(groups.iter().map(|g| f64::from(g[i])));
        }
        features = widened;
        feature_names.extend(config.attributes.keys().map(|k| format!("{k}_group")));
    }
    let sensitive: IndexMap<String, Vec<u8>> = config.attributes.keys().cloned().zip(groups).collect();
    Dataset::new(feature_names, features, labels, sensitive).map_err(|e| match e {
        FairError::Validation(msg) => {
            FairError::Generation(format!("{msg}; try a larger n or less extreme marginals"))
        }
        other => other,
    })
}
