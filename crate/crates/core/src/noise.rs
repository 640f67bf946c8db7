//! Seeded stochastic corruption of image datasets: per-pixel Bernoulli
//! selection followed by a Gaussian or Poisson perturbation, plus the
//! preset grid used throughout the experiments.

use crate::rng::Stream;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const SALT_NOISE: u64 = 0x6E6F_6973;

#[derive(Debug, Error, PartialEq)]
pub enum NoiseError {
    #[error("corruption fraction {p} outside [0, 1]")]
    BadFraction { p: f64 },
    #[error("gaussian sigma {sigma} must be non-negative")]
    BadSigma { sigma: f64 },
    #[error("poisson lambda {lambda} must be positive")]
    BadLambda { lambda: f64 },
    #[error("no noise preset with index {index} (have {count})")]
    BadPreset { index: usize, count: usize },
}

/// How a Poisson draw k ~ P(lambda) perturbs a selected pixel.
///
/// `Additive` adds the raw count: clamp(x + k, 0, 1), which drives most
/// corrupted pixels to white. `Substitutive` replaces the pixel with the
/// scaled count k / (lambda + 3 sqrt(lambda)).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoissonMode {
    #[default]
    Additive,
    Substitutive,
}

/// A corruption recipe: each pixel is independently selected with
/// probability `p`, and selected pixels are perturbed. Pixel values are in
/// [0, 1] units, so sigma = 1 already saturates most selected pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum NoiseSpec {
    /// Selected pixels become clamp(x + N(mu, sigma^2), 0, 1).
    Gaussian { p: f64, mu: f64, sigma: f64 },
    /// Selected pixels are perturbed from a Poisson(lambda) count.
    Poisson {
        p: f64,
        lambda: f64,
        #[serde(default)]
        mode: PoissonMode,
    },
}

impl NoiseSpec {
    pub fn gaussian(p: f64, mu: f64, sigma: f64) -> Self {
        NoiseSpec::Gaussian { p, mu, sigma }
    }

    pub fn poisson(p: f64, lambda: f64) -> Self {
        NoiseSpec::Poisson {
            p,
            lambda,
            mode: PoissonMode::Additive,
        }
    }

    pub fn fraction(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { p, .. } | NoiseSpec::Poisson { p, .. } => p,
        }
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        let p = self.fraction();
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(NoiseError::BadFraction { p });
        }
        match *self {
            NoiseSpec::Gaussian { sigma, .. } => {
                if !sigma.is_finite() || sigma < 0.0 {
                    return Err(NoiseError::BadSigma { sigma });
                }
            }
            NoiseSpec::Poisson { lambda, .. } => {
                if !lambda.is_finite() || lambda <= 0.0 {
                    return Err(NoiseError::BadLambda { lambda });
                }
            }
        }
        Ok(())
    }

    /// Short stable identifier used in file names and result tables.
    pub fn id(&self) -> String {
        match *self {
            NoiseSpec::Gaussian { p, mu, sigma } => {
                if mu == 0.0 {
                    format!("gauss_p{}_s{}", compact(p), compact(sigma))
                } else {
                    format!("gauss_p{}_m{}_s{}", compact(p), compact(mu), compact(sigma))
                }
            }
            NoiseSpec::Poisson { p, lambda, mode } => match mode {
                PoissonMode::Additive => format!("poisson_p{}_l{}", compact(p), compact(lambda)),
                PoissonMode::Substitutive => {
                    format!("poisson_sub_p{}_l{}", compact(p), compact(lambda))
                }
            },
        }
    }
}

fn compact(v: f64) -> String {
    format!("{v}").replace('.', "_").replace('-', "n")
}

fn sample_poisson(stream: &mut Stream, lambda: f64) -> u64 {
    // Knuth's product method; fine for the small lambdas used here.
    let limit = (-lambda).exp();
    let mut k = 0u64;
    let mut product = 1.0;
    loop {
        product *= stream.unit_f64();
        if product <= limit {
            return k;
        }
        k += 1;
    }
}

fn perturb(stream: &mut Stream, spec: &NoiseSpec, value: f64) -> f64 {
    let noisy = match *spec {
        NoiseSpec::Gaussian { mu, sigma, .. } => value + mu + sigma * stream.normal(),
        NoiseSpec::Poisson { lambda, mode, .. } => {
            let k = sample_poisson(stream, lambda) as f64;
            match mode {
                PoissonMode::Additive => value + k,
                PoissonMode::Substitutive => k / (lambda + 3.0 * lambda.sqrt()),
            }
        }
    };
    noisy.clamp(0.0, 1.0)
}

/// Corrupts a whole dataset tensor deterministically. Each pixel position
/// gets its own stream keyed by (seed, flat index), so the result does not
/// depend on traversal order, batching, or thread count.
pub fn corrupt<S: Scalar>(
    dataset: &Tensor<S>,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<Tensor<S>, NoiseError> {
    corrupt_with_mask(dataset, spec, seed).map(|(out, _)| out)
}

/// Like [`corrupt`], also returning which pixels were selected. A selected
/// pixel can keep its value (sigma 0, or a Poisson count of 0 at a white
/// pixel), so the mask, not a value diff, records what was corrupted.
pub fn corrupt_with_mask<S: Scalar>(
    dataset: &Tensor<S>,
    spec: &NoiseSpec,
    seed: u64,
) -> Result<(Tensor<S>, Vec<bool>), NoiseError> {
    spec.validate()?;
    let p = spec.fraction();
    let mut out = dataset.clone();
    let mut mask = vec![false; dataset.len()];
    for i in 0..dataset.len() {
        let mut stream = Stream::keyed(seed, SALT_NOISE, i as u64);
        if stream.unit_f64() < p {
            mask[i] = true;
            let v = out.data()[i].to_f64();
            out.data_mut()[i] = S::from_f64(perturb(&mut stream, spec, v));
        }
    }
    Ok((out, mask))
}

/// The six preset corruption settings: gaussian at (p=0.1, sigma=1),
/// (p=0.5, sigma=1), (p=0.2, sigma=2), (p=0.2, sigma=5), and additive
/// poisson at (p=0.2, lambda=1), (p=0.2, lambda=5).
pub fn table1_presets() -> Vec<NoiseSpec> {
    vec![
        NoiseSpec::gaussian(0.1, 0.0, 1.0),
        NoiseSpec::gaussian(0.5, 0.0, 1.0),
        NoiseSpec::gaussian(0.2, 0.0, 2.0),
        NoiseSpec::gaussian(0.2, 0.0, 5.0),
        NoiseSpec::poisson(0.2, 1.0),
        NoiseSpec::poisson(0.2, 5.0),
    ]
}

/// The heavier sigma = 10 condition, kept out of the main presets but
/// available as preset index 6.
pub fn sigma10_spec() -> NoiseSpec {
    NoiseSpec::gaussian(0.2, 0.0, 10.0)
}

/// Presets 0..=5 are [`table1_presets`]; index 6 is [`sigma10_spec`].
pub fn preset_by_index(index: usize) -> Result<NoiseSpec, NoiseError> {
    let presets = table1_presets();
    if index < presets.len() {
        Ok(presets[index])
    } else if index == presets.len() {
        Ok(sigma10_spec())
    } else {
        Err(NoiseError::BadPreset {
            index,
            count: presets.len() + 1,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_dataset(seed: u64, n: usize, side: usize) -> Tensor<f64> {
        let mut s = Stream::keyed(seed, 0x1111, 0);
        Tensor::from_fn([n, side, side, 1], |_, _, _, _| s.range_f64(0.2, 0.8))
    }

    #[test]
    fn zero_fraction_is_identity() {
        let data = test_dataset(1, 2, 16);
        let spec = NoiseSpec::gaussian(0.0, 0.0, 1.0);
        let out = corrupt(&data, &spec, 7).unwrap();
        assert_eq!(out, data);
    }

    #[test]
    fn zero_sigma_keeps_values_but_marks_pixels() {
        let data = test_dataset(2, 2, 16);
        let spec = NoiseSpec::gaussian(1.0, 0.0, 0.0);
        let (out, mask) = corrupt_with_mask(&data, &spec, 7).unwrap();
        assert_eq!(out, data);
        assert!(mask.iter().all(|&m| m));
    }

    #[test]
    fn corruption_is_deterministic_and_seed_sensitive() {
        let data = test_dataset(3, 2, 16);
        let spec = NoiseSpec::gaussian(0.5, 0.0, 1.0);
        let (a, mask_a) = corrupt_with_mask(&data, &spec, 7).unwrap();
        let (b, mask_b) = corrupt_with_mask(&data, &spec, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(mask_a, mask_b);
        let (c, mask_c) = corrupt_with_mask(&data, &spec, 8).unwrap();
        assert_ne!(a, c);
        assert_ne!(mask_a, mask_c);
    }

    #[test]
    fn selected_fraction_matches_p_over_a_large_dataset() {
        // 300 images of 64x64: 1228800 Bernoulli(0.1) trials,
        // SE = sqrt(p (1-p) / n) ~ 2.7e-4, so 0.005 is over 18 SE.
        let data: Tensor<f32> = Tensor::filled([300, 64, 64, 1], 0.5);
        let spec = NoiseSpec::gaussian(0.1, 0.0, 1.0);
        let (_, mask) = corrupt_with_mask(&data, &spec, 99).unwrap();
        let frac = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        assert!((frac - 0.1).abs() < 0.005, "selected fraction {frac}");
    }

    #[test]
    fn unselected_pixels_are_bit_identical() {
        let data = test_dataset(5, 2, 32);
        let spec = NoiseSpec::gaussian(0.3, 0.0, 2.0);
        let (out, mask) = corrupt_with_mask(&data, &spec, 11).unwrap();
        for (i, &m) in mask.iter().enumerate() {
            if !m {
                assert_eq!(out.data()[i], data.data()[i]);
            }
        }
        assert!(mask.iter().any(|&m| m));
        assert!(mask.iter().any(|&m| !m));
    }

    #[test]
    fn output_stays_in_unit_range_for_every_preset() {
        let data = test_dataset(6, 2, 32);
        let mut specs = table1_presets();
        specs.push(sigma10_spec());
        specs.push(NoiseSpec::Poisson {
            p: 1.0,
            lambda: 5.0,
            mode: PoissonMode::Substitutive,
        });
        for spec in specs {
            let out = corrupt(&data, &spec, 13).unwrap();
            assert!(
                out.data().iter().all(|&v| (0.0..=1.0).contains(&v)),
                "range violated by {}",
                spec.id()
            );
        }
    }

    #[test]
    fn gaussian_perturbation_has_the_requested_spread() {
        // small sigma so the clamp never trips: values sit near 0.5
        let data: Tensor<f64> = Tensor::filled([1, 100, 100, 1], 0.5);
        let spec = NoiseSpec::gaussian(1.0, 0.0, 0.05);
        let out = corrupt(&data, &spec, 17).unwrap();
        let n = out.len() as f64;
        let mean: f64 = out.data().iter().sum::<f64>() / n;
        let var: f64 = out
            .data()
            .iter()
            .map(|&v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        // mean SE = sigma / sqrt(n) = 5e-4
        assert!((mean - 0.5).abs() < 2.5e-3, "mean {mean}");
        assert!((var.sqrt() - 0.05).abs() < 0.002, "sd {}", var.sqrt());
    }

    #[test]
    fn large_sigma_saturates_selected_pixels() {
        let data: Tensor<f64> = Tensor::filled([1, 100, 100, 1], 0.5);
        let spec = NoiseSpec::gaussian(1.0, 0.0, 5.0);
        let out = corrupt(&data, &spec, 23).unwrap();
        // P(|N(0, 5)| < 0.5) ~ 0.0797, so over 90% of pixels hit a clamp
        let saturated = out
            .data()
            .iter()
            .filter(|&&v| v == 0.0 || v == 1.0)
            .count() as f64
            / out.len() as f64;
        assert!(saturated > 0.85, "saturated fraction {saturated}");
    }

    #[test]
    fn poisson_counts_have_mean_lambda() {
        let mut stream = Stream::keyed(0, 0x2222, 0);
        let n = 20_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let k = sample_poisson(&mut stream, 5.0) as f64;
            sum += k;
            sum_sq += k * k;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // SE of the mean = sqrt(5/20000) ~ 0.0158
        assert!((mean - 5.0).abs() < 0.08, "mean {mean}");
        assert!((var - 5.0).abs() < 0.35, "var {var}");
    }

    #[test]
    fn additive_poisson_adds_raw_counts() {
        // from 0.5, a count of 0 keeps the pixel and any count >= 1 clamps
        // to white; P(k = 0) = exp(-1) ~ 0.368 for lambda = 1
        let data: Tensor<f64> = Tensor::filled([1, 100, 100, 1], 0.5);
        let spec = NoiseSpec::poisson(1.0, 1.0);
        let out = corrupt(&data, &spec, 19).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5 || v == 1.0));
        let white = out.data().iter().filter(|&&v| v == 1.0).count() as f64 / out.len() as f64;
        let expect = 1.0 - (-1.0f64).exp();
        // SE = sqrt(0.632 * 0.368 / 10000) ~ 0.0048
        assert!((white - expect).abs() < 0.025, "white fraction {white}");
    }

    #[test]
    fn substitutive_poisson_replaces_with_scaled_counts() {
        let data: Tensor<f64> = Tensor::filled([1, 50, 50, 1], 0.37);
        let spec = NoiseSpec::Poisson {
            p: 1.0,
            lambda: 5.0,
            mode: PoissonMode::Substitutive,
        };
        let out = corrupt(&data, &spec, 29).unwrap();
        let scale = 5.0 + 3.0 * 5.0f64.sqrt();
        for &v in out.data() {
            if v < 1.0 {
                let k = v * scale;
                assert!((k - k.round()).abs() < 1e-9, "value {v} is not a scaled count");
            }
        }
    }

    #[test]
    fn presets_match_the_published_grid() {
        let presets = table1_presets();
        assert_eq!(presets.len(), 6);
        assert_eq!(presets[0], NoiseSpec::gaussian(0.1, 0.0, 1.0));
        assert_eq!(presets[1], NoiseSpec::gaussian(0.5, 0.0, 1.0));
        assert_eq!(presets[2], NoiseSpec::gaussian(0.2, 0.0, 2.0));
        assert_eq!(presets[3], NoiseSpec::gaussian(0.2, 0.0, 5.0));
        assert_eq!(presets[4], NoiseSpec::poisson(0.2, 1.0));
        assert_eq!(presets[5], NoiseSpec::poisson(0.2, 5.0));
        assert_eq!(sigma10_spec(), NoiseSpec::gaussian(0.2, 0.0, 10.0));
        assert_eq!(preset_by_index(6).unwrap(), sigma10_spec());
        assert_eq!(
            preset_by_index(7),
            Err(NoiseError::BadPreset { index: 7, count: 7 })
        );
    }

    #[test]
    fn spec_ids_are_distinct_and_stable() {
        let mut ids: Vec<String> = table1_presets().iter().map(|s| s.id()).collect();
        ids.push(sigma10_spec().id());
        assert_eq!(ids[0], "gauss_p0_1_s1");
        assert_eq!(ids[3], "gauss_p0_2_s5");
        assert_eq!(ids[5], "poisson_p0_2_l5");
        let mut unique = ids.clone();
        unique.sort();
        unique.dedup();
        assert_eq!(unique.len(), ids.len());
    }

    #[test]
    fn validation_rejects_bad_parameters_before_sampling() {
        assert!(NoiseSpec::gaussian(-0.1, 0.0, 1.0).validate().is_err());
        assert!(NoiseSpec::gaussian(1.5, 0.0, 1.0).validate().is_err());
        assert!(NoiseSpec::gaussian(0.5, 0.0, -1.0).validate().is_err());
        assert!(NoiseSpec::poisson(0.5, 0.0).validate().is_err());
        assert!(NoiseSpec::poisson(0.5, -2.0).validate().is_err());
        assert!(NoiseSpec::gaussian(0.5, 0.0, f64::NAN).validate().is_err());
        assert!(NoiseSpec::poisson(0.5, 5.0).validate().is_ok());

        let data = test_dataset(9, 1, 4);
        let bad = NoiseSpec::gaussian(2.0, 0.0, 1.0);
        assert_eq!(
            corrupt(&data, &bad, 0),
            Err(NoiseError::BadFraction { p: 2.0 })
        );
    }

    #[test]
    fn specs_round_trip_through_json() {
        for spec in [
            NoiseSpec::gaussian(0.1, 0.0, 1.0),
            NoiseSpec::poisson(0.2, 5.0),
            NoiseSpec::Poisson {
                p: 0.2,
                lambda: 5.0,
                mode: PoissonMode::Substitutive,
            },
        ] {
            let json = serde_json::to_string(&spec).unwrap();
            let back: NoiseSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(back, spec);
        }
        // mode defaults to additive when omitted
        let parsed: NoiseSpec =
            serde_json::from_str(r#"{"type":"poisson","p":0.2,"lambda":5.0}"#).unwrap();
        assert_eq!(parsed, NoiseSpec::poisson(0.2, 5.0));
    }
}
