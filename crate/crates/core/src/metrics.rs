//! Structural similarity (luminance, contrast, structure components with
//! configurable exponents, global or sliding-window), mean-SSIM over image
//! sets, and PSNR.

use crate::scalar::Scalar;
use crate::tensor::Image;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("images are {xh}x{xw} and {yh}x{yw}")]
    ShapeMismatch {
        xh: usize,
        xw: usize,
        yh: usize,
        yw: usize,
    },
    #[error("empty image")]
    EmptyImage,
    #[error("window side {side} exceeds the {h}x{w} image")]
    WindowTooLarge { side: usize, h: usize, w: usize },
    #[error("invalid ssim config: {reason}")]
    BadConfig { reason: String },
    #[error("structure component {s} is negative and exponent {gamma} is not an integer")]
    NegativePower { s: f64, gamma: f64 },
    #[error("image sets have {x} and {y} entries")]
    CountMismatch { x: usize, y: usize },
    #[error("empty image set")]
    EmptySet,
}

/// Region the SSIM statistics are computed over: the whole image, or every
/// n-by-n window at stride 1 with the per-window scores averaged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SsimWindow {
    Global,
    Uniform { side: usize },
}

/// Numerator convention for the structure component.
///
/// `Normalized` uses (cov + C3)/(sx sy + C3), which is 1 when x == y.
/// `DoubledCovariance` uses (2 cov + C3)/(sx sy + C3); it is not
/// normalizing (identical images score above 1) and exists only for
/// sensitivity checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructureForm {
    #[default]
    Normalized,
    DoubledCovariance,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range L of the pixel values (1 for unit-range images).
    pub dynamic_range: f64,
    pub window: SsimWindow,
    pub structure_form: StructureForm,
}

impl Default for SsimConfig {
    fn default() -> Self {
        SsimConfig {
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
            window: SsimWindow::Uniform { side: 8 },
            structure_form: StructureForm::Normalized,
        }
    }
}

impl SsimConfig {
    pub fn global() -> Self {
        SsimConfig {
            window: SsimWindow::Global,
            ..SsimConfig::default()
        }
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.dynamic_range) * (self.k1 * self.dynamic_range)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.dynamic_range) * (self.k2 * self.dynamic_range)
    }

    pub fn c3(&self) -> f64 {
        self.c2() / 2.0
    }

    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |reason: String| Err(MetricsError::BadConfig { reason });
        if !(self.alpha > 0.0) || !(self.beta > 0.0) || !(self.gamma > 0.0) {
            return bad(format!(
                "exponents must be positive, got alpha {}, beta {}, gamma {}",
                self.alpha, self.beta, self.gamma
            ));
        }
        if !(self.dynamic_range > 0.0) {
            return bad(format!("dynamic range {} must be positive", self.dynamic_range));
        }
        if self.k1 < 0.0 || self.k2 < 0.0 {
            return bad(format!("k1 {} and k2 {} must be non-negative", self.k1, self.k2));
        }
        if let SsimWindow::Uniform { side: 0 } = self.window {
            return bad("window side must be at least 1".into());
        }
        Ok(())
    }
}

/// The three factors of the similarity score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsimComponents {
    pub l: f64,
    pub c: f64,
    pub s: f64,
}

struct RegionStats {
    mu_x: f64,
    mu_y: f64,
    var_x: f64,
    var_y: f64,
    cov: f64,
}

fn components_from_stats(st: &RegionStats, cfg: &SsimConfig) -> SsimComponents {
    let c1 = cfg.c1();
    let c2 = cfg.c2();
    let c3 = cfg.c3();
    // sqrt of the product, never the product of sqrts, so identical images
    // give sigma_x sigma_y == var exactly and s == 1 exactly
    let sigma_product = (st.var_x * st.var_y).sqrt();
    let l = (2.0 * st.mu_x * st.mu_y + c1) / (st.mu_x * st.mu_x + st.mu_y * st.mu_y + c1);
    let c = (2.0 * sigma_product + c2) / (st.var_x + st.var_y + c2);
    let s = match cfg.structure_form {
        StructureForm::Normalized => (st.cov + c3) / (sigma_product + c3),
        StructureForm::DoubledCovariance => (2.0 * st.cov + c3) / (sigma_product + c3),
    };
    SsimComponents { l, c, s }
}

fn window_stats<S: Scalar>(
    x: &Image<S>,
    y: &Image<S>,
    top: usize,
    left: usize,
    wh: usize,
    ww: usize,
) -> RegionStats {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for dy in 0..wh {
        for dx in 0..ww {
            let a = x.at(top + dy, left + dx).to_f64();
            let b = y.at(top + dy, left + dx).to_f64();
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
        }
    }
    let n = (wh * ww) as f64;
    let mu_x = sx / n;
    let mu_y = sy / n;
    // population statistics (divisor N); clamp tiny negative rounding
    RegionStats {
        mu_x,
        mu_y,
        var_x: (sxx / n - mu_x * mu_x).max(0.0),
        var_y: (syy / n - mu_y * mu_y).max(0.0),
        cov: sxy / n - mu_x * mu_y,
    }
}

fn check_pair<S: Scalar>(x: &Image<S>, y: &Image<S>) -> Result<(), MetricsError> {
    if x.height() != y.height() || x.width() != y.width() {
        return Err(MetricsError::ShapeMismatch {
            xh: x.height(),
            xw: x.width(),
            yh: y.height(),
            yw: y.width(),
        });
    }
    if x.height() == 0 || x.width() == 0 {
        return Err(MetricsError::EmptyImage);
    }
    Ok(())
}

/// Luminance, contrast, and structure computed over the whole image.
pub fn ssim_components<S: Scalar>(
    x: &Image<S>,
    y: &Image<S>,
    cfg: &SsimConfig,
) -> Result<SsimComponents, MetricsError> {
    cfg.validate()?;
    check_pair(x, y)?;
    let st = window_stats(x, y, 0, 0, x.height(), x.width());
    Ok(components_from_stats(&st, cfg))
}

fn combine(parts: &SsimComponents, cfg: &SsimConfig) -> Result<f64, MetricsError> {
    let pow = |base: f64, exp: f64| -> Result<f64, MetricsError> {
        if base >= 0.0 {
            Ok(base.powf(exp))
        } else if exp.fract() == 0.0 {
            Ok(base.powi(exp as i32))
        } else {
            Err(MetricsError::NegativePower {
                s: base,
                gamma: exp,
            })
        }
    };
    Ok(pow(parts.l, cfg.alpha)? * pow(parts.c, cfg.beta)? * pow(parts.s, cfg.gamma)?)
}

/// The similarity score l^alpha c^beta s^gamma, either over the whole image
/// or averaged over every sliding window.
pub fn ssim<S: Scalar>(x: &Image<S>, y: &Image<S>, cfg: &SsimConfig) -> Result<f64, MetricsError> {
    cfg.validate()?;
    check_pair(x, y)?;
    match cfg.window {
        SsimWindow::Global => {
            let st = window_stats(x, y, 0, 0, x.height(), x.width());
            combine(&components_from_stats(&st, cfg), cfg)
        }
        SsimWindow::Uniform { side } => {
            let (h, w) = (x.height(), x.width());
            if side > h || side > w {
                return Err(MetricsError::WindowTooLarge { side, h, w });
            }
            let mut total = 0.0;
            let mut count = 0usize;
            for top in 0..=(h - side) {
                for left in 0..=(w - side) {
                    let st = window_stats(x, y, top, left, side, side);
                    total += combine(&components_from_stats(&st, cfg), cfg)?;
                    count += 1;
                }
            }
            Ok(total / count as f64)
        }
    }
}

/// Arithmetic mean of per-pair scores over aligned image sets.
pub fn mean_ssim<S: Scalar>(
    clean: &[Image<S>],
    processed: &[Image<S>],
    cfg: &SsimConfig,
) -> Result<f64, MetricsError> {
    if clean.len() != processed.len() {
        return Err(MetricsError::CountMismatch {
            x: clean.len(),
            y: processed.len(),
        });
    }
    if clean.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut total = 0.0;
    for (a, b) in clean.iter().zip(processed) {
        total += ssim(a, b, cfg)?;
    }
    Ok(total / clean.len() as f64)
}

/// Peak signal-to-noise ratio in decibels, or `Infinite` when the images
/// are identical.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn db(&self) -> Option<f64> {
        match *self {
            Psnr::Finite(v) => Some(v),
            Psnr::Infinite => None,
        }
    }
}

impl std::fmt::Display for Psnr {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Psnr::Finite(v) => write!(f, "{v}"),
            Psnr::Infinite => write!(f, "inf"),
        }
    }
}

/// 10 log10(peak^2 / MSE).
pub fn psnr<S: Scalar>(x: &Image<S>, y: &Image<S>, peak: f64) -> Result<Psnr, MetricsError> {
    check_pair(x, y)?;
    let n = x.data().len() as f64;
    let mut se = 0.0;
    for (&a, &b) in x.data().iter().zip(y.data()) {
        let d = a.to_f64() - b.to_f64();
        se += d * d;
    }
    let mse = se / n;
    if mse == 0.0 {
        Ok(Psnr::Infinite)
    } else {
        Ok(Psnr::Finite(10.0 * (peak * peak / mse).log10()))
    }
}
