//! Classical denoisers used for comparison: a median filter and non-local
//! means, both with reflection padding at the borders.

use crate::scalar::Scalar;
use crate::tensor::Image;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BaselineError {
    #[error("median window side must be odd, got {k}")]
    EvenWindow { k: usize },
    #[error("search window needs a {need}x{need} image, got {h}x{w}")]
    ImageTooSmall { need: usize, h: usize, w: usize },
    #[error("invalid nl-means config: {reason}")]
    BadConfig { reason: String },
}

/// Index into 0..n with half-sample reflection, so position -1 maps to 0
/// and position n maps to n-1.
fn reflect(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Replaces each pixel with the median of its k-by-k neighborhood.
pub fn median_filter<S: Scalar>(img: &Image<S>, k: usize) -> Result<Image<S>, BaselineError> {
    if k == 0 || k % 2 == 0 {
        return Err(BaselineError::EvenWindow { k });
    }
    let (h, w) = (img.height(), img.width());
    let r = (k / 2) as isize;
    let mut window = Vec::with_capacity(k * k);
    let out = Image::from_fn(h, w, |y, x| {
        window.clear();
        for dy in -r..=r {
            for dx in -r..=r {
                let sy = reflect(y as isize + dy, h);
                let sx = reflect(x as isize + dx, w);
                window.push(img.at(sy, sx));
            }
        }
        let mid = window.len() / 2;
        let (_, median, _) = window.select_nth_unstable_by(mid, |a, b| {
            a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal)
        });
        *median
    });
    Ok(out)
}

/// Non-local means parameters: patches of side 2 patch_radius + 1 compared
/// across a search window of side 2 search_radius + 1, with filtering
/// strength h and an optional noise level subtracted from patch distances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NlMeansConfig {
    pub patch_radius: usize,
    pub search_radius: usize,
    pub h: f64,
    pub sigma_est: f64,
}

impl Default for NlMeansConfig {
    fn default() -> Self {
        NlMeansConfig {
            patch_radius: 3,
            search_radius: 10,
            h: 0.1,
            sigma_est: 0.0,
        }
    }
}

impl NlMeansConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |reason: String| Err(BaselineError::BadConfig { reason });
        if self.patch_radius == 0 {
            return bad("patch radius must be at least 1".into());
        }
        if self.search_radius < self.patch_radius {
            return bad(format!(
                "search radius {} is smaller than patch radius {}",
                self.search_radius, self.patch_radius
            ));
        }
        if !(self.h > 0.0) || !self.h.is_finite() {
            return bad(format!("filtering strength h {} must be positive", self.h));
        }
        if self.sigma_est < 0.0 || !self.sigma_est.is_finite() {
            return bad(format!("sigma estimate {} must be non-negative", self.sigma_est));
        }
        Ok(())
    }

    fn check_size(&self, h: usize, w: usize) -> Result<(), BaselineError> {
        let need = 2 * self.search_radius + 1;
        if h < need || w < need {
            return Err(BaselineError::ImageTooSmall { need, h, w });
        }
        Ok(())
    }
}

fn pad_reflect<S: Scalar>(img: &Image<S>, pad: usize) -> Vec<f64> {
    let (h, w) = (img.height(), img.width());
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![0.0f64; hp * wp];
    for y in 0..hp {
        let sy = reflect(y as isize - pad as isize, h);
        for x in 0..wp {
            let sx = reflect(x as isize - pad as isize, w);
            out[y * wp + x] = img.at(sy, sx).to_f64();
        }
    }
    out
}

fn weight_from_distance(d2: f64, cfg: &NlMeansConfig) -> f64 {
    let adjusted = (d2 - 2.0 * cfg.sigma_est * cfg.sigma_est).max(0.0);
    (-adjusted / (cfg.h * cfg.h)).exp()
}

/// Denoises by averaging search-window pixels weighted by patch similarity:
/// weight exp(-max(d^2 - 2 sigma_est^2, 0) / h^2) with d^2 the mean squared
/// difference between the two patches. Per-offset squared-difference
/// integral images make each patch distance O(1).
pub fn nl_means<S: Scalar>(img: &Image<S>, cfg: &NlMeansConfig) -> Result<Image<S>, BaselineError> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    cfg.check_size(h, w)?;

    let pr = cfg.patch_radius;
    let sr = cfg.search_radius as isize;
    let pad = cfg.search_radius + pr;
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let padded = pad_reflect(img, pad);

    let patch_n = ((2 * pr + 1) * (2 * pr + 1)) as f64;
    let mut num = vec![0.0f64; h * w];
    let mut den = vec![0.0f64; h * w];
    let mut sat = vec![0.0f64; (hp + 1) * (wp + 1)];
    let sat_w = wp + 1;

    for dy in -sr..=sr {
        for dx in -sr..=sr {
            // integral image of the squared difference between the padded
            // image and its (dy, dx) shift; out-of-range cells contribute 0
            // and are never inside a queried patch box
            for y in 0..hp {
                let sy = y as isize + dy;
                let row_ok = (0..hp as isize).contains(&sy);
                let mut row_acc = 0.0;
                for x in 0..wp {
                    let sx = x as isize + dx;
                    let d2 = if row_ok && (0..wp as isize).contains(&sx) {
                        let d = padded[y * wp + x] - padded[sy as usize * wp + sx as usize];
                        d * d
                    } else {
                        0.0
                    };
                    row_acc += d2;
                    sat[(y + 1) * sat_w + (x + 1)] = sat[y * sat_w + (x + 1)] + row_acc;
                }
            }
            for oy in 0..h {
                let py = oy + pad;
                let top = py - pr;
                let bot = py + pr + 1;
                for ox in 0..w {
                    let px = ox + pad;
                    let left = px - pr;
                    let right = px + pr + 1;
                    let box_sum = sat[bot * sat_w + right] - sat[top * sat_w + right]
                        - sat[bot * sat_w + left]
                        + sat[top * sat_w + left];
                    let wgt = weight_from_distance(box_sum / patch_n, cfg);
                    let sy = (py as isize + dy) as usize;
                    let sx = (px as isize + dx) as usize;
                    num[oy * w + ox] += wgt * padded[sy * wp + sx];
                    den[oy * w + ox] += wgt;
                }
            }
        }
    }
    Ok(Image::from_fn(h, w, |y, x| {
        S::from_f64(num[y * w + x] / den[y * w + x])
    }))
}

/// Normalized search-window weights for one output pixel, computed by
/// direct patch loops with no integral-image shortcut. Row-major over
/// (dy, dx) offsets; the weights are non-negative and sum to 1.
pub fn nl_means_weights_at<S: Scalar>(
    img: &Image<S>,
    cfg: &NlMeansConfig,
    y: usize,
    x: usize,
) -> Result<Vec<f64>, BaselineError> {
    cfg.validate()?;
    let (h, w) = (img.height(), img.width());
    cfg.check_size(h, w)?;

    let pr = cfg.patch_radius as isize;
    let sr = cfg.search_radius as isize;
    let pad = cfg.search_radius + cfg.patch_radius;
    let wp = w + 2 * pad;
    let padded = pad_reflect(img, pad);
    let patch_n = ((2 * pr + 1) * (2 * pr + 1)) as f64;

    let py = (y + pad) as isize;
    let px = (x + pad) as isize;
    let mut weights = Vec::with_capacity(((2 * sr + 1) * (2 * sr + 1)) as usize);
    for dy in -sr..=sr {
        for dx in -sr..=sr {
            let mut d2 = 0.0;
            for ey in -pr..=pr {
                for ex in -pr..=pr {
                    let a = padded[((py + ey) as usize) * wp + (px + ex) as usize];
                    let b = padded[((py + dy + ey) as usize) * wp + (px + dx + ex) as usize];
                    d2 += (a - b) * (a - b);
                }
            }
            weights.push(weight_from_distance(d2 / patch_n, cfg));
        }
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    Ok(weights)
}
