//! Per-image metric rows, method means, deterministic CSV emission, and
//! grayscale montage grids.

use denoise_core::metrics::Psnr;
use denoise_core::tensor::Image;

#[derive(Debug, Clone, PartialEq)]
pub struct PerImageRow {
    pub image_id: String,
    pub method: String,
    pub noise_id: String,
    pub ssim: f64,
    pub psnr: Psnr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodMean {
    pub method: String,
    pub mean_ssim: f64,
    pub images: usize,
}

/// Every evaluated (image, method) pair of one run, with the provenance
/// needed to regenerate it. Method means always come from these rows, so
/// the two stay consistent by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultsReport {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<PerImageRow>,
}

impl ResultsReport {
    pub fn new(config_hash: String, seed: u64) -> Self {
        ResultsReport {
            config_hash,
            seed,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, image_id: &str, method: &str, noise_id: &str, ssim: f64, psnr: Psnr) {
        self.rows.push(PerImageRow {
            image_id: image_id.to_string(),
            method: method.to_string(),
            noise_id: noise_id.to_string(),
            ssim,
            psnr,
        });
    }

    /// Means grouped by method, in order of first appearance.
    pub fn method_means(&self) -> Vec<MethodMean> {
        let mut order: Vec<String> = Vec::new();
        for row in &self.rows {
            if !order.contains(&row.method) {
                order.push(row.method.clone());
            }
        }
        order
            .into_iter()
            .map(|method| {
                let scores: Vec<f64> = self
                    .rows
                    .iter()
                    .filter(|r| r.method == method)
                    .map(|r| r.ssim)
                    .collect();
                MethodMean {
                    method,
                    mean_ssim: scores.iter().sum::<f64>() / scores.len() as f64,
                    images: scores.len(),
                }
            })
            .collect()
    }

    pub fn mean_for(&self, method: &str) -> Option<f64> {
        self.method_means()
            .into_iter()
            .find(|m| m.method == method)
            .map(|m| m.mean_ssim)
    }

    fn provenance_header(&self) -> String {
        format!("# config_hash={}\n# seed={}\n", self.config_hash, self.seed)
    }

    pub fn per_image_csv(&self) -> String {
        let mut out = self.provenance_header();
        out.push_str("image_id,method,noise_id,ssim,psnr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.image_id, r.method, r.noise_id, r.ssim, r.psnr
            ));
        }
        out
    }

    pub fn means_csv(&self) -> String {
        let mut out = self.provenance_header();
        out.push_str("method,mean_ssim,images\n");
        for m in self.method_means() {
            out.push_str(&format!("{},{},{}\n", m.method, m.mean_ssim, m.images));
        }
        out
    }
}

/// Tiles equally sized images into a grid, one row per slice entry, with a
/// white gap between cells. Panics if rows are ragged or sizes differ.
pub fn montage(rows: &[Vec<Image<f32>>], gap: usize) -> Image<f32> {
    assert!(!rows.is_empty() && !rows[0].is_empty(), "montage of nothing");
    let cols = rows[0].len();
    let (h, w) = (rows[0][0].height(), rows[0][0].width());
    for row in rows {
        assert_eq!(row.len(), cols, "ragged montage rows");
        for img in row {
            assert_eq!((img.height(), img.width()), (h, w), "mixed image sizes");
        }
    }
    let out_h = rows.len() * h + (rows.len() - 1) * gap;
    let out_w = cols * w + (cols - 1) * gap;
    Image::from_fn(out_h, out_w, |y, x| {
        let (row, ry) = (y / (h + gap), y % (h + gap));
        let (col, rx) = (x / (w + gap), x % (w + gap));
        if ry >= h || rx >= w || row >= rows.len() || col >= cols {
            1.0
        } else {
            rows[row][col].at(ry, rx)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report_with_rows() -> ResultsReport {
        let mut r = ResultsReport::new("abc123".into(), 7);
        r.push("img_0", "noisy", "gauss_p0_1_s1", 0.5, Psnr::Finite(10.0));
        r.push("img_1", "noisy", "gauss_p0_1_s1", 0.7, Psnr::Finite(12.0));
        r.push("img_0", "cnn_dae", "gauss_p0_1_s1", 0.9, Psnr::Infinite);
        r
    }

    #[test]
    fn means_follow_rows() {
        let means = report_with_rows().method_means();
        assert_eq!(means.len(), 2);
        assert_eq!(means[0].method, "noisy");
        assert!((means[0].mean_ssim - 0.6).abs() < 1e-12);
        assert_eq!(means[0].images, 2);
        assert_eq!(means[1].method, "cnn_dae");
        assert_eq!(means[1].images, 1);
    }

    #[test]
    fn csv_bytes_are_stable() {
        let r = report_with_rows();
        assert_eq!(
            r.per_image_csv(),
            "# config_hash=abc123\n# seed=7\nimage_id,method,noise_id,ssim,psnr\n\
             img_0,noisy,gauss_p0_1_s1,0.5,10\nimg_1,noisy,gauss_p0_1_s1,0.7,12\n\
             img_0,cnn_dae,gauss_p0_1_s1,0.9,inf\n"
        );
        assert_eq!(
            r.means_csv(),
            "# config_hash=abc123\n# seed=7\nmethod,mean_ssim,images\n\
             noisy,0.6,2\ncnn_dae,0.9,1\n"
        );
    }

    #[test]
    fn montage_lays_out_a_grid() {
        let black = Image::filled(4, 4, 0.0f32);
        let grey = Image::filled(4, 4, 0.5f32);
        let m = montage(
            &[vec![black.clone(), grey.clone()], vec![grey, black]],
            2,
        );
        assert_eq!((m.height(), m.width()), (10, 10));
        assert_eq!(m.at(0, 0), 0.0);
        assert_eq!(m.at(0, 6), 0.5);
        assert_eq!(m.at(6, 0), 0.5);
        assert_eq!(m.at(6, 6), 0.0);
        assert_eq!(m.at(0, 4), 1.0);
        assert_eq!(m.at(4, 4), 1.0);
    }
}
