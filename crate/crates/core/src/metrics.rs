//! Full-reference quality metrics (PSNR, SSIM) and dataset-level reports.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{Error, Result};
use crate::imagecore::Image;
use crate::scalar::Scalar;

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Peak signal-to-noise ratio in dB with peak 1.0, MSE over all channels.
///
/// Returns `f64::INFINITY` when the images are identical.
pub fn psnr<T: Scalar>(reference: &Image<T>, candidate: &Image<T>) -> Result<f64> {
    same_dims(reference, candidate)?;
    let n = reference.as_slice().len() as f64;
    let sse: f64 = reference
        .as_slice()
        .iter()
        .zip(candidate.as_slice())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    let mse = sse / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean structural similarity with an 11×11 Gaussian window (σ = 1.5),
/// `K1 = 0.01`, `K2 = 0.03`, dynamic range 1. Only windows fully inside the
/// image contribute; per-channel means are averaged.
pub fn ssim<T: Scalar>(reference: &Image<T>, candidate: &Image<T>) -> Result<f64> {
    same_dims(reference, candidate)?;
    let (h, w, c) = reference.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidPair(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}")));
    }
    let kernel = gaussian_kernel(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);

    let mut total = 0.0;
    for k in 0..c {
        let x: Vec<f64> = (0..h * w).map(|p| reference.as_slice()[p * c + k].as_f64()).collect();
        let y: Vec<f64> = (0..h * w).map(|p| candidate.as_slice()[p * c + k].as_f64()).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a * b).collect();

        let mu_x = filter_valid(&x, h, w, &kernel);
        let mu_y = filter_valid(&y, h, w, &kernel);
        let e_xx = filter_valid(&xx, h, w, &kernel);
        let e_yy = filter_valid(&yy, h, w, &kernel);
        let e_xy = filter_valid(&xy, h, w, &kernel);

        let mut sum = 0.0;
        for i in 0..mu_x.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        }
        total += sum / mu_x.len() as f64;
    }
    Ok(total / c as f64)
}

fn same_dims<T: Scalar>(a: &Image<T>, b: &Image<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::InvalidPair(format!("reference is {:?} but candidate is {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let center = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - center;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" correlation; output is `(h-n+1) × (w-n+1)`.
fn filter_valid(src: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let n = kernel.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            rows[i * ow + j] = kernel.iter().enumerate().map(|(t, kv)| kv * src[i * w + j + t]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = kernel.iter().enumerate().map(|(t, kv)| kv * rows[(i + t) * ow + j]).sum();
        }
    }
    out
}

/// Anything that maps a flash image to a synthetic ambient image.
pub trait Translator<T: Scalar> {
    fn translate(&self, flash: &Image<T>) -> Result<Image<T>>;
}

/// Returns its input; a debugging baseline.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl<T: Scalar> Translator<T> for IdentityTranslator {
    fn translate(&self, flash: &Image<T>) -> Result<Image<T>> {
        Ok(flash.clone())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub pair_id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-pair metrics plus their means, sorted by pair id.
///
/// `mean_psnr` averages the finite per-pair values; identical pairs
/// (infinite PSNR) are counted in `infinite_psnr` instead. If every pair is
/// identical, `mean_psnr` is infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub per_image: Vec<EvalRecord>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub infinite_psnr: usize,
    /// Pairs that could not be evaluated, with the reason.
    pub failures: Vec<(String, String)>,
}

impl EvalReport {
    pub fn from_records(mut per_image: Vec<EvalRecord>, mut failures: Vec<(String, String)>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::EmptySplit("test"));
        }
        per_image.sort_by(|a, b| a.pair_id.cmp(&b.pair_id));
        failures.sort();
        let finite: Vec<f64> = per_image.iter().map(|r| r.psnr_db).filter(|v| v.is_finite()).collect();
        let infinite_psnr = per_image.len() - finite.len();
        if infinite_psnr > 0 {
            warn!("{infinite_psnr} pair(s) reproduced exactly (infinite PSNR); excluded from the PSNR mean");
        }
        let mean_psnr =
            if finite.is_empty() { f64::INFINITY } else { finite.iter().sum::<f64>() / finite.len() as f64 };
        let mean_ssim = per_image.iter().map(|r| r.ssim).sum::<f64>() / per_image.len() as f64;
        Ok(EvalReport { per_image, mean_psnr, mean_ssim, infinite_psnr, failures })
    }

    /// Line-oriented report: a tab-separated record per pair followed by a
    /// `#`-prefixed summary block.
    pub fn to_text(&self) -> String {
        let mut s = String::from("pair_id\tpsnr_db\tssim\n");
        for r in &self.per_image {
            let _ = writeln!(s, "{}\t{}\t{:.4}", r.pair_id, fmt_db(r.psnr_db, 4), r.ssim);
        }
        let _ = writeln!(s, "# summary");
        let _ = writeln!(s, "# count\t{}", self.per_image.len());
        let _ = writeln!(s, "# mean_psnr_db\t{}", fmt_db(self.mean_psnr, 4));
        let _ = writeln!(s, "# mean_ssim\t{:.4}", self.mean_ssim);
        let _ = writeln!(s, "# infinite_psnr\t{}", self.infinite_psnr);
        let _ = writeln!(s, "# failed\t{}", self.failures.len());
        for (id, why) in &self.failures {
            let _ = writeln!(s, "# failed_pair\t{id}\t{}", why.replace(['\t', '\n'], " "));
        }
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    /// Console table in the `Method / PSNR / SSIM` layout.
    pub fn table(&self, method: &str) -> String {
        format_table("Method", &[(method.to_string(), Some((self.mean_psnr, self.mean_ssim)))], None)
    }
}

fn fmt_db(v: f64, decimals: usize) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.decimals$}")
    }
}

/// Renders a three-column metric table; `None` rows are shown as failed.
pub fn format_table(header: &str, rows: &[(String, Option<(f64, f64)>)], footer: Option<&str>) -> String {
    let width = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0).max(header.len()) + 2;
    let rule = "-".repeat(width + 16);
    let mut s = String::new();
    let _ = writeln!(s, "{rule}");
    let _ = writeln!(s, "{header:<width$}{:>7}{:>9}", "PSNR", "SSIM");
    let _ = writeln!(s, "{rule}");
    for (name, vals) in rows {
        match vals {
            Some((p, q)) => {
                let _ = writeln!(s, "{name:<width$}{:>7}{:>9.3}", fmt_db(*p, 2), q);
            }
            None => {
                let _ = writeln!(s, "{name:<width$}{:>7}{:>9}", "failed", "-");
            }
        }
    }
    let _ = writeln!(s, "{rule}");
    if let Some(f) = footer {
        s.push_str(f);
        if !f.ends_with('\n') {
            s.push('\n');
        }
    }
    s
}

/// Scores `model` on every `(pair_id, flash, ambient)` item. Items that fail
/// to load or translate are recorded in `failures` and skipped.
pub fn evaluate_pairs<T, M, I>(pairs: I, model: &M) -> Result<EvalReport>
where
    T: Scalar,
    M: Translator<T> + ?Sized,
    I: IntoIterator<Item = (String, Result<(Image<T>, Image<T>)>)>,
{
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (pair_id, loaded) in pairs {
        let scored = loaded.and_then(|(flash, ambient)| {
            let out = model.translate(&flash)?;
            Ok((psnr(&ambient, &out)?, ssim(&ambient, &out)?))
        });
        match scored {
            Ok((psnr_db, ssim)) => records.push(EvalRecord { pair_id, psnr_db, ssim }),
            Err(e) => {
                warn!("evaluation skipped pair `{pair_id}`: {e}");
                failures.push((pair_id, e.to_string()));
            }
        }
    }
    if records.is_empty() && !failures.is_empty() {
        return Err(Error::Sample {
            pair_id: failures[0].0.clone(),
            source: Box::new(Error::InvalidPair(format!("every pair failed; first: {}", failures[0].1))),
        });
    }
    EvalReport::from_records(records, failures)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise_image(seed: u64, h: usize, w: usize) -> Image<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(h, w, 3, |i, j, k| {
            0.5 + 0.3 * ((i as f64 * 0.3 + k as f64).sin() * (j as f64 * 0.2).cos()) + 0.1 * rng.random::<f64>()
        })
    }

    #[test]
    fn psnr_cases() {
        let a = Image::<f64>::filled(4, 4, 3, 0.25);
        let b = Image::<f64>::filled(4, 4, 3, 0.75);
        assert!((psnr(&a, &b).unwrap() - 6.0206).abs() < 1e-4);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        assert!(psnr(&a, &Image::filled(4, 5, 3, 0.1)).is_err());
    }

    #[test]
    fn psnr_decreases_with_noise_amplitude() {
        let base = Image::<f64>::filled(16, 16, 3, 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pattern: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2, 0.4] {
            let noisy = Image::new(16, 16, 3, pattern.iter().map(|p| 0.5 + amp * p).collect()).unwrap();
            let v = psnr(&base, &noisy).unwrap();
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn ssim_constant_images_match_closed_form() {
        let a = Image::<f64>::filled(12, 12, 3, 0.2);
        let b = Image::<f64>::filled(12, 12, 3, 0.8);
        let c1 = 1e-4;
        let want = (2.0 * 0.16 + c1) / (0.04 + 0.64 + c1);
        assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-6);
        assert!((want - 0.47066).abs() < 1e-5);
    }

    #[test]
    fn ssim_identity_symmetry_and_range() {
        let a = noise_image(1, 24, 20);
        let b = noise_image(2, 24, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let ab = ssim(&a, &b).unwrap();
        assert!((ab - ssim(&b, &a).unwrap()).abs() < 1e-12);
        assert!((-1.0..=1.0).contains(&ab));
        let inverted = Image::new(24, 20, 3, a.as_slice().iter().map(|v| 1.0 - v).collect()).unwrap();
        let neg = ssim(&a, &inverted).unwrap();
        assert!((-1.0..0.0).contains(&neg));
    }

    #[test]
    fn ssim_drops_for_permuted_channels() {
        let a = noise_image(5, 32, 32);
        let mut d = a.as_slice().to_vec();
        for px in d.chunks_exact_mut(3) {
            px.rotate_left(1);
        }
        let b = Image::new(32, 32, 3, d).unwrap();
        assert!(ssim(&a, &b).unwrap() < 1.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Image::<f64>::filled(10, 20, 3, 0.5);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn report_means_and_text() {
        let recs = vec![
            EvalRecord { pair_id: "b".into(), psnr_db: 20.0, ssim: 0.5 },
            EvalRecord { pair_id: "a".into(), psnr_db: 10.0, ssim: 0.7 },
            EvalRecord { pair_id: "c".into(), psnr_db: f64::INFINITY, ssim: 1.0 },
        ];
        let r = EvalReport::from_records(recs, vec![]).unwrap();
        assert_eq!(r.per_image[0].pair_id, "a");
        assert!((r.mean_psnr - 15.0).abs() < 1e-9);
        assert!((r.mean_ssim - 2.2 / 3.0).abs() < 1e-9);
        assert_eq!(r.infinite_psnr, 1);
        let text = r.to_text();
        assert!(text.starts_with("pair_id\tpsnr_db\tssim\na\t10.0000\t0.7000\n"));
        assert!(text.contains("c\tinf\t1.0000"));
        assert!(text.contains("# mean_psnr_db\t15.0000"));
        assert!(r.table("Ours").contains("Ours"));
        assert!(matches!(EvalReport::from_records(vec![], vec![]), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn evaluation_records_failures() {
        let img = Image::<f64>::filled(16, 16, 3, 0.4);
        let pairs = vec![
            ("ok".to_string(), Ok((img.clone(), img.clone()))),
            ("bad".to_string(), Err(Error::InvalidImage("unreadable".into()))),
        ];
        let r = evaluate_pairs(pairs, &IdentityTranslator).unwrap();
        assert_eq!(r.per_image.len(), 1);
        assert_eq!(r.failures.len(), 1);
        assert_eq!(r.mean_psnr, f64::INFINITY);
        assert!((r.mean_ssim - 1.0).abs() < 1e-12);
    }
}
