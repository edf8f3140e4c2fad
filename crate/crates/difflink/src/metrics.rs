//! Image-quality and task-fidelity measurement.
//!
//! MSE, PSNR and SSIM follow their textbook definitions; SSIM uses a
//! Gaussian-weighted window evaluated only at fully interior positions so
//! results are reproducible bit for bit without padding conventions.
//! Nearest-prototype classification is the computable stand-in for "the
//! output meets the prompt": an image counts as on-task when its closest
//! prototype carries the expected concept.

use crate::diffusion::{Latent, MixtureModel};
use crate::error::{Error, Result};

/// PSNR reported for a zero-MSE pair; keeps CSV output finite.
pub const PSNR_CAP_DB: f64 = 120.0;

/// SSIM window and stabilizer constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimParams {
    /// Side of the square Gaussian window; must be odd.
    pub window: usize,
    /// Standard deviation of the window weights.
    pub window_sigma: f64,
    /// Dynamic range of the images.
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams {
            window: 7,
            window_sigma: 1.5,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn c1(&self) -> f64 {
        (0.01 * self.dynamic_range).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (0.03 * self.dynamic_range).powi(2)
    }

    fn weights(&self) -> Vec<f64> {
        let n = self.window;
        let c = (n as f64 - 1.0) / 2.0;
        let mut w = Vec::with_capacity(n * n);
        let mut total = 0.0;
        for y in 0..n {
            for x in 0..n {
                let dy = y as f64 - c;
                let dx = x as f64 - c;
                let v =
                    (-(dx * dx + dy * dy) / (2.0 * self.window_sigma * self.window_sigma)).exp();
                w.push(v);
                total += v;
            }
        }
        for v in w.iter_mut() {
            *v /= total;
        }
        w
    }
}

/// Nearest-prototype classification result.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityVerdict {
    pub concept: String,
    /// Euclidean distance to the winning prototype.
    pub distance: f64,
    /// Runner-up distance minus winner distance; infinite with one prototype.
    pub margin: f64,
}

fn check_dims(a: &Latent, b: &Latent) -> Result<()> {
    if a.dims != b.dims {
        return Err(Error::dimension(format!(
            "images are {}x{} and {}x{}",
            a.dims.width, a.dims.height, b.dims.width, b.dims.height
        )));
    }
    Ok(())
}

/// Mean squared per-pixel difference.
pub fn mse(a: &Latent, b: &Latent) -> Result<f64> {
    check_dims(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Peak signal-to-noise ratio in decibels, capped for identical images.
pub fn psnr(a: &Latent, b: &Latent, dynamic_range: f64) -> Result<f64> {
    if !(dynamic_range > 0.0) {
        return Err(Error::domain("dynamic range must be positive"));
    }
    let err = mse(a, b)?;
    if err < 1e-12 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (dynamic_range * dynamic_range / err).log10())
}

/// Structural similarity: Gaussian-weighted local statistics at every fully
/// interior window position, averaged.
pub fn ssim(a: &Latent, b: &Latent, params: &SsimParams) -> Result<f64> {
    check_dims(a, b)?;
    let (w, h) = (a.dims.width, a.dims.height);
    let n = params.window;
    if n % 2 == 0 || n == 0 {
        return Err(Error::domain(format!("window side {n} must be odd")));
    }
    if n > w || n > h {
        return Err(Error::dimension(format!(
            "{w}x{h} image smaller than {n}x{n} window"
        )));
    }
    let weights = params.weights();
    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for wy in 0..n {
                for wx in 0..n {
                    let wt = weights[wy * n + wx];
                    let i = (y0 + wy) * w + (x0 + wx);
                    mu_a += wt * a.data[i];
                    mu_b += wt * b.data[i];
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for wy in 0..n {
                for wx in 0..n {
                    let wt = weights[wy * n + wx];
                    let i = (y0 + wy) * w + (x0 + wx);
                    let da = a.data[i] - mu_a;
                    let db = b.data[i] - mu_b;
                    var_a += wt * da * da;
                    var_b += wt * db * db;
                    cov += wt * da * db;
                }
            }
            total += (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
                / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Nearest prototype by Euclidean distance, ties broken by concept id order.
pub fn classify(x: &Latent, prototypes: &MixtureModel) -> Result<FidelityVerdict> {
    if x.dims != prototypes.dims() {
        return Err(Error::dimension(format!(
            "image is {}x{}, prototypes are {}x{}",
            x.dims.width,
            x.dims.height,
            prototypes.dims().width,
            prototypes.dims().height
        )));
    }
    let mut scored: Vec<(f64, &str)> = prototypes
        .components()
        .iter()
        .map(|c| {
            let d2: f64 = x
                .data
                .iter()
                .zip(&c.mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (d2.sqrt(), c.concept.as_str())
        })
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(b.1)));
    let (distance, concept) = scored[0];
    let margin = scored
        .get(1)
        .map(|(d, _)| d - distance)
        .unwrap_or(f64::INFINITY);
    Ok(FidelityVerdict {
        concept: concept.to_string(),
        distance,
        margin,
    })
}
