//! Full-reference image quality metrics.
//!
//! Images are `[h, w, c]` tensors (or `[h, w]` for a single channel) with
//! values in `[0, 1]`. PSNR and SSIM work per channel; VIFP and FSIM work on
//! BT.601 luma rescaled to `[0, 255]`, the scale their constants assume.

mod fsim;
mod ssim;
mod vifp;

pub use fsim::{fsim, FSIM_MIN_SIDE};
pub use ssim::{ssim, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW};
pub use vifp::{vifp, vifp_with_scales, Vifp, VIFP_MAX_SCALES, VIFP_NOISE_VAR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

/// BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// `10 log10(peak^2 / MSE)`, or `+inf` for identical images.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("psnr", a.shape(), b.shape()));
    }
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// All four metrics for one image pair. `a` is the reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Decibels; `+inf` (serialized as `"inf"`) for identical images.
    #[serde(with = "psnr_serde")]
    pub psnr: f64,
    pub ssim: f64,
    /// `None` when the image is too small for a single VIF scale.
    pub vifp: Option<f64>,
    /// Number of scales VIFP could use at this resolution.
    pub vifp_scales: usize,
    /// `None` when the image is under [`FSIM_MIN_SIDE`] or has no phase structure.
    pub fsim: Option<f64>,
}

impl MetricReport {
    pub fn compute(a: &Tensor, b: &Tensor) -> Result<Self> {
        let psnr = psnr(a, b, 1.0)?;
        let ssim = ssim(a, b)?;
        let (vifp, vifp_scales) = match vifp_with_scales(a, b) {
            Ok(v) => (Some(v.value), v.scales),
            Err(Error::ImageTooSmall(_)) => (None, 0),
            Err(e) => return Err(e),
        };
        let fsim = match fsim(a, b) {
            Ok(v) => Some(v),
            Err(Error::ImageTooSmall(_) | Error::Degenerate(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            psnr,
            ssim,
            vifp,
            vifp_scales,
            fsim,
        })
    }
}

mod psnr_serde {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str("inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad psnr value `{t}`"))),
        }
    }
}

/// A single-channel image, row-major.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Plane {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(h: usize, w: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), h * w);
        Self { h, w, data }
    }

    pub fn at(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.w + x]
    }

    pub fn zip(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane::new(self.h, self.w, self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect())
    }

    /// Keeps every second row and column, starting at the first.
    pub fn decimate(&self) -> Plane {
        let (h, w) = (self.h.div_ceil(2), self.w.div_ceil(2));
        let mut data = Vec::with_capacity(h * w);
        for y in 0..h {
            for x in 0..w {
                data.push(self.at(2 * y, 2 * x));
            }
        }
        Plane::new(h, w, data)
    }
}

pub(crate) fn dims(t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w] => Ok((h, w, 1)),
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::InvalidShape {
            shape: t.shape().to_vec(),
            len: t.len(),
        }),
    }
}

pub(crate) fn channel(t: &Tensor, ch: usize) -> Result<Plane> {
    let (h, w, c) = dims(t)?;
    Ok(Plane::new(h, w, t.data().iter().skip(ch).step_by(c).copied().collect()))
}

/// Luma on the `[0, 255]` scale. Single-channel input is taken as luma already.
pub(crate) fn luma255(t: &Tensor) -> Result<Plane> {
    let (h, w, c) = dims(t)?;
    let data = match c {
        1 => t.data().iter().map(|v| v * 255.0).collect(),
        3 => t
            .data()
            .chunks_exact(3)
            .map(|p| 255.0 * (LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]))
            .collect(),
        _ => {
            return Err(Error::InvalidShape {
                shape: t.shape().to_vec(),
                len: t.len(),
            })
        }
    };
    Ok(Plane::new(h, w, data))
}

/// Normalised `n x n` Gaussian with standard deviation `sigma`.
pub(crate) fn gaussian_window(n: usize, sigma: f64) -> Vec<f64> {
    let r = (n as f64 - 1.0) / 2.0;
    let mut k: Vec<f64> = (0..n * n)
        .map(|i| {
            let (y, x) = ((i / n) as f64 - r, (i % n) as f64 - r);
            (-(x * x + y * y) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Correlation with an `n x n` kernel over fully overlapping positions only.
pub(crate) fn filter_valid(p: &Plane, k: &[f64], n: usize) -> Plane {
    let (h, w) = (p.h + 1 - n, p.w + 1 - n);
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in 0..n {
                let row = &p.data[(y + dy) * p.w + x..(y + dy) * p.w + x + n];
                for (v, kv) in row.iter().zip(&k[dy * n..dy * n + n]) {
                    acc += v * kv;
                }
            }
            out[y * w + x] = acc;
        }
    }
    Plane::new(h, w, out)
}
