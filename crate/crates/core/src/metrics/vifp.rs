use super::{filter_valid, gaussian_window, luma255, Plane};
use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

pub const VIFP_MAX_SCALES: usize = 4;
/// Variance of the visual noise channel, in squared grey levels.
pub const VIFP_NOISE_VAR: f64 = 2.0;
const FLOOR: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Vifp {
    pub value: f64,
    /// Scales actually evaluated; fewer than four when the image is small.
    pub scales: usize,
}

/// Pixel-domain visual information fidelity of `b` against reference `a`.
///
/// Not symmetric: the first argument is the reference.
pub fn vifp(a: &Tensor, b: &Tensor) -> Result<f64> {
    vifp_with_scales(a, b).map(|v| v.value)
}

/// Window side at 1-based `scale`: 17, 9, 5, 3.
fn window_side(scale: usize) -> usize {
    (1 << (VIFP_MAX_SCALES + 1 - scale)) + 1
}

pub fn vifp_with_scales(a: &Tensor, b: &Tensor) -> Result<Vifp> {
    if a.shape() != b.shape() {
        return Err(Error::shape("vifp", a.shape(), b.shape()));
    }
    let mut reference = luma255(a)?;
    let mut distorted = luma255(b)?;
    let (mut num, mut den) = (0.0, 0.0);
    let mut scales = 0;
    for scale in 1..=VIFP_MAX_SCALES {
        let n = window_side(scale);
        let win = gaussian_window(n, n as f64 / 5.0);
        if scale > 1 {
            if reference.h.min(reference.w) < n {
                break;
            }
            reference = filter_valid(&reference, &win, n).decimate();
            distorted = filter_valid(&distorted, &win, n).decimate();
        }
        if reference.h.min(reference.w) < n {
            break;
        }
        let (sn, sd) = scale_terms(&reference, &distorted, &win, n);
        num += sn;
        den += sd;
        scales += 1;
    }
    if scales == 0 {
        return Err(Error::ImageTooSmall(format!(
            "vifp needs a side of at least {}",
            window_side(1)
        )));
    }
    // a flat reference carries no information; it is perfectly conveyed only by itself
    let value = if den == 0.0 {
        if num == 0.0 && a.bit_eq(b) {
            1.0
        } else {
            0.0
        }
    } else {
        num / den
    };
    Ok(Vifp { value, scales })
}

fn scale_terms(reference: &Plane, distorted: &Plane, win: &[f64], n: usize) -> (f64, f64) {
    let mu1 = filter_valid(reference, win, n);
    let mu2 = filter_valid(distorted, win, n);
    let e11 = filter_valid(&reference.zip(reference, |x, y| x * y), win, n);
    let e22 = filter_valid(&distorted.zip(distorted, |x, y| x * y), win, n);
    let e12 = filter_valid(&reference.zip(distorted, |x, y| x * y), win, n);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..mu1.data.len() {
        let (m1, m2) = (mu1.data[i], mu2.data[i]);
        let mut s1 = (e11.data[i] - m1 * m1).max(0.0);
        let s2 = (e22.data[i] - m2 * m2).max(0.0);
        let s12 = e12.data[i] - m1 * m2;
        let mut g = s12 / (s1 + FLOOR);
        let mut sv = s2 - g * s12;
        if s1 < FLOOR {
            g = 0.0;
            sv = s2;
            s1 = 0.0;
        }
        if s2 < FLOOR {
            g = 0.0;
            sv = 0.0;
        }
        if g < 0.0 {
            sv = s2;
            g = 0.0;
        }
        if sv <= FLOOR {
            sv = FLOOR;
        }
        num += (1.0 + g * g * s1 / (sv + VIFP_NOISE_VAR)).log10();
        den += (1.0 + s1 / VIFP_NOISE_VAR).log10();
    }
    (num, den)
}
