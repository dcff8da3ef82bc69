use super::{channel, dims, filter_valid, gaussian_window};
use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Mean SSIM over all fully contained Gaussian windows, averaged over channels,
/// for unit dynamic range.
///
/// Images smaller than the 11x11 window use the largest odd window that fits,
/// with the Gaussian width scaled in proportion.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("ssim", a.shape(), b.shape()));
    }
    let (h, w, c) = dims(a)?;
    let side = h.min(w);
    let (n, sigma) = if side >= SSIM_WINDOW {
        (SSIM_WINDOW, SSIM_SIGMA)
    } else {
        let n = if side % 2 == 1 { side } else { side - 1 };
        (n, SSIM_SIGMA * n as f64 / SSIM_WINDOW as f64)
    };
    let k = gaussian_window(n, sigma);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;

    let mut total = 0.0;
    for ch in 0..c {
        let (pa, pb) = (channel(a, ch)?, channel(b, ch)?);
        let mu_a = filter_valid(&pa, &k, n);
        let mu_b = filter_valid(&pb, &k, n);
        let aa = filter_valid(&pa.zip(&pa, |x, y| x * y), &k, n);
        let bb = filter_valid(&pb.zip(&pb, |x, y| x * y), &k, n);
        let ab = filter_valid(&pa.zip(&pb, |x, y| x * y), &k, n);
        let mut acc = 0.0;
        for i in 0..mu_a.data.len() {
            let (ma, mb) = (mu_a.data[i], mu_b.data[i]);
            let va = aa.data[i] - ma * ma;
            let vb = bb.data[i] - mb * mb;
            let cov = ab.data[i] - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += acc / mu_a.data.len() as f64;
    }
    Ok(total / c as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.gen::<f64>())
    }

    /// Window-by-window evaluation straight from the definition.
    fn reference(a: &Tensor, b: &Tensor) -> f64 {
        let (h, w, c) = (a.shape()[0], a.shape()[1], a.shape()[2]);
        let mut g = [[0.0; 11]; 11];
        let mut norm = 0.0;
        for (i, row) in g.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
                *v = (-(dy * dy + dx * dx) / 4.5).exp();
                norm += *v;
            }
        }
        let px = |t: &Tensor, y: usize, x: usize, ch: usize| t.data()[(y * w + x) * c + ch];
        let (c1, c2) = (1e-4, 9e-4);
        let mut per_channel = 0.0;
        for ch in 0..c {
            let mut sum = 0.0;
            let mut count = 0.0;
            for y0 in 0..=h - 11 {
                for x0 in 0..=w - 11 {
                    let (mut ma, mut mb) = (0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wt = g[i][j] / norm;
                            ma += wt * px(a, y0 + i, x0 + j, ch);
                            mb += wt * px(b, y0 + i, x0 + j, ch);
                        }
                    }
                    let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                    for i in 0..11 {
                        for j in 0..11 {
                            let wt = g[i][j] / norm;
                            let da = px(a, y0 + i, x0 + j, ch) - ma;
                            let db = px(b, y0 + i, x0 + j, ch) - mb;
                            va += wt * da * da;
                            vb += wt * db * db;
                            cov += wt * da * db;
                        }
                    }
                    sum += (2.0 * ma * mb + c1) * (2.0 * cov + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                    count += 1.0;
                }
            }
            per_channel += sum / count;
        }
        per_channel / c as f64
    }

    #[test]
    fn identity_is_one() {
        let a = random(&[16, 16, 3], 1);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_black_vs_white() {
        let zero = Tensor::zeros(&[16, 16, 3]);
        let one = Tensor::ones(&[16, 16, 3]);
        let c1 = 1e-4;
        let want = c1 / (1.0 + c1);
        assert!((ssim(&zero, &one).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn matches_window_reference() {
        for seed in 0..3 {
            let a = random(&[16, 16, 3], 10 + seed);
            let b = a.add(&random(&[16, 16, 3], 20 + seed).map(|v| 0.3 * (v - 0.5))).unwrap();
            let got = ssim(&a, &b).unwrap();
            assert!((got - reference(&a, &b)).abs() < 1e-6);
            let c = random(&[16, 16, 3], 30 + seed);
            assert!((ssim(&a, &c).unwrap() - reference(&a, &c)).abs() < 1e-6);
        }
    }

    #[test]
    fn symmetric_and_bounded() {
        let a = random(&[20, 17, 3], 2);
        let b = random(&[20, 17, 3], 3);
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((ab - ba).abs() < 1e-9);
        assert!((-1.0..=1.0).contains(&ab));
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn small_images_use_reduced_window() {
        let a = random(&[6, 8, 1], 4);
        let b = random(&[6, 8, 1], 5);
        let v = ssim(&a, &b).unwrap();
        assert!(v.is_finite() && v < 1.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &Tensor::zeros(&[6, 8, 3])).is_err());
    }
}
