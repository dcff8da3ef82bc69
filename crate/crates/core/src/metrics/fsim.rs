use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::{luma255, Plane};
use crate::error::{Error, Result};
use crate::ndtensor::Tensor;

/// Smallest side accepted by [`fsim`].
pub const FSIM_MIN_SIDE: usize = 32;

const T1: f64 = 0.85;
/// Gradient constant for the 0..255 grey scale, i.e. `160 / 255^2` at unit range.
const T2: f64 = 160.0;

const NSCALE: usize = 4;
const NORIENT: usize = 4;
const MIN_WAVELENGTH: f64 = 6.0;
const MULT: f64 = 2.0;
const SIGMA_ON_F: f64 = 0.55;
const D_THETA_ON_SIGMA: f64 = 1.2;
const NOISE_K: f64 = 2.0;
const EPSILON: f64 = 1e-4;
const LOWPASS_CUTOFF: f64 = 0.45;
const LOWPASS_ORDER: i32 = 15;
/// Amplitude sums below this are treated as featureless.
const AMPLITUDE_FLOOR: f64 = 1e-8;

/// Feature similarity of the luma channels of `a` and `b`.
///
/// Combines phase congruency (log-Gabor bank, 4 scales x 4 orientations) with
/// Scharr gradient magnitude, weighted by the larger phase congruency.
pub fn fsim(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::shape("fsim", a.shape(), b.shape()));
    }
    let (ya, yb) = (luma255(a)?, luma255(b)?);
    if ya.h.min(ya.w) < FSIM_MIN_SIDE {
        return Err(Error::ImageTooSmall(format!(
            "fsim needs a side of at least {FSIM_MIN_SIDE}, got {}x{}",
            ya.h, ya.w
        )));
    }
    let factor = ((ya.h.min(ya.w) as f64 / 256.0).round() as usize).max(1);
    let (ya, yb) = (box_downsample(&ya, factor), box_downsample(&yb, factor));

    let (pc1, pc2) = (phase_congruency(&ya), phase_congruency(&yb));
    let (g1, g2) = (scharr_magnitude(&ya), scharr_magnitude(&yb));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..pc1.data.len() {
        let (p1, p2) = (pc1.data[i], pc2.data[i]);
        let (m1, m2) = (g1.data[i], g2.data[i]);
        let s_pc = (2.0 * p1 * p2 + T1) / (p1 * p1 + p2 * p2 + T1);
        let s_g = (2.0 * m1 * m2 + T2) / (m1 * m1 + m2 * m2 + T2);
        let pcm = p1.max(p2);
        num += s_pc * s_g * pcm;
        den += pcm;
    }
    if den == 0.0 {
        return Err(Error::Degenerate("fsim: neither image has phase structure".into()));
    }
    Ok(num / den)
}

/// Box average over `factor x factor` blocks centred like a same-size
/// convolution with zero padding, then every `factor`-th sample.
fn box_downsample(p: &Plane, factor: usize) -> Plane {
    if factor == 1 {
        return p.clone();
    }
    let off = factor / 2;
    let (h, w) = (p.h.div_ceil(factor), p.w.div_ceil(factor));
    let mut data = Vec::with_capacity(h * w);
    for y in (0..p.h).step_by(factor) {
        for x in (0..p.w).step_by(factor) {
            let mut acc = 0.0;
            for dy in 0..factor {
                for dx in 0..factor {
                    let (yy, xx) = ((y + off) as isize - dy as isize, (x + off) as isize - dx as isize);
                    if yy >= 0 && xx >= 0 && (yy as usize) < p.h && (xx as usize) < p.w {
                        acc += p.at(yy as usize, xx as usize);
                    }
                }
            }
            data.push(acc / (factor * factor) as f64);
        }
    }
    Plane::new(h, w, data)
}

fn scharr_magnitude(p: &Plane) -> Plane {
    const DX: [[f64; 3]; 3] = [[3.0, 0.0, -3.0], [10.0, 0.0, -10.0], [3.0, 0.0, -3.0]];
    let get = |y: isize, x: isize| {
        if y < 0 || x < 0 || y as usize >= p.h || x as usize >= p.w {
            0.0
        } else {
            p.at(y as usize, x as usize)
        }
    };
    let mut data = Vec::with_capacity(p.h * p.w);
    for y in 0..p.h as isize {
        for x in 0..p.w as isize {
            let (mut gx, mut gy) = (0.0, 0.0);
            for i in 0..3 {
                for j in 0..3 {
                    let v = get(y + i as isize - 1, x + j as isize - 1);
                    gx += DX[i][j] * v;
                    gy += DX[j][i] * v;
                }
            }
            data.push((gx * gx + gy * gy).sqrt() / 16.0);
        }
    }
    Plane::new(p.h, p.w, data)
}

/// Frequency coordinate of FFT bin `k` out of `n`, in cycles per sample,
/// normalised so the extreme bins sit at +-0.5.
fn frequency(k: usize, n: usize) -> f64 {
    let signed = if k < n.div_ceil(2) { k as f64 } else { k as f64 - n as f64 };
    let span = if n % 2 == 1 { (n - 1).max(1) } else { n };
    signed / span as f64
}

struct Fft2 {
    rows: usize,
    cols: usize,
    planner: FftPlanner<f64>,
}

impl Fft2 {
    fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            planner: FftPlanner::new(),
        }
    }

    /// In-place 2D transform; the inverse is scaled by `1 / (rows * cols)`.
    fn run(&mut self, buf: &mut [Complex<f64>], inverse: bool) {
        let (rows, cols) = (self.rows, self.cols);
        let row_fft = if inverse {
            self.planner.plan_fft_inverse(cols)
        } else {
            self.planner.plan_fft_forward(cols)
        };
        row_fft.process(buf);
        let col_fft = if inverse {
            self.planner.plan_fft_inverse(rows)
        } else {
            self.planner.plan_fft_forward(rows)
        };
        let mut column = vec![Complex::new(0.0, 0.0); rows];
        for c in 0..cols {
            for r in 0..rows {
                column[r] = buf[r * cols + c];
            }
            col_fft.process(&mut column);
            for r in 0..rows {
                buf[r * cols + c] = column[r];
            }
        }
        if inverse {
            let k = 1.0 / (rows * cols) as f64;
            buf.iter_mut().for_each(|v| *v *= k);
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    let mid = n / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Phase congruency map with values in `[0, 1]`.
pub(crate) fn phase_congruency(p: &Plane) -> Plane {
    let (rows, cols) = (p.h, p.w);
    let n = rows * cols;
    let mut fft = Fft2::new(rows, cols);
    let mut spectrum: Vec<Complex<f64>> = p.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft.run(&mut spectrum, false);

    let mut radius = vec![0.0; n];
    let mut theta = vec![0.0; n];
    for r in 0..rows {
        let fy = frequency(r, rows);
        for c in 0..cols {
            let fx = frequency(c, cols);
            radius[r * cols + c] = (fx * fx + fy * fy).sqrt();
            theta[r * cols + c] = (-fy).atan2(fx);
        }
    }
    let lowpass: Vec<f64> = radius
        .iter()
        .map(|&rad| 1.0 / (1.0 + (rad / LOWPASS_CUTOFF).powi(2 * LOWPASS_ORDER)))
        .collect();
    radius[0] = 1.0;

    let log_gabor: Vec<Vec<f64>> = (0..NSCALE)
        .map(|s| {
            let fo = 1.0 / (MIN_WAVELENGTH * MULT.powi(s as i32));
            let denom = 2.0 * SIGMA_ON_F.ln().powi(2);
            let mut lg: Vec<f64> = radius
                .iter()
                .zip(&lowpass)
                .map(|(&rad, &lp)| (-(rad / fo).ln().powi(2) / denom).exp() * lp)
                .collect();
            lg[0] = 0.0;
            lg
        })
        .collect();

    let theta_sigma = PI / NORIENT as f64 / D_THETA_ON_SIGMA;
    let mut energy_all = vec![0.0; n];
    let mut amplitude_all = vec![0.0; n];

    for o in 0..NORIENT {
        let angle = o as f64 * PI / NORIENT as f64;
        let (sa, ca) = angle.sin_cos();
        let spread: Vec<f64> = theta
            .iter()
            .map(|&t| {
                let (st, ct) = t.sin_cos();
                let ds = st * ca - ct * sa;
                let dc = ct * ca + st * sa;
                let dtheta = ds.atan2(dc).abs();
                (-dtheta * dtheta / (2.0 * theta_sigma * theta_sigma)).exp()
            })
            .collect();

        let mut responses: Vec<Vec<Complex<f64>>> = Vec::with_capacity(NSCALE);
        let mut spatial_filters: Vec<Vec<f64>> = Vec::with_capacity(NSCALE);
        let mut sum_e = vec![0.0; n];
        let mut sum_o = vec![0.0; n];
        let mut sum_an = vec![0.0; n];
        let mut em_n = 0.0;
        for (s, lg) in log_gabor.iter().enumerate() {
            let filter: Vec<f64> = lg.iter().zip(&spread).map(|(a, b)| a * b).collect();
            if s == 0 {
                em_n = filter.iter().map(|v| v * v).sum();
            }
            let mut spatial: Vec<Complex<f64>> = filter.iter().map(|&v| Complex::new(v, 0.0)).collect();
            fft.run(&mut spatial, true);
            let root = (n as f64).sqrt();
            spatial_filters.push(spatial.iter().map(|v| v.re * root).collect());

            let mut eo: Vec<Complex<f64>> = spectrum.iter().zip(&filter).map(|(x, &f)| x * f).collect();
            fft.run(&mut eo, true);
            for i in 0..n {
                sum_an[i] += eo[i].norm();
                sum_e[i] += eo[i].re;
                sum_o[i] += eo[i].im;
            }
            responses.push(eo);
        }

        let mut energy = vec![0.0; n];
        for i in 0..n {
            let x_energy = (sum_e[i] * sum_e[i] + sum_o[i] * sum_o[i]).sqrt() + EPSILON;
            let (mean_e, mean_o) = (sum_e[i] / x_energy, sum_o[i] / x_energy);
            for eo in &responses {
                let (e, od) = (eo[i].re, eo[i].im);
                energy[i] += e * mean_e + od * mean_o - (e * mean_o - od * mean_e).abs();
            }
        }

        // noise statistics from the smallest scale, assuming Rayleigh-distributed amplitude
        let mut e2: Vec<f64> = responses[0].iter().map(|v| v.norm_sqr()).collect();
        let mean_e2n = -median(&mut e2) / 0.5f64.ln();
        let noise_power = mean_e2n / em_n;
        let mut sum_an2 = 0.0;
        let mut sum_ai_aj = 0.0;
        for i in 0..n {
            for si in 0..NSCALE {
                let fi = spatial_filters[si][i];
                sum_an2 += fi * fi;
                for sj in si + 1..NSCALE {
                    sum_ai_aj += fi * spatial_filters[sj][i];
                }
            }
        }
        let noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_ai_aj;
        let tau = (noise_energy2 / 2.0).sqrt();
        let noise_mean = tau * (PI / 2.0).sqrt();
        let noise_sigma = ((2.0 - PI / 2.0) * tau * tau).sqrt();
        let threshold = (noise_mean + NOISE_K * noise_sigma) / 1.7;

        for i in 0..n {
            energy_all[i] += (energy[i] - threshold).max(0.0);
            amplitude_all[i] += sum_an[i];
        }
    }

    let data = energy_all
        .iter()
        .zip(&amplitude_all)
        .map(|(&e, &a)| if a > AMPLITUDE_FLOOR { e / a } else { 0.0 })
        .collect();
    Plane::new(rows, cols, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(seed: u64, side: usize) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (fx, fy, ph): (f64, f64, f64) = (rng.gen_range(0.2..0.6), rng.gen_range(0.1..0.5), rng.gen_range(0.0..6.0));
        let (cy, cx) = (rng.gen_range(10.0..50.0), rng.gen_range(10.0..50.0));
        Tensor::from_fn(&[side, side, 3], |i| {
            let px = i / 3;
            let (y, x) = ((px / side) as f64, (px % side) as f64);
            let disk = if (y - cy).powi(2) + (x - cx).powi(2) < 120.0 { 0.25 } else { 0.0 };
            let v = 0.45 + 0.25 * (fx * x + fy * y + ph).sin() + disk + 0.1 * (rng.gen::<f64>() - 0.5);
            v.clamp(0.0, 1.0)
        })
    }

    /// Independent phase congruency: naive separable DFT and frequency grids
    /// built by explicitly shifting a centred meshgrid.
    mod oracle {
        use std::f64::consts::PI;

        type C = (f64, f64);

        fn dft_1d(v: &[C], inverse: bool) -> Vec<C> {
            let n = v.len();
            let sign = if inverse { 1.0 } else { -1.0 };
            (0..n)
                .map(|k| {
                    let mut acc = (0.0, 0.0);
                    for (t, &(re, im)) in v.iter().enumerate() {
                        let ang = sign * 2.0 * PI * (k * t % n) as f64 / n as f64;
                        let (s, c) = ang.sin_cos();
                        acc.0 += re * c - im * s;
                        acc.1 += re * s + im * c;
                    }
                    if inverse {
                        (acc.0 / n as f64, acc.1 / n as f64)
                    } else {
                        acc
                    }
                })
                .collect()
        }

        pub fn dft_2d(m: &[Vec<C>], inverse: bool) -> Vec<Vec<C>> {
            let rows: Vec<Vec<C>> = m.iter().map(|r| dft_1d(r, inverse)).collect();
            let (h, w) = (rows.len(), rows[0].len());
            let mut out = vec![vec![(0.0, 0.0); w]; h];
            for c in 0..w {
                let col: Vec<C> = (0..h).map(|r| rows[r][c]).collect();
                for (r, v) in dft_1d(&col, inverse).into_iter().enumerate() {
                    out[r][c] = v;
                }
            }
            out
        }

        fn ifftshift(m: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
            let (h, w) = (m.len(), m[0].len());
            let (sh, sw) = (h / 2, w / 2);
            (0..h).map(|r| (0..w).map(|c| m[(r + sh) % h][(c + sw) % w]).collect()).collect()
        }

        fn grid(n: usize) -> Vec<f64> {
            if n % 2 == 1 {
                (0..n).map(|i| (i as f64 - (n as f64 - 1.0) / 2.0) / (n as f64 - 1.0)).collect()
            } else {
                (0..n).map(|i| (i as f64 - n as f64 / 2.0) / n as f64).collect()
            }
        }

        pub fn phasecong(im: &[Vec<f64>]) -> Vec<Vec<f64>> {
            let (rows, cols) = (im.len(), im[0].len());
            let spec = dft_2d(&im.iter().map(|r| r.iter().map(|&v| (v, 0.0)).collect()).collect::<Vec<_>>(), false);
            let (xr, yr) = (grid(cols), grid(rows));
            let radius_c: Vec<Vec<f64>> = yr.iter().map(|y| xr.iter().map(|x| (x * x + y * y).sqrt()).collect()).collect();
            let theta_c: Vec<Vec<f64>> = yr.iter().map(|y| xr.iter().map(|x| (-y).atan2(*x)).collect()).collect();
            let lp = ifftshift(
                radius_c
                    .iter()
                    .map(|r| r.iter().map(|v| 1.0 / (1.0 + (v / 0.45).powi(30))).collect())
                    .collect(),
            );
            let mut radius = ifftshift(radius_c);
            let theta = ifftshift(theta_c);
            radius[0][0] = 1.0;
            let theta_sigma = PI / 4.0 / 1.2;
            let mut energy_all = vec![vec![0.0; cols]; rows];
            let mut an_all = vec![vec![0.0; cols]; rows];
            for o in 0..4 {
                let angl = o as f64 * PI / 4.0;
                let mut eos = Vec::new();
                let mut spatial = Vec::new();
                let mut em_n = 0.0;
                for s in 0..4 {
                    let fo = 1.0 / (6.0 * 2f64.powi(s));
                    let mut filt = vec![vec![0.0; cols]; rows];
                    for r in 0..rows {
                        for c in 0..cols {
                            let lg = if r == 0 && c == 0 {
                                0.0
                            } else {
                                (-(radius[r][c] / fo).ln().powi(2) / (2.0 * 0.55f64.ln().powi(2))).exp() * lp[r][c]
                            };
                            let ds = theta[r][c].sin() * angl.cos() - theta[r][c].cos() * angl.sin();
                            let dc = theta[r][c].cos() * angl.cos() + theta[r][c].sin() * angl.sin();
                            let dt = ds.atan2(dc).abs();
                            filt[r][c] = lg * (-dt * dt / (2.0 * theta_sigma * theta_sigma)).exp();
                        }
                    }
                    if s == 0 {
                        em_n = filt.iter().flatten().map(|v| v * v).sum();
                    }
                    let f_c: Vec<Vec<C>> = filt.iter().map(|r| r.iter().map(|&v| (v, 0.0)).collect()).collect();
                    let root = ((rows * cols) as f64).sqrt();
                    spatial.push(
                        dft_2d(&f_c, true).into_iter().map(|r| r.into_iter().map(|v| v.0 * root).collect::<Vec<f64>>()).collect::<Vec<_>>(),
                    );
                    let prod: Vec<Vec<C>> = (0..rows)
                        .map(|r| (0..cols).map(|c| (spec[r][c].0 * filt[r][c], spec[r][c].1 * filt[r][c])).collect())
                        .collect();
                    eos.push(dft_2d(&prod, true));
                }
                let mut e2: Vec<f64> = eos[0].iter().flatten().map(|v| v.0 * v.0 + v.1 * v.1).collect();
                e2.sort_by(f64::total_cmp);
                let m = e2.len();
                let med = if m % 2 == 1 { e2[m / 2] } else { 0.5 * (e2[m / 2 - 1] + e2[m / 2]) };
                let noise_power = (-med / 0.5f64.ln()) / em_n;
                let (mut an2, mut aiaj) = (0.0, 0.0);
                for r in 0..rows {
                    for c in 0..cols {
                        for si in 0..4 {
                            an2 += spatial[si][r][c].powi(2);
                            for sj in si + 1..4 {
                                aiaj += spatial[si][r][c] * spatial[sj][r][c];
                            }
                        }
                    }
                }
                let tau = ((2.0 * noise_power * an2 + 4.0 * noise_power * aiaj) / 2.0).sqrt();
                let t = (tau * (PI / 2.0).sqrt() + 2.0 * ((2.0 - PI / 2.0) * tau * tau).sqrt()) / 1.7;
                for r in 0..rows {
                    for c in 0..cols {
                        let (se, so): (f64, f64) = eos.iter().fold((0.0, 0.0), |a, e| (a.0 + e[r][c].0, a.1 + e[r][c].1));
                        let xe = (se * se + so * so).sqrt() + 1e-4;
                        let (me, mo) = (se / xe, so / xe);
                        let mut en = 0.0;
                        for e in &eos {
                            let (ev, ov) = e[r][c];
                            en += ev * me + ov * mo - (ev * mo - ov * me).abs();
                            an_all[r][c] += (ev * ev + ov * ov).sqrt();
                        }
                        energy_all[r][c] += (en - t).max(0.0);
                    }
                }
            }
            (0..rows)
                .map(|r| (0..cols).map(|c| if an_all[r][c] > 1e-8 { energy_all[r][c] / an_all[r][c] } else { 0.0 }).collect())
                .collect()
        }

        pub fn fsim(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
            let (pa, pb) = (phasecong(a), phasecong(b));
            let grad = |m: &[Vec<f64>]| -> Vec<Vec<f64>> {
                let (h, w) = (m.len() as isize, m[0].len() as isize);
                let at = |y: isize, x: isize| if y < 0 || x < 0 || y >= h || x >= w { 0.0 } else { m[y as usize][x as usize] };
                (0..h)
                    .map(|y| {
                        (0..w)
                            .map(|x| {
                                let gx = (3.0 * (at(y - 1, x - 1) - at(y - 1, x + 1))
                                    + 10.0 * (at(y, x - 1) - at(y, x + 1))
                                    + 3.0 * (at(y + 1, x - 1) - at(y + 1, x + 1)))
                                    / 16.0;
                                let gy = (3.0 * (at(y - 1, x - 1) - at(y + 1, x - 1))
                                    + 10.0 * (at(y - 1, x) - at(y + 1, x))
                                    + 3.0 * (at(y - 1, x + 1) - at(y + 1, x + 1)))
                                    / 16.0;
                                (gx * gx + gy * gy).sqrt()
                            })
                            .collect()
                    })
                    .collect()
            };
            let (ga, gb) = (grad(a), grad(b));
            let (mut num, mut den) = (0.0, 0.0);
            for r in 0..a.len() {
                for c in 0..a[0].len() {
                    let (p1, p2) = (pa[r][c], pb[r][c]);
                    let (g1, g2) = (ga[r][c], gb[r][c]);
                    let pcm = p1.max(p2);
                    num += (2.0 * p1 * p2 + 0.85) / (p1 * p1 + p2 * p2 + 0.85) * (2.0 * g1 * g2 + 160.0)
                        / (g1 * g1 + g2 * g2 + 160.0)
                        * pcm;
                    den += pcm;
                }
            }
            num / den
        }
    }

    fn grey_rows(t: &Tensor) -> Vec<Vec<f64>> {
        let (h, w) = (t.shape()[0], t.shape()[1]);
        (0..h)
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let p = &t.data()[(y * w + x) * 3..(y * w + x) * 3 + 3];
                        255.0 * (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn identity_is_one() {
        let a = textured(1, 32);
        assert_eq!(fsim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn symmetric_and_in_unit_range() {
        let a = textured(2, 40);
        let b = textured(3, 40);
        let (ab, ba) = (fsim(&a, &b).unwrap(), fsim(&b, &a).unwrap());
        assert!((ab - ba).abs() < 1e-9);
        assert!((0.0..=1.0).contains(&ab));
        assert!(ab < 1.0);
    }

    #[test]
    fn matches_independent_reference() {
        let a = textured(4, 64);
        let noise = textured(5, 64);
        let b = a.add(&noise.map(|v| 0.15 * (v - 0.5))).unwrap().clamp(0.0, 1.0);
        let want = oracle::fsim(&grey_rows(&a), &grey_rows(&b));
        let got = fsim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-3, "got {got} want {want}");
    }

    #[test]
    fn phase_congruency_matches_reference_and_is_bounded() {
        let a = textured(6, 33);
        let p = luma255(&a).unwrap();
        let pc = phase_congruency(&p);
        let want = oracle::phasecong(&grey_rows(&a));
        for r in 0..33 {
            for c in 0..33 {
                let v = pc.at(r, c);
                assert!((0.0..=1.0 + 1e-12).contains(&v));
                assert!((v - want[r][c]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_small_and_flat_images() {
        let small = textured(7, 32).reshape(&[16, 64, 3]).unwrap();
        assert!(matches!(fsim(&small, &small), Err(Error::ImageTooSmall(_))));
        let flat = Tensor::full(&[32, 32, 3], 0.4);
        assert!(matches!(fsim(&flat, &flat), Err(Error::Degenerate(_))));
        assert!(fsim(&flat, &Tensor::zeros(&[32, 32])).is_err());
    }

    #[test]
    fn stronger_distortion_scores_lower() {
        let a = textured(8, 48);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = Tensor::from_fn(a.shape(), |_| rng.gen::<f64>() - 0.5);
        let mild = fsim(&a, &a.add(&n.scale(0.05)).unwrap()).unwrap();
        let strong = fsim(&a, &a.add(&n.scale(0.4)).unwrap()).unwrap();
        assert!(strong < mild && mild < 1.0);
    }
}
