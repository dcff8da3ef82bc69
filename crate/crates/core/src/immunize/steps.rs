//! Single-step update rules shared by every immunization method.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::TdaeConfig;
use super::objective::{mse_on, project_linf, sign_step, Objective};
use crate::error::Result;
use crate::models::Instrumented;
use crate::ndtensor::{sign, Tensor};

/// Below this L2 norm the normalised direction is taken to be zero.
pub const DIRECTION_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FdmDiagnostics {
    /// `L(delta_v)`
    pub loss: f64,
    /// `||g1||_2`
    pub g1_norm: f64,
    /// `L(delta_v + h s) - L(delta_v)`; zero when the direction vanishes.
    pub z: f64,
}

/// Sign-gradient ascent step: `proj(delta + alpha sign(grad L))`.
///
/// Returns the new perturbation and `L(delta)`.
pub fn pgd_step<O: Objective + ?Sized>(obj: &O, delta: &Tensor, alpha: f64, eps: f64) -> Result<(Tensor, f64)> {
    let (l, g) = obj.value_and_grad(delta)?;
    Ok((project_linf(&sign_step(delta, &g, alpha), eps), l))
}

/// Gradient of `-L(d) + (lambda/h) |L(d + h s) - L(d)|` with `s` the normalised
/// gradient at `d`, evaluated without second derivatives:
///
/// `g = -g1 + (lambda/h) sign(z) (g2 - g1)`
///
/// where `g1 = grad L(d)` and `g2 = grad L(d + h s)`. Uses two gradient
/// evaluations, or one when `g1` vanishes (then `g = -g1`).
pub fn fdm_gradient<O: Objective + ?Sized>(
    obj: &O,
    delta: &Tensor,
    lambda: f64,
    h: f64,
) -> Result<(Tensor, FdmDiagnostics)> {
    let (l1, g1) = obj.value_and_grad(delta)?;
    let g1_norm = g1.l2_norm();
    if g1_norm < DIRECTION_EPS {
        let diag = FdmDiagnostics { loss: l1, g1_norm, z: 0.0 };
        return Ok((g1.scale(-1.0), diag));
    }
    let shifted = delta.zip_map(&g1, "fdm", |d, g| d + h * (g / g1_norm))?;
    let (l2, g2) = obj.value_and_grad(&shifted)?;
    let z = l2 - l1;
    let coef = lambda / h * sign(z);
    let g = g1.zip_map(&g2, "fdm", |a, b| -a + coef * (b - a))?;
    Ok((g, FdmDiagnostics { loss: l1, g1_norm, z }))
}

/// `proj(delta - alpha sign(g_fdm))`.
pub fn fdm_step<O: Objective + ?Sized>(
    obj: &O,
    delta: &Tensor,
    cfg: &TdaeConfig,
) -> Result<(Tensor, FdmDiagnostics)> {
    let (g, diag) = fdm_gradient(obj, delta, cfg.lambda, cfg.h)?;
    let descent = g.scale(-1.0);
    Ok((project_linf(&sign_step(delta, &descent, cfg.alpha), cfg.eps_v), diag))
}

/// Embedding refinement: starting from zero, `steps` sign-descent steps on
/// `MSE(f(x_imu, c + delta_p), y0)` projected to `||delta_p||_inf <= eps_p`.
pub fn dpd_refine(
    session: &Instrumented<'_>,
    x_imu: &Tensor,
    c: &Tensor,
    y0: &Tensor,
    eps_p: f64,
    eta: f64,
    steps: usize,
) -> Result<Tensor> {
    let mut delta_p = Tensor::zeros(c.shape());
    for _ in 0..steps {
        let e = c.add(&delta_p)?;
        let (_, gp) = session.grad_c(x_imu, &e, |g, y| mse_on(g, y, y0))?;
        let descent = gp.scale(-1.0);
        delta_p = project_linf(&sign_step(&delta_p, &descent, eta), eps_p);
    }
    Ok(delta_p)
}

/// Sampling-based reference regulariser: gradient of
/// `-L(d) + lambda * mean_k ||grad L(d + u_k)||_2` with `u_k` uniform in the
/// L-inf ball of radius `sigma`. Each sample's norm gradient uses the same
/// finite-difference construction as [`fdm_gradient`], so the total cost is
/// `2 samples + 1` gradient evaluations.
pub fn tpa_gradient<O: Objective + ?Sized, R: Rng + ?Sized>(
    obj: &O,
    delta: &Tensor,
    lambda: f64,
    samples: usize,
    sigma: f64,
    h: f64,
    rng: &mut R,
) -> Result<Tensor> {
    assert!(samples >= 1, "tpa_gradient needs at least one sample");
    let (_, g1) = obj.value_and_grad(delta)?;
    let mut acc = Tensor::zeros(delta.shape());
    for _ in 0..samples {
        let noise = Tensor::from_fn(delta.shape(), |_| {
            if sigma > 0.0 {
                rng.gen_range(-sigma..=sigma)
            } else {
                0.0
            }
        });
        let point = delta.add(&noise)?;
        let (lk, gk) = obj.value_and_grad(&point)?;
        let n = gk.l2_norm();
        let shifted = point.zip_map(&gk, "tpa", |d, g| if n < DIRECTION_EPS { d } else { d + h * (g / n) })?;
        let (lk2, gk2) = obj.value_and_grad(&shifted)?;
        let s = sign(lk2 - lk);
        for ((a, &b), &c) in acc.data_mut().iter_mut().zip(gk2.data()).zip(gk.data()) {
            *a += s * (b - c);
        }
    }
    let coef = lambda / h / samples as f64;
    g1.zip_map(&acc, "tpa", |a, b| -a + coef * b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Result;
    use crate::immunize::objective::ImageObjective;
    use crate::models::{build_model, Family, ModelFamilySpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::cell::Cell;

    /// Objective from closures, counting gradient calls.
    struct FnObjective<F, G> {
        f: F,
        grad: G,
        calls: Cell<u64>,
    }

    impl<F: Fn(&Tensor) -> f64, G: Fn(&Tensor) -> Tensor> Objective for FnObjective<F, G> {
        fn value_and_grad(&self, d: &Tensor) -> Result<(f64, Tensor)> {
            self.calls.set(self.calls.get() + 1);
            Ok(((self.f)(d), (self.grad)(d)))
        }
        fn value(&self, d: &Tensor) -> Result<f64> {
            Ok((self.f)(d))
        }
    }

    fn quadratic(a: f64) -> FnObjective<impl Fn(&Tensor) -> f64, impl Fn(&Tensor) -> Tensor> {
        FnObjective {
            f: move |d: &Tensor| (d.data()[0] - a).powi(2),
            grad: move |d: &Tensor| d.map(|v| 2.0 * (v - a)),
            calls: Cell::new(0),
        }
    }

    fn scalar(v: f64) -> Tensor {
        Tensor::new(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn pgd_identity_model_by_hand() {
        // f(x) = x, x0 = 0, y0 = 0: L = delta^2
        let obj = quadratic(0.0);
        let (d, _) = pgd_step(&obj, &scalar(0.0), 0.05, 1.0).unwrap();
        assert_eq!(d.data(), &[0.0]);
        let (d, l) = pgd_step(&obj, &scalar(0.1), 0.05, 1.0).unwrap();
        assert!((d.data()[0] - 0.15).abs() < 1e-15);
        assert!((l - 0.01).abs() < 1e-15);
        assert_eq!(obj.calls.get(), 2);
    }

    #[test]
    fn zero_gradient_leaves_delta_unchanged() {
        let obj = FnObjective {
            f: |_: &Tensor| 1.0,
            grad: |d: &Tensor| Tensor::zeros(d.shape()),
            calls: Cell::new(0),
        };
        let d0 = Tensor::from_fn(&[3], |i| i as f64 * 0.01 - 0.01);
        let (d, _) = pgd_step(&obj, &d0, 0.1, 1.0).unwrap();
        assert!(d.bit_eq(&d0));
        let (g, diag) = fdm_gradient(&obj, &d0, 0.5, 0.1).unwrap();
        assert_eq!(g.linf_norm(), 0.0);
        assert_eq!(diag.z, 0.0);
        assert_eq!(obj.calls.get(), 2, "stationary FDM point costs one call");
    }

    #[test]
    fn fdm_with_zero_lambda_is_negative_gradient() {
        let obj = quadratic(0.3);
        let d = scalar(-0.2);
        let (g, _) = fdm_gradient(&obj, &d, 0.0, 0.1).unwrap();
        assert_eq!(g.data()[0], -(2.0 * (-0.2 - 0.3)));
        assert_eq!(obj.calls.get(), 2);
    }

    /// Central difference of `-L(d) + (lambda/h)|L(d + h s) - L(d)|` with the
    /// direction `s` held at its value at the evaluation point.
    fn flat_objective_fd<O: Objective>(obj: &O, d: &Tensor, s: &Tensor, lambda: f64, h: f64, step: f64) -> Tensor {
        let phi = |p: &Tensor| {
            let l = obj.value(p).unwrap();
            let shifted = p.zip_map(s, "fd", |a, b| a + h * b).unwrap();
            -l + lambda / h * (obj.value(&shifted).unwrap() - l).abs()
        };
        Tensor::from_fn(d.shape(), |i| {
            let mut p = d.clone();
            p.data_mut()[i] += step;
            let mut m = d.clone();
            m.data_mut()[i] -= step;
            (phi(&p) - phi(&m)) / (2.0 * step)
        })
    }

    #[test]
    fn fdm_matches_numerical_derivative_on_quadratic() {
        for (a, d0, lambda, h) in [(0.7, 0.1, 0.03, 0.1), (-0.4, 0.25, 0.5, 0.05), (0.0, -0.3, 0.2, 0.2)] {
            let obj = quadratic(a);
            let d = scalar(d0);
            let (g, diag) = fdm_gradient(&obj, &d, lambda, h).unwrap();
            assert!(diag.z.abs() > 1e-3, "away from the kink");
            let s = scalar(sign(2.0 * (d0 - a)));
            let fd = flat_objective_fd(&obj, &d, &s, lambda, h, 1e-6);
            let rel = (g.data()[0] - fd.data()[0]).abs() / fd.data()[0].abs();
            assert!(rel < 1e-3, "rel {rel}");
        }
    }

    #[test]
    fn fdm_step_reduces_to_pgd_when_lambda_is_zero() {
        let m = build_model(&ModelFamilySpec::new(Family::CondConv, 11)).unwrap();
        let s = Instrumented::new(&m);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x0 = Tensor::from_fn(&[8, 8, 3], |_| rng.gen::<f64>());
        let c = Tensor::from_fn(&[16], |_| rng.gen_range(-1.0..1.0));
        let y0 = s.forward(&x0, &c).unwrap();
        let obj = ImageObjective::full(&s, &x0, &c, &y0);
        let cfg = TdaeConfig { lambda: 0.0, ..Default::default() };
        let d = Tensor::from_fn(x0.shape(), |_| rng.gen_range(-cfg.eps_v..cfg.eps_v));
        let (a, _) = fdm_step(&obj, &d, &cfg).unwrap();
        let (b, _) = pgd_step(&obj, &d, cfg.alpha, cfg.eps_v).unwrap();
        assert!(a.bit_eq(&b));
        let (c2, _) = fdm_step(&obj, &d, &TdaeConfig { alpha: 0.0, ..cfg }).unwrap();
        assert!(c2.bit_eq(&d));
    }

    #[test]
    fn dpd_trivial_cases() {
        let m = build_model(&ModelFamilySpec::new(Family::CondMlp, 3)).unwrap();
        let s = Instrumented::new(&m);
        let x = Tensor::full(&[6, 6, 3], 0.4);
        let c = Tensor::full(&[16], 0.2);
        let y0 = s.forward(&x.map(|v| v + 0.02), &c).unwrap();
        assert_eq!(dpd_refine(&s, &x, &c, &y0, 0.1, 0.01, 0).unwrap().linf_norm(), 0.0);
        assert_eq!(s.grad_calls(), 0);
        assert_eq!(dpd_refine(&s, &x, &c, &y0, 0.0, 0.01, 4).unwrap().linf_norm(), 0.0);
        assert_eq!(s.grad_calls(), 4);
        let dp = dpd_refine(&s, &x, &c, &y0, 0.025, 0.01, 10).unwrap();
        assert!(dp.linf_norm() <= 0.025);
        assert_eq!(s.grad_calls(), 14);
    }

    #[test]
    fn tpa_accounting_and_limits() {
        let obj = quadratic(0.4);
        let d = scalar(0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = tpa_gradient(&obj, &d, 0.0, 3, 0.01, 0.1, &mut rng).unwrap();
        assert_eq!(g.data()[0], -(2.0 * (0.1 - 0.4)));
        assert_eq!(obj.calls.get(), 7);

        let (fdm, _) = fdm_gradient(&obj, &d, 0.2, 0.1).unwrap();
        let tpa = tpa_gradient(&obj, &d, 0.2, 1, 1e-9, 0.1, &mut rng).unwrap();
        assert!((fdm.data()[0] - tpa.data()[0]).abs() < 1e-2);
    }
}
