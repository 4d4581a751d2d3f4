//! Pointwise integrands of the level-set derivative formulas.
//!
//! With χ = 1/‖∇V‖ and the flow derivative D(f) = ψ(V)·ψ(f) = χ² ∇V·∇f, the
//! iterated operator obeys A(χ g)/χ = g·α + D(g), so the k-th derivative of
//! log Ω is a cumulant-like combination of
//!
//! * α = A(χ)/χ = ΔV/‖∇V‖² − 2 ∇VᵀH∇V/‖∇V‖⁴
//! * P = D(α) (closed form, five terms)
//! * W = D(P), Q = D(W) (directional finite differences of P and W).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dot, norm, Configuration, PotentialModel, SparseHessian};

pub const DEFAULT_GRAD_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryOptions {
    /// Gradient norms below this declare the point near-critical.
    pub grad_floor: f64,
    /// Relative step for differencing P into W: h = scale·(1 + ‖q‖∞).
    pub step_scale: f64,
    /// Relative step for differencing W into Q.
    pub outer_step_scale: f64,
}

impl Default for GeometryOptions {
    fn default() -> Self {
        Self {
            grad_floor: DEFAULT_GRAD_FLOOR,
            step_scale: 1e-4,
            outer_step_scale: 1e-3,
        }
    }
}

/// Every integrand evaluated at one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryPoint {
    pub config: Configuration,
    pub grad: Vec<f64>,
    pub energy: f64,
    pub grad_norm: f64,
    pub chi: f64,
    pub laplacian: f64,
    /// ∇·(∇V/‖∇V‖)
    pub m1: f64,
    pub alpha: f64,
    pub p: Option<f64>,
    pub w: Option<f64>,
    pub q: Option<f64>,
    /// Richardson error estimates of the differenced W and Q.
    pub w_err: Option<f64>,
    pub q_err: Option<f64>,
}

/// Value of a directional difference with its Richardson error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Directional {
    pub value: f64,
    pub error: f64,
}

struct Local {
    energy: f64,
    grad: Vec<f64>,
    g2: f64,
    hess: SparseHessian,
    laplacian: f64,
    /// ∇Vᵀ H ∇V
    ghg: f64,
}

fn local(model: &PotentialModel, q: &[f64], floor: f64) -> Result<Local> {
    if q.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            got: q.len(),
        });
    }
    let mut grad = vec![0.0; q.len()];
    let energy = model.energy_gradient(q, &mut grad);
    let g2 = dot(&grad, &grad);
    if !(g2.sqrt() >= floor) {
        return Err(Error::NearCritical {
            grad_norm: g2.sqrt(),
        });
    }
    let hess = model.hessian_unchecked(q);
    let laplacian = hess.trace();
    let ghg = hess.bilinear(&grad, &grad);
    Ok(Local {
        energy,
        grad,
        g2,
        hess,
        laplacian,
        ghg,
    })
}

impl Local {
    fn alpha(&self) -> f64 {
        self.laplacian / self.g2 - 2.0 * self.ghg / (self.g2 * self.g2)
    }

    fn m1(&self) -> f64 {
        let g = self.g2.sqrt();
        self.laplacian / g - self.ghg / (g * self.g2)
    }

    fn p(&self, model: &PotentialModel, q: &[f64]) -> f64 {
        let g2 = self.g2;
        let g = g2.sqrt();
        let chi = 1.0 / g;
        let chi3 = chi * chi * chi;
        let chi4 = chi3 * chi;
        let hg = self.hess.mul_vec(&self.grad);
        // ⟨ψ(V);ψ(V)⟩ and ⟨ψ(V)|ψ(V)⟩
        let semi = self.ghg / g2;
        let bar = dot(&hg, &hg) / g2;
        let trace3 = model.third_trace_contract(q, &self.grad) / g;
        let cubic3 = model.third_cubic_contract(q, &self.grad) / (g2 * g);
        8.0 * chi4 * semi * semi - 4.0 * chi4 * bar - 2.0 * chi4 * semi * self.laplacian
            + chi3 * trace3
            - 2.0 * chi3 * cubic3
    }
}

/// α = A(χ)/χ, the first-derivative integrand.
pub fn alpha(model: &PotentialModel, q: &[f64]) -> Result<f64> {
    alpha_with_floor(model, q, DEFAULT_GRAD_FLOOR)
}

pub fn alpha_with_floor(model: &PotentialModel, q: &[f64], floor: f64) -> Result<f64> {
    Ok(local(model, q, floor)?.alpha())
}

/// Closed-form ψ(V)·ψ(α).
pub fn p_closed_form(model: &PotentialModel, q: &[f64]) -> Result<f64> {
    p_closed_form_with_floor(model, q, DEFAULT_GRAD_FLOOR)
}

pub fn p_closed_form_with_floor(model: &PotentialModel, q: &[f64], floor: f64) -> Result<f64> {
    Ok(local(model, q, floor)?.p(model, q))
}

/// M1 = ∇·(∇V/‖∇V‖), the divergence of the unit normal field.
pub fn normal_divergence(model: &PotentialModel, q: &[f64]) -> Result<f64> {
    Ok(local(model, q, DEFAULT_GRAD_FLOOR)?.m1())
}

/// ψ(V)·ψ(f) = (∇V·∇f)/‖∇V‖² by central differences of `f` along the unit
/// normal, Richardson-extrapolated over steps {h, h/2}.
pub fn psi_v_psi<F>(model: &PotentialModel, q: &[f64], f: F, h: f64) -> Result<Directional>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    psi_v_psi_with_floor(model, q, f, h, DEFAULT_GRAD_FLOOR)
}

pub fn psi_v_psi_with_floor<F>(
    model: &PotentialModel,
    q: &[f64],
    f: F,
    h: f64,
    floor: f64,
) -> Result<Directional>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    if q.len() != model.n() {
        return Err(Error::DimensionMismatch {
            expected: model.n(),
            got: q.len(),
        });
    }
    let grad = model.gradient(q)?;
    let g = norm(&grad);
    if !(g >= floor) {
        return Err(Error::NearCritical { grad_norm: g });
    }
    let scale = 1.0 + q.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if !(h.is_finite() && h > 1e-13 * scale) {
        return Err(Error::StepUnderflow { step: h });
    }
    let unit: Vec<f64> = grad.iter().map(|x| x / g).collect();
    let mut shifted = q.to_vec();
    let mut central = |step: f64| -> Result<f64> {
        for ((s, x), u) in shifted.iter_mut().zip(q).zip(&unit) {
            *s = x + step * u;
        }
        let fp = f(&shifted)?;
        for ((s, x), u) in shifted.iter_mut().zip(q).zip(&unit) {
            *s = x - step * u;
        }
        let fm = f(&shifted)?;
        Ok((fp - fm) / (2.0 * step * g))
    };
    let coarse = central(h)?;
    let fine = central(0.5 * h)?;
    Ok(Directional {
        value: (4.0 * fine - coarse) / 3.0,
        error: (fine - coarse).abs() / 3.0,
    })
}

fn default_step(q: &[f64], scale: f64) -> f64 {
    scale * (1.0 + q.iter().fold(0.0f64, |m, x| m.max(x.abs())))
}

/// W = ψ(V)·ψ(P) at `q`.
pub fn w_term(model: &PotentialModel, q: &[f64], opts: &GeometryOptions) -> Result<Directional> {
    let floor = opts.grad_floor;
    psi_v_psi_with_floor(
        model,
        q,
        |x| p_closed_form_with_floor(model, x, floor),
        default_step(q, opts.step_scale),
        floor,
    )
}

/// Q = ψ(V)·ψ(W) at `q`.
pub fn q_term(model: &PotentialModel, q: &[f64], opts: &GeometryOptions) -> Result<Directional> {
    let floor = opts.grad_floor;
    psi_v_psi_with_floor(
        model,
        q,
        |x| w_term(model, x, opts).map(|d| d.value),
        default_step(q, opts.outer_step_scale),
        floor,
    )
}

/// Evaluate the integrands needed for derivatives up to `order` (1..=4).
pub fn integrand_suite(
    model: &PotentialModel,
    q: &[f64],
    order: usize,
    opts: &GeometryOptions,
) -> Result<GeometryPoint> {
    if !(1..=4).contains(&order) {
        return Err(crate::error::invalid("order", "must lie in 1..=4"));
    }
    let loc = local(model, q, opts.grad_floor)?;
    let g = loc.g2.sqrt();
    let p = (order >= 2).then(|| loc.p(model, q));
    let w = if order >= 3 {
        Some(w_term(model, q, opts)?)
    } else {
        None
    };
    let qq = if order >= 4 {
        Some(q_term(model, q, opts)?)
    } else {
        None
    };
    Ok(GeometryPoint {
        config: Configuration(q.to_vec()),
        energy: loc.energy,
        grad_norm: g,
        chi: 1.0 / g,
        laplacian: loc.laplacian,
        m1: loc.m1(),
        alpha: loc.alpha(),
        p,
        w: w.map(|d| d.value),
        q: qq.map(|d| d.value),
        w_err: w.map(|d| d.error),
        q_err: qq.map(|d| d.error),
        grad: loc.grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Boundary, LatticeTopology, ModelKind};
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn bundled() -> Vec<PotentialModel> {
        vec![
            PotentialModel::harmonic(4),
            PotentialModel::coupled_rotators(3),
            PotentialModel::coupled_rotators(6),
            PotentialModel::fpu(4, 0.1),
            PotentialModel::phi4(4, -1.0, 1.0),
            PotentialModel::new(
                LatticeTopology::new(2, 3, Boundary::Fixed).unwrap(),
                ModelKind::Phi4 { r: 0.5, u: 0.3 },
            )
            .unwrap(),
        ]
    }

    fn random_q(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect()
    }

    /// ∇·F for a vector field F by central differences.
    fn fd_divergence<F: Fn(&[f64]) -> Vec<f64>>(field: F, q: &[f64], h: f64) -> f64 {
        let mut div = 0.0;
        for i in 0..q.len() {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let fine = (field(&qp)[i] - field(&qm)[i]) / (2.0 * h);
            qp[i] = q[i] + 2.0 * h;
            qm[i] = q[i] - 2.0 * h;
            let coarse = (field(&qp)[i] - field(&qm)[i]) / (4.0 * h);
            div += (4.0 * fine - coarse) / 3.0;
        }
        div
    }

    #[test]
    fn harmonic_alpha_and_p_closed_forms() {
        let m = PotentialModel::harmonic(4);
        let q = [1.0, 1.0, 0.0, 0.0];
        // v = 1, (N−2)/(2v) = 1, −(N−2)/(2v²) = −1
        assert_abs_diff_eq!(alpha(&m, &q).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(p_closed_form(&m, &q).unwrap(), -1.0, epsilon = 1e-14);
        let d = psi_v_psi(&m, &q, |x| alpha(&m, x), 1e-4).unwrap();
        assert_abs_diff_eq!(d.value, -1.0, epsilon = 1e-9);
    }

    #[test]
    fn harmonic_suite_matches_radial_calculus() {
        // Along the flow D = d/dv, α(v) = (N−2)/(2v): P = −(N−2)/(2v²),
        // W = (N−2)/v³, Q = −3(N−2)/v⁴. N = 4, v = 1.
        let m = PotentialModel::harmonic(4);
        let q = [1.0, 1.0, 0.0, 0.0];
        let opts = GeometryOptions::default();
        let one = integrand_suite(&m, &q, 1, &opts).unwrap();
        assert_abs_diff_eq!(one.alpha, 1.0, epsilon = 1e-14);
        assert!(one.p.is_none() && one.w.is_none() && one.q.is_none());
        let four = integrand_suite(&m, &q, 4, &opts).unwrap();
        assert_abs_diff_eq!(four.p.unwrap(), -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(four.w.unwrap(), 2.0, epsilon = 1e-7);
        assert_abs_diff_eq!(four.q.unwrap(), -6.0, epsilon = 1e-5);
    }

    #[test]
    fn zero_hessian_point_has_vanishing_integrands() {
        let m = PotentialModel::linear(5, 0.7);
        let q = [0.1, -0.3, 0.5, 2.0, 1.0];
        let pt = integrand_suite(&m, &q, 4, &GeometryOptions::default()).unwrap();
        assert_eq!(pt.alpha, 0.0);
        assert_eq!(pt.p, Some(0.0));
        assert_eq!(pt.w, Some(0.0));
        assert_eq!(pt.q, Some(0.0));
    }

    #[test]
    fn constant_field_has_zero_flow_derivative() {
        let m = PotentialModel::coupled_rotators(3);
        let d = psi_v_psi(&m, &[0.3, 0.7, 0.2], |_| Ok(2.5), 1e-4).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn alpha_is_divergence_of_inverse_gradient_field() {
        let m = PotentialModel::coupled_rotators(3);
        let q = [0.3, 0.7, 0.2];
        let field = |x: &[f64]| {
            let g = m.gradient(x).unwrap();
            let g2 = dot(&g, &g);
            g.iter().map(|v| v / g2).collect::<Vec<_>>()
        };
        let fd = fd_divergence(field, &q, 1e-4);
        assert_abs_diff_eq!(alpha(&m, &q).unwrap(), fd, epsilon = 1e-5);
    }

    #[test]
    fn rel1_identity_holds() {
        let mut rng = crate::rng::stream(17, 0);
        for m in bundled() {
            for _ in 0..20 {
                let q = random_q(m.n(), &mut rng);
                let unit = |x: &[f64]| {
                    let g = m.gradient(x).unwrap();
                    let n = norm(&g);
                    g.iter().map(|v| v / n).collect::<Vec<_>>()
                };
                let m1 = fd_divergence(unit, &q, 1e-3);
                let exact = normal_divergence(&m, &q).unwrap();
                assert!((m1 - exact).abs() < 1e-7 * (1.0 + exact.abs()), "{m1} vs {exact}");
                let g = m.gradient(&q).unwrap();
                let chi = 1.0 / norm(&g);
                let lap = m.hessian(&q).unwrap().trace();
                let lhs = psi_v_psi(&m, &q, |x| Ok(1.0 / norm(&m.gradient(x)?)), 1e-3)
                    .unwrap()
                    .value;
                let rhs = chi * chi * m1 - chi.powi(3) * lap;
                assert!((lhs - rhs).abs() < 1e-7 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
            }
        }
    }

    #[test]
    fn p_closed_form_matches_directional_difference() {
        let mut rng = crate::rng::stream(19, 0);
        for m in bundled() {
            for _ in 0..1000 {
                let q = random_q(m.n(), &mut rng);
                let Ok(p) = p_closed_form(&m, &q) else { continue };
                let d = psi_v_psi(&m, &q, |x| alpha(&m, x), 1e-4).unwrap();
                let tol = 1e-4 * (1.0 + p.abs()) + 10.0 * d.error;
                assert!((p - d.value).abs() < tol, "{}: {p} vs {}", m.kind().name(), d.value);
            }
        }
    }

    #[test]
    fn fpu_p_matches_difference_at_fixed_point() {
        let m = PotentialModel::fpu(4, 0.1);
        let q = [0.4, -0.8, 1.1, 0.2];
        let p = p_closed_form(&m, &q).unwrap();
        let d = psi_v_psi(&m, &q, |x| alpha(&m, x), 1e-4).unwrap();
        assert_abs_diff_eq!(p, d.value, epsilon = 1e-4);
    }

    #[test]
    fn near_critical_points_are_rejected() {
        let m = PotentialModel::coupled_rotators(4);
        let err = alpha(&m, &[0.0; 4]).unwrap_err();
        assert!(matches!(err, Error::NearCritical { grad_norm } if grad_norm == 0.0));
        assert!(integrand_suite(&m, &[0.0; 4], 2, &GeometryOptions::default()).is_err());
        let h = PotentialModel::harmonic(2);
        assert!(matches!(
            psi_v_psi(&h, &[1.0, 0.0], |_| Ok(0.0), 1e-20),
            Err(Error::StepUnderflow { .. })
        ));
    }

    #[test]
    fn harmonic_alpha_constant_on_sphere() {
        let m = PotentialModel::harmonic(4);
        let mut rng = crate::rng::stream(23, 0);
        let v: f64 = 1.0;
        let vals: Vec<f64> = (0..100)
            .map(|_| {
                let x: Vec<f64> = (0..4).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
                let r = norm(&x);
                let q: Vec<f64> = x.iter().map(|c| c / r * (2.0 * v).sqrt()).collect();
                alpha(&m, &q).unwrap()
            })
            .collect();
        let max = vals.iter().cloned().fold(f64::MIN, f64::max);
        let min = vals.iter().cloned().fold(f64::MAX, f64::min);
        assert!(max - min < 1e-10);
    }
}
