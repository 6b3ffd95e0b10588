//! Weighted binary-response maximum likelihood (probit / logit).
//!
//! Newton iterations with Fisher scoring and step-halving. Linear
//! predictors are capped at ±30: past that point the likelihood is flat to
//! machine precision and an uncapped iteration would diverge along a
//! separating direction. The cap keeps every intermediate quantity
//! representable in f64.

use nalgebra::{DMatrix, DVector};

use crate::data::{DesignMatrix, WeightVector, RANK_TOL};
use crate::error::{Error, Result};
use crate::numkit::normal::{normal_cdf, normal_pdf};

/// Cap on |x'δ|; also the quasi-separation detection bound.
pub const LINEAR_PREDICTOR_CAP: f64 = 30.0;

const MAX_ITER: usize = 100;

/// Link function of the binary-response model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Link {
    Probit,
    Logit,
}

impl Link {
    /// Λ(η), the response probability at linear predictor η.
    pub fn prob(self, eta: f64) -> f64 {
        let eta = eta.clamp(-LINEAR_PREDICTOR_CAP, LINEAR_PREDICTOR_CAP);
        match self {
            Link::Probit => normal_cdf(eta),
            Link::Logit => 1.0 / (1.0 + (-eta).exp()),
        }
    }

    /// ln Λ(η), stable in both tails.
    fn log_prob(self, eta: f64) -> f64 {
        let eta = eta.clamp(-LINEAR_PREDICTOR_CAP, LINEAR_PREDICTOR_CAP);
        match self {
            Link::Probit => {
                if eta > 8.0 {
                    (-normal_cdf(-eta)).ln_1p()
                } else {
                    normal_cdf(eta).ln()
                }
            }
            Link::Logit => -softplus(-eta),
        }
    }

    /// (score factor, Fisher weight) at η for response t.
    fn score_info(self, eta: f64, t: bool) -> (f64, f64) {
        let eta = eta.clamp(-LINEAR_PREDICTOR_CAP, LINEAR_PREDICTOR_CAP);
        match self {
            Link::Probit => {
                let p = normal_cdf(eta);
                let q = normal_cdf(-eta);
                let pdf = normal_pdf(eta);
                let s = if t { pdf / p } else { -pdf / q };
                let lambda = (pdf / p) * (pdf / q);
                (s, lambda)
            }
            Link::Logit => {
                let p = 1.0 / (1.0 + (-eta).exp());
                let q = 1.0 / (1.0 + eta.exp());
                ((if t { 1.0 } else { 0.0 }) - p, p * q)
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// A fitted binary-response model.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// Coefficients δ (length p).
    pub delta: Vec<f64>,
    pub link: Link,
    /// Weighted log-likelihood at δ.
    pub loglik: f64,
    /// False when stopped by the iteration cap or by quasi-separation.
    pub converged: bool,
    /// All rows of at least one class exceeded the linear-predictor cap.
    pub quasi_separated: bool,
}

impl GlmFit {
    pub fn linear_predictor(&self, x_row: &[f64]) -> f64 {
        x_row.iter().zip(&self.delta).map(|(x, d)| x * d).sum()
    }

    /// Fitted probability Λ(x'δ) with the cap applied.
    pub fn fitted_prob(&self, x_row: &[f64]) -> f64 {
        self.link.prob(self.linear_predictor(x_row))
    }
}

/// Maximize the weighted Bernoulli log-likelihood of `t` on `x`.
///
/// Requires both classes among positively weighted rows; detecting perfect
/// separation raises `Error::Separation`.
#[allow(clippy::needless_range_loop)]
pub fn fit_binary_glm(
    x: &DesignMatrix,
    t: &[bool],
    link: Link,
    w: &WeightVector,
) -> Result<GlmFit> {
    let n = x.rows();
    let p = x.cols();
    if t.len() != n || w.len() != n {
        return Err(Error::invalid("design, response, and weights must have equal length"));
    }
    let mut ones = 0usize;
    let mut zeros = 0usize;
    for i in 0..n {
        if w.values()[i] > 0.0 {
            if t[i] {
                ones += 1;
            } else {
                zeros += 1;
            }
        }
    }
    if ones == 0 || zeros == 0 {
        return Err(Error::Separation);
    }

    let sum_w = w.sum();
    let grad_tol = 1e-9 * (1.0 + sum_w);

    let loglik_at = |delta: &DVector<f64>| -> f64 {
        let mut ll = 0.0;
        for i in 0..n {
            let wi = w.values()[i];
            if wi == 0.0 {
                continue;
            }
            let eta = x.row_dot(i, delta.as_slice());
            ll += wi * if t[i] { link.log_prob(eta) } else { link.log_prob(-eta) };
        }
        ll
    };

    let mut delta = DVector::zeros(p);
    let mut ll = loglik_at(&delta);
    let mut converged = false;
    let mut quasi_separated = false;

    for _ in 0..MAX_ITER {
        let mut grad = DVector::zeros(p);
        let mut info = DMatrix::zeros(p, p);
        let mut sep = SeparationState::default();
        for i in 0..n {
            let wi = w.values()[i];
            if wi == 0.0 {
                continue;
            }
            let eta = x.row_dot(i, delta.as_slice());
            sep.observe(t[i], eta, link.prob(eta));
            let (s, lambda) = link.score_info(eta, t[i]);
            for a in 0..p {
                let xa = x.values()[(i, a)];
                grad[a] += wi * s * xa;
                for b in a..p {
                    info[(a, b)] += wi * lambda * xa * x.values()[(i, b)];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }

        if sep.perfect() {
            return Err(Error::Separation);
        }
        if sep.quasi() {
            quasi_separated = true;
            break;
        }
        if grad.amax() <= grad_tol {
            // A stationary point with essentially zero loss means every row
            // is perfectly classified: the likelihood supremum sits at a
            // separating hyperplane, not an interior optimum.
            if ll >= -1e-6 * (1.0 + sum_w) {
                return Err(Error::Separation);
            }
            converged = true;
            break;
        }

        let direction = solve_spd(&info, &grad)
            .ok_or_else(|| Error::rank_deficient("Fisher information is singular"))?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &delta + step * &direction;
            let cand_ll = loglik_at(&cand);
            if cand_ll.is_finite() && cand_ll >= ll - 1e-13 * (1.0 + ll.abs()) {
                delta = cand;
                ll = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break; // step collapse: report unconverged at the current point
        }
    }

    Ok(GlmFit { delta: delta.iter().copied().collect(), link, loglik: ll, converged, quasi_separated })
}

// Probability within which a row counts as perfectly predicted.
const SATURATION_EPS: f64 = 1e-10;

#[derive(Default)]
struct SeparationState {
    ones_total: usize,
    ones_saturated: usize,
    ones_beyond: usize,
    zeros_total: usize,
    zeros_saturated: usize,
    zeros_beyond: usize,
}

impl SeparationState {
    fn observe(&mut self, t: bool, eta: f64, prob: f64) {
        if t {
            self.ones_total += 1;
            if prob >= 1.0 - SATURATION_EPS {
                self.ones_saturated += 1;
            }
            if eta.abs() > LINEAR_PREDICTOR_CAP {
                self.ones_beyond += 1;
            }
        } else {
            self.zeros_total += 1;
            if prob <= SATURATION_EPS {
                self.zeros_saturated += 1;
            }
            if eta.abs() > LINEAR_PREDICTOR_CAP {
                self.zeros_beyond += 1;
            }
        }
    }

    fn perfect(&self) -> bool {
        self.ones_saturated == self.ones_total && self.zeros_saturated == self.zeros_total
    }

    fn quasi(&self) -> bool {
        self.ones_beyond == self.ones_total || self.zeros_beyond == self.zeros_total
    }
}

fn solve_spd(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = m.clone().cholesky() {
        let sol = ch.solve(rhs);
        if sol.iter().all(|v| v.is_finite()) {
            return Some(sol);
        }
    }
    // Rank check before resorting to a ridge.
    let sv = m.clone().singular_values();
    if sv.min() <= RANK_TOL * sv.max() {
        return None;
    }
    let mut reg = m.clone();
    let bump = 1e-10 * m.trace().abs().max(1e-300) / m.nrows() as f64;
    for j in 0..m.nrows() {
        reg[(j, j)] += bump;
    }
    reg.cholesky().map(|ch| ch.solve(rhs))
}
