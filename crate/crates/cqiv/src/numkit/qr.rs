//! Weighted quantile regression.
//!
//! The solver minimizes the weighted check loss Σᵢ wᵢ ρ_u(yᵢ − xᵢ'β). The
//! main path is a Frisch–Newton primal-dual interior-point method on the
//! bounded-variable dual LP (Mehrotra predictor-corrector, duality-gap stop
//! at 1e-10), followed by a finishing step that snaps the iterate to an
//! exact-fit vertex and verifies subgradient optimality. Degenerate or
//! ill-behaved instances fall through to a deterministic exchange-pivot
//! (simplex-style) loop on the same vertex structure, so the returned
//! coefficients are always an exactly solved p-point basic solution.

use nalgebra::{DMatrix, DVector};

use crate::data::{DesignMatrix, WeightVector, RANK_TOL};
use crate::error::{Error, Result};

/// Asymmetric absolute (check) loss ρ_u(z) = (u − 1{z<0})·z.
pub fn check_loss(z: f64, u: f64) -> f64 {
    if z < 0.0 {
        (u - 1.0) * z
    } else {
        u * z
    }
}

/// A fitted quantile regression.
#[derive(Debug, Clone)]
pub struct QuantileFit {
    /// Coefficient vector (length p).
    pub beta: Vec<f64>,
    /// Quantile index in (0,1).
    pub u: f64,
    /// Weighted check loss at `beta`.
    pub objective: f64,
    /// Number of (near-)zero residuals among positively weighted rows.
    pub active_count: usize,
}

const MAX_IPM_ITER: usize = 60;
const IPM_GAP_TOL: f64 = 1e-10;
const STEP_SCALE: f64 = 0.9995;

/// Minimize Σᵢ wᵢ ρ_u(yᵢ − xᵢ'β).
///
/// Zero-weight rows are ignored entirely. Errors with `RankDeficient` when
/// the design is collinear on the positively weighted subsample and
/// `NonFinite` when the response contains NaN or infinities.
pub fn solve_weighted_qr(
    x: &DesignMatrix,
    y: &[f64],
    u: f64,
    w: &WeightVector,
) -> Result<QuantileFit> {
    if !(u > 0.0 && u < 1.0) {
        return Err(Error::domain(format!("quantile index must lie in (0,1), got {u}")));
    }
    let n = x.rows();
    let p = x.cols();
    if y.len() != n || w.len() != n {
        return Err(Error::invalid("design, response, and weights must have equal length"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("response vector"));
    }

    let active: Vec<usize> = (0..n).filter(|&i| w.values()[i] > 0.0).collect();
    if active.len() < p {
        return Err(Error::rank_deficient(format!(
            "{} positively weighted rows for {p} coefficients",
            active.len()
        )));
    }

    // Row-scaled copy: wᵢ ρ_u(yᵢ − xᵢ'β) = ρ_u(wᵢyᵢ − (wᵢxᵢ)'β) for wᵢ > 0.
    let m = active.len();
    let mut xs = DMatrix::zeros(m, p);
    let mut ys = DVector::zeros(m);
    for (r, &i) in active.iter().enumerate() {
        let wi = w.values()[i];
        for j in 0..p {
            xs[(r, j)] = wi * x.values()[(i, j)];
        }
        ys[r] = wi * y[i];
    }

    let sv = xs.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= RANK_TOL * smax {
        return Err(Error::rank_deficient(format!(
            "singular value ratio {:.2e} on the weighted subsample",
            smin / smax
        )));
    }

    let ipm_beta = frisch_newton(&xs, &ys, u);

    let problem = Vertex { x, y, w, active: &active, u };
    let basis = match &ipm_beta {
        Some(beta) => problem.basis_from_residuals(beta)?,
        None => problem.basis_by_index()?,
    };
    let (beta, _basis) = problem.exchange(basis)?;

    let mut objective = 0.0;
    let mut active_count = 0;
    for &i in &active {
        let r = y[i] - x.row_dot(i, &beta);
        objective += w.values()[i] * check_loss(r, u);
        if r.abs() <= residual_tol(y[i], x.row_dot(i, &beta)) {
            active_count += 1;
        }
    }
    Ok(QuantileFit { beta, u, objective, active_count })
}

fn residual_tol(y: f64, pred: f64) -> f64 {
    1e-9 * (1.0 + y.abs().max(pred.abs()))
}

/// Mehrotra predictor-corrector on the dual LP
/// max ỹ'a s.t. X̃'a = (1−u)X̃'1, a ∈ [0,1]ᵐ, returning β = −(dual of the
/// equality block). `None` when the iteration breaks down; the caller's
/// finishing step does not depend on this succeeding.
fn frisch_newton(xs: &DMatrix<f64>, ys: &DVector<f64>, u: f64) -> Option<Vec<f64>> {
    let m = xs.nrows();
    let p = xs.ncols();
    let c = -ys;
    let b = xs.transpose() * DVector::from_element(m, 1.0 - u);

    // Strictly interior start with an exactly dual-feasible (y, z, ω).
    let mut xv = DVector::from_element(m, 1.0 - u);
    let mut sv = DVector::from_element(m, u);
    let xtx = xs.transpose() * xs;
    let chol = xtx.clone().cholesky()?;
    let mut yv = chol.solve(&(xs.transpose() * &c));
    let resid = &c - xs * &yv;
    let delta = 1e-2 * (1.0 + c.amax()) + 0.1 * resid.amax();
    let mut zv = DVector::zeros(m);
    let mut ov = DVector::zeros(m);
    for i in 0..m {
        zv[i] = resid[i].max(0.0) + delta;
        ov[i] = zv[i] - resid[i];
    }

    let scale = 1.0 + c.amax() * m as f64;
    for _ in 0..MAX_IPM_ITER {
        let gap = xv.dot(&zv) + sv.dot(&ov);
        if gap <= IPM_GAP_TOL * scale {
            return Some((-&yv).iter().copied().collect());
        }
        let mu = gap / (2 * m) as f64;

        let r_p = &b - xs.transpose() * &xv;
        let mut r_u = DVector::zeros(m);
        let mut r_d = &c - xs * &yv;
        for i in 0..m {
            r_u[i] = 1.0 - xv[i] - sv[i];
            r_d[i] += ov[i] - zv[i];
        }

        let mut q = DVector::zeros(m);
        for i in 0..m {
            q[i] = zv[i] / xv[i] + ov[i] / sv[i];
        }
        let mut mmat = DMatrix::zeros(p, p);
        for i in 0..m {
            let qi_inv = 1.0 / q[i];
            for a in 0..p {
                let xa = xs[(i, a)] * qi_inv;
                for bcol in a..p {
                    mmat[(a, bcol)] += xa * xs[(i, bcol)];
                }
            }
        }
        for a in 0..p {
            for bcol in 0..a {
                mmat[(a, bcol)] = mmat[(bcol, a)];
            }
        }
        let chol = cholesky_with_ridge(&mmat)?;

        let solve_direction = |rhs_n: &DVector<f64>| {
            let mut scaled = DVector::zeros(m);
            for i in 0..m {
                scaled[i] = rhs_n[i] / q[i];
            }
            let rhs_p = &r_p + xs.transpose() * &scaled;
            let dy = chol.solve(&rhs_p);
            let xdy = xs * &dy;
            let mut dx = DVector::zeros(m);
            for i in 0..m {
                dx[i] = (xdy[i] - rhs_n[i]) / q[i];
            }
            (dy, dx)
        };

        // Affine scaling (predictor) direction.
        let mut rhs_n = DVector::zeros(m);
        for i in 0..m {
            rhs_n[i] = r_d[i] + zv[i] - ov[i] - ov[i] / sv[i] * r_u[i];
        }
        let (_dy_a, dx_a) = solve_direction(&rhs_n);
        let mut ds_a = DVector::zeros(m);
        let mut dz_a = DVector::zeros(m);
        let mut do_a = DVector::zeros(m);
        for i in 0..m {
            ds_a[i] = r_u[i] - dx_a[i];
            dz_a[i] = -zv[i] - zv[i] / xv[i] * dx_a[i];
            do_a[i] = -ov[i] - ov[i] / sv[i] * ds_a[i];
        }
        let ap_a = step_length(&xv, &dx_a).min(step_length(&sv, &ds_a));
        let ad_a = step_length(&zv, &dz_a).min(step_length(&ov, &do_a));
        let mut gap_aff = 0.0;
        for i in 0..m {
            gap_aff += (xv[i] + ap_a * dx_a[i]) * (zv[i] + ad_a * dz_a[i])
                + (sv[i] + ap_a * ds_a[i]) * (ov[i] + ad_a * do_a[i]);
        }
        let mu_aff = gap_aff / (2 * m) as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector with centering.
        for i in 0..m {
            rhs_n[i] = r_d[i] + zv[i] - ov[i] - ov[i] / sv[i] * r_u[i]
                - sigma * mu * (1.0 / xv[i] - 1.0 / sv[i])
                + dx_a[i] * dz_a[i] / xv[i]
                - ds_a[i] * do_a[i] / sv[i];
        }
        let (dy, dx) = solve_direction(&rhs_n);
        let mut ds = DVector::zeros(m);
        let mut dz = DVector::zeros(m);
        let mut dov = DVector::zeros(m);
        for i in 0..m {
            ds[i] = r_u[i] - dx[i];
            dz[i] = (sigma * mu - dx_a[i] * dz_a[i]) / xv[i] - zv[i] - zv[i] / xv[i] * dx[i];
            dov[i] = (sigma * mu - ds_a[i] * do_a[i]) / sv[i] - ov[i] - ov[i] / sv[i] * ds[i];
        }
        let ap = step_length(&xv, &dx).min(step_length(&sv, &ds));
        let ad = step_length(&zv, &dz).min(step_length(&ov, &dov));
        xv += ap * &dx;
        sv += ap * &ds;
        yv += ad * &dy;
        zv += ad * &dz;
        ov += ad * &dov;
        for i in 0..m {
            if !(xv[i] > 0.0 && sv[i] > 0.0 && zv[i] > 0.0 && ov[i] > 0.0) {
                return None;
            }
        }
    }
    Some((-&yv).iter().copied().collect())
}

fn step_length(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut t = f64::INFINITY;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            t = t.min(-v[i] / dv[i]);
        }
    }
    (STEP_SCALE * t).min(1.0)
}

fn cholesky_with_ridge(m: &DMatrix<f64>) -> Option<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(ch) = m.clone().cholesky() {
        return Some(ch);
    }
    let trace = m.trace().abs().max(1e-300);
    let p = m.nrows();
    let mut ridge = 1e-12 * trace / p as f64;
    for _ in 0..6 {
        let mut reg = m.clone();
        for j in 0..p {
            reg[(j, j)] += ridge;
        }
        if let Some(ch) = reg.cholesky() {
            return Some(ch);
        }
        ridge *= 100.0;
    }
    None
}

/// Vertex bookkeeping for the exchange finisher: a basis is a set of p rows
/// whose exact fit X_h β = y_h is the current iterate.
struct Vertex<'a> {
    x: &'a DesignMatrix,
    y: &'a [f64],
    w: &'a WeightVector,
    active: &'a [usize],
    u: f64,
}

impl Vertex<'_> {
    /// Greedy independent basis, visiting rows by |residual| ascending.
    fn basis_from_residuals(&self, beta: &[f64]) -> Result<Vec<usize>> {
        let mut order: Vec<usize> = self.active.to_vec();
        let resid: Vec<f64> =
            order.iter().map(|&i| (self.y[i] - self.x.row_dot(i, beta)).abs()).collect();
        let mut keyed: Vec<(f64, usize)> = resid.into_iter().zip(order.drain(..)).collect();
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        self.greedy_basis(keyed.into_iter().map(|(_, i)| i))
    }

    fn basis_by_index(&self) -> Result<Vec<usize>> {
        self.greedy_basis(self.active.iter().copied())
    }

    fn greedy_basis(&self, rows: impl Iterator<Item = usize>) -> Result<Vec<usize>> {
        let p = self.x.cols();
        let mut basis = Vec::with_capacity(p);
        // Modified Gram-Schmidt over candidate rows.
        let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(p);
        for i in rows {
            let mut v = self.x.row(i);
            let norm0: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                continue;
            }
            for q in &ortho {
                let proj: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                for (vk, qk) in v.iter_mut().zip(q) {
                    *vk -= proj * qk;
                }
            }
            let norm: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > RANK_TOL * norm0 {
                for vk in v.iter_mut() {
                    *vk /= norm;
                }
                ortho.push(v);
                basis.push(i);
                if basis.len() == p {
                    basis.sort_unstable();
                    return Ok(basis);
                }
            }
        }
        Err(Error::rank_deficient("no independent basic rows on the weighted subsample"))
    }

    fn solve_basis(&self, basis: &[usize]) -> Result<Vec<f64>> {
        let p = self.x.cols();
        let mut xh = DMatrix::zeros(p, p);
        let mut yh = DVector::zeros(p);
        for (r, &i) in basis.iter().enumerate() {
            for j in 0..p {
                xh[(r, j)] = self.x.values()[(i, j)];
            }
            yh[r] = self.y[i];
        }
        let lu = xh.lu();
        lu.solve(&yh)
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::rank_deficient("singular basis in exchange step"))
    }

    fn objective(&self, beta: &[f64]) -> f64 {
        self.active
            .iter()
            .map(|&i| {
                self.w.values()[i] * check_loss(self.y[i] - self.x.row_dot(i, beta), self.u)
            })
            .sum()
    }

    /// Exchange pivots until the subgradient optimality condition holds.
    fn exchange(&self, mut basis: Vec<usize>) -> Result<(Vec<f64>, Vec<usize>)> {
        let p = self.x.cols();
        let u = self.u;
        let max_pivots = 50 * self.active.len() + 1000;

        let mut beta = self.solve_basis(&basis)?;
        for _ in 0..max_pivots {
            // Residual classification on the positively weighted sample.
            let pred: Vec<f64> = self.active.iter().map(|&i| self.x.row_dot(i, &beta)).collect();
            let resid: Vec<f64> =
                self.active.iter().zip(&pred).map(|(&i, &f)| self.y[i] - f).collect();

            // Columns of X_h⁻¹ are the edge directions.
            let mut xh = DMatrix::zeros(p, p);
            for (r, &i) in basis.iter().enumerate() {
                for j in 0..p {
                    xh[(r, j)] = self.x.values()[(i, j)];
                }
            }
            let xh_inv = xh
                .lu()
                .try_inverse()
                .ok_or_else(|| Error::rank_deficient("singular basis in exchange step"))?;

            // Directional derivatives along ±v_j for every basic row j.
            let mut best: Option<(f64, usize, bool)> = None; // (derivative, j, positive dir)
            for j in 0..p {
                let v: Vec<f64> = (0..p).map(|k| xh_inv[(k, j)]).collect();
                let mut d_pos = 0.0;
                let mut d_neg = 0.0;
                let mut scale = 0.0;
                for (k, &i) in self.active.iter().enumerate() {
                    let wi = self.w.values()[i];
                    let g: f64 =
                        (0..p).map(|col| self.x.values()[(i, col)] * v[col]).sum();
                    scale += wi * g.abs();
                    let tol = residual_tol(self.y[i], pred[k]);
                    if resid[k] > tol {
                        d_pos += -wi * u * g;
                        d_neg += wi * u * g;
                    } else if resid[k] < -tol {
                        d_pos += -wi * (u - 1.0) * g;
                        d_neg += wi * (u - 1.0) * g;
                    } else {
                        d_pos += wi * ((1.0 - u) * g.max(0.0) + u * (-g).max(0.0));
                        d_neg += wi * ((1.0 - u) * (-g).max(0.0) + u * g.max(0.0));
                    }
                }
                let tol_opt = 1e-10 * (1.0 + scale);
                for (d, positive) in [(d_pos, true), (d_neg, false)] {
                    if d < -tol_opt && best.map(|(bd, _, _)| d < bd).unwrap_or(true) {
                        best = Some((d, j, positive));
                    }
                }
            }

            let Some((deriv0, j_star, positive)) = best else {
                return Ok((beta, basis)); // subgradient optimality holds
            };

            // Piecewise-linear line search along the chosen edge.
            let sign = if positive { 1.0 } else { -1.0 };
            let v: Vec<f64> = (0..p).map(|k| sign * xh_inv[(k, j_star)]).collect();
            let mut breakpoints: Vec<(f64, usize, f64)> = Vec::new(); // (t, active idx, w|g|)
            for (k, &i) in self.active.iter().enumerate() {
                let g: f64 = (0..p).map(|col| self.x.values()[(i, col)] * v[col]).sum();
                let tol = residual_tol(self.y[i], pred[k]);
                if resid[k].abs() > tol && resid[k].signum() == g.signum() && g != 0.0 {
                    breakpoints.push((resid[k] / g, i, self.w.values()[i] * g.abs()));
                }
            }
            breakpoints.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut running = deriv0;
            let mut entering = None;
            for &(_, i, jump) in &breakpoints {
                running += jump;
                if running >= 0.0 {
                    entering = Some(i);
                    break;
                }
            }
            let Some(enter) = entering else {
                return Err(Error::NonConvergence {
                    what: "quantile regression exchange step (descent ray unbounded)".into(),
                    iterations: 0,
                });
            };

            let prev_objective = self.objective(&beta);
            let prev_basis = basis.clone();
            let prev_beta = beta.clone();
            basis[j_star] = enter;
            basis.sort_unstable();
            beta = self.solve_basis(&basis)?;
            if self.objective(&beta) > prev_objective + 1e-9 * (1.0 + prev_objective.abs()) {
                // Numerical stall: the pivot did not descend. Keep the
                // previous vertex rather than loop.
                return Ok((prev_beta, prev_basis));
            }
        }
        Err(Error::NonConvergence {
            what: "quantile regression exchange step".into(),
            iterations: 50 * self.active.len() + 1000,
        })
    }
}

/// Test oracle: exhaustive search over all p-subset exact-fit basic
/// solutions. Exponential in p; intended for small validation instances
/// only. Independent of the interior-point/exchange solver path.
pub mod oracle {
    use nalgebra::{DMatrix, DVector};

    use crate::data::{DesignMatrix, WeightVector};

    /// Minimum weighted check loss over all exact-fit candidates, with the
    /// achieving coefficient vector.
    pub fn brute_force_qr(
        x: &DesignMatrix,
        y: &[f64],
        u: f64,
        w: &WeightVector,
    ) -> Option<(Vec<f64>, f64)> {
        let n = x.rows();
        let p = x.cols();
        let mut best: Option<(Vec<f64>, f64)> = None;
        let mut subset: Vec<usize> = (0..p).collect();
        loop {
            if let Some(beta) = exact_fit(x, y, &subset) {
                let obj: f64 = (0..n)
                    .map(|i| {
                        let r = y[i] - x.row_dot(i, &beta);
                        let loss = if r < 0.0 { (u - 1.0) * r } else { u * r };
                        w.values()[i] * loss
                    })
                    .sum();
                if best.as_ref().map(|(_, b)| obj < *b).unwrap_or(true) {
                    best = Some((beta, obj));
                }
            }
            if !next_combination(&mut subset, n) {
                break;
            }
        }
        best
    }

    fn exact_fit(x: &DesignMatrix, y: &[f64], rows: &[usize]) -> Option<Vec<f64>> {
        let p = x.cols();
        let mut xh = DMatrix::zeros(p, p);
        let mut yh = DVector::zeros(p);
        for (r, &i) in rows.iter().enumerate() {
            for j in 0..p {
                xh[(r, j)] = x.values()[(i, j)];
            }
            yh[r] = y[i];
        }
        xh.lu().solve(&yh).map(|v| v.iter().copied().collect())
    }

    fn next_combination(subset: &mut [usize], n: usize) -> bool {
        let k = subset.len();
        let mut i = k;
        while i > 0 {
            i -= 1;
            if subset[i] < n - k + i {
                subset[i] += 1;
                for j in i + 1..k {
                    subset[j] = subset[j - 1] + 1;
                }
                return true;
            }
        }
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_only(n: usize) -> DesignMatrix {
        DesignMatrix::from_columns(vec![("const".into(), vec![1.0; n])]).unwrap()
    }

    fn design(cols: Vec<(&str, Vec<f64>)>) -> DesignMatrix {
        DesignMatrix::from_columns(
            cols.into_iter().map(|(name, v)| (name.to_string(), v)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn check_loss_formula() {
        assert_eq!(check_loss(0.0, 0.5), 0.0);
        assert_eq!(check_loss(-2.0, 0.25), 1.5);
        assert!((check_loss(3.0, 0.9) - 2.7).abs() < 1e-15);
        assert!(check_loss(-1e-9, 0.01) >= 0.0);
    }

    #[test]
    fn median_of_odd_sample() {
        let x = intercept_only(3);
        let fit =
            solve_weighted_qr(&x, &[1.0, 2.0, 3.0], 0.5, &WeightVector::ones(3)).unwrap();
        assert_eq!(fit.beta, vec![2.0]);
        assert!((fit.objective - 1.0).abs() < 1e-12);
        assert!(fit.active_count >= 1);
    }

    #[test]
    fn matches_brute_force_on_bivariate_instance() {
        let x = design(vec![
            ("const", vec![1.0; 6]),
            ("slope", vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]),
        ]);
        let y = [0.3, 1.4, 1.9, 3.5, 3.6, 5.2];
        let w = WeightVector::ones(6);
        let fit = solve_weighted_qr(&x, &y, 0.3, &w).unwrap();
        let (_, oracle_obj) = oracle::brute_force_qr(&x, &y, 0.3, &w).unwrap();
        assert!((fit.objective - oracle_obj).abs() <= 1e-9);
    }

    #[test]
    fn weight_two_equals_row_duplication() {
        let x = design(vec![("const", vec![1.0; 4]), ("v", vec![0.5, 1.5, 2.0, 4.0])]);
        let y = [1.0, 2.2, 2.1, 5.0];
        let doubled =
            solve_weighted_qr(&x, &y, 0.4, &WeightVector::new(vec![2.0; 4]).unwrap()).unwrap();

        let x2 = design(vec![
            ("const", vec![1.0; 8]),
            ("v", vec![0.5, 1.5, 2.0, 4.0, 0.5, 1.5, 2.0, 4.0]),
        ]);
        let y2 = [1.0, 2.2, 2.1, 5.0, 1.0, 2.2, 2.1, 5.0];
        let duplicated = solve_weighted_qr(&x2, &y2, 0.4, &WeightVector::ones(8)).unwrap();

        for (a, b) in doubled.beta.iter().zip(&duplicated.beta) {
            assert_eq!(a, b, "duplication equivalence should be exact at the vertex");
        }
    }

    #[test]
    fn zero_weight_rows_are_ignored() {
        let x = intercept_only(4);
        let y = [1.0, 2.0, 3.0, 1000.0];
        let w = WeightVector::new(vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let fit = solve_weighted_qr(&x, &y, 0.5, &w).unwrap();
        assert_eq!(fit.beta, vec![2.0]);
    }

    #[test]
    fn collinear_design_is_detected() {
        let x = design(vec![
            ("a", vec![1.0, 2.0, 3.0, 4.0]),
            ("b", vec![2.0, 4.0, 6.0, 8.0]),
        ]);
        let err = solve_weighted_qr(&x, &[1.0, 2.0, 3.0, 4.0], 0.5, &WeightVector::ones(4));
        assert!(matches!(err, Err(Error::RankDeficient { .. })));
    }

    #[test]
    fn nan_response_is_rejected() {
        let x = intercept_only(2);
        let err = solve_weighted_qr(&x, &[1.0, f64::NAN], 0.5, &WeightVector::ones(2));
        assert!(matches!(err, Err(Error::NonFinite { .. })));
    }

    #[test]
    fn quantile_fraction_bounds_hold() {
        // With distinct responses and unit weights: #{r<0} ≤ ⌈un⌉ and
        // #{r≤0} ≥ ⌊un⌋ − p.
        let n = 40;
        let xcol: Vec<f64> = (0..n).map(|i| (i as f64 * 0.73).sin() * 3.0).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| 1.0 + 0.5 * xcol[i] + ((i * 37 + 11) % 97) as f64 / 97.0 * 4.0 - 2.0)
            .collect();
        let x = design(vec![("const", vec![1.0; n]), ("x", xcol)]);
        let w = WeightVector::ones(n);
        for &u in &[0.1, 0.3, 0.5, 0.7, 0.9] {
            let fit = solve_weighted_qr(&x, &y, u, &w).unwrap();
            let resid: Vec<f64> = (0..n).map(|i| y[i] - x.row_dot(i, &fit.beta)).collect();
            let neg = resid.iter().filter(|&&r| r < -1e-9).count();
            let nonpos = resid.iter().filter(|&&r| r <= 1e-9).count();
            let un = u * n as f64;
            assert!(neg as f64 <= un.ceil(), "u={u}: {neg} strictly negative residuals");
            assert!(nonpos as f64 >= un.floor() - 2.0, "u={u}: {nonpos} nonpositive residuals");
        }
    }

    #[test]
    fn regression_equivariance() {
        let n = 25;
        let xcol: Vec<f64> = (0..n).map(|i| ((i * 13 + 5) % 19) as f64 / 3.0).collect();
        let y: Vec<f64> = (0..n).map(|i| 2.0 * xcol[i] + ((i * 7 + 3) % 11) as f64).collect();
        let x = design(vec![("const", vec![1.0; n]), ("x", xcol.clone())]);
        let w = WeightVector::ones(n);
        let base = solve_weighted_qr(&x, &y, 0.35, &w).unwrap();

        let gamma = [1.5, -0.75];
        let shifted: Vec<f64> =
            (0..n).map(|i| y[i] + gamma[0] + gamma[1] * xcol[i]).collect();
        let moved = solve_weighted_qr(&x, &shifted, 0.35, &w).unwrap();
        for (j, &g) in gamma.iter().enumerate() {
            assert!(
                (moved.beta[j] - base.beta[j] - g).abs() < 1e-8,
                "equivariance failed at coefficient {j}"
            );
        }
    }
}
