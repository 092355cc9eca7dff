//! Dense convex QP solver based on operator splitting (ADMM).
//!
//! Solves `min 1/2 x'Px + q'x  s.t.  l <= Ax <= u`. Equality rows are bound
//! pairs with `l == u`. The iteration follows the usual splitting with
//! over-relaxation: one linear solve with the cached factorization of
//! `P + sigma I + A' diag(rho) A`, a projection onto the box, and a dual
//! update. Optionally the result is refined by solving the KKT system on the
//! guessed active set.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::Serialize;
use thiserror::Error;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_SCALE: f64 = 1e3;
const EQ_TOL: f64 = 1e-4;
const POLISH_DELTA: f64 = 1e-7;
const POLISH_REFINE_ITERS: usize = 5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("lower bound exceeds upper bound on row {0}")]
    InvertedBounds(usize),
    #[error("cost matrix is not symmetric")]
    Asymmetric,
    #[error("non-finite problem data")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub l: DVector<f64>,
    pub u: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        l: DVector<f64>,
        u: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = q.len();
        let m = l.len();
        if p.shape() != (n, n) {
            return Err(QpError::Dimension(format!("P is {:?}, expected {n}x{n}", p.shape())));
        }
        if a.shape() != (m, n) || u.len() != m {
            return Err(QpError::Dimension(format!(
                "A is {:?} with {} lower and {} upper bounds, expected {m}x{n}",
                a.shape(),
                m,
                u.len()
            )));
        }
        if p.iter().chain(q.iter()).chain(a.iter()).any(|v| !v.is_finite())
            || l.iter().chain(u.iter()).any(|v| v.is_nan())
        {
            return Err(QpError::NonFinite);
        }
        if let Some(i) = (0..m).find(|&i| l[i] > u[i]) {
            return Err(QpError::InvertedBounds(i));
        }
        if (&p - p.transpose()).abs().max() > 1e-9 {
            return Err(QpError::Asymmetric);
        }
        Ok(Self { p, q, a, l, u })
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn m(&self) -> usize {
        self.l.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + self.q.dot(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    /// Initial ADMM penalty.
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub adaptive_rho_tolerance: f64,
    pub eps_prim_inf: f64,
    pub polish: bool,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            max_iter: 4000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            adaptive_rho_tolerance: 5.0,
            eps_prim_inf: 1e-5,
            polish: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIterations,
    PrimalInfeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers: positive on active upper bounds, negative on lower.
    pub y: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// Tolerances the residuals were held to at termination.
    pub eps_primal: f64,
    pub eps_dual: f64,
    pub polished: bool,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub y: DVector<f64>,
}

struct Factorization {
    p: DMatrix<f64>,
    a: DMatrix<f64>,
    rho: DVector<f64>,
    sigma: f64,
    chol: Cholesky<f64, Dyn>,
}

impl Factorization {
    fn matches(&self, prob: &QpProblem, rho: &DVector<f64>, sigma: f64) -> bool {
        self.sigma == sigma && self.rho == *rho && self.p == prob.p && self.a == prob.a
    }
}

/// Reusable solver state: cached factorization, current penalty and
/// iteration buffers. One workspace per caller.
pub struct QpWorkspace {
    pub settings: QpSettings,
    rho: f64,
    cache: Option<Factorization>,
    factorizations: usize,
}

impl std::fmt::Debug for QpWorkspace {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("QpWorkspace")
            .field("settings", &self.settings)
            .field("rho", &self.rho)
            .field("factorizations", &self.factorizations)
            .finish()
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

fn row_rho(l: f64, u: f64, rho: f64) -> f64 {
    if l == f64::NEG_INFINITY && u == f64::INFINITY {
        RHO_MIN
    } else if u - l < EQ_TOL {
        RHO_EQ_SCALE * rho
    } else {
        rho
    }
}

impl QpWorkspace {
    pub fn new(settings: QpSettings) -> Self {
        Self {
            settings,
            rho: settings.rho,
            cache: None,
            factorizations: 0,
        }
    }

    /// Number of matrix factorizations performed so far.
    pub fn factorizations(&self) -> usize {
        self.factorizations
    }

    /// Drops the cached factorization and restores the initial penalty.
    pub fn reset(&mut self) {
        self.rho = self.settings.rho;
        self.cache = None;
    }

    fn rho_vector(&self, prob: &QpProblem) -> DVector<f64> {
        DVector::from_iterator(
            prob.m(),
            (0..prob.m()).map(|i| row_rho(prob.l[i], prob.u[i], self.rho)),
        )
    }

    fn factor(&mut self, prob: &QpProblem, rho: &DVector<f64>) {
        let sigma = self.settings.sigma;
        if self
            .cache
            .as_ref()
            .is_some_and(|f| f.matches(prob, rho, sigma))
        {
            return;
        }
        let mut scaled = prob.a.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row *= rho[i].sqrt();
        }
        let mut k = scaled.tr_mul(&scaled);
        k += &prob.p;
        for i in 0..prob.n() {
            k[(i, i)] += sigma;
        }
        let chol = Cholesky::new(k).expect("P + sigma I + A' R A is positive definite");
        self.factorizations += 1;
        self.cache = Some(Factorization {
            p: prob.p.clone(),
            a: prob.a.clone(),
            rho: rho.clone(),
            sigma,
            chol,
        });
    }

    pub fn solve(&mut self, prob: &QpProblem, warm: Option<&WarmStart>) -> QpSolution {
        let s = self.settings;
        let (n, m) = (prob.n(), prob.m());
        let mut x = DVector::zeros(n);
        let mut y = DVector::zeros(m);
        if let Some(w) = warm.filter(|w| w.x.len() == n && w.y.len() == m) {
            x.copy_from(&w.x);
            y.copy_from(&w.y);
        }
        let mut z = &prob.a * &x;
        clamp_into(&mut z, &prob.l, &prob.u);

        let mut rho = self.rho_vector(prob);
        self.factor(prob, &rho);

        let mut rhs = DVector::zeros(n);
        let mut xt = DVector::zeros(n);
        let mut zt = DVector::zeros(m);
        let mut work_m = DVector::zeros(m);
        let mut ax = DVector::zeros(m);
        let mut px = DVector::zeros(n);
        let mut aty = DVector::zeros(n);
        let mut dy = DVector::zeros(m);
        let mut atdy = DVector::zeros(n);

        let mut status = QpStatus::MaxIterations;
        let mut iterations = 0;
        let (mut r_prim, mut r_dual, mut eps_prim, mut eps_dual) = (f64::INFINITY, f64::INFINITY, 0.0, 0.0);

        for iter in 1..=s.max_iter {
            iterations = iter;
            // rhs = sigma x - q + A'(rho .* z - y)
            for i in 0..m {
                work_m[i] = rho[i] * z[i] - y[i];
            }
            rhs.gemv_tr(1.0, &prob.a, &work_m, 0.0);
            rhs.axpy(s.sigma, &x, 1.0);
            rhs -= &prob.q;
            xt.copy_from(&rhs);
            self.cache
                .as_ref()
                .expect("factorized above")
                .chol
                .solve_mut(&mut xt);
            zt.gemv(1.0, &prob.a, &xt, 0.0);

            for i in 0..n {
                x[i] = s.alpha * xt[i] + (1.0 - s.alpha) * x[i];
            }
            for i in 0..m {
                let relaxed = s.alpha * zt[i] + (1.0 - s.alpha) * z[i];
                let z_new = (relaxed + y[i] / rho[i]).clamp(prob.l[i], prob.u[i]);
                let y_new = y[i] + rho[i] * (relaxed - z_new);
                dy[i] = y_new - y[i];
                y[i] = y_new;
                z[i] = z_new;
            }

            ax.gemv(1.0, &prob.a, &x, 0.0);
            px.gemv(1.0, &prob.p, &x, 0.0);
            aty.gemv_tr(1.0, &prob.a, &y, 0.0);
            r_prim = (0..m).fold(0.0_f64, |acc, i| acc.max((ax[i] - z[i]).abs()));
            r_dual = (0..n).fold(0.0_f64, |acc, i| acc.max((px[i] + prob.q[i] + aty[i]).abs()));
            let ax_norm = inf_norm(&ax);
            let z_norm = inf_norm(&z);
            let px_norm = inf_norm(&px);
            let aty_norm = inf_norm(&aty);
            let q_norm = inf_norm(&prob.q);
            eps_prim = s.eps_abs + s.eps_rel * ax_norm.max(z_norm);
            eps_dual = s.eps_abs + s.eps_rel * px_norm.max(aty_norm).max(q_norm);
            if r_prim <= eps_prim && r_dual <= eps_dual {
                status = QpStatus::Solved;
                break;
            }

            if primal_infeasible(prob, &dy, &mut atdy, s.eps_prim_inf) {
                status = QpStatus::PrimalInfeasible;
                break;
            }

            if s.adaptive_rho && iter % s.adaptive_rho_interval == 0 {
                let prim_scale = ax_norm.max(z_norm).max(1e-30);
                let dual_scale = px_norm.max(aty_norm).max(q_norm).max(1e-30);
                let ratio = (r_prim / prim_scale) / (r_dual / dual_scale).max(1e-30);
                let proposed = (self.rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX);
                if proposed > self.rho * s.adaptive_rho_tolerance
                    || proposed < self.rho / s.adaptive_rho_tolerance
                {
                    self.rho = proposed;
                    rho = self.rho_vector(prob);
                    self.factor(prob, &rho);
                }
            }
        }

        let mut sol = QpSolution {
            objective: prob.objective(&x),
            x,
            y,
            status,
            iterations,
            primal_residual: r_prim,
            dual_residual: r_dual,
            eps_primal: eps_prim,
            eps_dual,
            polished: false,
        };
        if s.polish && status != QpStatus::PrimalInfeasible {
            polish(prob, &z, &mut sol, &s);
        }
        sol
    }
}

fn clamp_into(z: &mut DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) {
    for i in 0..z.len() {
        z[i] = z[i].clamp(l[i], u[i]);
    }
}

/// Certificate test on the dual increment: `A' dy ~ 0` while the support
/// function of the bound box along `dy` is strictly negative.
fn primal_infeasible(prob: &QpProblem, dy: &DVector<f64>, atdy: &mut DVector<f64>, eps: f64) -> bool {
    let norm = inf_norm(dy);
    if norm < 1e-10 {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        let d = dy[i];
        if d > eps * norm {
            if prob.u[i] == f64::INFINITY {
                return false;
            }
            support += prob.u[i] * d;
        } else if d < -eps * norm {
            if prob.l[i] == f64::NEG_INFINITY {
                return false;
            }
            support += prob.l[i] * d;
        }
    }
    if support >= -eps * norm {
        return false;
    }
    atdy.gemv_tr(1.0, &prob.a, dy, 0.0);
    inf_norm(atdy) <= eps * norm
}

/// Solves the equality-constrained QP on the active set guessed from the
/// ADMM iterate and keeps it if it is primal feasible with correctly signed
/// multipliers.
fn polish(prob: &QpProblem, z: &DVector<f64>, sol: &mut QpSolution, s: &QpSettings) {
    let (n, m) = (prob.n(), prob.m());
    // (row, bound value, sign): sign -1 lower, +1 upper, 0 equality
    let mut active: Vec<(usize, f64, i8)> = Vec::new();
    for i in 0..m {
        let (l, u, yi) = (prob.l[i], prob.u[i], sol.y[i]);
        let lower = l.is_finite() && z[i] - l < -yi;
        let upper = u.is_finite() && u - z[i] < yi;
        if u - l < EQ_TOL && l.is_finite() {
            active.push((i, if yi >= 0.0 { u } else { l }, 0));
        } else if lower {
            active.push((i, l, -1));
        } else if upper {
            active.push((i, u, 1));
        }
    }
    let k = active.len();
    let mut kkt = DMatrix::zeros(n + k, n + k);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
    let mut rhs = DVector::zeros(n + k);
    for j in 0..n {
        rhs[j] = -prob.q[j];
    }
    for (r, &(i, b, _)) in active.iter().enumerate() {
        for j in 0..n {
            kkt[(n + r, j)] = prob.a[(i, j)];
            kkt[(j, n + r)] = prob.a[(i, j)];
        }
        rhs[n + r] = b;
    }
    // Regularized factorization tolerates redundant active rows; iterative
    // refinement against the exact matrix removes the regularization bias.
    let mut reg = kkt.clone();
    for j in 0..n {
        reg[(j, j)] += POLISH_DELTA;
    }
    for r in 0..k {
        reg[(n + r, n + r)] -= POLISH_DELTA;
    }
    let lu = reg.lu();
    let Some(mut xy) = lu.solve(&rhs) else {
        return;
    };
    for _ in 0..POLISH_REFINE_ITERS {
        let residual = &rhs - &kkt * &xy;
        match lu.solve(&residual) {
            Some(d) => xy += d,
            None => return,
        }
    }
    if xy.iter().any(|v| !v.is_finite()) {
        return;
    }
    let x = xy.rows(0, n).into_owned();
    let mut y = DVector::zeros(m);
    let tol = s.eps_abs;
    for (r, &(i, _, sign)) in active.iter().enumerate() {
        let yi = xy[n + r];
        if (sign < 0 && yi > tol) || (sign > 0 && yi < -tol) {
            return;
        }
        y[i] = yi;
    }
    let ax = &prob.a * &x;
    let mut r_prim = 0.0_f64;
    for i in 0..m {
        r_prim = r_prim.max(prob.l[i] - ax[i]).max(ax[i] - prob.u[i]);
    }
    let r_dual = inf_norm(&(&prob.p * &x + &prob.q + prob.a.tr_mul(&y)));
    if r_prim > tol || r_dual > tol {
        return;
    }
    sol.objective = prob.objective(&x);
    sol.x = x;
    sol.y = y;
    sol.primal_residual = r_prim.max(0.0);
    sol.dual_residual = r_dual;
    sol.polished = true;
    sol.status = QpStatus::Solved;
}

/// Cold-start solve with a throwaway workspace.
pub fn solve(prob: &QpProblem, settings: QpSettings) -> QpSolution {
    QpWorkspace::new(settings).solve(prob, None)
}

/// KKT residuals of a candidate primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    /// `||Px + q + A'y||_inf`
    pub stationarity: f64,
    /// Largest bound violation of `Ax`.
    pub primal_violation: f64,
    /// Largest `|y_i| * slack_i` over rows, with the slack measured to the
    /// bound the multiplier's sign points at.
    pub complementarity: f64,
    /// Largest multiplier pushing against an infinite bound.
    pub dual_sign_violation: f64,
}

pub fn kkt_report(prob: &QpProblem, x: &DVector<f64>, y: &DVector<f64>) -> KktReport {
    let ax = &prob.a * x;
    let stationarity = inf_norm(&(&prob.p * x + &prob.q + prob.a.tr_mul(y)));
    let mut primal_violation = 0.0_f64;
    let mut complementarity = 0.0_f64;
    let mut dual_sign_violation = 0.0_f64;
    for i in 0..prob.m() {
        primal_violation = primal_violation
            .max(prob.l[i] - ax[i])
            .max(ax[i] - prob.u[i]);
        let yi = y[i];
        if yi > 0.0 {
            if prob.u[i].is_finite() {
                complementarity = complementarity.max(yi * (prob.u[i] - ax[i]).abs());
            } else {
                dual_sign_violation = dual_sign_violation.max(yi);
            }
        } else if yi < 0.0 {
            if prob.l[i].is_finite() {
                complementarity = complementarity.max(-yi * (ax[i] - prob.l[i]).abs());
            } else {
                dual_sign_violation = dual_sign_violation.max(-yi);
            }
        }
    }
    KktReport {
        stationarity,
        primal_violation,
        complementarity,
        dual_sign_violation,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dm(rows: usize, cols: usize, data: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, data)
    }

    fn dv(data: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(data)
    }

    #[test]
    fn unconstrained_scalar() {
        let prob = QpProblem::new(dm(1, 1, &[2.0]), dv(&[-2.0]), DMatrix::zeros(0, 1), dv(&[]), dv(&[])).unwrap();
        let sol = solve(&prob, QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn active_lower_bound() {
        let prob = QpProblem::new(
            dm(1, 1, &[2.0]),
            dv(&[0.0]),
            dm(1, 1, &[1.0]),
            dv(&[1.0]),
            dv(&[f64::INFINITY]),
        )
        .unwrap();
        let sol = solve(&prob, QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 1.0).abs() < 1e-6);
        assert!(sol.y[0] < 0.0);
    }

    #[test]
    fn projection_onto_half_plane() {
        // min |x - (3,4)|^2 s.t. x1 + x2 <= 1  ->  (3,4) - 3 (1,1) = (0,1)
        let prob = QpProblem::new(
            dm(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            dv(&[-6.0, -8.0]),
            dm(1, 2, &[1.0, 1.0]),
            dv(&[f64::NEG_INFINITY]),
            dv(&[1.0]),
        )
        .unwrap();
        let sol = solve(&prob, QpSettings::default());
        assert_eq!(sol.status, QpStatus::Solved);
        assert!((sol.x[0] - 0.0).abs() < 1e-6 && (sol.x[1] - 1.0).abs() < 1e-6);
        // multiplier from stationarity: 2(x - c) + y (1,1) = 0  ->  y = 6
        assert!((sol.y[0] - 6.0).abs() < 1e-5);
    }

    #[test]
    fn detects_primal_infeasibility() {
        // x >= 2 and x <= 1
        let prob = QpProblem::new(
            dm(1, 1, &[1.0]),
            dv(&[0.0]),
            dm(2, 1, &[1.0, 1.0]),
            dv(&[2.0, f64::NEG_INFINITY]),
            dv(&[f64::INFINITY, 1.0]),
        )
        .unwrap();
        let sol = solve(&prob, QpSettings::default());
        assert_eq!(sol.status, QpStatus::PrimalInfeasible);
    }

    #[test]
    fn rejects_bad_problems() {
        assert_eq!(
            QpProblem::new(dm(1, 1, &[1.0]), dv(&[0.0]), dm(1, 1, &[1.0]), dv(&[2.0]), dv(&[1.0])),
            Err(QpError::InvertedBounds(0))
        );
        assert_eq!(
            QpProblem::new(dm(2, 2, &[1.0, 0.5, 0.0, 1.0]), dv(&[0.0, 0.0]), DMatrix::zeros(0, 2), dv(&[]), dv(&[])),
            Err(QpError::Asymmetric)
        );
        assert!(matches!(
            QpProblem::new(dm(1, 1, &[1.0]), dv(&[0.0, 1.0]), DMatrix::zeros(0, 2), dv(&[]), dv(&[])),
            Err(QpError::Dimension(_))
        ));
    }

    #[test]
    fn max_iterations_reports_best_iterate() {
        let prob = QpProblem::new(
            dm(2, 2, &[4.0, 1.0, 1.0, 2.0]),
            dv(&[1.0, 1.0]),
            dm(3, 2, &[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]),
            dv(&[1.0, 0.0, 0.0]),
            dv(&[1.0, 0.7, 0.7]),
        )
        .unwrap();
        let settings = QpSettings {
            max_iter: 2,
            polish: false,
            ..Default::default()
        };
        let sol = solve(&prob, settings);
        assert_eq!(sol.status, QpStatus::MaxIterations);
        assert_eq!(sol.iterations, 2);
        assert!(sol.x.iter().all(|v| v.is_finite()));
        // the same problem converges with the default budget
        let full = solve(&prob, QpSettings::default());
        assert_eq!(full.status, QpStatus::Solved);
        assert!((full.x[0] - 0.3).abs() < 1e-6 && (full.x[1] - 0.7).abs() < 1e-6);
    }

    #[test]
    fn factorization_is_reused_for_identical_matrices() {
        let prob = QpProblem::new(
            dm(2, 2, &[2.0, 0.0, 0.0, 2.0]),
            dv(&[-6.0, -8.0]),
            dm(1, 2, &[1.0, 1.0]),
            dv(&[f64::NEG_INFINITY]),
            dv(&[1.0]),
        )
        .unwrap();
        let mut ws = QpWorkspace::new(QpSettings::default());
        let first = ws.solve(&prob, None);
        let count = ws.factorizations();
        let mut shifted = prob.clone();
        shifted.q = dv(&[-5.0, -8.0]);
        let warm = WarmStart { x: first.x.clone(), y: first.y.clone() };
        let second = ws.solve(&shifted, Some(&warm));
        assert_eq!(second.status, QpStatus::Solved);
        assert_eq!(ws.factorizations(), count);
    }

    /// Exhaustive active-set oracle: for every assignment of rows to
    /// {free, at lower, at upper}, solve the equality-constrained problem and
    /// keep the best feasible point. Valid for strictly convex objectives.
    fn active_set_oracle(prob: &QpProblem) -> f64 {
        let (n, m) = (prob.n(), prob.m());
        let mut best = f64::INFINITY;
        let total = 3usize.pow(m as u32);
        for code in 0..total {
            let mut rows = Vec::new();
            let mut c = code;
            let mut valid = true;
            for i in 0..m {
                match c % 3 {
                    1 if prob.l[i].is_finite() => rows.push((i, prob.l[i])),
                    2 if prob.u[i].is_finite() => rows.push((i, prob.u[i])),
                    0 => {}
                    _ => valid = false,
                }
                c /= 3;
            }
            if !valid || rows.len() > n {
                continue;
            }
            let k = rows.len();
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(&prob.p);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&prob.q));
            for (r, &(i, b)) in rows.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + r, j)] = prob.a[(i, j)];
                    kkt[(j, n + r)] = prob.a[(i, j)];
                }
                rhs[n + r] = b;
            }
            let Some(sol) = kkt.lu().solve(&rhs) else { continue };
            let x = sol.rows(0, n).into_owned();
            let ax = &prob.a * &x;
            let feasible = (0..m).all(|i| ax[i] >= prob.l[i] - 1e-9 && ax[i] <= prob.u[i] + 1e-9);
            if feasible {
                best = best.min(prob.objective(&x));
            }
        }
        best
    }

    pub(crate) fn random_problem(rng: &mut ChaCha8Rng) -> QpProblem {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=8);
        let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let p = g.tr_mul(&g) + DMatrix::identity(n, n) * 0.1;
        let q = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
        // a feasible point keeps the instance feasible
        let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let ax0 = &a * &x0;
        let mut l = DVector::zeros(m);
        let mut u = DVector::zeros(m);
        for i in 0..m {
            match rng.random_range(0..4) {
                0 => {
                    l[i] = ax0[i] - rng.random_range(0.0..1.0);
                    u[i] = f64::INFINITY;
                }
                1 => {
                    l[i] = f64::NEG_INFINITY;
                    u[i] = ax0[i] + rng.random_range(0.0..1.0);
                }
                2 => {
                    l[i] = ax0[i] - rng.random_range(0.0..1.0);
                    u[i] = ax0[i] + rng.random_range(0.0..1.0);
                }
                _ => {
                    l[i] = ax0[i];
                    u[i] = ax0[i];
                }
            }
        }
        // symmetrize exactly
        let p = (&p + p.transpose()) * 0.5;
        QpProblem::new(p, q, a, l, u).unwrap()
    }

    #[test]
    fn agrees_with_active_set_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..100 {
            let prob = random_problem(&mut rng);
            let sol = solve(&prob, QpSettings::default());
            assert_eq!(sol.status, QpStatus::Solved);
            let oracle = active_set_oracle(&prob);
            assert!((sol.objective - oracle).abs() <= 1e-6, "{} vs {}", sol.objective, oracle);
            let kkt = kkt_report(&prob, &sol.x, &sol.y);
            assert!(kkt.stationarity <= 10.0 * sol.eps_dual);
            assert!(kkt.primal_violation <= 10.0 * sol.eps_primal);
            assert!(kkt.complementarity <= 10.0 * sol.eps_dual.max(sol.eps_primal));
            assert_eq!(kkt.dual_sign_violation, 0.0);
        }
    }

    #[test]
    fn warm_start_needs_fewer_iterations() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let settings = QpSettings { polish: false, adaptive_rho: false, ..Default::default() };
        let mut warm_iters = Vec::new();
        let mut cold_iters = Vec::new();
        for _ in 0..50 {
            let prob = random_problem(&mut rng);
            let base = solve(&prob, settings);
            let mut next = prob.clone();
            for v in next.q.iter_mut() {
                *v += rng.random_range(-1e-3..1e-3);
            }
            let warm = WarmStart { x: base.x.clone(), y: base.y.clone() };
            warm_iters.push(QpWorkspace::new(settings).solve(&next, Some(&warm)).iterations);
            cold_iters.push(solve(&next, settings).iterations);
        }
        warm_iters.sort_unstable();
        cold_iters.sort_unstable();
        assert!(warm_iters[25] <= cold_iters[25], "{warm_iters:?} {cold_iters:?}");
    }

    #[test]
    fn polishing_usually_succeeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let polished = (0..100)
            .filter(|_| solve(&random_problem(&mut rng), QpSettings::default()).polished)
            .count();
        assert!(polished >= 90, "{polished}");
    }
}
