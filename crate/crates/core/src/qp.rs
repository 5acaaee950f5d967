//! Dense solver for strictly convex quadratic programs.
//!
//! Problems take the form
//!
//! ```text
//!     minimize     1/2 v' Q v + c' v
//!     subject to   lb  <= A v <= ub        (two-sided linear rows)
//!                  vlb <=   v <= vub       (variable bounds)
//! ```
//!
//! with `Q` symmetric positive definite. Internally every finite bound is
//! expanded to a one-sided facet `n·v >= b` and solved with a dual
//! active-set iteration: start at the unconstrained minimum, repeatedly add
//! the most violated facet, taking partial dual steps (dropping blocking
//! facets) whenever a full primal step is not possible. Factorizations are
//! recomputed per active-set change, which is the right trade at the tens of
//! variables this workspace needs.
//!
//! Linear programs ride on the same core through
//! [`solve_lp_via_regularization`], which adds `eps/2 ||v||^2`, re-solves at
//! `eps/10` to confirm the regularization is inert, and polishes the primal
//! to the least-norm point of the discovered optimal face.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Mat};
use crate::num::Scalar;

/// Absolute feasibility tolerance at reported optima.
pub const FEASIBILITY_TOL: f64 = 1e-8;

const COND_LIMIT: f64 = 1e12;
const DEGENERATE_REL: f64 = 1e-12;

/// Which side of a two-sided bound a facet came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Side {
    Lower,
    Upper,
}

/// Identity of an active constraint in the original program.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConstraintId {
    Row { index: usize, side: Side },
    Var { index: usize, side: Side },
}

/// Strictly convex QP with two-sided linear constraints and variable bounds.
#[derive(Debug, Clone)]
pub struct QuadProgram<S> {
    pub q: Mat<S>,
    pub c: Vec<S>,
    pub a: Mat<S>,
    pub lb: Vec<S>,
    pub ub: Vec<S>,
    pub var_lb: Vec<S>,
    pub var_ub: Vec<S>,
}

impl<S: Scalar> QuadProgram<S> {
    /// Unconstrained program skeleton; add rows and bounds afterwards.
    pub fn new(q: Mat<S>, c: Vec<S>) -> Self {
        let n = c.len();
        QuadProgram {
            q,
            c,
            a: Mat::zeros(0, n),
            lb: Vec::new(),
            ub: Vec::new(),
            var_lb: vec![S::neg_infinity(); n],
            var_ub: vec![S::infinity(); n],
        }
    }

    pub fn add_row(&mut self, coeffs: &[S], lb: S, ub: S) {
        debug_assert_eq!(coeffs.len(), self.c.len());
        let mut rows: Vec<Vec<S>> = self.a.iter_rows().map(|r| r.to_vec()).collect();
        rows.push(coeffs.to_vec());
        self.a = Mat::from_rows(&rows).expect("consistent row width");
        self.lb.push(lb);
        self.ub.push(ub);
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<()> {
        let n = self.n_vars();
        if self.q.rows() != n || self.q.cols() != n {
            return Err(Error::DimensionMismatch {
                context: "QuadProgram Q",
                expected: n,
                got: self.q.rows(),
            });
        }
        if self.a.rows() != self.lb.len() || self.a.rows() != self.ub.len() {
            return Err(Error::DimensionMismatch {
                context: "QuadProgram row bounds",
                expected: self.a.rows(),
                got: self.lb.len().min(self.ub.len()),
            });
        }
        if self.var_lb.len() != n || self.var_ub.len() != n {
            return Err(Error::DimensionMismatch {
                context: "QuadProgram var bounds",
                expected: n,
                got: self.var_lb.len().min(self.var_ub.len()),
            });
        }
        for i in 0..n {
            for j in 0..i {
                let d = (self.q.get(i, j) - self.q.get(j, i)).abs();
                let scale = S::one().max(self.q.get(i, j).abs());
                if d > S::from_f64_c(1e-10) * scale {
                    return Err(Error::InvalidConfig("Q must be symmetric".into()));
                }
            }
        }
        for k in 0..self.a.rows() {
            if self.lb[k] > self.ub[k] {
                return Err(Error::InvalidConfig(format!(
                    "row {k}: lb > ub ({} > {})",
                    self.lb[k], self.ub[k]
                )));
            }
        }
        for i in 0..n {
            if self.var_lb[i] > self.var_ub[i] {
                return Err(Error::InvalidConfig(format!("variable {i}: lb > ub")));
            }
        }
        Ok(())
    }

    pub fn objective(&self, v: &[S]) -> S {
        let mut qv = vec![S::zero(); v.len()];
        mat_vec(&self.q, v, &mut qv);
        S::from_f64_c(0.5) * dot(v, &qv) + dot(&self.c, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct QpSolution<S> {
    pub primal: Vec<S>,
    pub objective: S,
    pub active_set: Vec<ConstraintId>,
    /// Multipliers of the active facets, aligned with `active_set`.
    pub dual: Vec<S>,
    pub status: QpStatus,
}

/// KKT residuals of a reported solution; all four are `<= FEASIBILITY_TOL`
/// at every `Optimal`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub complementary_slackness: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementary_slackness)
    }
}

struct Facet<S> {
    id: ConstraintId,
    normal: Vec<S>,
    rhs: S,
    norm: S,
}

fn expand_facets<S: Scalar>(p: &QuadProgram<S>) -> Vec<Facet<S>> {
    let n = p.n_vars();
    let mut facets = Vec::new();
    for k in 0..p.a.rows() {
        let row = p.a.row(k);
        if p.lb[k].is_finite() {
            facets.push(Facet {
                id: ConstraintId::Row {
                    index: k,
                    side: Side::Lower,
                },
                normal: row.to_vec(),
                rhs: p.lb[k],
                norm: S::zero(),
            });
        }
        if p.ub[k].is_finite() {
            facets.push(Facet {
                id: ConstraintId::Row {
                    index: k,
                    side: Side::Upper,
                },
                normal: row.iter().map(|&v| -v).collect(),
                rhs: -p.ub[k],
                norm: S::zero(),
            });
        }
    }
    for i in 0..n {
        if p.var_lb[i].is_finite() {
            let mut normal = vec![S::zero(); n];
            normal[i] = S::one();
            facets.push(Facet {
                id: ConstraintId::Var {
                    index: i,
                    side: Side::Lower,
                },
                normal,
                rhs: p.var_lb[i],
                norm: S::zero(),
            });
        }
        if p.var_ub[i].is_finite() {
            let mut normal = vec![S::zero(); n];
            normal[i] = -S::one();
            facets.push(Facet {
                id: ConstraintId::Var {
                    index: i,
                    side: Side::Upper,
                },
                normal,
                rhs: -p.var_ub[i],
                norm: S::zero(),
            });
        }
    }
    for f in &mut facets {
        let nn = dot(&f.normal, &f.normal).sqrt();
        f.norm = if nn > S::zero() { nn } else { S::one() };
    }
    facets
}

fn mat_vec<S: Scalar>(m: &Mat<S>, x: &[S], out: &mut [S]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(m.row(i), x);
    }
}

/// Dense Cholesky factor (lower triangular) with a cheap condition estimate.
struct Chol<S> {
    l: Mat<S>,
}

impl<S: Scalar> Chol<S> {
    fn factor(a: &Mat<S>) -> Result<Self> {
        let n = a.rows();
        let mut l = Mat::zeros(n, n);
        let mut dmin = S::infinity();
        let mut dmax = S::zero();
        for j in 0..n {
            let mut s = a.get(j, j);
            for k in 0..j {
                s = s - l.get(j, k) * l.get(j, k);
            }
            if s <= S::zero() || !s.is_finite() {
                return Err(Error::IllConditioned { cond: f64::INFINITY });
            }
            let d = s.sqrt();
            dmin = dmin.min(d);
            dmax = dmax.max(d);
            l.set(j, j, d);
            for i in (j + 1)..n {
                let mut s = a.get(i, j);
                for k in 0..j {
                    s = s - l.get(i, k) * l.get(j, k);
                }
                l.set(i, j, s / d);
            }
        }
        let cond = (dmax / dmin).as_f64().powi(2);
        if cond > COND_LIMIT {
            return Err(Error::IllConditioned { cond });
        }
        Ok(Chol { l })
    }

    fn solve(&self, b: &[S]) -> Vec<S> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n {
            for k in 0..i {
                let v = self.l.get(i, k) * y[k];
                y[i] = y[i] - v;
            }
            y[i] = y[i] / self.l.get(i, i);
        }
        for i in (0..n).rev() {
            for k in (i + 1)..n {
                let v = self.l.get(k, i) * y[k];
                y[i] = y[i] - v;
            }
            y[i] = y[i] / self.l.get(i, i);
        }
        y
    }
}

struct ActiveSystem<S> {
    /// `B = Q^-1 N`, one column per active facet.
    b_cols: Vec<Vec<S>>,
    m_chol: Option<Chol<S>>,
}

fn build_active_system<S: Scalar>(
    q_chol: &Chol<S>,
    facets: &[Facet<S>],
    active: &[usize],
) -> Result<ActiveSystem<S>> {
    let b_cols: Vec<Vec<S>> = active
        .iter()
        .map(|&k| q_chol.solve(&facets[k].normal))
        .collect();
    let m_chol = if active.is_empty() {
        None
    } else {
        let qn = active.len();
        let mut m = Mat::zeros(qn, qn);
        for (i, &ki) in active.iter().enumerate() {
            for j in 0..qn {
                m.set(i, j, dot(&facets[ki].normal, &b_cols[j]));
            }
        }
        Some(Chol::factor(&m)?)
    };
    Ok(ActiveSystem { b_cols, m_chol })
}

/// Solves a strictly convex QP with the dual active-set iteration.
///
/// Returns `status: Infeasible` (with an empty primal) when the constraints
/// admit no solution; `Err(IllConditioned)` when `Q` cannot be factored at a
/// trustworthy condition number.
pub fn solve_qp<S: Scalar>(p: &QuadProgram<S>) -> Result<QpSolution<S>> {
    p.validate()?;
    let n = p.n_vars();
    let facets = expand_facets(p);
    let q_chol = Chol::factor(&p.q)?;

    // Unconstrained minimum.
    let neg_c: Vec<S> = p.c.iter().map(|&v| -v).collect();
    let x_unc = q_chol.solve(&neg_c);
    let mut x = x_unc.clone();

    let mut active: Vec<usize> = Vec::new();
    let mut duals: Vec<S> = Vec::new();

    let max_iter = 100 * (n + facets.len() + 1);
    let mut iter = 0usize;

    'outer: loop {
        // Most violated facet, normalized by facet norm.
        let mut worst: Option<(usize, S)> = None;
        for (k, f) in facets.iter().enumerate() {
            if active.contains(&k) {
                continue;
            }
            let slack = (dot(&f.normal, &x) - f.rhs) / f.norm;
            let tol = S::from_f64_c(1e-10) * (S::one() + f.rhs.abs() / f.norm);
            if slack < -tol && worst.map_or(true, |(_, w)| slack < w) {
                worst = Some((k, slack));
            }
        }
        let Some((kp, _)) = worst else {
            break 'outer;
        };

        let np = facets[kp].normal.clone();
        let bp = facets[kp].rhs;
        let mut u_plus = S::zero();

        loop {
            iter += 1;
            if iter > max_iter {
                return Err(Error::Numeric("qp active-set iteration limit".into()));
            }

            let sys = build_active_system(&q_chol, &facets, &active)?;
            let z0 = q_chol.solve(&np);
            let z0n = dot(&z0, &np);

            // r = M^-1 N' Q^-1 n+,  z = Q^-1 n+ - B r
            let (z, r) = if active.is_empty() {
                (z0.clone(), Vec::new())
            } else {
                let rhs: Vec<S> = active
                    .iter()
                    .map(|&k| dot(&facets[k].normal, &z0))
                    .collect();
                let r = sys.m_chol.as_ref().unwrap().solve(&rhs);
                let mut z = z0.clone();
                for (col, &rj) in sys.b_cols.iter().zip(&r) {
                    axpy(-rj, col, &mut z);
                }
                (z, r)
            };
            let zn = dot(&z, &np);
            let degenerate = zn <= S::from_f64_c(DEGENERATE_REL) * z0n.max(S::epsilon());

            // Dual step length: how far duals can move before one hits zero.
            let mut t1 = S::infinity();
            let mut drop_idx = None;
            for (j, &rj) in r.iter().enumerate() {
                if rj > S::zero() {
                    let cand = duals[j] / rj;
                    if cand < t1 {
                        t1 = cand;
                        drop_idx = Some(j);
                    }
                }
            }

            if degenerate {
                if drop_idx.is_none() {
                    // n+ is a nonpositive combination of active normals:
                    // the facet can never be satisfied.
                    return Ok(QpSolution {
                        primal: Vec::new(),
                        objective: S::infinity(),
                        active_set: active.iter().map(|&k| facets[k].id).collect(),
                        dual: duals,
                        status: QpStatus::Infeasible,
                    });
                }
                let j = drop_idx.unwrap();
                for (uj, &rj) in duals.iter_mut().zip(&r) {
                    *uj = *uj - t1 * rj;
                }
                u_plus += t1;
                active.remove(j);
                duals.remove(j);
                continue;
            }

            let slack = dot(&np, &x) - bp;
            let t2 = -slack / zn;
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(Error::Numeric("qp step length not finite".into()));
            }

            axpy(t, &z, &mut x);
            for (uj, &rj) in duals.iter_mut().zip(&r) {
                *uj = *uj - t * rj;
            }
            u_plus += t;

            if t2 <= t1 {
                active.push(kp);
                duals.push(u_plus);
                break;
            }
            let j = drop_idx.expect("partial step implies a blocking facet");
            active.remove(j);
            duals.remove(j);
        }
    }

    // Recompute (x, u) from the final active set in one clean solve to shed
    // the drift the incremental updates accumulate.
    if !active.is_empty() {
        if let Ok(sys) = build_active_system(&q_chol, &facets, &active) {
            let rhs: Vec<S> = active
                .iter()
                .map(|&k| facets[k].rhs - dot(&facets[k].normal, &x_unc))
                .collect();
            let u = sys.m_chol.as_ref().unwrap().solve(&rhs);
            let mut x_clean = x_unc.clone();
            for (col, &uj) in sys.b_cols.iter().zip(&u) {
                axpy(uj, col, &mut x_clean);
            }
            let kkt_clean = kkt_of(p, &facets, &x_clean, &active, &u).max();
            let kkt_incr = kkt_of(p, &facets, &x, &active, &duals).max();
            if u.iter().all(|v| v.is_finite()) && kkt_clean <= kkt_incr {
                x = x_clean;
                duals = u;
            }
        }
    }

    let objective = p.objective(&x);
    Ok(QpSolution {
        primal: x,
        objective,
        active_set: active.iter().map(|&k| facets[k].id).collect(),
        dual: duals,
        status: QpStatus::Optimal,
    })
}

fn kkt_of<S: Scalar>(
    p: &QuadProgram<S>,
    facets: &[Facet<S>],
    x: &[S],
    active: &[usize],
    duals: &[S],
) -> KktResidual {
    let n = p.n_vars();
    let mut grad = vec![S::zero(); n];
    mat_vec(&p.q, x, &mut grad);
    for (g, &ci) in grad.iter_mut().zip(&p.c) {
        *g = *g + ci;
    }
    for (&k, &u) in active.iter().zip(duals) {
        axpy(-u, &facets[k].normal, &mut grad);
    }
    let stationarity = grad
        .iter()
        .map(|v| v.abs().as_f64())
        .fold(0.0_f64, f64::max);

    let mut primal = 0.0_f64;
    let mut comp = 0.0_f64;
    for (k, f) in facets.iter().enumerate() {
        let slack = dot(&f.normal, x) - f.rhs;
        primal = primal.max((-slack).as_f64().max(0.0));
        if let Some(j) = active.iter().position(|&a| a == k) {
            comp = comp.max((duals[j] * slack).abs().as_f64());
        }
    }
    let dual_feas = duals
        .iter()
        .map(|u| (-*u).as_f64().max(0.0))
        .fold(0.0_f64, f64::max);

    KktResidual {
        stationarity,
        primal_feasibility: primal,
        dual_feasibility: dual_feas,
        complementary_slackness: comp,
    }
}

/// Full KKT residual of a solution against its program.
pub fn kkt_residual<S: Scalar>(p: &QuadProgram<S>, sol: &QpSolution<S>) -> KktResidual {
    let facets = expand_facets(p);
    let active: Vec<usize> = sol
        .active_set
        .iter()
        .map(|id| facets.iter().position(|f| f.id == *id).expect("known id"))
        .collect();
    kkt_of(p, &facets, &sol.primal, &active, &sol.dual)
}

// ---------------------------------------------------------------------------
// LP path
// ---------------------------------------------------------------------------

/// Linear program `minimize c·v` over the same constraint geometry as
/// [`QuadProgram`].
#[derive(Debug, Clone)]
pub struct LinearProgram<S> {
    pub c: Vec<S>,
    pub a: Mat<S>,
    pub lb: Vec<S>,
    pub ub: Vec<S>,
    pub var_lb: Vec<S>,
    pub var_ub: Vec<S>,
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new(c: Vec<S>) -> Self {
        let n = c.len();
        LinearProgram {
            c,
            a: Mat::zeros(0, n),
            lb: Vec::new(),
            ub: Vec::new(),
            var_lb: vec![S::neg_infinity(); n],
            var_ub: vec![S::infinity(); n],
        }
    }

    pub fn add_row(&mut self, coeffs: &[S], lb: S, ub: S) {
        let mut rows: Vec<Vec<S>> = self.a.iter_rows().map(|r| r.to_vec()).collect();
        rows.push(coeffs.to_vec());
        self.a = Mat::from_rows(&rows).expect("consistent row width");
        self.lb.push(lb);
        self.ub.push(ub);
    }

    fn as_qp(&self, eps: S) -> QuadProgram<S> {
        let n = self.c.len();
        let mut q = Mat::zeros(n, n);
        for i in 0..n {
            q.set(i, i, eps);
        }
        QuadProgram {
            q,
            c: self.c.clone(),
            a: self.a.clone(),
            lb: self.lb.clone(),
            ub: self.ub.clone(),
            var_lb: self.var_lb.clone(),
            var_ub: self.var_ub.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LpSolution<S> {
    pub primal: Vec<S>,
    /// Linear objective `c·v` (the regularization term excluded).
    pub objective: S,
    pub active_set: Vec<ConstraintId>,
    pub status: QpStatus,
}

/// Default regularization strength for [`solve_lp_via_regularization`].
pub const LP_EPS_REG: f64 = 1e-8;

/// Solves a bounded LP by strictly convexifying it with `eps_reg/2 ||v||^2`.
///
/// The solve is repeated at `eps_reg/10`; if the linear objective shifts by
/// more than 1e-6 the LP is reported unbounded / regularization-sensitive.
/// Among multiple optima the least-norm point of the optimal face is
/// returned.
pub fn solve_lp_via_regularization<S: Scalar>(
    lp: &LinearProgram<S>,
    eps_reg: S,
) -> Result<LpSolution<S>> {
    let norm_limit = S::from_f64_c(1e9);
    let mut solved: Option<(QpSolution<S>, S)> = None;

    for &eps in &[eps_reg, eps_reg / S::from_f64_c(10.0)] {
        let qp = lp.as_qp(eps);
        let sol = solve_qp(&qp)?;
        if sol.status == QpStatus::Infeasible {
            return Ok(LpSolution {
                primal: Vec::new(),
                objective: S::infinity(),
                active_set: sol.active_set,
                status: QpStatus::Infeasible,
            });
        }
        let polished = polish_lp(lp, sol)?;
        if polished
            .primal
            .iter()
            .any(|v| v.abs() > norm_limit || !v.is_finite())
        {
            return Err(Error::LpUnbounded(format!(
                "regularized solution norm exceeds {norm_limit}"
            )));
        }
        let obj = dot(&lp.c, &polished.primal);
        match &solved {
            None => solved = Some((polished, obj)),
            Some((_, first_obj)) => {
                let shift = (obj - *first_obj).abs();
                let scale = S::one().max(first_obj.abs());
                if shift > S::from_f64_c(1e-6) * scale {
                    return Err(Error::LpUnbounded(format!(
                        "objective shifted by {} between eps and eps/10",
                        shift
                    )));
                }
                solved = Some((polished, obj));
            }
        }
    }

    let (sol, objective) = solved.expect("two solves completed");
    Ok(LpSolution {
        primal: sol.primal,
        objective,
        active_set: sol.active_set,
        status: QpStatus::Optimal,
    })
}

/// Replaces the regularized primal with the least-norm point of the active
/// face whenever LP stationarity holds there. This sheds the `O(|c|/eps)`
/// cancellation noise the regularized path carries.
fn polish_lp<S: Scalar>(lp: &LinearProgram<S>, sol: QpSolution<S>) -> Result<QpSolution<S>> {
    if sol.active_set.is_empty() {
        return Ok(sol);
    }
    let n = lp.c.len();
    let qp_zero = lp.as_qp(S::one());
    let facets = expand_facets(&qp_zero);
    let active: Vec<usize> = sol
        .active_set
        .iter()
        .map(|id| facets.iter().position(|f| f.id == *id).expect("known id"))
        .collect();
    let qn = active.len();

    // Gram matrix of active normals.
    let mut gram = Mat::zeros(qn, qn);
    for (i, &ki) in active.iter().enumerate() {
        for (j, &kj) in active.iter().enumerate() {
            gram.set(i, j, dot(&facets[ki].normal, &facets[kj].normal));
        }
    }
    let Ok(chol) = Chol::factor(&gram) else {
        return Ok(sol); // dependent normals; keep the regularized point
    };

    // LP stationarity: c = N u with u >= 0 up to tolerance.
    let rhs_u: Vec<S> = active.iter().map(|&k| dot(&facets[k].normal, &lp.c)).collect();
    let u = chol.solve(&rhs_u);
    let mut resid = lp.c.clone();
    for (&k, &uj) in active.iter().zip(&u) {
        axpy(-uj, &facets[k].normal, &mut resid);
    }
    let c_scale = S::one().max(dot(&lp.c, &lp.c).sqrt());
    if dot(&resid, &resid).sqrt() > S::from_f64_c(1e-7) * c_scale
        || u.iter().any(|&uj| uj < -S::from_f64_c(1e-7) * c_scale)
    {
        return Ok(sol);
    }

    // Least-norm solution of the active equalities: x = N (N'N)^-1 b.
    let rhs_b: Vec<S> = active.iter().map(|&k| facets[k].rhs).collect();
    let w = chol.solve(&rhs_b);
    let mut x = vec![S::zero(); n];
    for (&k, &wj) in active.iter().zip(&w) {
        axpy(wj, &facets[k].normal, &mut x);
    }

    // Must stay feasible for every facet, else keep the regularized point.
    for f in &facets {
        let slack = dot(&f.normal, &x) - f.rhs;
        if slack < -S::from_f64_c(FEASIBILITY_TOL) * (S::one() + f.rhs.abs()) {
            return Ok(sol);
        }
    }

    Ok(QpSolution {
        primal: x,
        objective: sol.objective,
        active_set: sol.active_set,
        dual: u,
        status: QpStatus::Optimal,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn diag_qp(q_diag: &[f64], c: &[f64]) -> QuadProgram<f64> {
        let n = c.len();
        let mut q = Mat::zeros(n, n);
        for i in 0..n {
            q.set(i, i, q_diag[i]);
        }
        QuadProgram::new(q, c.to_vec())
    }

    #[test]
    fn single_active_constraint() {
        // min 1/2 v^2 s.t. v >= 1  ->  v = 1, objective 0.5
        let mut p = diag_qp(&[1.0], &[0.0]);
        p.var_lb[0] = 1.0;
        let sol = solve_qp(&p).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_relative_eq!(sol.primal[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.objective, 0.5, epsilon = 1e-10);
        assert_eq!(sol.active_set.len(), 1);
    }

    #[test]
    fn unconstrained_minimum() {
        // min 1/2 (v-3)^2  ->  v = 3
        let p = diag_qp(&[1.0], &[-3.0]);
        let sol = solve_qp(&p).unwrap();
        assert_relative_eq!(sol.primal[0], 3.0, epsilon = 1e-12);
        assert!(sol.active_set.is_empty());
    }

    #[test]
    fn two_sided_row_binds_on_the_correct_side() {
        // min 1/2 (x^2 + y^2) - 3x  s.t. 1 <= x + y <= 2
        let mut p = diag_qp(&[1.0, 1.0], &[-3.0, 0.0]);
        p.add_row(&[1.0, 1.0], 1.0, 2.0);
        let sol = solve_qp(&p).unwrap();
        // Unconstrained opt (3, 0) violates upper side; project to x+y=2.
        assert_relative_eq!(sol.primal[0], 2.5, epsilon = 1e-9);
        assert_relative_eq!(sol.primal[1], -0.5, epsilon = 1e-9);
        let kkt = kkt_residual(&p, &sol);
        assert!(kkt.max() <= FEASIBILITY_TOL, "kkt {kkt:?}");
    }

    #[test]
    fn infeasible_program_is_reported() {
        let mut p = diag_qp(&[1.0], &[0.0]);
        p.var_lb[0] = 2.0;
        p.var_ub[0] = f64::INFINITY;
        p.add_row(&[1.0], f64::NEG_INFINITY, 1.0);
        let sol = solve_qp(&p).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn ill_conditioned_q_errors_with_estimate() {
        let p = diag_qp(&[1.0, 1e-14], &[0.0, 0.0]);
        match solve_qp(&p) {
            Err(Error::IllConditioned { cond }) => assert!(cond > 1e12),
            other => panic!("expected IllConditioned, got {other:?}"),
        }
    }

    /// Projected-gradient oracle for box-constrained strictly convex QPs.
    fn projected_gradient_oracle(p: &QuadProgram<f64>) -> Vec<f64> {
        let n = p.n_vars();
        // Gershgorin bound on the largest eigenvalue.
        let lip = (0..n)
            .map(|i| p.q.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max);
        let step = 1.0 / lip;
        let mut x: Vec<f64> = (0..n)
            .map(|i| p.var_lb[i].max(0.0).min(p.var_ub[i]))
            .collect();
        let mut grad = vec![0.0; n];
        for _ in 0..200_000 {
            mat_vec(&p.q, &x, &mut grad);
            let mut moved = 0.0_f64;
            for i in 0..n {
                let next = (x[i] - step * (grad[i] + p.c[i]))
                    .max(p.var_lb[i])
                    .min(p.var_ub[i]);
                moved = moved.max((next - x[i]).abs());
                x[i] = next;
            }
            if moved < 1e-14 {
                break;
            }
        }
        x
    }

    fn random_box_qp(rng: &mut ChaCha12Rng, n: usize) -> QuadProgram<f64> {
        // Q = A'A + I keeps conditioning moderate.
        let mut a = Mat::zeros(n, n);
        for v in a.as_mut_slice() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut q = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = if i == j { 1.0 } else { 0.0 };
                for k in 0..n {
                    s += a.get(k, i) * a.get(k, j);
                }
                q.set(i, j, s);
            }
        }
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut p = QuadProgram::new(q, c);
        for i in 0..n {
            let lo = rng.random_range(-1.5..0.0);
            let hi = rng.random_range(0.0..1.5);
            p.var_lb[i] = lo;
            p.var_ub[i] = hi;
        }
        p
    }

    #[test]
    fn random_qps_match_projected_gradient_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        for trial in 0..100 {
            let n = 2 + (trial % 4); // 2..=5 variables
            let p = random_box_qp(&mut rng, n);
            let sol = solve_qp(&p).unwrap();
            assert_eq!(sol.status, QpStatus::Optimal, "trial {trial}");
            let oracle = projected_gradient_oracle(&p);
            let obj_oracle = p.objective(&oracle);
            assert!(
                (sol.objective - obj_oracle).abs() <= 1e-6 * obj_oracle.abs().max(1.0),
                "trial {trial}: solver {} vs oracle {}",
                sol.objective,
                obj_oracle
            );
            let kkt = kkt_residual(&p, &sol);
            assert!(kkt.max() <= FEASIBILITY_TOL, "trial {trial}: kkt {kkt:?}");
        }
    }

    #[test]
    fn grid_refinement_agrees_on_small_boxes() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..10 {
            let n = 2 + (rng.random_range(0..2) as usize);
            let p = random_box_qp(&mut rng, n);
            let sol = solve_qp(&p).unwrap();

            // Refine a grid around the incumbent best.
            let mut lo: Vec<f64> = p.var_lb.clone();
            let mut hi: Vec<f64> = p.var_ub.clone();
            let mut best = f64::INFINITY;
            for _round in 0..12 {
                let steps = 8;
                let mut best_pt = vec![0.0; n];
                best = f64::INFINITY;
                let mut idx = vec![0usize; n];
                loop {
                    let pt: Vec<f64> = (0..n)
                        .map(|i| lo[i] + (hi[i] - lo[i]) * idx[i] as f64 / steps as f64)
                        .collect();
                    let obj = p.objective(&pt);
                    if obj < best {
                        best = obj;
                        best_pt = pt;
                    }
                    let mut d = 0;
                    loop {
                        idx[d] += 1;
                        if idx[d] <= steps {
                            break;
                        }
                        idx[d] = 0;
                        d += 1;
                        if d == n {
                            break;
                        }
                    }
                    if d == n {
                        break;
                    }
                }
                for i in 0..n {
                    let span = (hi[i] - lo[i]) / steps as f64;
                    lo[i] = (best_pt[i] - span).max(p.var_lb[i]);
                    hi[i] = (best_pt[i] + span).min(p.var_ub[i]);
                }
            }
            assert!(
                (sol.objective - best).abs() <= 1e-5 * best.abs().max(1.0),
                "solver {} vs grid {}",
                sol.objective,
                best
            );
        }
    }

    #[test]
    fn constraint_order_does_not_change_the_primal() {
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..20 {
            let n = 3;
            let base = random_box_qp(&mut rng, n);
            let mut p1 = base.clone();
            p1.add_row(&[1.0, 1.0, 1.0], -1.0, 1.0);
            p1.add_row(&[1.0, -1.0, 0.0], -0.5, 0.5);

            let mut p2 = base.clone();
            p2.add_row(&[1.0, -1.0, 0.0], -0.5, 0.5);
            p2.add_row(&[1.0, 1.0, 1.0], -1.0, 1.0);

            let s1 = solve_qp(&p1).unwrap();
            let s2 = solve_qp(&p2).unwrap();
            if s1.status == QpStatus::Optimal && s2.status == QpStatus::Optimal {
                for i in 0..n {
                    assert!(
                        (s1.primal[i] - s2.primal[i]).abs() <= 1e-8,
                        "primal differs: {:?} vs {:?}",
                        s1.primal,
                        s2.primal
                    );
                }
            }
        }
    }

    #[test]
    fn lp_simple_maximum() {
        // max k s.t. k <= 5, phrased as min -k.
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.var_ub[0] = 5.0;
        let sol = solve_lp_via_regularization(&lp, LP_EPS_REG).unwrap();
        assert_relative_eq!(sol.primal[0], 5.0, epsilon = 1e-8);
        assert_relative_eq!(sol.objective, -5.0, epsilon = 1e-8);
    }

    #[test]
    fn lp_single_area_margin_shape() {
        // max k*d s.t. d - g <= -k*d  with d=80, g=100  ->  k=0.25, k*d=20.
        let d = 80.0;
        let g = 100.0;
        let mut lp = LinearProgram::new(vec![-d]);
        lp.add_row(&[-d], d - g, d);
        let sol = solve_lp_via_regularization(&lp, LP_EPS_REG).unwrap();
        assert_relative_eq!(sol.primal[0], 0.25, epsilon = 1e-9);
        assert_relative_eq!(-sol.objective, 20.0, epsilon = 1e-7);
    }

    #[test]
    fn lp_degenerate_face_returns_min_norm_point() {
        // max x + y s.t. x + y <= 1, 0 <= x, y <= 1: optimal face is the
        // segment (0,1)-(1,0); regularization picks (0.5, 0.5).
        let mut lp = LinearProgram::new(vec![-1.0, -1.0]);
        lp.add_row(&[1.0, 1.0], f64::NEG_INFINITY, 1.0);
        lp.var_lb = vec![0.0, 0.0];
        lp.var_ub = vec![1.0, 1.0];
        let sol = solve_lp_via_regularization(&lp, LP_EPS_REG).unwrap();
        assert_relative_eq!(sol.objective, -1.0, epsilon = 1e-8);
        assert_relative_eq!(sol.primal[0], 0.5, epsilon = 1e-6);
        assert_relative_eq!(sol.primal[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn unbounded_lp_is_detected() {
        let mut lp = LinearProgram::new(vec![-1.0]);
        lp.var_lb[0] = 0.0;
        match solve_lp_via_regularization(&lp, LP_EPS_REG) {
            Err(Error::LpUnbounded(_)) => {}
            other => panic!("expected LpUnbounded, got {other:?}"),
        }
    }
}
