//! Dense convex-QP / LP solver.
//!
//! One primal-dual interior-point code path (Mehrotra predictor-corrector,
//! dense KKT factorization) serves both the quadratic node relaxations of the
//! master problem and the small envelope-fitting LPs. Infeasibility is
//! decided by a Farkas certificate: either extracted from a diverging dual
//! iterate or, as a fallback, from an auxiliary bounded LP that maximizes the
//! Farkas gap. A certificate is only surfaced after independent
//! re-verification.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Constraint sense of one linear row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

/// One linear constraint `sum coeffs . x <sense> rhs`.
#[derive(Debug, Clone)]
pub struct LinearRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Convex program
/// `min sum quad[k].2 * x_i * x_j + lin . x + constant`
/// subject to linear rows and variable bounds.
///
/// Quadratic terms are given as `(i, j, v)` with `i <= j`; a diagonal term
/// `(i, i, v)` contributes `v * x_i^2`. The assembled Hessian must be
/// positive semidefinite (checked with an eigenvalue floor of `-1e-10`
/// relative to the matrix scale).
#[derive(Debug, Clone)]
pub struct ConvexProgram {
    pub n: usize,
    pub quad: Vec<(usize, usize, f64)>,
    pub lin: Vec<f64>,
    pub constant: f64,
    pub rows: Vec<LinearRow>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ConvexProgram {
    /// Empty program with `n` free variables and zero objective.
    pub fn new(n: usize) -> Self {
        ConvexProgram {
            n,
            quad: Vec::new(),
            lin: vec![0.0; n],
            constant: 0.0,
            rows: Vec::new(),
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    /// Objective value at a full assignment.
    pub fn objective_at(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, j, q) in &self.quad {
            v += q * x[i] * x[j];
        }
        for (i, &c) in self.lin.iter().enumerate() {
            v += c * x[i];
        }
        v
    }

    /// Dense symmetric Hessian of the objective (the `Q` in `1/2 x'Qx`).
    fn hessian(&self) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.quad {
            if i == j {
                q[(i, i)] += 2.0 * v;
            } else {
                q[(i, j)] += v;
                q[(j, i)] += v;
            }
        }
        q
    }

    fn validate(&self) -> Result<()> {
        if self.lin.len() != self.n || self.lower.len() != self.n || self.upper.len() != self.n {
            return Err(Error::Model("program array sizes disagree with n".into()));
        }
        for &(i, j, _) in &self.quad {
            if i > j || j >= self.n {
                return Err(Error::Model(format!("bad quad index ({i},{j})")));
            }
        }
        for row in &self.rows {
            for &(i, _) in &row.coeffs {
                if i >= self.n {
                    return Err(Error::Model(format!("row references variable {i} >= n")));
                }
            }
        }
        for i in 0..self.n {
            if self.lower[i] > self.upper[i] + 1e-30 {
                return Err(Error::Model(format!(
                    "variable {i} has empty bound interval [{}, {}]",
                    self.lower[i], self.upper[i]
                )));
            }
        }
        // PSD check with a relative eigenvalue floor.
        if !self.quad.is_empty() {
            let q = self.hessian();
            let scale = q.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1.0);
            let eig = q.symmetric_eigenvalues();
            let min = eig.iter().fold(f64::INFINITY, |a, &v| a.min(v));
            if min < -1e-10 * scale {
                return Err(Error::Model(format!(
                    "objective Hessian is not PSD (min eigenvalue {min:.3e})"
                )));
            }
        }
        Ok(())
    }
}

/// Status of a convex solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterLimit,
}

/// Farkas certificate of primal infeasibility for
/// `{A x = b, G x <= h}`: multipliers with `A'y_eq + G'y_ineq = 0`,
/// `y_ineq >= 0` and `b'y_eq + h'y_ineq < 0`.
#[derive(Debug, Clone)]
pub struct FarkasCertificate {
    /// Multipliers on equality rows (reduced system order).
    pub y_eq: Vec<f64>,
    /// Nonnegative multipliers on inequality rows (reduced system order).
    pub y_ineq: Vec<f64>,
    /// `-(b'y_eq + h'y_ineq)`; strictly positive for a valid certificate.
    pub margin: f64,
    /// Infinity norm of `A'y_eq + G'y_ineq`.
    pub residual: f64,
}

/// Outcome of [`solve_convex`].
#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub status: SolveStatus,
    /// Primal point over the original variables (best iterate on IterLimit).
    pub x: Vec<f64>,
    /// Multipliers per original constraint row.
    pub row_duals: Vec<f64>,
    /// Multipliers on lower/upper variable bounds.
    pub lower_duals: Vec<f64>,
    pub upper_duals: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// (primal, dual, complementarity) residuals at the returned point.
    pub residuals: (f64, f64, f64),
    /// Diagonal regularization that was applied to the Hessian.
    pub regularization: f64,
    pub certificate: Option<FarkasCertificate>,
}

const DEFAULT_REG: f64 = 1e-12;
const MAX_ITERS: usize = 200;

/// Reduced standard form `min 1/2 x'Qx + q'x  s.t.  A x = b, G x <= h`
/// over the non-fixed variables.
struct Reduced {
    nr: usize,
    map: Vec<Option<usize>>, // original var -> reduced index
    fixed: Vec<f64>,         // value for fixed vars, NaN otherwise
    q_mat: DMatrix<f64>,
    q_lin: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
    g: DMatrix<f64>,
    h: DVector<f64>,
    /// For each equality row: index of the original program row.
    eq_src: Vec<usize>,
    /// For each inequality row: (origin, sign) where origin is
    /// `Row(i)`, `Lower(i)` or `Upper(i)`.
    ineq_src: Vec<IneqSrc>,
}

#[derive(Debug, Clone, Copy)]
enum IneqSrc {
    Row(usize, f64), // original row index, sign applied to coefficients
    Lower(usize),
    Upper(usize),
}

fn reduce(p: &ConvexProgram) -> Reduced {
    let mut map = vec![None; p.n];
    let mut fixed = vec![f64::NAN; p.n];
    let mut nr = 0;
    for i in 0..p.n {
        if p.lower[i] == p.upper[i] {
            fixed[i] = p.lower[i];
        } else {
            map[i] = Some(nr);
            nr += 1;
        }
    }

    let mut q_mat = DMatrix::zeros(nr, nr);
    let mut q_lin = DVector::zeros(nr);
    for &(i, j, v) in &p.quad {
        match (map[i], map[j]) {
            (Some(ri), Some(rj)) => {
                if ri == rj {
                    q_mat[(ri, ri)] += 2.0 * v;
                } else {
                    q_mat[(ri, rj)] += v;
                    q_mat[(rj, ri)] += v;
                }
            }
            (Some(ri), None) => q_lin[ri] += v * fixed[j],
            (None, Some(rj)) => q_lin[rj] += v * fixed[i],
            (None, None) => {}
        }
    }
    for i in 0..p.n {
        if let Some(ri) = map[i] {
            q_lin[ri] += p.lin[i];
        }
    }

    let mut a_rows: Vec<(Vec<(usize, f64)>, f64, usize)> = Vec::new();
    let mut g_rows: Vec<(Vec<(usize, f64)>, f64, IneqSrc)> = Vec::new();
    for (ri, row) in p.rows.iter().enumerate() {
        let mut coeffs = Vec::new();
        let mut rhs = row.rhs;
        for &(i, c) in &row.coeffs {
            match map[i] {
                Some(r) => coeffs.push((r, c)),
                None => rhs -= c * fixed[i],
            }
        }
        match row.sense {
            Sense::Eq => a_rows.push((coeffs, rhs, ri)),
            Sense::Le => g_rows.push((coeffs, rhs, IneqSrc::Row(ri, 1.0))),
            Sense::Ge => {
                let neg: Vec<_> = coeffs.iter().map(|&(i, c)| (i, -c)).collect();
                g_rows.push((neg, -rhs, IneqSrc::Row(ri, -1.0)));
            }
        }
    }
    for i in 0..p.n {
        if let Some(r) = map[i] {
            if p.upper[i].is_finite() {
                g_rows.push((vec![(r, 1.0)], p.upper[i], IneqSrc::Upper(i)));
            }
            if p.lower[i].is_finite() {
                g_rows.push((vec![(r, -1.0)], -p.lower[i], IneqSrc::Lower(i)));
            }
        }
    }

    let me = a_rows.len();
    let mi = g_rows.len();
    let mut a = DMatrix::zeros(me, nr);
    let mut b = DVector::zeros(me);
    let mut eq_src = Vec::with_capacity(me);
    for (k, (coeffs, rhs, src)) in a_rows.into_iter().enumerate() {
        for (i, c) in coeffs {
            a[(k, i)] += c;
        }
        b[k] = rhs;
        eq_src.push(src);
    }
    let mut g = DMatrix::zeros(mi, nr);
    let mut h = DVector::zeros(mi);
    let mut ineq_src = Vec::with_capacity(mi);
    for (k, (coeffs, rhs, src)) in g_rows.into_iter().enumerate() {
        for (i, c) in coeffs {
            g[(k, i)] += c;
        }
        h[k] = rhs;
        ineq_src.push(src);
    }

    Reduced {
        nr,
        map,
        fixed,
        q_mat,
        q_lin,
        a,
        b,
        g,
        h,
        eq_src,
        ineq_src,
    }
}

fn verify_farkas(r: &Reduced, y_eq: &DVector<f64>, y_ineq: &DVector<f64>) -> FarkasCertificate {
    let mut res = DVector::zeros(r.nr);
    if r.a.nrows() > 0 {
        res += r.a.transpose() * y_eq;
    }
    if r.g.nrows() > 0 {
        res += r.g.transpose() * y_ineq;
    }
    let residual = res.amax();
    let gap = r.b.dot(y_eq) + r.h.dot(y_ineq);
    FarkasCertificate {
        y_eq: y_eq.iter().copied().collect(),
        y_ineq: y_ineq.iter().copied().collect(),
        margin: -gap,
        residual,
    }
}

fn certificate_ok(cert: &FarkasCertificate, scale: f64) -> bool {
    let norm = cert
        .y_eq
        .iter()
        .chain(cert.y_ineq.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    cert.residual <= 1e-7 * (1.0 + norm)
        && cert.margin > 1e-9 * (1.0 + scale)
        && cert.y_ineq.iter().all(|&v| v >= -1e-9 * (1.0 + norm))
}

/// Solve a convex program to tolerance `tol` (default `1e-8` when NaN).
pub fn solve_convex(p: &ConvexProgram, tol: f64) -> Result<SolveOutcome> {
    solve_inner(p, tol, true)
}

fn solve_inner(p: &ConvexProgram, tol: f64, allow_farkas_lp: bool) -> Result<SolveOutcome> {
    p.validate()?;
    let tol = if tol.is_nan() || tol <= 0.0 { 1e-8 } else { tol };
    let r = reduce(p);
    let nr = r.nr;
    let me = r.a.nrows();
    let mi = r.g.nrows();

    let data_scale = r
        .b
        .amax_ish()
        .max(r.h.amax_ish())
        .max(r.q_lin.amax_ish())
        .max(1.0);

    // All variables fixed: just check the rows.
    if nr == 0 {
        for k in 0..me {
            if r.b[k].abs() > 1e-8 * (1.0 + data_scale) {
                let mut y = DVector::zeros(me);
                y[k] = -r.b[k].signum();
                let cert = verify_farkas(&r, &y, &DVector::zeros(mi));
                return Ok(finish(
                    p,
                    &r,
                    SolveStatus::Infeasible,
                    &DVector::zeros(0),
                    &DVector::zeros(me),
                    &DVector::zeros(mi),
                    0,
                    (r.b.amax_ish(), 0.0, 0.0),
                    Some(cert),
                ));
            }
        }
        for k in 0..mi {
            if -r.h[k] > 1e-8 * (1.0 + data_scale) {
                let mut y = DVector::zeros(mi);
                y[k] = 1.0;
                let cert = verify_farkas(&r, &DVector::zeros(me), &y);
                return Ok(finish(
                    p,
                    &r,
                    SolveStatus::Infeasible,
                    &DVector::zeros(0),
                    &DVector::zeros(me),
                    &DVector::zeros(mi),
                    0,
                    (0.0, 0.0, 0.0),
                    Some(cert),
                ));
            }
        }
        return Ok(finish(
            p,
            &r,
            SolveStatus::Optimal,
            &DVector::zeros(0),
            &DVector::zeros(me),
            &DVector::zeros(mi),
            0,
            (0.0, 0.0, 0.0),
            None,
        ));
    }

    // Regularized Hessian keeps the KKT factorization nonsingular and pins
    // otherwise-flat optimal faces to a unique point.
    let mut q_reg = r.q_mat.clone();
    for i in 0..nr {
        q_reg[(i, i)] += DEFAULT_REG;
    }

    // Pure equality-constrained QP: one KKT solve.
    if mi == 0 {
        let dim = nr + me;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (nr, nr)).copy_from(&q_reg);
        if me > 0 {
            kkt.view_mut((0, nr), (nr, me)).copy_from(&r.a.transpose());
            kkt.view_mut((nr, 0), (me, nr)).copy_from(&r.a);
            for i in 0..me {
                kkt[(nr + i, nr + i)] = -1e-12;
            }
        }
        let mut rhs = DVector::zeros(dim);
        for i in 0..nr {
            rhs[i] = -r.q_lin[i];
        }
        for k in 0..me {
            rhs[nr + k] = r.b[k];
        }
        let lu = kkt.lu();
        if let Some(sol) = lu.solve(&rhs) {
            let x = sol.rows(0, nr).into_owned();
            let y = sol.rows(nr, me).into_owned();
            let rp = if me > 0 {
                (&r.a * &x - &r.b).amax()
            } else {
                0.0
            };
            if rp <= 1e-7 * (1.0 + data_scale) {
                return Ok(finish(
                    p,
                    &r,
                    SolveStatus::Optimal,
                    &x,
                    &y,
                    &DVector::zeros(0),
                    1,
                    (rp, 0.0, 0.0),
                    None,
                ));
            }
        }
        // Inconsistent equalities; fall through to the Farkas LP.
        if allow_farkas_lp {
            if let Some(cert) = farkas_lp(&r, data_scale)? {
                return Ok(finish(
                    p,
                    &r,
                    SolveStatus::Infeasible,
                    &DVector::zeros(nr),
                    &DVector::zeros(me),
                    &DVector::zeros(0),
                    1,
                    (f64::INFINITY, 0.0, 0.0),
                    Some(cert),
                ));
            }
        }
        return Ok(finish(
            p,
            &r,
            SolveStatus::IterLimit,
            &DVector::zeros(nr),
            &DVector::zeros(me),
            &DVector::zeros(0),
            1,
            (f64::INFINITY, 0.0, 0.0),
            None,
        ));
    }

    // Mehrotra predictor-corrector.
    let mut x = DVector::zeros(nr);
    let mut y = DVector::zeros(me);
    let v = &r.h - &r.g * &x;
    let mut s = DVector::from_fn(mi, |i, _| v[i].max(1.0));
    let mut z = DVector::from_fn(mi, |_, _| 1.0);

    let mut best: Option<(f64, DVector<f64>, DVector<f64>, DVector<f64>, (f64, f64, f64))> = None;
    let mut iters = 0;

    for iter in 0..MAX_ITERS {
        iters = iter + 1;
        let r_d = &q_reg * &x
            + &r.q_lin
            + if me > 0 {
                r.a.transpose() * &y
            } else {
                DVector::zeros(nr)
            }
            + r.g.transpose() * &z;
        let r_p = if me > 0 {
            &r.a * &x - &r.b
        } else {
            DVector::zeros(0)
        };
        let r_c = &r.g * &x + &s - &r.h;
        let mu = s.dot(&z) / mi as f64;

        let obj_scale = 1.0 + p.objective_at(&expand(&r, &x)).abs();
        let rp_norm = r_p.amax_ish().max(r_c.amax_ish());
        let rd_norm = r_d.amax_ish();
        let prim_ok = rp_norm <= tol * (1.0 + data_scale);
        let dual_ok = rd_norm <= tol * (1.0 + data_scale);
        let gap_ok = mu <= tol * obj_scale;

        let score = rp_norm.max(rd_norm).max(mu);
        if best.as_ref().map(|b| score < b.0).unwrap_or(true) {
            best = Some((score, x.clone(), y.clone(), z.clone(), (rp_norm, rd_norm, mu)));
        }

        if prim_ok && dual_ok && gap_ok {
            return Ok(finish(
                p,
                &r,
                SolveStatus::Optimal,
                &x,
                &y,
                &z,
                iters,
                (rp_norm, rd_norm, mu),
                None,
            ));
        }

        // Dual ray probe: infeasible programs push (y, z) to infinity along
        // a Farkas direction.
        let theta = y.amax_ish().max(z.amax_ish());
        if theta > 1e6 {
            let ys = y.map(|v| v / theta);
            let zs = z.map(|v| v / theta);
            let cert = verify_farkas(&r, &ys, &zs);
            if certificate_ok(&cert, data_scale) {
                return Ok(finish(
                    p,
                    &r,
                    SolveStatus::Infeasible,
                    &x,
                    &y,
                    &z,
                    iters,
                    (rp_norm, rd_norm, mu),
                    Some(cert),
                ));
            }
        }
        // Defensive: strictly-convex regularized objectives cannot diverge,
        // so a collapsing objective signals an unbounded model.
        if p.objective_at(&expand(&r, &x)) < -1e13 * data_scale {
            return Ok(finish(
                p,
                &r,
                SolveStatus::Unbounded,
                &x,
                &y,
                &z,
                iters,
                (rp_norm, rd_norm, mu),
                None,
            ));
        }

        // KKT matrix [Q + G'DG  A'; A  -delta I] with D = z/s.
        let dim = nr + me;
        let mut kkt = DMatrix::zeros(dim, dim);
        let mut qdg = q_reg.clone();
        for k in 0..mi {
            let d = z[k] / s[k];
            for i in 0..nr {
                let gki = r.g[(k, i)];
                if gki == 0.0 {
                    continue;
                }
                for j in 0..nr {
                    qdg[(i, j)] += d * gki * r.g[(k, j)];
                }
            }
        }
        kkt.view_mut((0, 0), (nr, nr)).copy_from(&qdg);
        if me > 0 {
            kkt.view_mut((0, nr), (nr, me)).copy_from(&r.a.transpose());
            kkt.view_mut((nr, 0), (me, nr)).copy_from(&r.a);
            for i in 0..me {
                kkt[(nr + i, nr + i)] = -1e-12;
            }
        }
        let lu = kkt.lu();

        let solve_dir = |d_c: &DVector<f64>| -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            // rhs_x = -r_d - G' ((d_c + z .* r_c) ./ s)
            let w = DVector::from_fn(mi, |k, _| (d_c[k] + z[k] * r_c[k]) / s[k]);
            let rhs_x = -&r_d - r.g.transpose() * &w;
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, nr).copy_from(&rhs_x);
            for k in 0..me {
                rhs[nr + k] = -r_p[k];
            }
            let sol = lu.solve(&rhs)?;
            let dx = sol.rows(0, nr).into_owned();
            let dy = sol.rows(nr, me).into_owned();
            let gdx = &r.g * &dx;
            let dz = DVector::from_fn(mi, |k, _| w[k] + z[k] / s[k] * gdx[k]);
            let ds = DVector::from_fn(mi, |k, _| -r_c[k] - gdx[k]);
            Some((dx, dy, dz, ds))
        };

        let d_aff = DVector::from_fn(mi, |k, _| -s[k] * z[k]);
        let Some((_dx_a, _dy_a, dz_a, ds_a)) = solve_dir(&d_aff) else {
            break;
        };
        let ap = step_len(&s, &ds_a);
        let ad = step_len(&z, &dz_a);
        let mu_aff = (0..mi)
            .map(|k| (s[k] + ap * ds_a[k]) * (z[k] + ad * dz_a[k]))
            .sum::<f64>()
            / mi as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(1e-8, 1.0 - 1e-8);

        let d_comb =
            DVector::from_fn(mi, |k, _| sigma * mu - s[k] * z[k] - ds_a[k] * dz_a[k]);
        let Some((dx, dy, dz, ds)) = solve_dir(&d_comb) else {
            break;
        };
        let ap = (0.99 * step_len(&s, &ds)).min(1.0);
        let ad = (0.99 * step_len(&z, &dz)).min(1.0);
        x += ap * &dx;
        s += ap * &ds;
        y += ad * &dy;
        z += ad * &dz;
    }

    // Did not converge: decide feasibility with the bounded Farkas LP.
    if allow_farkas_lp {
        if let Some(cert) = farkas_lp(&r, data_scale)? {
            let (_, bx, by, bz, res) = best.clone().unwrap();
            return Ok(finish(
                p,
                &r,
                SolveStatus::Infeasible,
                &bx,
                &by,
                &bz,
                iters,
                res,
                Some(cert),
            ));
        }
    }
    let (_, bx, by, bz, res) = best.unwrap();
    Ok(finish(
        p, &r, SolveStatus::IterLimit, &bx, &by, &bz, iters, res, None,
    ))
}

fn step_len(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut a = 1.0f64;
    for k in 0..v.len() {
        if dv[k] < 0.0 {
            a = a.min(-v[k] / dv[k]);
        }
    }
    a
}

fn expand(r: &Reduced, x: &DVector<f64>) -> Vec<f64> {
    r.map
        .iter()
        .enumerate()
        .map(|(i, m)| match m {
            Some(ri) => x[*ri],
            None => r.fixed[i],
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn finish(
    p: &ConvexProgram,
    r: &Reduced,
    status: SolveStatus,
    x: &DVector<f64>,
    y: &DVector<f64>,
    z: &DVector<f64>,
    iterations: usize,
    residuals: (f64, f64, f64),
    certificate: Option<FarkasCertificate>,
) -> SolveOutcome {
    let xf = expand(r, x);
    let mut row_duals = vec![0.0; p.rows.len()];
    let mut lower_duals = vec![0.0; p.n];
    let mut upper_duals = vec![0.0; p.n];
    for (k, &src) in r.eq_src.iter().enumerate() {
        if k < y.len() {
            row_duals[src] = y[k];
        }
    }
    for (k, &src) in r.ineq_src.iter().enumerate() {
        if k >= z.len() {
            continue;
        }
        match src {
            IneqSrc::Row(i, sign) => row_duals[i] = sign * z[k],
            IneqSrc::Lower(i) => lower_duals[i] = z[k],
            IneqSrc::Upper(i) => upper_duals[i] = z[k],
        }
    }
    let objective = p.objective_at(&xf);
    SolveOutcome {
        status,
        x: xf,
        row_duals,
        lower_duals,
        upper_duals,
        objective,
        iterations,
        residuals,
        regularization: DEFAULT_REG,
        certificate,
    }
}

/// Bounded LP deciding feasibility of the reduced system: maximize the
/// Farkas gap `-(b'u + h'v)` over `A'u + G'v = 0`, `v >= 0`,
/// `|u|_1 + |v|_1 <= 1`. Zero optimum means no certificate exists.
fn farkas_lp(r: &Reduced, scale: f64) -> Result<Option<FarkasCertificate>> {
    let me = r.a.nrows();
    let mi = r.g.nrows();
    let nv = 2 * me + mi;
    if nv == 0 {
        return Ok(None);
    }
    let mut lp = ConvexProgram::new(nv);
    for k in 0..me {
        lp.lin[k] = r.b[k];
        lp.lin[me + k] = -r.b[k];
    }
    for k in 0..mi {
        lp.lin[2 * me + k] = r.h[k];
    }
    for i in 0..nv {
        lp.lower[i] = 0.0;
    }
    // A'(p - n) + G'v = 0, one row per reduced variable.
    for col in 0..r.nr {
        let mut coeffs = Vec::new();
        for k in 0..me {
            let a = r.a[(k, col)];
            if a != 0.0 {
                coeffs.push((k, a));
                coeffs.push((me + k, -a));
            }
        }
        for k in 0..mi {
            let g = r.g[(k, col)];
            if g != 0.0 {
                coeffs.push((2 * me + k, g));
            }
        }
        lp.rows.push(LinearRow {
            coeffs,
            sense: Sense::Eq,
            rhs: 0.0,
        });
    }
    lp.rows.push(LinearRow {
        coeffs: (0..nv).map(|i| (i, 1.0)).collect(),
        sense: Sense::Le,
        rhs: 1.0,
    });

    let out = solve_inner(&lp, 1e-9, false)?;
    if out.status != SolveStatus::Optimal {
        return Ok(None);
    }
    // lp minimizes b'p - b'n + h'v, so a strictly negative optimum is a
    // certificate.
    if out.objective >= -1e-9 * (1.0 + scale) {
        return Ok(None);
    }
    let y_eq = DVector::from_fn(me, |k, _| out.x[k] - out.x[me + k]);
    let y_ineq = DVector::from_fn(mi, |k, _| out.x[2 * me + k].max(0.0));
    let cert = verify_farkas(r, &y_eq, &y_ineq);
    if certificate_ok(&cert, scale) {
        Ok(Some(cert))
    } else {
        Ok(None)
    }
}

trait AmaxIsh {
    fn amax_ish(&self) -> f64;
}

impl AmaxIsh for DVector<f64> {
    fn amax_ish(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.amax()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(coeffs: &[(usize, f64)], sense: Sense, rhs: f64) -> LinearRow {
        LinearRow {
            coeffs: coeffs.to_vec(),
            sense,
            rhs,
        }
    }

    #[test]
    fn projection_onto_halfline() {
        // min x^2 s.t. x >= 1
        let mut p = ConvexProgram::new(1);
        p.quad.push((0, 0, 1.0));
        p.lower[0] = 1.0;
        let out = solve_convex(&p, 1e-8).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.x[0] - 1.0).abs() < 1e-7);
        assert!((out.objective - 1.0).abs() < 1e-7);
    }

    #[test]
    fn empty_feasible_set_yields_certificate() {
        // min 0 s.t. x <= 0, x >= 1
        let mut p = ConvexProgram::new(1);
        p.rows.push(row(&[(0, 1.0)], Sense::Le, 0.0));
        p.rows.push(row(&[(0, 1.0)], Sense::Ge, 1.0));
        let out = solve_convex(&p, 1e-8).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        let cert = out.certificate.expect("certificate");
        assert!(cert.margin > 1e-9);
        assert!(cert.residual < 1e-7);
    }

    #[test]
    fn equality_qp() {
        // min (x-1)^2 + (y-2)^2 s.t. x + y = 1  -> x = 0, y = 1
        let mut p = ConvexProgram::new(2);
        p.quad.push((0, 0, 1.0));
        p.quad.push((1, 1, 1.0));
        p.lin = vec![-2.0, -4.0];
        p.constant = 5.0;
        p.rows.push(row(&[(0, 1.0), (1, 1.0)], Sense::Eq, 1.0));
        let out = solve_convex(&p, 1e-8).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.x[0] - 0.0).abs() < 1e-7);
        assert!((out.x[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn fixed_variables_are_substituted() {
        let mut p = ConvexProgram::new(2);
        p.quad.push((0, 0, 1.0));
        p.lin[1] = 3.0;
        p.lower[1] = 2.0;
        p.upper[1] = 2.0;
        p.rows.push(row(&[(0, 1.0), (1, 1.0)], Sense::Ge, 3.0));
        p.lower[0] = 0.0;
        let out = solve_convex(&p, 1e-8).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        assert!((out.x[1] - 2.0).abs() < 1e-12);
        assert!((out.x[0] - 1.0).abs() < 1e-7);
        assert!((out.objective - (1.0 + 6.0)).abs() < 1e-6);
    }

    #[test]
    fn infeasible_after_fixing() {
        let mut p = ConvexProgram::new(1);
        p.lower[0] = 1.0;
        p.upper[0] = 1.0;
        p.rows.push(row(&[(0, 1.0)], Sense::Le, 0.0));
        let out = solve_convex(&p, 1e-8).unwrap();
        assert_eq!(out.status, SolveStatus::Infeasible);
        assert!(out.certificate.is_some());
    }

    #[test]
    fn kkt_residuals_within_tolerance() {
        let mut p = ConvexProgram::new(3);
        p.quad.push((0, 0, 2.0));
        p.quad.push((1, 1, 1.0));
        p.quad.push((2, 2, 0.5));
        p.lin = vec![1.0, -2.0, 0.3];
        p.rows.push(row(&[(0, 1.0), (1, 1.0), (2, 1.0)], Sense::Eq, 2.0));
        p.rows.push(row(&[(0, 1.0), (1, -1.0)], Sense::Le, 0.5));
        for i in 0..3 {
            p.lower[i] = -5.0;
            p.upper[i] = 5.0;
        }
        let out = solve_convex(&p, 1e-8).unwrap();
        assert_eq!(out.status, SolveStatus::Optimal);
        let (rp, rd, mu) = out.residuals;
        assert!(rp < 1e-7 && rd < 1e-7 && mu < 1e-6);
    }

    #[test]
    fn deterministic_repeat() {
        let mut p = ConvexProgram::new(4);
        p.quad.push((0, 0, 1.0));
        p.quad.push((2, 2, 0.1));
        p.lin = vec![0.3, -1.0, 0.0, 2.0];
        p.rows
            .push(row(&[(0, 1.0), (1, 2.0), (2, 1.0), (3, -1.0)], Sense::Eq, 1.0));
        p.rows.push(row(&[(1, 1.0), (3, 1.0)], Sense::Le, 2.0));
        for i in 0..4 {
            p.lower[i] = 0.0;
            p.upper[i] = 10.0;
        }
        let a = solve_convex(&p, 1e-8).unwrap();
        let b = solve_convex(&p, 1e-8).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.objective, b.objective);
        assert_eq!(a.iterations, b.iterations);
    }
}
