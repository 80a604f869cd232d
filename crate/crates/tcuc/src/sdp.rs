//! Small-scale SDP solver.
//!
//! Standard form
//!
//! ```text
//! min  sum_j <C_j, X_j> + c_f . w
//! s.t. sum_j <A_ij, X_j> + a_if . w = b_i      i = 1..m
//!      X_j in PSD(n_j) or R_+^d,  w free
//! ```
//!
//! solved with a homogeneous self-dual embedding and Nesterov-Todd scaling,
//! so feasibility questions get an answer either way: `Optimal` comes with a
//! duality-gap bound, `PrimalInfeasible` / `DualInfeasible` come with an
//! improving ray that is re-verified against the raw problem data before
//! being surfaced, and anything else is reported `Inaccurate` with the best
//! iterate. The tau/kappa ratio of the embedding decides which branch to
//! trust (1e6 either way, per the solver configuration).

use nalgebra::DMatrix;
use std::io::Write;

use crate::{Error, Result};

/// One cone block of the variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Dense symmetric PSD block of the given side length.
    Psd(usize),
    /// Nonnegative orthant of the given dimension.
    Nonneg(usize),
}

impl Block {
    fn svec_len(self) -> usize {
        match self {
            Block::Psd(n) => n * (n + 1) / 2,
            Block::Nonneg(d) => d,
        }
    }
    fn degree(self) -> f64 {
        match self {
            Block::Psd(n) => n as f64,
            Block::Nonneg(d) => d as f64,
        }
    }
}

/// Sparse symmetric coefficient: value `v` at (i, j) and (j, i) of `block`
/// (for `Nonneg` blocks only `i == j` entries are meaningful).
#[derive(Debug, Clone, Copy)]
pub struct Coeff {
    pub block: usize,
    pub i: usize,
    pub j: usize,
    pub v: f64,
}

/// One equality constraint `sum <A_j, X_j> + free . w = rhs`.
#[derive(Debug, Clone, Default)]
pub struct SdpConstraint {
    pub coeffs: Vec<Coeff>,
    pub free: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Standard-form SDP (see module docs). `obj_const` is added to reported
/// objective values.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub blocks: Vec<Block>,
    pub n_free: usize,
    pub obj: Vec<Coeff>,
    pub obj_free: Vec<(usize, f64)>,
    pub obj_const: f64,
    pub constraints: Vec<SdpConstraint>,
}

impl SdpProblem {
    pub fn new(blocks: Vec<Block>, n_free: usize) -> Self {
        SdpProblem {
            blocks,
            n_free,
            obj: Vec::new(),
            obj_free: Vec::new(),
            obj_const: 0.0,
            constraints: Vec::new(),
        }
    }

    fn validate(&self) -> Result<()> {
        let check = |c: &Coeff| -> Result<()> {
            if c.block >= self.blocks.len() {
                return Err(Error::Model(format!("coeff references block {}", c.block)));
            }
            match self.blocks[c.block] {
                Block::Psd(n) => {
                    if c.i >= n || c.j >= n {
                        return Err(Error::Model("coeff index out of block range".into()));
                    }
                }
                Block::Nonneg(d) => {
                    if c.i != c.j || c.i >= d {
                        return Err(Error::Model(
                            "orthant coeffs must be diagonal and in range".into(),
                        ));
                    }
                }
            }
            Ok(())
        };
        for c in &self.obj {
            check(c)?;
        }
        for con in &self.constraints {
            for c in &con.coeffs {
                check(c)?;
            }
            for &(i, _) in &con.free {
                if i >= self.n_free {
                    return Err(Error::Model("free index out of range".into()));
                }
            }
        }
        Ok(())
    }

    /// Plain-text dump, one line per nonzero, for cross-checking against
    /// external solvers.
    pub fn write_debug_dump(&self, out: &mut dyn Write) -> std::io::Result<()> {
        writeln!(out, "sdpdump 1")?;
        write!(out, "blocks")?;
        for b in &self.blocks {
            match b {
                Block::Psd(n) => write!(out, " psd {n}")?,
                Block::Nonneg(d) => write!(out, " nonneg {d}")?,
            }
        }
        writeln!(out)?;
        writeln!(out, "free {}", self.n_free)?;
        writeln!(out, "objconst {:.17e}", self.obj_const)?;
        for c in &self.obj {
            writeln!(out, "obj {} {} {} {:.17e}", c.block, c.i, c.j, c.v)?;
        }
        for (i, &(k, v)) in self.obj_free.iter().enumerate() {
            let _ = i;
            writeln!(out, "objfree {k} {v:.17e}")?;
        }
        for (r, con) in self.constraints.iter().enumerate() {
            for c in &con.coeffs {
                writeln!(out, "con {r} {} {} {} {:.17e}", c.block, c.i, c.j, c.v)?;
            }
            for &(k, v) in &con.free {
                writeln!(out, "confree {r} {k} {v:.17e}")?;
            }
            writeln!(out, "rhs {r} {:.17e}", con.rhs)?;
        }
        Ok(())
    }
}

/// Solution value of one block.
#[derive(Debug, Clone)]
pub enum BlockSol {
    Psd(DMatrix<f64>),
    Nonneg(Vec<f64>),
}

impl BlockSol {
    /// Entry (i, j); for orthant blocks only the diagonal exists.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            BlockSol::Psd(m) => m[(i, j)],
            BlockSol::Nonneg(v) => {
                if i == j {
                    v[i]
                } else {
                    0.0
                }
            }
        }
    }

    pub fn min_eigenvalue(&self) -> f64 {
        match self {
            BlockSol::Psd(m) => m
                .clone()
                .symmetric_eigenvalues()
                .iter()
                .fold(f64::INFINITY, |a, &v| a.min(v)),
            BlockSol::Nonneg(v) => v.iter().fold(f64::INFINITY, |a, &x| a.min(x)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    PrimalInfeasible,
    DualInfeasible,
    Inaccurate,
}

/// Certificate of infeasibility, stored after independent verification.
#[derive(Debug, Clone)]
pub enum SdpCertificate {
    /// Ray `y` with `-A*(y)` in the dual cone, `A_f' y = 0`, `b . y > 0`.
    PrimalInfeasible {
        y: Vec<f64>,
        margin: f64,
        residual: f64,
    },
    /// Ray `(X, w)` with `A(X, w) = 0`, `X` in the cone, `c . (X, w) < 0`.
    DualInfeasible {
        x: Vec<BlockSol>,
        w: Vec<f64>,
        margin: f64,
        residual: f64,
    },
}

#[derive(Debug, Clone)]
pub struct SdpOutcome {
    pub status: SdpStatus,
    pub primal: Vec<BlockSol>,
    pub free: Vec<f64>,
    pub y: Vec<f64>,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    /// (primal-feasibility, dual-feasibility, relative-gap) at the returned
    /// point.
    pub residuals: (f64, f64, f64),
    pub tau: f64,
    pub kappa: f64,
    pub certificate: Option<SdpCertificate>,
}

const MAX_ITERS: usize = 100;
const RATIO_DECIDE: f64 = 1e6;

// --- svec packing -----------------------------------------------------------

const SQRT2: f64 = std::f64::consts::SQRT_2;

struct Layout {
    blocks: Vec<Block>,
    offset: Vec<usize>,
    nu: usize,
    degree: f64,
}

impl Layout {
    fn new(blocks: &[Block]) -> Layout {
        let mut offset = Vec::with_capacity(blocks.len());
        let mut nu = 0;
        let mut degree = 0.0;
        for b in blocks {
            offset.push(nu);
            nu += b.svec_len();
            degree += b.degree();
        }
        Layout {
            blocks: blocks.to_vec(),
            offset,
            nu,
            degree,
        }
    }

    fn svec_pos(&self, block: usize, i: usize, j: usize) -> (usize, f64) {
        let (lo, hi) = if i <= j { (i, j) } else { (j, i) };
        match self.blocks[block] {
            Block::Psd(_) => {
                // Column-major upper triangle: (0,0),(0,1),(1,1),(0,2),...
                let idx = hi * (hi + 1) / 2 + lo;
                let scale = if lo == hi { 1.0 } else { SQRT2 };
                (self.offset[block] + idx, scale)
            }
            Block::Nonneg(_) => (self.offset[block] + lo, 1.0),
        }
    }

    /// Dense svec vector from sparse symmetric coefficients.
    fn pack(&self, coeffs: &[Coeff]) -> Vec<f64> {
        let mut v = vec![0.0; self.nu];
        for c in coeffs {
            let (pos, scale) = self.svec_pos(c.block, c.i, c.j);
            v[pos] += scale * c.v;
        }
        v
    }

    fn block_slice<'a>(&self, v: &'a [f64], b: usize) -> &'a [f64] {
        &v[self.offset[b]..self.offset[b] + self.blocks[b].svec_len()]
    }

    fn block_slice_mut<'a>(&self, v: &'a mut [f64], b: usize) -> &'a mut [f64] {
        &mut v[self.offset[b]..self.offset[b] + self.blocks[b].svec_len()]
    }

    fn to_matrix(&self, v: &[f64], b: usize) -> DMatrix<f64> {
        match self.blocks[b] {
            Block::Psd(n) => {
                let s = self.block_slice(v, b);
                let mut m = DMatrix::zeros(n, n);
                let mut idx = 0;
                for j in 0..n {
                    for i in 0..=j {
                        let val = if i == j { s[idx] } else { s[idx] / SQRT2 };
                        m[(i, j)] = val;
                        m[(j, i)] = val;
                        idx += 1;
                    }
                }
                m
            }
            Block::Nonneg(_) => unreachable!("to_matrix on orthant block"),
        }
    }

    fn from_matrix(&self, m: &DMatrix<f64>, b: usize, out: &mut [f64]) {
        let Block::Psd(n) = self.blocks[b] else {
            unreachable!()
        };
        let s = self.block_slice_mut(out, b);
        let mut idx = 0;
        for j in 0..n {
            for i in 0..=j {
                s[idx] = if i == j {
                    m[(i, j)]
                } else {
                    SQRT2 * 0.5 * (m[(i, j)] + m[(j, i)])
                };
                idx += 1;
            }
        }
    }

    fn identity(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.nu];
        for (b, blk) in self.blocks.iter().enumerate() {
            match blk {
                Block::Psd(n) => {
                    for i in 0..*n {
                        let (pos, _) = self.svec_pos(b, i, i);
                        v[pos] = 1.0;
                    }
                }
                Block::Nonneg(d) => {
                    for i in 0..*d {
                        let (pos, _) = self.svec_pos(b, i, i);
                        v[pos] = 1.0;
                    }
                }
            }
        }
        v
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn amax(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Symmetric eigendecomposition; eigenvalues ascending is not guaranteed by
/// nalgebra, we only need pairs.
fn sym_eig(m: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let se = m.clone().symmetric_eigen();
    let q = se.eigenvectors;
    let d = se.eigenvalues.iter().copied().collect();
    (q, d)
}

fn sym_pow(m: &DMatrix<f64>, p: f64) -> Option<DMatrix<f64>> {
    let (q, d) = sym_eig(m);
    let n = m.nrows();
    let mut dm = DMatrix::zeros(n, n);
    for i in 0..n {
        if d[i] <= 0.0 {
            return None;
        }
        dm[(i, i)] = d[i].powf(p);
    }
    Some(&q * dm * q.transpose())
}

// --- Nesterov-Todd scaling ---------------------------------------------------
//
// Per PSD block we keep the factor R with W = R R' computed from Cholesky
// factors and one SVD (L_z' L_x = U S V'; R = L_x V S^{-1/2}). In these
// coordinates the scaled point lambda = R^{-1} X R^{-T} = R' Z R equals
// diag(S), which keeps the terminal iterations well conditioned.

enum Scaling {
    Psd {
        r: DMatrix<f64>,
        r_inv: DMatrix<f64>,
        w: DMatrix<f64>,
        lam: Vec<f64>,
    },
    Nonneg {
        w: Vec<f64>,
        lam: Vec<f64>,
    },
}

/// Which conjugation to apply in svec coordinates.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Conj {
    /// M -> W M W
    KW,
    /// M -> R^{-1} M R^{-T} (into scaled space, X side)
    Down,
    /// M -> R^{-T} M R^{-1} (out of scaled space, Z side)
    Lift,
    /// M -> R' M R (into scaled space, Z side)
    Up,
}

fn nt_scaling(layout: &Layout, b: usize, x: &[f64], z: &[f64]) -> Option<Scaling> {
    match layout.blocks[b] {
        Block::Psd(n) => {
            let xm = layout.to_matrix(x, b);
            let zm = layout.to_matrix(z, b);
            let lx = xm.cholesky()?.l();
            let lz = zm.cholesky()?.l();
            let prod = lz.transpose() * &lx;
            let svd = prod.svd(true, true);
            let v_t = svd.v_t?;
            let sv = &svd.singular_values;
            if sv.iter().any(|&s| s <= 0.0) {
                return None;
            }
            // R = L_x V S^{-1/2}
            let mut r = &lx * v_t.transpose();
            for j in 0..n {
                let s = sv[j].sqrt();
                for i in 0..n {
                    r[(i, j)] /= s;
                }
            }
            let r_inv = r.clone().try_inverse()?;
            let w = &r * r.transpose();
            Some(Scaling::Psd {
                r,
                r_inv,
                w,
                lam: sv.iter().copied().collect(),
            })
        }
        Block::Nonneg(d) => {
            let xs = layout.block_slice(x, b);
            let zs = layout.block_slice(z, b);
            let mut w = Vec::with_capacity(d);
            let mut lam = Vec::with_capacity(d);
            for i in 0..d {
                if xs[i] <= 0.0 || zs[i] <= 0.0 {
                    return None;
                }
                w.push((xs[i] / zs[i]).sqrt());
                lam.push((xs[i] * zs[i]).sqrt());
            }
            Some(Scaling::Nonneg { w, lam })
        }
    }
}

fn apply_scaling(layout: &Layout, scal: &[Scaling], v: &[f64], which: Conj) -> Vec<f64> {
    let mut out = vec![0.0; layout.nu];
    for b in 0..layout.blocks.len() {
        match &scal[b] {
            Scaling::Psd { r, r_inv, w, .. } => {
                let m = layout.to_matrix(v, b);
                let res = match which {
                    Conj::KW => w * &m * w,
                    Conj::Down => r_inv * &m * r_inv.transpose(),
                    Conj::Lift => r_inv.transpose() * &m * r_inv,
                    Conj::Up => r.transpose() * &m * r,
                };
                layout.from_matrix(&res, b, &mut out);
            }
            Scaling::Nonneg { w, .. } => {
                let src = layout.block_slice(v, b);
                let dst = layout.block_slice_mut(&mut out, b);
                for i in 0..w.len() {
                    let g = match which {
                        Conj::KW => w[i] * w[i],
                        Conj::Down | Conj::Lift => 1.0 / w[i],
                        Conj::Up => w[i],
                    };
                    dst[i] = g * src[i];
                }
            }
        }
    }
    out
}

/// svec of the scaled complementarity point lambda (diagonal blockwise).
fn lambda_svec(layout: &Layout, scal: &[Scaling]) -> Vec<f64> {
    let mut out = vec![0.0; layout.nu];
    for b in 0..layout.blocks.len() {
        match &scal[b] {
            Scaling::Psd { lam, .. } => {
                for (i, &l) in lam.iter().enumerate() {
                    let (pos, _) = layout.svec_pos(b, i, i);
                    out[pos] = l;
                }
            }
            Scaling::Nonneg { lam, .. } => {
                let dst = layout.block_slice_mut(&mut out, b);
                dst.copy_from_slice(lam);
            }
        }
    }
    out
}

/// Jordan product `x o y` blockwise ((XY + YX)/2 for PSD, elementwise for
/// the orthant), inputs and output in svec coordinates.
fn jordan_product(layout: &Layout, scal: &[Scaling], a: &[f64], c: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; layout.nu];
    for b in 0..layout.blocks.len() {
        match &scal[b] {
            Scaling::Psd { .. } => {
                let am = layout.to_matrix(a, b);
                let cm = layout.to_matrix(c, b);
                let r = 0.5 * (&am * &cm + &cm * &am);
                layout.from_matrix(&r, b, &mut out);
            }
            Scaling::Nonneg { .. } => {
                let asl = layout.block_slice(a, b);
                let csl = layout.block_slice(c, b);
                let dst = layout.block_slice_mut(&mut out, b);
                for i in 0..asl.len() {
                    dst[i] = asl[i] * csl[i];
                }
            }
        }
    }
    out
}

/// Solve `lam o V = R` blockwise in svec coordinates; lam is diagonal in
/// the scaled space, so this is entrywise.
fn jordan_solve(layout: &Layout, scal: &[Scaling], r: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; layout.nu];
    for b in 0..layout.blocks.len() {
        match &scal[b] {
            Scaling::Psd { lam, .. } => {
                let rm = layout.to_matrix(r, b);
                let n = lam.len();
                let mut v = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        v[(i, j)] = 2.0 * rm[(i, j)] / (lam[i] + lam[j]);
                    }
                }
                layout.from_matrix(&v, b, &mut out);
            }
            Scaling::Nonneg { lam, .. } => {
                let rs = layout.block_slice(r, b);
                let dst = layout.block_slice_mut(&mut out, b);
                for i in 0..lam.len() {
                    dst[i] = rs[i] / lam[i];
                }
            }
        }
    }
    out
}

/// Largest step `a` keeping `lam + a dh` in the cone, where `dh` is a
/// direction in the scaled space (lam diagonal and well conditioned).
fn max_step_scaled(layout: &Layout, scal: &[Scaling], dh: &[f64]) -> f64 {
    let mut alpha = f64::INFINITY;
    for b in 0..layout.blocks.len() {
        match &scal[b] {
            Scaling::Psd { lam, .. } => {
                let dm = layout.to_matrix(dh, b);
                let n = lam.len();
                let mut s = DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        s[(i, j)] = dm[(i, j)] / (lam[i] * lam[j]).sqrt();
                    }
                }
                let eig = s.symmetric_eigenvalues();
                let min = eig.iter().fold(f64::INFINITY, |a, &x| a.min(x));
                if min < 0.0 {
                    alpha = alpha.min(-1.0 / min);
                }
            }
            Scaling::Nonneg { lam, .. } => {
                let ds = layout.block_slice(dh, b);
                for i in 0..lam.len() {
                    if ds[i] < 0.0 {
                        alpha = alpha.min(-lam[i] / ds[i]);
                    }
                }
            }
        }
    }
    alpha
}

// --- main solve --------------------------------------------------------------

/// Solve a standard-form SDP. `gap_tol` bounds the relative duality gap of
/// an `Optimal` answer, `cert_tol` is the verification tolerance for
/// infeasibility certificates.
pub fn solve_sdp(p: &SdpProblem, gap_tol: f64, cert_tol: f64) -> Result<SdpOutcome> {
    p.validate()?;
    let gap_tol = if gap_tol > 0.0 { gap_tol } else { 1e-7 };
    let cert_tol = if cert_tol > 0.0 { cert_tol } else { 1e-6 };
    let feas_tol = gap_tol.max(1e-9);
    let layout = Layout::new(&p.blocks);
    let nu = layout.nu;
    let m = p.constraints.len();
    let nf = p.n_free;

    let c_x = layout.pack(&p.obj);
    let mut c_w = vec![0.0; nf];
    for &(i, v) in &p.obj_free {
        c_w[i] += v;
    }
    let mut a_rows: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut a_free = DMatrix::zeros(m, nf);
    let mut b_vec = vec![0.0; m];
    for (i, con) in p.constraints.iter().enumerate() {
        a_rows.push(layout.pack(&con.coeffs));
        for &(k, v) in &con.free {
            a_free[(i, k)] += v;
        }
        b_vec[i] = con.rhs;
    }

    let scale_b = 1.0 + amax(&b_vec);
    let scale_c = 1.0 + amax(&c_x).max(amax(&c_w));

    // HSD state.
    let mut x = layout.identity();
    let mut z = layout.identity();
    let mut w = vec![0.0; nf];
    let mut y = vec![0.0; m];
    let mut tau = 1.0f64;
    let mut kappa = 1.0f64;

    let degree = layout.degree + 1.0;

    let a_apply = |x: &[f64], w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m];
        for i in 0..m {
            out[i] = dot(&a_rows[i], x);
            for k in 0..nf {
                out[i] += a_free[(i, k)] * w[k];
            }
        }
        out
    };
    let at_apply = |y: &[f64]| -> (Vec<f64>, Vec<f64>) {
        let mut out = vec![0.0; nu];
        for i in 0..m {
            let yi = y[i];
            if yi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(&a_rows[i]) {
                *o += yi * a;
            }
        }
        let mut outf = vec![0.0; nf];
        for k in 0..nf {
            for i in 0..m {
                outf[k] += a_free[(i, k)] * y[i];
            }
        }
        (out, outf)
    };

    let mut best: Option<(f64, SdpOutcome)> = None;
    let mut iterations = 0;
    let mut stall = 0usize;

    for iter in 0..MAX_ITERS {
        iterations = iter;
        // Residuals of the self-dual system.
        let ax = a_apply(&x, &w);
        let (aty, atyf) = at_apply(&y);
        let mut r_p = vec![0.0; m];
        for i in 0..m {
            r_p[i] = ax[i] - b_vec[i] * tau;
        }
        let mut r_d = vec![0.0; nu];
        for i in 0..nu {
            r_d[i] = -aty[i] + c_x[i] * tau - z[i];
        }
        let mut r_f = vec![0.0; nf];
        for k in 0..nf {
            r_f[k] = -atyf[k] + c_w[k] * tau;
        }
        let cx = dot(&c_x, &x) + dot(&c_w, &w);
        let by = dot(&b_vec, &y);
        let r_g = by - cx - kappa;
        let mu = (dot(&x, &z) + tau * kappa) / degree;

        // Scaled (divided by tau) convergence measures.
        let pobj = cx / tau;
        let dobj = by / tau;
        let pres = amax(&r_p) / (tau * scale_b);
        let dres = (amax(&r_d).max(amax(&r_f))) / (tau * scale_c);
        let relgap = (pobj - dobj).abs() / (1.0 + pobj.abs());

        let score = pres.max(dres).max(relgap);
        if std::env::var_os("TCUC_SDP_TRACE").is_some() {
            eprintln!(
                "iter {iter:3} pres {pres:9.2e} dres {dres:9.2e} gap {relgap:9.2e} mu {mu:9.2e} tau {tau:9.2e} kappa {kappa:9.2e}"
            );
        }
        let snapshot = |status: SdpStatus, cert: Option<SdpCertificate>| -> SdpOutcome {
            let primal: Vec<BlockSol> = (0..layout.blocks.len())
                .map(|b| match layout.blocks[b] {
                    Block::Psd(_) => {
                        let mut mm = layout.to_matrix(&x, b);
                        mm /= tau;
                        BlockSol::Psd(mm)
                    }
                    Block::Nonneg(_) => BlockSol::Nonneg(
                        layout.block_slice(&x, b).iter().map(|v| v / tau).collect(),
                    ),
                })
                .collect();
            SdpOutcome {
                status,
                primal,
                free: w.iter().map(|v| v / tau).collect(),
                y: y.iter().map(|v| v / tau).collect(),
                primal_objective: pobj + p.obj_const,
                dual_objective: dobj + p.obj_const,
                iterations: iter,
                residuals: (pres, dres, relgap),
                tau,
                kappa,
                certificate: cert,
            }
        };

        // Residuals are already tau-scaled and a small relative gap forces
        // kappa << tau, so only a degenerate tau needs excluding here.
        if pres <= feas_tol && dres <= feas_tol && relgap <= gap_tol && tau > 1e-8 && tau > 10.0 * kappa {
            return Ok(snapshot(SdpStatus::Optimal, None));
        }

        // Infeasibility certificates, re-verified from scratch.
        if by > 0.0 {
            let yn: Vec<f64> = y.iter().map(|v| v / by).collect();
            if let Some(cert) = verify_primal_infeasibility(p, &yn, cert_tol) {
                return Ok(snapshot(SdpStatus::PrimalInfeasible, Some(cert)));
            }
        }
        if cx < 0.0 {
            let scale = -1.0 / cx;
            let xn: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let wn: Vec<f64> = w.iter().map(|v| v * scale).collect();
            if let Some(cert) = verify_dual_infeasibility(p, &layout, &xn, &wn, cert_tol) {
                return Ok(snapshot(SdpStatus::DualInfeasible, Some(cert)));
            }
        }

        if best.as_ref().map(|(s, _)| score < *s).unwrap_or(true) {
            best = Some((score, snapshot(SdpStatus::Inaccurate, None)));
            stall = 0;
        } else {
            // The terminal NT scaling is too ill-conditioned to keep
            // improving; stop rather than drift away from the best iterate.
            stall += 1;
            if stall >= 8 || mu < 1e-13 {
                break;
            }
        }

        // NT scalings.
        let mut scal = Vec::with_capacity(layout.blocks.len());
        let mut broke = false;
        for b in 0..layout.blocks.len() {
            match nt_scaling(&layout, b, &x, &z) {
                Some(s) => scal.push(s),
                None => {
                    broke = true;
                    break;
                }
            }
        }
        if broke {
            break;
        }
        let lam = lambda_svec(&layout, &scal);

        // Schur complement over (dy, dw, dtau).
        let dim = m + nf + 1;
        let mut schur = DMatrix::zeros(dim, dim);
        let a_tilde: Vec<Vec<f64>> = (0..m)
            .map(|i| apply_scaling(&layout, &scal, &a_rows[i], Conj::KW))
            .collect();
        let c_tilde = apply_scaling(&layout, &scal, &c_x, Conj::KW);
        for i in 0..m {
            for j in 0..=i {
                let v = dot(&a_rows[j], &a_tilde[i]);
                schur[(i, j)] = v;
                schur[(j, i)] = v;
            }
        }
        for i in 0..m {
            for k in 0..nf {
                schur[(i, m + k)] = a_free[(i, k)];
                schur[(m + k, i)] = -a_free[(i, k)];
            }
            let acw = dot(&c_x, &a_tilde[i]);
            schur[(i, m + nf)] = -acw - b_vec[i];
            schur[(m + nf, i)] = b_vec[i] - acw;
        }
        for k in 0..nf {
            schur[(m + k, m + nf)] = c_w[k];
            schur[(m + nf, m + k)] = -c_w[k];
        }
        schur[(m + nf, m + nf)] = dot(&c_x, &c_tilde) + kappa / tau;
        // Tiny ridge for redundant constraint sets.
        for i in 0..dim {
            schur[(i, i)] += 1e-13;
        }
        let lu = schur.clone().lu();

        // One direction for a given residual weight eta and complementarity
        // targets d_cone (svec), d_tau.
        let solve_dir = |eta: f64,
                         d_cone: &[f64],
                         d_tau: f64|
         -> Option<(Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, f64, f64)> {
            // rho_d = -eta r_d + R^{-T} d_cone R^{-1}
            let lifted = apply_scaling(&layout, &scal, d_cone, Conj::Lift);
            let mut rho_d = vec![0.0; nu];
            for i in 0..nu {
                rho_d[i] = -eta * r_d[i] + lifted[i];
            }
            let kw_rho = apply_scaling(&layout, &scal, &rho_d, Conj::KW);
            let mut rhs = nalgebra::DVector::zeros(dim);
            for i in 0..m {
                rhs[i] = -eta * r_p[i] - dot(&a_rows[i], &kw_rho);
            }
            for k in 0..nf {
                rhs[m + k] = -eta * r_f[k];
            }
            rhs[m + nf] = -eta * r_g + dot(&c_x, &kw_rho) + d_tau / tau;
            let mut sol = lu.solve(&rhs)?;
            // Iterative refinement recovers digits lost to the terminal
            // ill-conditioning of the scaled Schur complement.
            for _ in 0..2 {
                let res = &rhs - &schur * &sol;
                if res.amax() <= 1e-14 * (1.0 + rhs.amax()) {
                    break;
                }
                match lu.solve(&res) {
                    Some(corr) => sol += corr,
                    None => break,
                }
            }
            let dy: Vec<f64> = (0..m).map(|i| sol[i]).collect();
            let dw: Vec<f64> = (0..nf).map(|k| sol[m + k]).collect();
            let dtau = sol[m + nf];
            // dx = K_W(rho_d + A' dy - c dtau)
            let (atdy, _) = at_apply(&dy);
            let mut inner = vec![0.0; nu];
            for i in 0..nu {
                inner[i] = rho_d[i] + atdy[i] - c_x[i] * dtau;
            }
            let dx = apply_scaling(&layout, &scal, &inner, Conj::KW);
            // dz = R^{-T}(d_cone - R^{-1} dx R^{-T})R^{-1}
            let dx_hat = apply_scaling(&layout, &scal, &dx, Conj::Down);
            let mut tmp = vec![0.0; nu];
            for i in 0..nu {
                tmp[i] = d_cone[i] - dx_hat[i];
            }
            let dz = apply_scaling(&layout, &scal, &tmp, Conj::Lift);
            let dkappa = (d_tau - kappa * dtau) / tau;
            Some((dx, dw, dy, dz, dtau, dkappa))
        };

        // Affine (predictor) direction: target lam o (dxh + dzh) = -lam o lam.
        let neg_lam: Vec<f64> = lam.iter().map(|v| -v).collect();
        let Some((dx_a, _dw_a, _dy_a, dz_a, dtau_a, dkappa_a)) =
            solve_dir(1.0, &neg_lam, -tau * kappa)
        else {
            break;
        };
        let mut alpha_aff = max_step(&layout, &x, &dx_a).min(max_step(&layout, &z, &dz_a));
        if dtau_a < 0.0 {
            alpha_aff = alpha_aff.min(-tau / dtau_a);
        }
        if dkappa_a < 0.0 {
            alpha_aff = alpha_aff.min(-kappa / dkappa_a);
        }
        let alpha_aff = alpha_aff.min(1.0);
        let mu_aff = {
            let mut xs = x.clone();
            let mut zs = z.clone();
            for i in 0..nu {
                xs[i] += alpha_aff * dx_a[i];
                zs[i] += alpha_aff * dz_a[i];
            }
            (dot(&xs, &zs) + (tau + alpha_aff * dtau_a) * (kappa + alpha_aff * dkappa_a)) / degree
        };
        let sigma = (mu_aff / mu).max(0.0).powi(3).clamp(1e-8, 1.0 - 1e-8);

        // Combined (corrector) direction.
        let dxh = apply_scaling(&layout, &scal, &dx_a, -1);
        let dzh = apply_scaling(&layout, &scal, &dz_a, 1);
        let cross = jordan_product(&layout, &scal, &dxh, &dzh);
        let lam2 = jordan_product(&layout, &scal, &lam, &lam);
        let mut target = vec![0.0; nu];
        let ident = layout.identity();
        for i in 0..nu {
            target[i] = sigma * mu * ident[i] - lam2[i] - cross[i];
        }
        let d_cone = jordan_solve(&layout, &scal, &target);
        let d_tau = sigma * mu - tau * kappa - dtau_a * dkappa_a;
        let eta = 1.0 - sigma;
        let Some((dx, dw, dy, dz, dtau, dkappa)) = solve_dir(eta, &d_cone, d_tau) else {
            break;
        };

        let mut alpha = max_step(&layout, &x, &dx).min(max_step(&layout, &z, &dz));
        if dtau < 0.0 {
            alpha = alpha.min(-tau / dtau);
        }
        if dkappa < 0.0 {
            alpha = alpha.min(-kappa / dkappa);
        }
        let alpha = (0.98 * alpha).min(1.0);
        if alpha <= 1e-13 {
            break;
        }
        for i in 0..nu {
            x[i] += alpha * dx[i];
            z[i] += alpha * dz[i];
        }
        for k in 0..nf {
            w[k] += alpha * dw[k];
        }
        for i in 0..m {
            y[i] += alpha * dy[i];
        }
        tau += alpha * dtau;
        kappa += alpha * dkappa;
    }

    // Loop exhausted: decide by the tau/kappa ratio, otherwise Inaccurate.
    if kappa > RATIO_DECIDE * tau {
        let by = dot(&b_vec, &y);
        if by > 0.0 {
            let yn: Vec<f64> = y.iter().map(|v| v / by).collect();
            if let Some(cert) = verify_primal_infeasibility(p, &yn, cert_tol) {
                let mut out = best.as_ref().unwrap().1.clone();
                out.status = SdpStatus::PrimalInfeasible;
                out.certificate = Some(cert);
                out.iterations = iterations;
                return Ok(out);
            }
        }
        let cx = dot(&c_x, &x) + dot(&c_w, &w);
        if cx < 0.0 {
            let scale = -1.0 / cx;
            let xn: Vec<f64> = x.iter().map(|v| v * scale).collect();
            let wn: Vec<f64> = w.iter().map(|v| v * scale).collect();
            if let Some(cert) = verify_dual_infeasibility(p, &layout, &xn, &wn, cert_tol) {
                let mut out = best.as_ref().unwrap().1.clone();
                out.status = SdpStatus::DualInfeasible;
                out.certificate = Some(cert);
                out.iterations = iterations;
                return Ok(out);
            }
        }
    }
    let mut out = best
        .map(|(_, o)| o)
        .ok_or_else(|| Error::Solver("sdp solve produced no iterate".into()))?;
    out.status = SdpStatus::Inaccurate;
    out.iterations = iterations;
    Ok(out)
}

/// Check a primal-infeasibility ray against the raw problem data:
/// `-mat(A'y)` must lie in the cone and `A_f'y` must vanish, with
/// `b . y = 1` after normalization.
pub fn verify_primal_infeasibility(
    p: &SdpProblem,
    y: &[f64],
    cert_tol: f64,
) -> Option<SdpCertificate> {
    let layout = Layout::new(&p.blocks);
    let mut aty = vec![0.0; layout.nu];
    let mut atyf = vec![0.0; p.n_free];
    let mut by = 0.0;
    for (i, con) in p.constraints.iter().enumerate() {
        let row = layout.pack(&con.coeffs);
        for (o, a) in aty.iter_mut().zip(&row) {
            *o += y[i] * a;
        }
        for &(k, v) in &con.free {
            atyf[k] += v * y[i];
        }
        by += con.rhs * y[i];
    }
    if by <= 0.0 {
        return None;
    }
    let ynorm = 1.0 + amax(y);
    // -A'(y) must be in the dual cone.
    let mut min_eig = f64::INFINITY;
    for b in 0..p.blocks.len() {
        match p.blocks[b] {
            Block::Psd(_) => {
                let mut mm = layout.to_matrix(&aty, b);
                mm = -mm;
                let eig = mm.symmetric_eigenvalues();
                min_eig = min_eig.min(eig.iter().fold(f64::INFINITY, |a, &v| a.min(v)));
            }
            Block::Nonneg(_) => {
                for v in layout.block_slice(&aty, b) {
                    min_eig = min_eig.min(-v);
                }
            }
        }
    }
    let free_res = amax(&atyf);
    if min_eig >= -cert_tol * ynorm && free_res <= cert_tol * ynorm {
        Some(SdpCertificate::PrimalInfeasible {
            y: y.to_vec(),
            margin: by,
            residual: free_res.max((-min_eig).max(0.0)),
        })
    } else {
        None
    }
}

fn verify_dual_infeasibility(
    p: &SdpProblem,
    layout: &Layout,
    x: &[f64],
    w: &[f64],
    cert_tol: f64,
) -> Option<SdpCertificate> {
    // c . x must be negative (normalized to -1), A(x, w) ~ 0, x in cone.
    let c_x = layout.pack(&p.obj);
    let mut cw = dot(&c_x, x);
    for &(k, v) in &p.obj_free {
        cw += v * w[k];
    }
    if cw >= -0.5 {
        return None;
    }
    let xnorm = 1.0 + amax(x).max(amax(w));
    let mut worst_row = 0.0f64;
    for con in &p.constraints {
        let row = layout.pack(&con.coeffs);
        let mut v = dot(&row, x);
        for &(k, c) in &con.free {
            v += c * w[k];
        }
        worst_row = worst_row.max(v.abs());
    }
    let mut min_eig = f64::INFINITY;
    let mut blocks_out = Vec::new();
    for b in 0..p.blocks.len() {
        match p.blocks[b] {
            Block::Psd(_) => {
                let mm = layout.to_matrix(x, b);
                let eig = mm.symmetric_eigenvalues();
                min_eig = min_eig.min(eig.iter().fold(f64::INFINITY, |a, &v| a.min(v)));
                blocks_out.push(BlockSol::Psd(mm));
            }
            Block::Nonneg(_) => {
                let v: Vec<f64> = layout.block_slice(x, b).to_vec();
                for &e in &v {
                    min_eig = min_eig.min(e);
                }
                blocks_out.push(BlockSol::Nonneg(v));
            }
        }
    }
    if worst_row <= cert_tol * xnorm && min_eig >= -cert_tol * xnorm {
        Some(SdpCertificate::DualInfeasible {
            x: blocks_out,
            w: w.to_vec(),
            margin: -cw,
            residual: worst_row.max((-min_eig).max(0.0)),
        })
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeff(block: usize, i: usize, j: usize, v: f64) -> Coeff {
        Coeff { block, i, j, v }
    }

    #[test]
    fn smallest_eigenvalue_problem() {
        // min tr(diag(1,2) X) s.t. tr(X) = 1, X psd  -> value 1, X = e1 e1'.
        let mut p = SdpProblem::new(vec![Block::Psd(2)], 0);
        p.obj.push(coeff(0, 0, 0, 1.0));
        p.obj.push(coeff(0, 1, 1, 2.0));
        p.constraints.push(SdpConstraint {
            coeffs: vec![coeff(0, 0, 0, 1.0), coeff(0, 1, 1, 1.0)],
            free: vec![],
            rhs: 1.0,
        });
        let out = solve_sdp(&p, 1e-8, 1e-6).unwrap();
        assert_eq!(out.status, SdpStatus::Optimal);
        assert!((out.primal_objective - 1.0).abs() < 1e-6);
        let BlockSol::Psd(xm) = &out.primal[0] else {
            panic!()
        };
        assert!((xm[(0, 0)] - 1.0).abs() < 1e-5);
        assert!(xm[(1, 1)].abs() < 1e-5);
    }

    #[test]
    fn negative_trace_is_primal_infeasible() {
        // tr(X) = -1, X psd: infeasible with a verifiable ray.
        let mut p = SdpProblem::new(vec![Block::Psd(2)], 0);
        p.constraints.push(SdpConstraint {
            coeffs: vec![coeff(0, 0, 0, 1.0), coeff(0, 1, 1, 1.0)],
            free: vec![],
            rhs: -1.0,
        });
        let out = solve_sdp(&p, 1e-7, 1e-6).unwrap();
        assert_eq!(out.status, SdpStatus::PrimalInfeasible);
        match out.certificate.expect("certificate") {
            SdpCertificate::PrimalInfeasible {
                margin, residual, ..
            } => {
                assert!(margin > 0.9);
                assert!(residual < 1e-6);
            }
            _ => panic!("wrong certificate kind"),
        }
    }

    #[test]
    fn orthant_lp_via_sdp_path() {
        // min x0 + 2 x1 s.t. x0 + x1 = 1, x >= 0 -> 1 at (1, 0).
        let mut p = SdpProblem::new(vec![Block::Nonneg(2)], 0);
        p.obj.push(coeff(0, 0, 0, 1.0));
        p.obj.push(coeff(0, 1, 1, 2.0));
        p.constraints.push(SdpConstraint {
            coeffs: vec![coeff(0, 0, 0, 1.0), coeff(0, 1, 1, 1.0)],
            free: vec![],
            rhs: 1.0,
        });
        let out = solve_sdp(&p, 1e-8, 1e-6).unwrap();
        assert_eq!(out.status, SdpStatus::Optimal);
        assert!((out.primal_objective - 1.0).abs() < 1e-6);
    }

    #[test]
    fn free_variable_shifts_optimum() {
        // min x11 + 3 w  s.t. x11 + w = 2, x11 - w = 0 (X 1x1 psd, w free):
        // x11 = w = 1, objective 4.
        let mut p = SdpProblem::new(vec![Block::Psd(1)], 1);
        p.obj.push(coeff(0, 0, 0, 1.0));
        p.obj_free.push((0, 3.0));
        p.constraints.push(SdpConstraint {
            coeffs: vec![coeff(0, 0, 0, 1.0)],
            free: vec![(0, 1.0)],
            rhs: 2.0,
        });
        p.constraints.push(SdpConstraint {
            coeffs: vec![coeff(0, 0, 0, 1.0)],
            free: vec![(0, -1.0)],
            rhs: 0.0,
        });
        let out = solve_sdp(&p, 1e-8, 1e-6).unwrap();
        assert_eq!(out.status, SdpStatus::Optimal);
        assert!((out.primal_objective - 4.0).abs() < 1e-6);
        assert!((out.free[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn unbounded_problem_reports_dual_infeasible() {
        // min -x11 with only X psd (no constraints): unbounded below.
        let mut p = SdpProblem::new(vec![Block::Psd(2)], 0);
        p.obj.push(coeff(0, 0, 0, -1.0));
        let out = solve_sdp(&p, 1e-7, 1e-6).unwrap();
        assert_eq!(out.status, SdpStatus::DualInfeasible);
        assert!(out.certificate.is_some());
    }

    #[test]
    fn debug_dump_roundtrips_nonzeros() {
        let mut p = SdpProblem::new(vec![Block::Psd(2), Block::Nonneg(1)], 0);
        p.obj.push(coeff(0, 0, 1, 0.5));
        p.constraints.push(SdpConstraint {
            coeffs: vec![coeff(1, 0, 0, 2.0)],
            free: vec![],
            rhs: 1.0,
        });
        let mut buf = Vec::new();
        p.write_debug_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("blocks psd 2 nonneg 1"));
        assert!(text.contains("obj 0 0 1"));
        assert!(text.contains("rhs 0"));
    }
}
