//! Shared independent oracles for the integration tests.
//!
//! Everything here recomputes quantities from first principles, without
//! touching the code paths under test: complex power-flow evaluation for the
//! injection matrices, vertex enumeration and a small dense simplex for
//! linear programs, and a direct constraint evaluator for the master model.

#![allow(dead_code)]

use num_complex::Complex64;
use tcuc::net::PowerNetwork;

/// Net complex injection S_k = V_k * conj((Y V)_k) at every bus, from the
/// branch list alone (the admittance matrix is re-assembled here on purpose).
pub fn complex_injections(net: &PowerNetwork, x: &[f64]) -> Vec<Complex64> {
    let n = net.n();
    assert_eq!(x.len(), 2 * n);
    let v: Vec<Complex64> = (0..n).map(|k| Complex64::new(x[k], x[n + k])).collect();
    let mut current = vec![Complex64::new(0.0, 0.0); n];
    for br in &net.branches {
        let ys = Complex64::new(br.series_g, br.series_b);
        let ysh = Complex64::new(0.0, br.shunt_b / 2.0);
        let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
        let y_ff = (ys + ysh) / (br.tap_ratio * br.tap_ratio);
        let y_ft = -ys / tap.conj();
        let y_tf = -ys / tap;
        let y_tt = ys + ysh;
        current[br.from] += y_ff * v[br.from] + y_ft * v[br.to];
        current[br.to] += y_tf * v[br.from] + y_tt * v[br.to];
    }
    (0..n).map(|k| v[k] * current[k].conj()).collect()
}

/// Sending-end complex flow of one branch orientation.
pub fn complex_line_flow(net: &PowerNetwork, branch: usize, from_side: bool, x: &[f64]) -> Complex64 {
    let n = net.n();
    let v: Vec<Complex64> = (0..n).map(|k| Complex64::new(x[k], x[n + k])).collect();
    let br = &net.branches[branch];
    let ys = Complex64::new(br.series_g, br.series_b);
    let ysh = Complex64::new(0.0, br.shunt_b / 2.0);
    let tap = Complex64::from_polar(br.tap_ratio, br.phase_shift);
    let y_ff = (ys + ysh) / (br.tap_ratio * br.tap_ratio);
    let y_ft = -ys / tap.conj();
    let y_tf = -ys / tap;
    let y_tt = ys + ysh;
    if from_side {
        let i = y_ff * v[br.from] + y_ft * v[br.to];
        v[br.from] * i.conj()
    } else {
        let i = y_tf * v[br.from] + y_tt * v[br.to];
        v[br.to] * i.conj()
    }
}

/// Brute-force LP oracle: enumerate candidate active sets of the system
/// `{rows, bounds}` and return the best feasible vertex objective for
/// `min c.x`. Only usable for a handful of variables.
pub fn lp_vertex_enumeration(
    n: usize,
    c: &[f64],
    rows: &[(Vec<f64>, f64)], // a.x <= b
    eqs: &[(Vec<f64>, f64)],  // a.x == b
    lower: &[f64],
    upper: &[f64],
) -> Option<(f64, Vec<f64>)> {
    use nalgebra::{DMatrix, DVector};
    // Collect every inequality (rows + finite bounds) as a.x <= b.
    let mut ineq: Vec<(Vec<f64>, f64)> = rows.to_vec();
    for i in 0..n {
        if upper[i].is_finite() {
            let mut a = vec![0.0; n];
            a[i] = 1.0;
            ineq.push((a, upper[i]));
        }
        if lower[i].is_finite() {
            let mut a = vec![0.0; n];
            a[i] = -1.0;
            ineq.push((a, -lower[i]));
        }
    }
    let m = ineq.len();
    let need = n - eqs.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut combo = vec![0usize; need];
    // Iterate over all `need`-subsets of the inequality list.
    fn subsets(m: usize, k: usize, f: &mut dyn FnMut(&[usize])) {
        fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
            if cur.len() == k {
                f(cur);
                return;
            }
            for i in start..m {
                cur.push(i);
                rec(i + 1, m, k, cur, f);
                cur.pop();
            }
        }
        let mut cur = Vec::new();
        rec(0, m, k, &mut cur, f);
    }
    let _ = &mut combo;
    subsets(m, need, &mut |active: &[usize]| {
        let mut a = DMatrix::zeros(n, n);
        let mut b = DVector::zeros(n);
        for (r, (coef, rhs)) in eqs.iter().enumerate() {
            for j in 0..n {
                a[(r, j)] = coef[j];
            }
            b[r] = *rhs;
        }
        for (k, &idx) in active.iter().enumerate() {
            let r = eqs.len() + k;
            for j in 0..n {
                a[(r, j)] = ineq[idx].0[j];
            }
            b[r] = ineq[idx].1;
        }
        let lu = a.lu();
        let Some(x) = lu.solve(&b) else { return };
        // Feasibility check with a modest tolerance.
        for (coef, rhs) in &ineq {
            let lhs: f64 = (0..n).map(|j| coef[j] * x[j]).sum();
            if lhs > rhs + 1e-7 {
                return;
            }
        }
        for (coef, rhs) in eqs {
            let lhs: f64 = (0..n).map(|j| coef[j] * x[j]).sum();
            if (lhs - rhs).abs() > 1e-7 {
                return;
            }
        }
        let obj: f64 = (0..n).map(|j| c[j] * x[j]).sum();
        if best.as_ref().map(|(v, _)| obj < *v).unwrap_or(true) {
            best = Some((obj, x.iter().copied().collect()));
        }
    });
    best
}

/// Dense two-phase simplex for `min c.x  s.t.  A x = b, x >= 0` with Bland's
/// rule. Independent reference for the interior-point LP path.
pub fn simplex_standard_form(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let m = a.len();
    let n = c.len();
    // Make b nonnegative.
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut b: Vec<f64> = b.to_vec();
    for i in 0..m {
        if b[i] < 0.0 {
            for j in 0..n {
                a[i][j] = -a[i][j];
            }
            b[i] = -b[i];
        }
    }
    // Phase 1 tableau with artificial variables.
    let total = n + m;
    let mut t = vec![vec![0.0; total + 1]; m + 1];
    for i in 0..m {
        for j in 0..n {
            t[i][j] = a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][total] = b[i];
    }
    let mut basis: Vec<usize> = (n..n + m).collect();
    // Phase-1 objective: sum of artificials.
    for j in 0..=total {
        let mut s = 0.0;
        for i in 0..m {
            s += t[i][j];
        }
        t[m][j] = -s;
    }
    let pivot = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, row: usize, col: usize| {
        let piv = t[row][col];
        let cols = t[0].len();
        for j in 0..cols {
            t[row][j] /= piv;
        }
        for i in 0..t.len() {
            if i != row && t[i][col].abs() > 1e-13 {
                let f = t[i][col];
                for j in 0..cols {
                    t[i][j] -= f * t[row][j];
                }
            }
        }
        basis[row] = col;
    };
    let run = |t: &mut Vec<Vec<f64>>, basis: &mut Vec<usize>, ncols: usize| -> bool {
        for _ in 0..20_000 {
            // Bland: first column with negative reduced cost.
            let mut col = usize::MAX;
            for j in 0..ncols {
                if t[m][j] < -1e-9 {
                    col = j;
                    break;
                }
            }
            if col == usize::MAX {
                return true;
            }
            let rhs_col = t[0].len() - 1;
            let mut row = usize::MAX;
            let mut best = f64::INFINITY;
            for i in 0..m {
                if t[i][col] > 1e-11 {
                    let ratio = (t[i][rhs_col] / t[i][col]).max(0.0);
                    let better = ratio < best - 1e-12
                        || (ratio < best + 1e-12 && row != usize::MAX && basis[i] < basis[row]);
                    if row == usize::MAX || better {
                        best = ratio;
                        row = i;
                    }
                }
            }
            if row == usize::MAX {
                return false; // unbounded
            }
            pivot(t, basis, row, col);
        }
        false
    };
    // Phase 1 over all columns.
    if !run(&mut t, &mut basis, total) {
        return None;
    }
    if t[m][total].abs() > 1e-7 {
        return None; // infeasible
    }
    // Drive artificials out of the basis where possible.
    for i in 0..m {
        if basis[i] >= n {
            if let Some(col) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, col);
            }
        }
    }
    // Phase 2: rebuild objective row for c over original columns.
    for j in 0..=total {
        t[m][j] = 0.0;
    }
    for j in 0..n {
        t[m][j] = c[j];
    }
    for i in 0..m {
        if basis[i] < n {
            let f = t[m][basis[i]];
            if f.abs() > 1e-14 {
                for j in 0..=total {
                    t[m][j] -= f * t[i][j];
                }
            }
        }
    }
    // Forbid re-entering artificial columns.
    for j in n..total {
        if !basis.contains(&j) {
            for row in t.iter_mut().take(m + 1) {
                row[j] = 0.0;
            }
        }
    }
    if !run(&mut t, &mut basis, n) {
        return None;
    }
    let mut x = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            x[basis[i]] = t[i][total];
        }
    }
    Some((0..n).map(|j| c[j] * x[j]).sum())
}
