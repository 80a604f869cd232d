//! Network model: case parsing, bus-admittance assembly and the constant
//! matrices of the rectangular voltage formulation.
//!
//! For every bus `k` the matrices `p_inj[k]`, `q_inj[k]` and `v_sq[k]`
//! satisfy, for any voltage vector `x = [Re V; Im V]`,
//!
//! ```text
//! tr(p_inj[k] xx') = P_k   (net active injection at k)
//! tr(q_inj[k] xx') = Q_k   (net reactive injection at k)
//! tr(v_sq[k] xx')  = |V_k|^2
//! ```
//!
//! and for every directed flow-limited line `b` the pair `line_p[b]`,
//! `line_q[b]` measures the sending-end flow of that orientation. These
//! trace identities are what the SDP relaxation is built from, and the test
//! suite pins them against a direct complex power-flow evaluation.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Deserialize;
use std::path::Path;

use crate::{Error, Result};

/// A bus with voltage-magnitude bounds (p.u.).
#[derive(Debug, Clone)]
pub struct Bus {
    /// External id from the case file.
    pub id: i64,
    pub v_min: f64,
    pub v_max: f64,
    /// Set when a unit-commitment instance places a generator here.
    pub is_generator: bool,
}

/// A Pi-model branch. `from`/`to` are positions into the bus list.
#[derive(Debug, Clone)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub series_g: f64,
    pub series_b: f64,
    /// Total line-charging susceptance, half at each end.
    pub shunt_b: f64,
    pub tap_ratio: f64,
    pub phase_shift: f64,
    /// Apparent-power limit (p.u.); `None` means the branch is not in the
    /// flow-limited set L.
    pub s_max: Option<f64>,
}

impl Branch {
    /// Two-port admittance (y_ff, y_ft, y_tf, y_tt) with the ideal
    /// phase-shifting transformer at the `from` end.
    pub fn two_port(&self) -> (Complex64, Complex64, Complex64, Complex64) {
        let ys = Complex64::new(self.series_g, self.series_b);
        let ysh = Complex64::new(0.0, self.shunt_b / 2.0);
        let tap = Complex64::from_polar(self.tap_ratio, self.phase_shift);
        let y_ff = (ys + ysh) / (self.tap_ratio * self.tap_ratio);
        let y_ft = -ys / tap.conj();
        let y_tf = -ys / tap;
        let y_tt = ys + ysh;
        (y_ff, y_ft, y_tf, y_tt)
    }
}

/// Parsed network with its assembled bus-admittance matrix.
#[derive(Debug, Clone)]
pub struct PowerNetwork {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
    pub y: DMatrix<Complex64>,
}

impl PowerNetwork {
    /// Validate bus/branch lists and assemble the admittance matrix.
    pub fn from_parts(base_mva: f64, buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self> {
        if base_mva <= 0.0 {
            return Err(Error::Validation("base_mva must be positive".into()));
        }
        for (i, b) in buses.iter().enumerate() {
            if !(b.v_min > 0.0 && b.v_min <= b.v_max) {
                return Err(Error::Validation(format!(
                    "bus {}: need 0 < vmin <= vmax",
                    b.id
                )));
            }
            if buses[..i].iter().any(|x| x.id == b.id) {
                return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
            }
        }
        for (k, br) in branches.iter().enumerate() {
            if br.from >= buses.len() || br.to >= buses.len() {
                return Err(Error::Validation(format!(
                    "branch {k} references a bus position out of range"
                )));
            }
            if br.from == br.to {
                return Err(Error::Validation(format!("branch {k} is a self-loop")));
            }
            if br.tap_ratio <= 0.0 {
                return Err(Error::Validation(format!("branch {k}: tap must be > 0")));
            }
            if let Some(s) = br.s_max {
                if s <= 0.0 {
                    return Err(Error::Validation(format!("branch {k}: smax must be > 0")));
                }
            }
        }
        let y = assemble_admittance(buses.len(), &branches);
        Ok(PowerNetwork {
            base_mva,
            buses,
            branches,
            y,
        })
    }

    pub fn n(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_position(&self, id: i64) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    /// Branch indices carrying an apparent-power limit (the set L).
    pub fn limited_branches(&self) -> Vec<usize> {
        (0..self.branches.len())
            .filter(|&i| self.branches[i].s_max.is_some())
            .collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CaseJson {
    #[serde(default)]
    schema: Option<u32>,
    base_mva: f64,
    buses: Vec<BusJson>,
    branches: Vec<BranchJson>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BusJson {
    id: i64,
    vmin: f64,
    vmax: f64,
}

fn default_tap() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchJson {
    from: i64,
    to: i64,
    g: f64,
    b: f64,
    #[serde(default)]
    bsh: f64,
    #[serde(default = "default_tap")]
    tap: f64,
    #[serde(default)]
    shift: f64,
    #[serde(default)]
    smax: Option<f64>,
}

/// Parse and validate a JSON case file.
pub fn parse_case(path: &Path) -> Result<PowerNetwork> {
    let text = std::fs::read_to_string(path)?;
    let case: CaseJson = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        detail: e.to_string(),
    })?;
    network_from_case(case).map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse a case from an in-memory JSON string.
pub fn parse_case_str(text: &str) -> Result<PowerNetwork> {
    let case: CaseJson = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: "<memory>".into(),
        detail: e.to_string(),
    })?;
    network_from_case(case)
}

fn network_from_case(case: CaseJson) -> Result<PowerNetwork> {
    if let Some(v) = case.schema {
        if v != 1 {
            return Err(Error::Validation(format!("unsupported schema version {v}")));
        }
    }
    if case.base_mva <= 0.0 {
        return Err(Error::Validation("base_mva must be positive".into()));
    }
    let mut buses = Vec::with_capacity(case.buses.len());
    for b in &case.buses {
        if !(b.vmin > 0.0 && b.vmin <= b.vmax) {
            return Err(Error::Validation(format!(
                "bus {}: need 0 < vmin <= vmax, got [{}, {}]",
                b.id, b.vmin, b.vmax
            )));
        }
        if buses.iter().any(|x: &Bus| x.id == b.id) {
            return Err(Error::Validation(format!("duplicate bus id {}", b.id)));
        }
        buses.push(Bus {
            id: b.id,
            v_min: b.vmin,
            v_max: b.vmax,
            is_generator: false,
        });
    }
    let pos = |id: i64| buses.iter().position(|b: &Bus| b.id == id);
    let mut branches = Vec::with_capacity(case.branches.len());
    for (k, br) in case.branches.iter().enumerate() {
        let from = pos(br.from).ok_or_else(|| {
            Error::Validation(format!("branch {k} references unknown bus {}", br.from))
        })?;
        let to = pos(br.to).ok_or_else(|| {
            Error::Validation(format!("branch {k} references unknown bus {}", br.to))
        })?;
        branches.push(Branch {
            from,
            to,
            series_g: br.g,
            series_b: br.b,
            shunt_b: br.bsh,
            tap_ratio: br.tap,
            phase_shift: br.shift,
            s_max: br.smax,
        });
    }
    PowerNetwork::from_parts(case.base_mva, buses, branches)
}

fn assemble_admittance(n: usize, branches: &[Branch]) -> DMatrix<Complex64> {
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for br in branches {
        let (y_ff, y_ft, y_tf, y_tt) = br.two_port();
        y[(br.from, br.from)] += y_ff;
        y[(br.from, br.to)] += y_ft;
        y[(br.to, br.from)] += y_tf;
        y[(br.to, br.to)] += y_tt;
    }
    y
}

/// One directed orientation of a flow-limited branch.
#[derive(Debug, Clone, Copy)]
pub struct LineDirection {
    pub branch: usize,
    /// `true`: flow measured leaving the `from` end; `false`: the `to` end.
    pub from_side: bool,
    pub s_max: f64,
}

/// The constant real symmetric matrices of the rectangular formulation.
#[derive(Debug, Clone)]
pub struct InjectionMatrices {
    pub n: usize,
    pub p_inj: Vec<DMatrix<f64>>,
    pub q_inj: Vec<DMatrix<f64>>,
    pub v_sq: Vec<DMatrix<f64>>,
    /// Directed lines over L, both orientations per branch, in branch-list
    /// order (even index: from side, odd: to side).
    pub directions: Vec<LineDirection>,
    pub line_p: Vec<DMatrix<f64>>,
    pub line_q: Vec<DMatrix<f64>>,
}

/// Split a complex "row matrix" into the active/reactive symmetric pair of
/// the rectangular decomposition.
fn real_pair(yc: &DMatrix<Complex64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = yc.nrows();
    let yct = yc.transpose();
    let mut act = DMatrix::zeros(2 * n, 2 * n);
    let mut rea = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let s = yc[(i, j)] + yct[(i, j)];
            let d = yc[(i, j)] - yct[(i, j)];
            // active: 1/2 [[Re s, -Im d], [Im d, Re s]]
            act[(i, j)] = 0.5 * s.re;
            act[(n + i, n + j)] = 0.5 * s.re;
            act[(i, n + j)] = -0.5 * d.im;
            act[(n + i, j)] = 0.5 * d.im;
            // reactive: -1/2 [[Im s, Re d], [-Re d, Im s]]
            rea[(i, j)] = -0.5 * s.im;
            rea[(n + i, n + j)] = -0.5 * s.im;
            rea[(i, n + j)] = -0.5 * d.re;
            rea[(n + i, j)] = 0.5 * d.re;
        }
    }
    (act, rea)
}

/// Build every constant matrix used by the per-period SDPs.
pub fn build_injection_matrices(net: &PowerNetwork) -> InjectionMatrices {
    let n = net.n();
    let mut p_inj = Vec::with_capacity(n);
    let mut q_inj = Vec::with_capacity(n);
    let mut v_sq = Vec::with_capacity(n);
    for k in 0..n {
        // Row k of Y placed in row k of an otherwise-zero matrix.
        let mut yc = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
        for j in 0..n {
            yc[(k, j)] = net.y[(k, j)];
        }
        let (act, rea) = real_pair(&yc);
        p_inj.push(act);
        q_inj.push(rea);
        let mut m = DMatrix::zeros(2 * n, 2 * n);
        m[(k, k)] = 1.0;
        m[(n + k, n + k)] = 1.0;
        v_sq.push(m);
    }

    let mut directions = Vec::new();
    let mut line_p = Vec::new();
    let mut line_q = Vec::new();
    for bi in net.limited_branches() {
        let br = &net.branches[bi];
        let (y_ff, y_ft, y_tf, y_tt) = br.two_port();
        let s_max = br.s_max.unwrap();
        for (from_side, row_bus, c_own, c_other, other_bus) in [
            (true, br.from, y_ff, y_ft, br.to),
            (false, br.to, y_tt, y_tf, br.from),
        ] {
            // Sending-end current row of this orientation in row `row_bus`.
            let mut yc = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
            yc[(row_bus, row_bus)] = c_own;
            yc[(row_bus, other_bus)] = c_other;
            let (act, rea) = real_pair(&yc);
            directions.push(LineDirection {
                branch: bi,
                from_side,
                s_max,
            });
            line_p.push(act);
            line_q.push(rea);
        }
    }

    InjectionMatrices {
        n,
        p_inj,
        q_inj,
        v_sq,
        directions,
        line_p,
        line_q,
    }
}

/// `tr(M xx')` for a symmetric `M` and vector `x`.
pub fn trace_quad(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus_json() -> &'static str {
        r#"{
            "schema": 1,
            "base_mva": 100.0,
            "buses": [
                {"id": 1, "vmin": 0.9, "vmax": 1.1},
                {"id": 2, "vmin": 0.9, "vmax": 1.1}
            ],
            "branches": [
                {"from": 1, "to": 2, "g": 1.0, "b": -10.0, "smax": 1.0}
            ]
        }"#
    }

    #[test]
    fn textbook_admittance_assembly() {
        let net = parse_case_str(two_bus_json()).unwrap();
        let y = &net.y;
        let c = |re: f64, im: f64| Complex64::new(re, im);
        assert!((y[(0, 0)] - c(1.0, -10.0)).norm() < 1e-12);
        assert!((y[(0, 1)] - c(-1.0, 10.0)).norm() < 1e-12);
        assert!((y[(1, 0)] - c(-1.0, 10.0)).norm() < 1e-12);
        assert!((y[(1, 1)] - c(1.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn dangling_branch_reference_rejected() {
        let bad = r#"{
            "base_mva": 100.0,
            "buses": [
                {"id": 1, "vmin": 0.9, "vmax": 1.1},
                {"id": 2, "vmin": 0.9, "vmax": 1.1},
                {"id": 3, "vmin": 0.9, "vmax": 1.1}
            ],
            "branches": [{"from": 1, "to": 99, "g": 1.0, "b": -5.0}]
        }"#;
        let err = parse_case_str(bad).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("99"));
    }

    #[test]
    fn duplicate_bus_id_rejected() {
        let bad = r#"{
            "base_mva": 100.0,
            "buses": [
                {"id": 7, "vmin": 0.9, "vmax": 1.1},
                {"id": 7, "vmin": 0.9, "vmax": 1.1}
            ],
            "branches": []
        }"#;
        assert!(parse_case_str(bad).is_err());
    }

    #[test]
    fn voltage_magnitude_matrix_shape() {
        let net = parse_case_str(two_bus_json()).unwrap();
        let mats = build_injection_matrices(&net);
        let m = &mats.v_sq[0];
        for i in 0..4 {
            for j in 0..4 {
                let expect = if (i == 0 && j == 0) || (i == 2 && j == 2) {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(m[(i, j)], expect);
            }
        }
        let x = [0.7, 0.0, -0.4, 0.0];
        assert!((trace_quad(m, &x) - (0.49 + 0.16)).abs() < 1e-14);
    }

    #[test]
    fn flat_voltage_carries_no_flow() {
        let net = parse_case_str(two_bus_json()).unwrap();
        let mats = build_injection_matrices(&net);
        let x = [1.0, 1.0, 0.0, 0.0];
        assert!(trace_quad(&mats.p_inj[0], &x).abs() < 1e-12);
        assert!(trace_quad(&mats.line_p[0], &x).abs() < 1e-12);
    }

    #[test]
    fn all_matrices_exactly_symmetric() {
        let net = parse_case_str(two_bus_json()).unwrap();
        let mats = build_injection_matrices(&net);
        let check = |m: &DMatrix<f64>| {
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    assert_eq!(m[(i, j)], m[(j, i)]);
                }
            }
        };
        mats.p_inj.iter().for_each(check);
        mats.q_inj.iter().for_each(check);
        mats.v_sq.iter().for_each(check);
        mats.line_p.iter().for_each(check);
        mats.line_q.iter().for_each(check);
    }

    #[test]
    fn directed_line_ordering() {
        let net = parse_case_str(two_bus_json()).unwrap();
        let mats = build_injection_matrices(&net);
        assert_eq!(mats.directions.len(), 2);
        assert!(mats.directions[0].from_side);
        assert!(!mats.directions[1].from_side);
        assert_eq!(mats.directions[0].branch, 0);
    }
}
