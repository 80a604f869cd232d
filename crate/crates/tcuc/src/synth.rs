//! Synthetic case builders: seeded random networks and unit-commitment
//! instances for demos and the test suite, plus a fixed 45-bus network with
//! the same shape as the islanded system the solver was sized for.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net::{Branch, Bus, PowerNetwork};

/// Random connected network: a spanning tree plus `extra_edges` chords.
/// Roughly `limited_frac` of the branches carry an apparent-power limit of
/// `s_limit`.
pub fn random_network(
    seed: u64,
    n_buses: usize,
    extra_edges: usize,
    limited_frac: f64,
    s_limit: f64,
) -> PowerNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let buses: Vec<Bus> = (0..n_buses)
        .map(|i| Bus {
            id: (i + 1) as i64,
            v_min: 0.94,
            v_max: 1.06,
            is_generator: false,
        })
        .collect();

    let mut branches = Vec::new();
    let mut push_branch = |rng: &mut ChaCha8Rng, from: usize, to: usize| {
        let r: f64 = rng.gen_range(0.01..0.05);
        let x: f64 = rng.gen_range(0.05..0.25);
        let den = r * r + x * x;
        let tap = if rng.gen_bool(0.15) {
            rng.gen_range(0.97..1.03)
        } else {
            1.0
        };
        let shift = if rng.gen_bool(0.1) {
            rng.gen_range(-0.02..0.02)
        } else {
            0.0
        };
        let limited = rng.gen_bool(limited_frac);
        branches.push(Branch {
            from,
            to,
            series_g: r / den,
            series_b: -x / den,
            shunt_b: rng.gen_range(0.0..0.04),
            tap_ratio: tap,
            phase_shift: shift,
            s_max: limited.then_some(s_limit),
        });
    };

    for k in 1..n_buses {
        let parent = rng.gen_range(0..k);
        push_branch(&mut rng, parent, k);
    }
    for _ in 0..extra_edges {
        let a = rng.gen_range(0..n_buses);
        let mut b = rng.gen_range(0..n_buses);
        while b == a {
            b = rng.gen_range(0..n_buses);
        }
        push_branch(&mut rng, a, b);
    }

    PowerNetwork::from_parts(100.0, buses, branches).expect("generated network is valid")
}

/// Fixed-size island network: 45 buses and 48 branches of which 4 are
/// double circuits (parallel branch pairs).
pub fn island_45_network() -> PowerNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(4548);
    let n = 45;
    let buses: Vec<Bus> = (0..n)
        .map(|i| Bus {
            id: (i + 1) as i64,
            v_min: 0.94,
            v_max: 1.06,
            is_generator: false,
        })
        .collect();
    let mut branches: Vec<Branch> = Vec::new();
    fn add(rng: &mut ChaCha8Rng, branches: &mut Vec<Branch>, from: usize, to: usize) {
        let r: f64 = rng.gen_range(0.01..0.04);
        let x: f64 = rng.gen_range(0.05..0.2);
        let den = r * r + x * x;
        branches.push(Branch {
            from,
            to,
            series_g: r / den,
            series_b: -x / den,
            shunt_b: rng.gen_range(0.0..0.03),
            tap_ratio: 1.0,
            phase_shift: 0.0,
            s_max: Some(2.5),
        });
    }
    // Spanning tree: 44 branches.
    for k in 1..n {
        let parent = rng.gen_range(0..k);
        add(&mut rng, &mut branches, parent, k);
    }
    // 4 double circuits duplicating existing corridors: 48 total.
    for i in [3usize, 11, 19, 31] {
        let (f, t) = (branches[i].from, branches[i].to);
        add(&mut rng, &mut branches, f, t);
    }
    PowerNetwork::from_parts(100.0, buses, branches).expect("island network is valid")
}
