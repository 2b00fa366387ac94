//! Small hand-built reference networks shared by the test suites and the
//! brute-force optimality checks. Kept in the library so integration tests
//! and the oracle acceptance suite use identical fixtures.

use crate::grid::{Branch, BranchKind, Bus, FlowLimit, Generator, Load, Network};

fn bus(index: usize, external_id: usize, is_reference: bool) -> Bus {
    Bus {
        index,
        external_id,
        v_min: 0.9,
        v_max: 1.1,
        is_reference,
    }
}

fn line(from_bus: usize, to_bus: usize, r: f64, x: f64) -> Branch {
    let denom = r * r + x * x;
    Branch {
        from_bus,
        to_bus,
        g: r / denom,
        b: -x / denom,
        b_charge: 0.0,
        tap: 1.0,
        shift: 0.0,
        kind: BranchKind::Line,
        limit: None,
    }
}

/// Generator and load on one bus with no network: the only feasible dispatch
/// is exactly the load.
pub fn one_bus_self_supplied() -> Network {
    Network {
        base_mva: 100.0,
        buses: vec![bus(0, 1, true)],
        generators: vec![Generator {
            bus: 0,
            p_min: 0.0,
            p_max: 2.0,
            q_min: -1.0,
            q_max: 1.0,
            cost_a: 10.0,
            cost_b: 50.0,
            cost_c: 20.0,
        }],
        loads: vec![Load {
            bus: 0,
            p: 0.8,
            q: 0.1,
        }],
        branches: vec![],
        shunts: vec![],
    }
}

/// One generator feeding one load over a 0.01 + j0.1 line.
pub fn two_bus() -> Network {
    Network {
        base_mva: 100.0,
        buses: vec![bus(0, 1, true), bus(1, 2, false)],
        generators: vec![Generator {
            bus: 0,
            p_min: 0.0,
            p_max: 3.0,
            q_min: -3.0,
            q_max: 3.0,
            cost_a: 0.0,
            cost_b: 500.0,
            cost_c: 100.0,
        }],
        loads: vec![Load {
            bus: 1,
            p: 1.0,
            q: 0.2,
        }],
        branches: vec![line(0, 1, 0.01, 0.1)],
        shunts: vec![],
    }
}

/// One generator, two loads, three lines in a mesh.
pub fn three_bus_meshed() -> Network {
    Network {
        base_mva: 100.0,
        buses: vec![bus(0, 1, true), bus(1, 2, false), bus(2, 3, false)],
        generators: vec![Generator {
            bus: 0,
            p_min: 0.0,
            p_max: 3.0,
            q_min: -2.0,
            q_max: 2.0,
            cost_a: 0.0,
            cost_b: 800.0,
            cost_c: 50.0,
        }],
        loads: vec![
            Load {
                bus: 1,
                p: 0.4,
                q: 0.1,
            },
            Load {
                bus: 2,
                p: 0.5,
                q: 0.05,
            },
        ],
        branches: vec![
            line(0, 1, 0.02, 0.15),
            line(0, 2, 0.03, 0.2),
            line(1, 2, 0.02, 0.18),
        ],
        shunts: vec![],
    }
}

/// Cheap and expensive unit side by side on the slack bus; the cheap one is
/// small, so the optimum saturates it and covers the rest expensively.
pub fn two_bus_two_gen() -> Network {
    let mut net = two_bus();
    net.generators = vec![
        Generator {
            bus: 0,
            p_min: 0.0,
            p_max: 2.5,
            q_min: -2.0,
            q_max: 2.0,
            cost_a: 0.0,
            cost_b: 2000.0,
            cost_c: 150.0,
        },
        Generator {
            bus: 0,
            p_min: 0.0,
            p_max: 0.6,
            q_min: -1.0,
            q_max: 1.0,
            cost_a: 0.0,
            cost_b: 200.0,
            cost_c: 50.0,
        },
    ];
    net
}

/// Cheap remote generator behind a deliberately tight line, expensive local
/// generator at the load: the line limit binds at the optimum.
pub fn three_bus_congested() -> Network {
    let mut remote_line = line(0, 1, 0.01, 0.08);
    remote_line.limit = Some(FlowLimit::Current(0.6));
    Network {
        base_mva: 100.0,
        buses: vec![bus(0, 1, true), bus(1, 2, false), bus(2, 3, false)],
        generators: vec![
            Generator {
                bus: 0,
                p_min: 0.0,
                p_max: 3.0,
                q_min: -2.0,
                q_max: 2.0,
                cost_a: 0.0,
                cost_b: 500.0,
                cost_c: 10.0,
            },
            Generator {
                bus: 2,
                p_min: 0.0,
                p_max: 3.0,
                q_min: -2.0,
                q_max: 2.0,
                cost_a: 0.0,
                cost_b: 5000.0,
                cost_c: 10.0,
            },
        ],
        loads: vec![Load {
            bus: 2,
            p: 1.2,
            q: 0.25,
        }],
        branches: vec![remote_line, line(1, 2, 0.01, 0.08)],
        shunts: vec![],
    }
}

/// Demand far beyond the only generator's capability.
pub fn two_bus_infeasible() -> Network {
    let mut net = two_bus();
    net.generators[0].p_max = 1.0;
    net.loads[0].p = 5.0;
    net.loads[0].q = 1.0;
    net
}
