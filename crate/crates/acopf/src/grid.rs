//! Per-unit grid model: domain types, structural validation, and conversion
//! from raw MATPOWER tables.
//!
//! All electrical quantities on a validated [`Network`] are per-unit on the
//! system MVA base. Cost coefficients are rescaled during conversion so that
//! the cost in $ of any dispatch is preserved.

use crate::matpower::RawCase;
use thiserror::Error;

/// MATPOWER bus-type code for the angle reference (slack) bus.
const BUS_TYPE_REF: i32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("duplicate bus id {0}")]
    DuplicateBusId(usize),
    #[error("{device} references nonexistent bus {bus}")]
    DanglingDeviceReference { device: &'static str, bus: usize },
    #[error("no reference bus in network")]
    NoReferenceBus,
    #[error("more than one reference bus (buses {0} and {1})")]
    MultipleReferenceBuses(usize, usize),
    #[error("bound inversion on {what}: min {min} > max {max}")]
    BoundInversion {
        what: String,
        min: f64,
        max: f64,
    },
    #[error("bus {0} is not connected to the reference bus")]
    DisconnectedBus(usize),
    #[error("branch from bus {0} to itself")]
    SelfLoopBranch(usize),
    #[error("branch {from}-{to} has zero series impedance")]
    ZeroImpedanceBranch { from: usize, to: usize },
    #[error("branch {from}-{to} has nonpositive tap ratio {tap}")]
    NonpositiveTap { from: usize, to: usize, tap: f64 },
    #[error("branch {from}-{to} sets both a current and a power limit")]
    ConflictingFlowLimits { from: usize, to: usize },
    #[error("nonpositive MVA base {0}")]
    NonpositiveBase(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("bus voltage bound must be positive, got v_min {0}")]
    NonpositiveVoltageBound(f64),
}

/// A network bus. `index` is the dense internal id (0-based); `external_id`
/// keeps the id from the source file for reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub index: usize,
    pub external_id: usize,
    /// Voltage magnitude bounds, p.u.
    pub v_min: f64,
    pub v_max: f64,
    pub is_reference: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub bus: usize,
    /// Real power bounds, p.u.
    pub p_min: f64,
    pub p_max: f64,
    /// Reactive power bounds, p.u.
    pub q_min: f64,
    pub q_max: f64,
    /// Quadratic cost a + b*p + c*p^2 with p in p.u., result in $.
    pub cost_a: f64,
    pub cost_b: f64,
    pub cost_c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: usize,
    /// Constant-power demand, p.u.
    pub p: f64,
    pub q: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchKind {
    Line,
    Transformer,
}

/// Flow limit on a branch, at most one of the two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowLimit {
    /// Current magnitude bound, p.u.
    Current(f64),
    /// Apparent power magnitude bound, p.u.
    Power(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Branch {
    pub from_bus: usize,
    pub to_bus: usize,
    /// Series conductance/susceptance, p.u.
    pub g: f64,
    pub b: f64,
    /// Total line-charging susceptance, p.u. (half at each terminal).
    pub b_charge: f64,
    /// Turns ratio, applied on the from side. Lines have tap = 1.
    pub tap: f64,
    /// Phase-shift angle, radians. Lines have shift = 0.
    pub shift: f64,
    pub kind: BranchKind,
    pub limit: Option<FlowLimit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shunt {
    pub bus: usize,
    /// Shunt admittance, p.u.
    pub g_sh: f64,
    pub b_sh: f64,
}

/// A validated per-unit network. Immutable after validation; freely shared
/// across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub base_mva: f64,
    pub buses: Vec<Bus>,
    pub generators: Vec<Generator>,
    pub loads: Vec<Load>,
    pub branches: Vec<Branch>,
    pub shunts: Vec<Shunt>,
}

impl Network {
    pub fn reference_bus(&self) -> usize {
        self.buses
            .iter()
            .position(|b| b.is_reference)
            .expect("validated network has a reference bus")
    }
}

/// Checks every type invariant and that the branch graph connects all buses
/// to the reference bus. Idempotent: a validated network passes unchanged.
pub fn validate_network(net: Network) -> Result<Network, GridError> {
    let n = net.buses.len();
    if net.base_mva <= 0.0 || !net.base_mva.is_finite() {
        return Err(GridError::NonpositiveBase(net.base_mva));
    }

    let mut seen = vec![false; n];
    let mut reference = None;
    for bus in &net.buses {
        if bus.index >= n || seen[bus.index] {
            return Err(GridError::DuplicateBusId(bus.external_id));
        }
        seen[bus.index] = true;
        if !(bus.v_min.is_finite() && bus.v_max.is_finite()) {
            return Err(GridError::NonFinite("bus voltage bound"));
        }
        if bus.v_min <= 0.0 {
            return Err(GridError::NonpositiveVoltageBound(bus.v_min));
        }
        if bus.v_min > bus.v_max {
            return Err(GridError::BoundInversion {
                what: format!("bus {} voltage", bus.external_id),
                min: bus.v_min,
                max: bus.v_max,
            });
        }
        if bus.is_reference {
            match reference {
                None => reference = Some(bus.index),
                Some(first) => {
                    return Err(GridError::MultipleReferenceBuses(
                        net.buses[first].external_id,
                        bus.external_id,
                    ))
                }
            }
        }
    }
    let reference = reference.ok_or(GridError::NoReferenceBus)?;

    for gen in &net.generators {
        if gen.bus >= n {
            return Err(GridError::DanglingDeviceReference {
                device: "generator",
                bus: gen.bus,
            });
        }
        if gen.p_min > gen.p_max {
            return Err(GridError::BoundInversion {
                what: format!("generator at bus {} real power", net.buses[gen.bus].external_id),
                min: gen.p_min,
                max: gen.p_max,
            });
        }
        if gen.q_min > gen.q_max {
            return Err(GridError::BoundInversion {
                what: format!(
                    "generator at bus {} reactive power",
                    net.buses[gen.bus].external_id
                ),
                min: gen.q_min,
                max: gen.q_max,
            });
        }
        if gen.cost_c < 0.0 {
            return Err(GridError::BoundInversion {
                what: format!(
                    "generator at bus {} quadratic cost coefficient",
                    net.buses[gen.bus].external_id
                ),
                min: gen.cost_c,
                max: 0.0,
            });
        }
        let finite = [gen.cost_a, gen.cost_b, gen.cost_c]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(GridError::NonFinite("generator cost"));
        }
    }

    for load in &net.loads {
        if load.bus >= n {
            return Err(GridError::DanglingDeviceReference {
                device: "load",
                bus: load.bus,
            });
        }
        if !(load.p.is_finite() && load.q.is_finite()) {
            return Err(GridError::NonFinite("load demand"));
        }
    }

    for shunt in &net.shunts {
        if shunt.bus >= n {
            return Err(GridError::DanglingDeviceReference {
                device: "shunt",
                bus: shunt.bus,
            });
        }
        if !(shunt.g_sh.is_finite() && shunt.b_sh.is_finite()) {
            return Err(GridError::NonFinite("shunt admittance"));
        }
    }

    for br in &net.branches {
        if br.from_bus >= n || br.to_bus >= n {
            return Err(GridError::DanglingDeviceReference {
                device: "branch",
                bus: br.from_bus.max(br.to_bus),
            });
        }
        if br.from_bus == br.to_bus {
            return Err(GridError::SelfLoopBranch(net.buses[br.from_bus].external_id));
        }
        if br.g == 0.0 && br.b == 0.0 {
            return Err(GridError::ZeroImpedanceBranch {
                from: net.buses[br.from_bus].external_id,
                to: net.buses[br.to_bus].external_id,
            });
        }
        if br.tap <= 0.0 {
            return Err(GridError::NonpositiveTap {
                from: net.buses[br.from_bus].external_id,
                to: net.buses[br.to_bus].external_id,
                tap: br.tap,
            });
        }
        if br.kind == BranchKind::Line && (br.tap != 1.0 || br.shift != 0.0) {
            return Err(GridError::NonpositiveTap {
                from: net.buses[br.from_bus].external_id,
                to: net.buses[br.to_bus].external_id,
                tap: br.tap,
            });
        }
    }

    // Connectivity from the reference bus through branches.
    let mut adjacency = vec![Vec::new(); n];
    for br in &net.branches {
        adjacency[br.from_bus].push(br.to_bus);
        adjacency[br.to_bus].push(br.from_bus);
    }
    let mut reached = vec![false; n];
    let mut stack = vec![reference];
    reached[reference] = true;
    while let Some(i) = stack.pop() {
        for &k in &adjacency[i] {
            if !reached[k] {
                reached[k] = true;
                stack.push(k);
            }
        }
    }
    if let Some(i) = reached.iter().position(|&r| !r) {
        return Err(GridError::DisconnectedBus(net.buses[i].external_id));
    }

    Ok(net)
}

/// Interval half-width used to open up degenerate (equal) bounds so the
/// interior-point iterates have room; 5e-7 p.u. is 0.05 kW on a 100 MVA base,
/// far below solver tolerance.
const DEGENERATE_BOUND_MARGIN: f64 = 5e-7;

fn widen_if_equal(min: f64, max: f64) -> (f64, f64) {
    if min == max {
        (min - DEGENERATE_BOUND_MARGIN, max + DEGENERATE_BOUND_MARGIN)
    } else {
        (min, max)
    }
}

/// Converts raw MATPOWER tables to a per-unit [`Network`].
///
/// MW and MVAr quantities are divided by `base_mva`; cost coefficients are
/// rescaled (b by base, c by base squared) so the $ cost of any dispatch is
/// unchanged. Out-of-service generators and branches are dropped. Branch
/// rows with rateA = 0 get no flow limit; rated lines get a current limit
/// and rated transformers an apparent-power limit.
pub fn to_per_unit(raw: &RawCase, base_mva: f64) -> Result<Network, GridError> {
    if base_mva <= 0.0 || !base_mva.is_finite() {
        return Err(GridError::NonpositiveBase(base_mva));
    }

    let mut buses = Vec::with_capacity(raw.bus_table.len());
    let mut loads = Vec::new();
    let mut shunts = Vec::new();
    let mut index_of = std::collections::HashMap::new();

    for (dense, row) in raw.bus_table.iter().enumerate() {
        let external_id = row[0] as usize;
        if index_of.insert(external_id, dense).is_some() {
            return Err(GridError::DuplicateBusId(external_id));
        }
        let (v_min, v_max) = widen_if_equal(row[12], row[11]);
        buses.push(Bus {
            index: dense,
            external_id,
            v_min,
            v_max,
            is_reference: row[1] as i32 == BUS_TYPE_REF,
        });
        let (pd, qd) = (row[2], row[3]);
        if pd != 0.0 || qd != 0.0 {
            loads.push(Load {
                bus: dense,
                p: pd / base_mva,
                q: qd / base_mva,
            });
        }
        let (gs, bs) = (row[4], row[5]);
        if gs != 0.0 || bs != 0.0 {
            shunts.push(Shunt {
                bus: dense,
                g_sh: gs / base_mva,
                b_sh: bs / base_mva,
            });
        }
    }

    let lookup = |external: f64, device: &'static str| -> Result<usize, GridError> {
        index_of
            .get(&(external as usize))
            .copied()
            .ok_or(GridError::DanglingDeviceReference {
                device,
                bus: external as usize,
            })
    };

    let mut generators = Vec::new();
    for (g, row) in raw.gen_table.iter().enumerate() {
        if row[7] <= 0.0 {
            continue; // out of service
        }
        let bus = lookup(row[0], "generator")?;
        let (p_min, p_max) = widen_if_equal(row[9] / base_mva, row[8] / base_mva);
        let (q_min, q_max) = widen_if_equal(row[4] / base_mva, row[3] / base_mva);
        let cost = raw
            .cost_coefficients(g)
            .unwrap_or(crate::matpower::GencostRow {
                a: 0.0,
                b: 0.0,
                c: 0.0,
            });
        generators.push(Generator {
            bus,
            p_min,
            p_max,
            q_min,
            q_max,
            cost_a: cost.a,
            cost_b: cost.b * base_mva,
            cost_c: cost.c * base_mva * base_mva,
        });
    }

    let mut branches = Vec::new();
    for row in &raw.branch_table {
        if row.len() > 10 && row[10] <= 0.0 {
            continue; // out of service
        }
        let from_bus = lookup(row[0], "branch")?;
        let to_bus = lookup(row[1], "branch")?;
        let (r, x) = (row[2], row[3]);
        let denom = r * r + x * x;
        if denom == 0.0 {
            return Err(GridError::ZeroImpedanceBranch {
                from: row[0] as usize,
                to: row[1] as usize,
            });
        }
        let raw_tap = row[8];
        let shift_deg = row[9];
        let kind = if raw_tap == 0.0 && shift_deg == 0.0 {
            BranchKind::Line
        } else {
            BranchKind::Transformer
        };
        let tap = if raw_tap == 0.0 { 1.0 } else { raw_tap };
        let rate_a = row[5];
        let limit = if rate_a > 0.0 {
            Some(match kind {
                BranchKind::Line => FlowLimit::Current(rate_a / base_mva),
                BranchKind::Transformer => FlowLimit::Power(rate_a / base_mva),
            })
        } else {
            None
        };
        branches.push(Branch {
            from_bus,
            to_bus,
            g: r / denom,
            b: -x / denom,
            b_charge: row[4],
            tap,
            shift: shift_deg.to_radians(),
            kind,
            limit,
        });
    }

    Ok(Network {
        base_mva,
        buses,
        generators,
        loads,
        branches,
        shunts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matpower::parse_case;

    pub(crate) fn two_bus() -> Network {
        Network {
            base_mva: 100.0,
            buses: vec![
                Bus {
                    index: 0,
                    external_id: 1,
                    v_min: 0.9,
                    v_max: 1.1,
                    is_reference: true,
                },
                Bus {
                    index: 1,
                    external_id: 2,
                    v_min: 0.9,
                    v_max: 1.1,
                    is_reference: false,
                },
            ],
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
            branches: vec![Branch {
                from_bus: 0,
                to_bus: 1,
                g: 1.0,
                b: -10.0,
                b_charge: 0.0,
                tap: 1.0,
                shift: 0.0,
                kind: BranchKind::Line,
                limit: None,
            }],
            shunts: vec![],
        }
    }

    #[test]
    fn accepts_minimal_well_formed_network() {
        let net = two_bus();
        let validated = validate_network(net.clone()).unwrap();
        assert_eq!(validated, net);
    }

    #[test]
    fn validation_is_idempotent() {
        let once = validate_network(two_bus()).unwrap();
        let twice = validate_network(once.clone()).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn rejects_dangling_generator() {
        let mut net = two_bus();
        net.generators[0].bus = 99;
        assert!(matches!(
            validate_network(net),
            Err(GridError::DanglingDeviceReference { device: "generator", bus: 99 })
        ));
    }

    #[test]
    fn rejects_inverted_voltage_bounds() {
        let mut net = two_bus();
        net.buses[0].v_min = 1.1;
        net.buses[0].v_max = 0.9;
        assert!(matches!(
            validate_network(net),
            Err(GridError::BoundInversion { .. })
        ));
    }

    #[test]
    fn rejects_missing_reference() {
        let mut net = two_bus();
        net.buses[0].is_reference = false;
        assert_eq!(validate_network(net), Err(GridError::NoReferenceBus));
    }

    #[test]
    fn rejects_disconnected_bus() {
        let mut net = two_bus();
        net.branches.clear();
        assert!(matches!(
            validate_network(net),
            Err(GridError::DisconnectedBus(_))
        ));
    }

    #[test]
    fn rejects_duplicate_bus_id() {
        let mut net = two_bus();
        net.buses[1].index = 0;
        assert!(matches!(
            validate_network(net),
            Err(GridError::DuplicateBusId(_))
        ));
    }

    const CASE2: &str = r#"
function mpc = case2
mpc.version = '2';
mpc.baseMVA = 100;
mpc.bus = [
    1  3  0    0   0  0  1  1.0  0.0  230  1  1.1  0.9;
    2  1  100  20  0  0  1  1.0  0.0  230  1  1.1  0.9;
];
mpc.gen = [
    1  0  0  300  -300  1.0  100  1  300  0;
];
mpc.branch = [
    1  2  0.01  0.1  0.0  0  0  0  0  0  1  -360  360;
];
mpc.gencost = [
    2  0  0  3  1.0  5.0  0;
];
"#;

    #[test]
    fn per_unit_conversion_divides_by_base() {
        let raw = parse_case(CASE2).unwrap();
        let net = to_per_unit(&raw, raw.base_mva).unwrap();
        assert_eq!(net.generators[0].p_max, 3.0);
        assert_eq!(net.loads[0].p, 1.0);
        assert_eq!(net.loads[0].q, 0.2);
    }

    #[test]
    fn nonpositive_base_rejected() {
        let raw = parse_case(CASE2).unwrap();
        assert_eq!(
            to_per_unit(&raw, 0.0),
            Err(GridError::NonpositiveBase(0.0))
        );
    }

    /// Cost in $ must be identical whether evaluated on MW with the raw
    /// coefficients or on p.u. with the rescaled ones.
    #[test]
    fn cost_rescaling_preserves_dollars() {
        // xorshift64 so the coefficient sweep is reproducible
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..100 {
            let (a, b, c) = (next() * 100.0, next() * 40.0, next() * 0.05);
            let base = 50.0 + next() * 200.0;
            let p_mw = next() * 400.0;
            let raw_cost = a + b * p_mw + c * p_mw * p_mw;
            let (b_pu, c_pu) = (b * base, c * base * base);
            let p_pu = p_mw / base;
            let pu_cost = a + b_pu * p_pu + c_pu * p_pu * p_pu;
            assert!(
                (raw_cost - pu_cost).abs() <= 1e-12 * raw_cost.abs().max(1.0),
                "cost mismatch: {raw_cost} vs {pu_cost}"
            );
        }
    }

    #[test]
    fn per_unit_round_trip() {
        let raw = parse_case(CASE2).unwrap();
        let net = to_per_unit(&raw, raw.base_mva).unwrap();
        let base = net.base_mva;
        // convert representative quantities back to physical units
        let p_mw = net.loads[0].p * base;
        let q_mvar = net.loads[0].q * base;
        let pmax_mw = net.generators[0].p_max * base;
        assert!((p_mw - 100.0).abs() <= 1e-12 * 100.0);
        assert!((q_mvar - 20.0).abs() <= 1e-12 * 20.0);
        assert!((pmax_mw - 300.0).abs() <= 1e-12 * 300.0);
        // cost coefficients round-trip through the inverse rescaling
        let b_raw = net.generators[0].cost_b / base;
        let c_raw = net.generators[0].cost_c / (base * base);
        assert!((b_raw - 5.0).abs() <= 1e-12 * 5.0);
        assert!((c_raw - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn out_of_service_devices_dropped() {
        let text = CASE2
            .replace("1  0  0  300  -300  1.0  100  1  300  0;", "1  0  0  300  -300  1.0  100  0  300  0;");
        let raw = parse_case(&text).unwrap();
        let net = to_per_unit(&raw, raw.base_mva).unwrap();
        assert!(net.generators.is_empty());
    }
}
