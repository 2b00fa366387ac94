//! The homotopy-parameterized AC-OPF in current-voltage coordinates:
//! effective network construction, variable layout, and evaluation of
//! residuals, objective, Jacobian and Lagrangian Hessian.

mod eval;
mod layout;

pub use eval::{
    equality_jacobian, equality_residuals, generation_cost, lagrangian_hessian,
    objective_value_gradient, EvalError, DEGENERATE_VOLTAGE_FLOOR,
};
pub use layout::{Bounds, Iterate, VariableLayout};

use crate::grid::{FlowLimit, Network};
use num_complex::Complex64;

/// Knobs of the incremental-model-building homotopy.
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyParams {
    /// Homotopy factor; 1 is the trivial shorted problem, 0 the original.
    pub v: f64,
    /// Admittance scaling factor for shorting series elements.
    pub gamma: f64,
    /// Generator-bound relaxation half-width at v = 1, p.u.
    pub kappa: f64,
    /// Minimum retained load fraction, so the fully "turned-off" grid keeps
    /// a sliver of load instead of an exactly-zero injection.
    pub load_floor: f64,
    /// Quadratic penalty weight on slack current injections, $/p.u.^2.
    pub slack_weight: f64,
    /// Extra slack coefficient e: the KCL slack term is (v + e) * I_F.
    /// Zero disables the infeasibility relaxation.
    pub slack_relaxation: f64,
}

impl Default for HomotopyParams {
    fn default() -> Self {
        Self {
            v: 0.0,
            gamma: 1e3,
            kappa: 0.5,
            load_floor: 1e-4,
            slack_weight: 1e3,
            slack_relaxation: 0.0,
        }
    }
}

impl HomotopyParams {
    pub fn at(&self, v: f64) -> Self {
        Self { v, ..self.clone() }
    }

    /// Coefficient multiplying slack injections in the KCL rows.
    pub fn slack_coefficient(&self) -> f64 {
        self.v + self.slack_relaxation
    }
}

/// Per-branch effective parameters at the current homotopy factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveBranch {
    pub g: f64,
    pub b: f64,
    pub tap: f64,
    pub shift: f64,
}

/// Per-generator effective bounds at the current homotopy factor.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveGenBounds {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

/// The homotopy-scaled view of a [`Network`] at factor v, together with the
/// assembled bus admittance structure and variable layout the evaluation
/// routines need.
#[derive(Debug, Clone)]
pub struct ParameterizedNetwork {
    pub net: Network,
    pub params: HomotopyParams,
    pub branches: Vec<EffectiveBranch>,
    pub gen_bounds: Vec<EffectiveGenBounds>,
    /// Effective shunt admittances (g, b) per shunt device.
    pub shunts: Vec<(f64, f64)>,
    /// Multiplier on every constant-power load.
    pub load_scale: f64,
    pub layout: VariableLayout,
    /// Bus admittance adjacency: for each bus, (other bus, G, B) terms of
    /// sum_k Y_ik V_k, duplicates merged.
    ybus: Vec<Vec<(usize, f64, f64)>>,
    /// Terminal admittances (Y_ff, Y_ft) per flow-limited branch, indexed
    /// like `layout.limited_branches`.
    ammeter: Vec<(Complex64, Complex64)>,
}

impl ParameterizedNetwork {
    pub fn ybus_row(&self, bus: usize) -> &[(usize, f64, f64)] {
        &self.ybus[bus]
    }

    pub fn ammeter_admittances(&self, slot: usize) -> (Complex64, Complex64) {
        self.ammeter[slot]
    }

    /// Effective variable bounds (lower, upper) in layout order; entries
    /// without a bound hold +/- infinity.
    pub fn bounds(&self) -> Bounds {
        layout::build_bounds(self)
    }
}

/// Builds the parameterized network of the IMB homotopy at `h.v`.
///
/// Series admittances are inflated by (1 + v*gamma), taps pulled to 1 and
/// shifts to 0, generator bounds blended toward [-kappa, kappa], shunts
/// scaled by (1 - v) and loads by max(load_floor, 1 - v). At v = 0 every
/// effective quantity equals the original network value exactly.
pub fn apply_homotopy(net: &Network, h: &HomotopyParams) -> ParameterizedNetwork {
    let v = h.v;
    let branches: Vec<EffectiveBranch> = net
        .branches
        .iter()
        .map(|br| EffectiveBranch {
            g: br.g * (1.0 + v * h.gamma),
            b: br.b * (1.0 + v * h.gamma),
            tap: br.tap + v * (1.0 - br.tap),
            shift: br.shift - v * br.shift,
        })
        .collect();
    let gen_bounds = net
        .generators
        .iter()
        .map(|g| EffectiveGenBounds {
            p_max: (1.0 - v) * g.p_max + v * h.kappa,
            p_min: (1.0 - v) * g.p_min - v * h.kappa,
            q_max: (1.0 - v) * g.q_max + v * h.kappa,
            q_min: (1.0 - v) * g.q_min - v * h.kappa,
        })
        .collect();
    let shunt_scale = (1.0 - v).clamp(0.0, 1.0);
    let shunts: Vec<(f64, f64)> = net
        .shunts
        .iter()
        .map(|s| (s.g_sh * shunt_scale, s.b_sh * shunt_scale))
        .collect();
    let load_scale = h.load_floor.max(1.0 - v);
    let layout = VariableLayout::for_network(net);

    let (ybus, ammeter) = assemble_admittances(net, &branches, &shunts, &layout);

    ParameterizedNetwork {
        net: net.clone(),
        params: h.clone(),
        branches,
        gen_bounds,
        shunts,
        load_scale,
        layout,
        ybus,
        ammeter,
    }
}

/// Standard pi-model stamps with the tap on the from side:
/// Y_ff = (y_s + j b_c/2) / t^2, Y_ft = -y_s / (t e^{-j shift}),
/// Y_tf = -y_s / (t e^{+j shift}), Y_tt = y_s + j b_c/2.
fn branch_stamps(
    eff: &EffectiveBranch,
    b_charge: f64,
) -> (Complex64, Complex64, Complex64, Complex64) {
    let ys = Complex64::new(eff.g, eff.b);
    let ysh = Complex64::new(0.0, b_charge / 2.0);
    let tap = Complex64::from_polar(eff.tap, eff.shift);
    let t2 = eff.tap * eff.tap;
    let y_ff = (ys + ysh) / t2;
    let y_ft = -ys / tap.conj();
    let y_tf = -ys / tap;
    let y_tt = ys + ysh;
    (y_ff, y_ft, y_tf, y_tt)
}

fn assemble_admittances(
    net: &Network,
    branches: &[EffectiveBranch],
    shunts: &[(f64, f64)],
    layout: &VariableLayout,
) -> (Vec<Vec<(usize, f64, f64)>>, Vec<(Complex64, Complex64)>) {
    let n = net.buses.len();
    let mut accum: Vec<std::collections::BTreeMap<usize, Complex64>> = vec![Default::default(); n];
    for (br, eff) in net.branches.iter().zip(branches) {
        let (y_ff, y_ft, y_tf, y_tt) = branch_stamps(eff, br.b_charge);
        let (f, t) = (br.from_bus, br.to_bus);
        *accum[f].entry(f).or_default() += y_ff;
        *accum[f].entry(t).or_default() += y_ft;
        *accum[t].entry(f).or_default() += y_tf;
        *accum[t].entry(t).or_default() += y_tt;
    }
    for (shunt, &(g, b)) in net.shunts.iter().zip(shunts) {
        *accum[shunt.bus].entry(shunt.bus).or_default() += Complex64::new(g, b);
    }
    let ybus = accum
        .into_iter()
        .map(|row| row.into_iter().map(|(k, y)| (k, y.re, y.im)).collect())
        .collect();

    let ammeter = layout
        .limited_branches
        .iter()
        .map(|&e| {
            let (y_ff, y_ft, _, _) = branch_stamps(&branches[e], net.branches[e].b_charge);
            (y_ff, y_ft)
        })
        .collect();
    (ybus, ammeter)
}

/// Squared flow limit for limited-branch slot `slot`.
pub fn flow_limit_squared(net: &Network, layout: &VariableLayout, slot: usize) -> f64 {
    match net.branches[layout.limited_branches[slot]]
        .limit
        .expect("limited branch has a limit")
    {
        FlowLimit::Current(lim) | FlowLimit::Power(lim) => lim * lim,
    }
}
