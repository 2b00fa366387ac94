//! Variable and constraint index layout plus the primal/dual iterate.

use super::{flow_limit_squared, ParameterizedNetwork};
use crate::grid::Network;

/// Contiguous index assignment for all primal variables and equality
/// constraints of one network. The layout depends only on the topology and
/// on which branches carry a flow limit, never on the homotopy factor, so
/// sparsity patterns stay fixed across the whole solve.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableLayout {
    pub n_bus: usize,
    pub n_gen: usize,
    /// Branch indices (into `Network::branches`) that carry a flow limit;
    /// position in this list is the branch's ammeter slot.
    pub limited_branches: Vec<usize>,

    // primal block offsets
    v_re: usize,
    v_im: usize,
    v_sq: usize,
    slack_re: usize,
    slack_im: usize,
    gen_p: usize,
    gen_q: usize,
    amm_re: usize,
    amm_im: usize,
    flow_sq: usize,
    n_primal: usize,

    // equality block offsets
    eq_kcl_re: usize,
    eq_kcl_im: usize,
    eq_v_sq: usize,
    eq_kvl_re: usize,
    eq_kvl_im: usize,
    eq_flow: usize,
    eq_reference: usize,
    n_equality: usize,
}

impl VariableLayout {
    pub fn for_network(net: &Network) -> Self {
        let n_bus = net.buses.len();
        let n_gen = net.generators.len();
        let limited_branches: Vec<usize> = net
            .branches
            .iter()
            .enumerate()
            .filter_map(|(e, br)| br.limit.map(|_| e))
            .collect();
        let n_lim = limited_branches.len();

        let v_re = 0;
        let v_im = v_re + n_bus;
        let v_sq = v_im + n_bus;
        let slack_re = v_sq + n_bus;
        let slack_im = slack_re + n_bus;
        let gen_p = slack_im + n_bus;
        let gen_q = gen_p + n_gen;
        let amm_re = gen_q + n_gen;
        let amm_im = amm_re + n_lim;
        let flow_sq = amm_im + n_lim;
        let n_primal = flow_sq + n_lim;

        let eq_kcl_re = 0;
        let eq_kcl_im = eq_kcl_re + n_bus;
        let eq_v_sq = eq_kcl_im + n_bus;
        let eq_kvl_re = eq_v_sq + n_bus;
        let eq_kvl_im = eq_kvl_re + n_lim;
        let eq_flow = eq_kvl_im + n_lim;
        let eq_reference = eq_flow + n_lim;
        let n_equality = eq_reference + 1;

        Self {
            n_bus,
            n_gen,
            limited_branches,
            v_re,
            v_im,
            v_sq,
            slack_re,
            slack_im,
            gen_p,
            gen_q,
            amm_re,
            amm_im,
            flow_sq,
            n_primal,
            eq_kcl_re,
            eq_kcl_im,
            eq_v_sq,
            eq_kvl_re,
            eq_kvl_im,
            eq_flow,
            eq_reference,
            n_equality,
        }
    }

    pub fn n_limited(&self) -> usize {
        self.limited_branches.len()
    }
    pub fn n_primal(&self) -> usize {
        self.n_primal
    }
    pub fn n_equality(&self) -> usize {
        self.n_equality
    }

    #[inline]
    pub fn v_re(&self, bus: usize) -> usize {
        self.v_re + bus
    }
    #[inline]
    pub fn v_im(&self, bus: usize) -> usize {
        self.v_im + bus
    }
    #[inline]
    pub fn v_sq(&self, bus: usize) -> usize {
        self.v_sq + bus
    }
    #[inline]
    pub fn slack_re(&self, bus: usize) -> usize {
        self.slack_re + bus
    }
    #[inline]
    pub fn slack_im(&self, bus: usize) -> usize {
        self.slack_im + bus
    }
    #[inline]
    pub fn gen_p(&self, g: usize) -> usize {
        self.gen_p + g
    }
    #[inline]
    pub fn gen_q(&self, g: usize) -> usize {
        self.gen_q + g
    }
    #[inline]
    pub fn amm_re(&self, slot: usize) -> usize {
        self.amm_re + slot
    }
    #[inline]
    pub fn amm_im(&self, slot: usize) -> usize {
        self.amm_im + slot
    }
    #[inline]
    pub fn flow_sq(&self, slot: usize) -> usize {
        self.flow_sq + slot
    }

    #[inline]
    pub fn eq_kcl_re(&self, bus: usize) -> usize {
        self.eq_kcl_re + bus
    }
    #[inline]
    pub fn eq_kcl_im(&self, bus: usize) -> usize {
        self.eq_kcl_im + bus
    }
    #[inline]
    pub fn eq_v_sq(&self, bus: usize) -> usize {
        self.eq_v_sq + bus
    }
    #[inline]
    pub fn eq_kvl_re(&self, slot: usize) -> usize {
        self.eq_kvl_re + slot
    }
    #[inline]
    pub fn eq_kvl_im(&self, slot: usize) -> usize {
        self.eq_kvl_im + slot
    }
    #[inline]
    pub fn eq_flow(&self, slot: usize) -> usize {
        self.eq_flow + slot
    }
    #[inline]
    pub fn eq_reference(&self) -> usize {
        self.eq_reference
    }
}

/// Variable bounds aligned with the primal layout; unbounded entries hold
/// +/- infinity.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn has_lower(&self, i: usize) -> bool {
        self.lower[i].is_finite()
    }
    pub fn has_upper(&self, i: usize) -> bool {
        self.upper[i].is_finite()
    }

    /// Number of finite lower plus finite upper bounds.
    pub fn count(&self) -> usize {
        (0..self.lower.len())
            .map(|i| self.has_lower(i) as usize + self.has_upper(i) as usize)
            .sum()
    }

    pub fn is_strictly_interior(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(i, &xi)| xi > self.lower[i] && xi < self.upper[i])
    }
}

pub(super) fn build_bounds(pnet: &ParameterizedNetwork) -> Bounds {
    let layout = &pnet.layout;
    let mut lower = vec![f64::NEG_INFINITY; layout.n_primal()];
    let mut upper = vec![f64::INFINITY; layout.n_primal()];
    for (i, bus) in pnet.net.buses.iter().enumerate() {
        lower[layout.v_sq(i)] = bus.v_min * bus.v_min;
        upper[layout.v_sq(i)] = bus.v_max * bus.v_max;
    }
    for (g, gb) in pnet.gen_bounds.iter().enumerate() {
        lower[layout.gen_p(g)] = gb.p_min;
        upper[layout.gen_p(g)] = gb.p_max;
        lower[layout.gen_q(g)] = gb.q_min;
        upper[layout.gen_q(g)] = gb.q_max;
    }
    for slot in 0..layout.n_limited() {
        lower[layout.flow_sq(slot)] = 0.0;
        upper[layout.flow_sq(slot)] = flow_limit_squared(&pnet.net, layout, slot);
    }
    Bounds { lower, upper }
}

/// Full primal/dual point of the interior-point iteration. Bound
/// multipliers are stored aligned with the primal vector; entries for
/// unbounded variables stay zero and are never touched.
#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu_upper: Vec<f64>,
    pub mu_lower: Vec<f64>,
}

impl Iterate {
    pub fn zeros(layout: &VariableLayout) -> Self {
        Self {
            x: vec![0.0; layout.n_primal()],
            lambda: vec![0.0; layout.n_equality()],
            mu_upper: vec![0.0; layout.n_primal()],
            mu_lower: vec![0.0; layout.n_primal()],
        }
    }

    /// Strict interiority of x plus positivity of the multipliers on
    /// bounded entries.
    pub fn is_strictly_interior(&self, bounds: &Bounds) -> bool {
        if !bounds.is_strictly_interior(&self.x) {
            return false;
        }
        (0..self.x.len()).all(|i| {
            (!bounds.has_upper(i) || self.mu_upper[i] > 0.0)
                && (!bounds.has_lower(i) || self.mu_lower[i] > 0.0)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Branch, BranchKind, Bus, FlowLimit, Generator, Load, Network};

    fn net_with_limit() -> Network {
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
                p_max: 2.0,
                q_min: -1.0,
                q_max: 1.0,
                cost_a: 0.0,
                cost_b: 10.0,
                cost_c: 0.0,
            }],
            loads: vec![Load {
                bus: 1,
                p: 0.5,
                q: 0.1,
            }],
            branches: vec![Branch {
                from_bus: 0,
                to_bus: 1,
                g: 1.0,
                b: -5.0,
                b_charge: 0.0,
                tap: 1.0,
                shift: 0.0,
                kind: BranchKind::Line,
                limit: Some(FlowLimit::Current(0.9)),
            }],
            shunts: vec![],
        }
    }

    #[test]
    fn primal_count_matches_formula() {
        let net = net_with_limit();
        let layout = VariableLayout::for_network(&net);
        assert_eq!(layout.n_primal(), 5 * 2 + 2 * 1 + 3 * 1);
        assert_eq!(layout.n_equality(), 3 * 2 + 3 * 1 + 1);
    }

    #[test]
    fn indices_form_a_partition() {
        let net = net_with_limit();
        let layout = VariableLayout::for_network(&net);
        let mut seen = vec![false; layout.n_primal()];
        let mut mark = |i: usize| {
            assert!(!seen[i], "index {i} assigned twice");
            seen[i] = true;
        };
        for b in 0..2 {
            mark(layout.v_re(b));
            mark(layout.v_im(b));
            mark(layout.v_sq(b));
            mark(layout.slack_re(b));
            mark(layout.slack_im(b));
        }
        mark(layout.gen_p(0));
        mark(layout.gen_q(0));
        mark(layout.amm_re(0));
        mark(layout.amm_im(0));
        mark(layout.flow_sq(0));
        assert!(seen.iter().all(|&s| s), "gap in layout");

        let mut eq_seen = vec![false; layout.n_equality()];
        let mut mark_eq = |i: usize| {
            assert!(!eq_seen[i]);
            eq_seen[i] = true;
        };
        for b in 0..2 {
            mark_eq(layout.eq_kcl_re(b));
            mark_eq(layout.eq_kcl_im(b));
            mark_eq(layout.eq_v_sq(b));
        }
        mark_eq(layout.eq_kvl_re(0));
        mark_eq(layout.eq_kvl_im(0));
        mark_eq(layout.eq_flow(0));
        mark_eq(layout.eq_reference());
        assert!(eq_seen.iter().all(|&s| s));
    }

    #[test]
    fn bounds_cover_expected_entries() {
        let net = net_with_limit();
        let pnet = super::super::apply_homotopy(&net, &super::super::HomotopyParams::default());
        let bounds = pnet.bounds();
        let layout = &pnet.layout;
        // V_SQ, P, Q, F are bounded; voltages, slacks, ammeter currents not
        assert_eq!(bounds.lower[layout.v_sq(0)], 0.81);
        assert_eq!(bounds.upper[layout.v_sq(0)], 1.1 * 1.1);
        assert_eq!(bounds.lower[layout.flow_sq(0)], 0.0);
        assert!((bounds.upper[layout.flow_sq(0)] - 0.81).abs() < 1e-15);
        assert!(!bounds.has_lower(layout.v_re(0)));
        assert!(!bounds.has_upper(layout.slack_re(1)));
        assert!(!bounds.has_upper(layout.amm_im(0)));
        assert_eq!(bounds.count(), 2 * (2 + 1 + 1 + 1)); // vsq x2, p, q, f
    }
}
