//! Residual, objective and derivative evaluation for the parameterized
//! AC-OPF.
//!
//! The network block of the KCL equations is linear in the rectangular
//! voltages; all nonlinearity lives in the constant-power injection models,
//! the squared-voltage definitions and the flow-magnitude definitions, so
//! the Lagrangian Hessian is assembled from small closed-form device blocks.

use super::{Iterate, ParameterizedNetwork};
use crate::grid::FlowLimit;
use crate::sparse::CooMatrix;
use thiserror::Error;

/// Voltage magnitudes below this square are rejected: the injection models
/// divide by |V|^2.
pub const DEGENERATE_VOLTAGE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("degenerate voltage at bus {bus}: |V|^2 = {magnitude_sq:.3e}")]
    DegenerateVoltage { bus: usize, magnitude_sq: f64 },
}

/// Rational kernels of the constant-power injection model and their first
/// and second partial derivatives with respect to the rectangular voltage.
///
/// With r1 = V_R / |V|^2 and r2 = V_I / |V|^2, a device drawing (P, Q) has
/// current components  I_re = P r1 + Q r2  and  I_im = P r2 - Q r1.
struct InjectionKernel {
    r1: f64,
    r2: f64,
    r1_dr: f64,
    r1_di: f64,
    r2_dr: f64,
    r2_di: f64,
    r1_drr: f64,
    r1_dri: f64,
    r1_dii: f64,
    r2_drr: f64,
    r2_dri: f64,
    r2_dii: f64,
}

impl InjectionKernel {
    fn at(vr: f64, vi: f64) -> Self {
        let m = vr * vr + vi * vi;
        let m2 = m * m;
        let m3 = m2 * m;
        let a = 2.0 * vr * (3.0 * vi * vi - vr * vr) / m3;
        let b = 2.0 * vi * (3.0 * vr * vr - vi * vi) / m3;
        Self {
            r1: vr / m,
            r2: vi / m,
            r1_dr: (vi * vi - vr * vr) / m2,
            r1_di: -2.0 * vr * vi / m2,
            r2_dr: -2.0 * vr * vi / m2,
            r2_di: (vr * vr - vi * vi) / m2,
            r1_drr: -a,
            r1_dri: b,
            r1_dii: a,
            r2_drr: b,
            r2_dri: a,
            r2_dii: -b,
        }
    }
}

fn check_voltages(it: &Iterate, pnet: &ParameterizedNetwork) -> Result<(), EvalError> {
    let layout = &pnet.layout;
    for bus in 0..layout.n_bus {
        let vr = it.x[layout.v_re(bus)];
        let vi = it.x[layout.v_im(bus)];
        let m = vr * vr + vi * vi;
        if !(m >= DEGENERATE_VOLTAGE_FLOOR) {
            return Err(EvalError::DegenerateVoltage {
                bus,
                magnitude_sq: m,
            });
        }
    }
    Ok(())
}

/// Measured from-side quantities of limited-branch slot `slot`: for power
/// limits the defining equation uses p = V_R I_R + V_I I_I and
/// q = V_I I_R - V_R I_I at the from bus.
fn power_flow_terms(
    it: &Iterate,
    pnet: &ParameterizedNetwork,
    slot: usize,
) -> (f64, f64, f64, f64, f64, f64) {
    let layout = &pnet.layout;
    let e = layout.limited_branches[slot];
    let f = pnet.net.branches[e].from_bus;
    let vr = it.x[layout.v_re(f)];
    let vi = it.x[layout.v_im(f)];
    let ire = it.x[layout.amm_re(slot)];
    let iim = it.x[layout.amm_im(slot)];
    let p = vr * ire + vi * iim;
    let q = vi * ire - vr * iim;
    (vr, vi, ire, iim, p, q)
}

/// Equality residuals g(x) in layout order: KCL real/imag per bus (with
/// homotopy-scaled loads and v-scaled slack injections), squared-voltage
/// definitions, ammeter KVL pairs, flow-magnitude definitions, and the
/// reference-bus V_I = 0 row.
pub fn equality_residuals(
    it: &Iterate,
    pnet: &ParameterizedNetwork,
) -> Result<Vec<f64>, EvalError> {
    check_voltages(it, pnet)?;
    let layout = &pnet.layout;
    let x = &it.x;
    let mut g = vec![0.0; layout.n_equality()];
    let slack_coeff = pnet.params.slack_coefficient();

    // network currents through the homotopy admittance matrix
    for i in 0..layout.n_bus {
        let (mut net_re, mut net_im) = (0.0, 0.0);
        for &(k, gk, bk) in pnet.ybus_row(i) {
            let vr = x[layout.v_re(k)];
            let vi = x[layout.v_im(k)];
            net_re += gk * vr - bk * vi;
            net_im += gk * vi + bk * vr;
        }
        g[layout.eq_kcl_re(i)] = slack_coeff * x[layout.slack_re(i)] - net_re;
        g[layout.eq_kcl_im(i)] = slack_coeff * x[layout.slack_im(i)] - net_im;
    }

    // generator injections
    for (gi, gen) in pnet.net.generators.iter().enumerate() {
        let bus = gen.bus;
        let vr = x[layout.v_re(bus)];
        let vi = x[layout.v_im(bus)];
        let m = vr * vr + vi * vi;
        let p = x[layout.gen_p(gi)];
        let q = x[layout.gen_q(gi)];
        g[layout.eq_kcl_re(bus)] += (p * vr + q * vi) / m;
        g[layout.eq_kcl_im(bus)] += (p * vi - q * vr) / m;
    }

    // homotopy-scaled constant-power loads
    for load in &pnet.net.loads {
        let bus = load.bus;
        let vr = x[layout.v_re(bus)];
        let vi = x[layout.v_im(bus)];
        let m = vr * vr + vi * vi;
        let p = pnet.load_scale * load.p;
        let q = pnet.load_scale * load.q;
        g[layout.eq_kcl_re(bus)] -= (p * vr + q * vi) / m;
        g[layout.eq_kcl_im(bus)] -= (p * vi - q * vr) / m;
    }

    // squared-voltage definitions
    for i in 0..layout.n_bus {
        let vr = x[layout.v_re(i)];
        let vi = x[layout.v_im(i)];
        g[layout.eq_v_sq(i)] = x[layout.v_sq(i)] - vr * vr - vi * vi;
    }

    // ammeter KVL and flow-magnitude definitions
    for slot in 0..layout.n_limited() {
        let e = layout.limited_branches[slot];
        let br = &pnet.net.branches[e];
        let (y_ff, y_ft) = pnet.ammeter_admittances(slot);
        let (f, t) = (br.from_bus, br.to_bus);
        let (vrf, vif) = (x[layout.v_re(f)], x[layout.v_im(f)]);
        let (vrt, vit) = (x[layout.v_re(t)], x[layout.v_im(t)]);
        let term_re = y_ff.re * vrf - y_ff.im * vif + y_ft.re * vrt - y_ft.im * vit;
        let term_im = y_ff.re * vif + y_ff.im * vrf + y_ft.re * vit + y_ft.im * vrt;
        g[layout.eq_kvl_re(slot)] = x[layout.amm_re(slot)] - term_re;
        g[layout.eq_kvl_im(slot)] = x[layout.amm_im(slot)] - term_im;

        let flow = x[layout.flow_sq(slot)];
        g[layout.eq_flow(slot)] = match br.limit.expect("limited branch") {
            FlowLimit::Current(_) => {
                let ire = x[layout.amm_re(slot)];
                let iim = x[layout.amm_im(slot)];
                flow - ire * ire - iim * iim
            }
            FlowLimit::Power(_) => {
                let (_, _, _, _, p, q) = power_flow_terms(it, pnet, slot);
                flow - p * p - q * q
            }
        };
    }

    let reference = pnet.net.reference_bus();
    g[layout.eq_reference()] = x[layout.v_im(reference)];
    Ok(g)
}

/// Objective value and dense gradient: generation cost plus the weighted
/// quadratic slack-injection penalty. The gradient is nonzero only on the
/// generator real-power and slack-injection entries.
pub fn objective_value_gradient(it: &Iterate, pnet: &ParameterizedNetwork) -> (f64, Vec<f64>) {
    let layout = &pnet.layout;
    let x = &it.x;
    let mut grad = vec![0.0; layout.n_primal()];
    let mut value = 0.0;
    for (gi, gen) in pnet.net.generators.iter().enumerate() {
        let p = x[layout.gen_p(gi)];
        value += gen.cost_a + gen.cost_b * p + gen.cost_c * p * p;
        grad[layout.gen_p(gi)] = gen.cost_b + 2.0 * gen.cost_c * p;
    }
    let w = pnet.params.slack_weight;
    for i in 0..layout.n_bus {
        let fr = x[layout.slack_re(i)];
        let fi = x[layout.slack_im(i)];
        value += w * (fr * fr + fi * fi);
        grad[layout.slack_re(i)] = 2.0 * w * fr;
        grad[layout.slack_im(i)] = 2.0 * w * fi;
    }
    (value, grad)
}

/// Generation cost alone, without the slack penalty.
pub fn generation_cost(it: &Iterate, pnet: &ParameterizedNetwork) -> f64 {
    pnet.net
        .generators
        .iter()
        .enumerate()
        .map(|(gi, gen)| {
            let p = it.x[pnet.layout.gen_p(gi)];
            gen.cost_a + gen.cost_b * p + gen.cost_c * p * p
        })
        .sum()
}

/// Sparse Jacobian of the equality residuals. The sparsity pattern depends
/// only on the network, never on the iterate or the homotopy factor.
pub fn equality_jacobian(
    it: &Iterate,
    pnet: &ParameterizedNetwork,
) -> Result<CooMatrix, EvalError> {
    check_voltages(it, pnet)?;
    let layout = &pnet.layout;
    let x = &it.x;
    let nnz_estimate = 12 * layout.n_bus + 8 * layout.n_gen + 16 * layout.n_limited();
    let mut jac = CooMatrix::with_capacity(layout.n_equality(), layout.n_primal(), nnz_estimate);
    let slack_coeff = pnet.params.slack_coefficient();

    for i in 0..layout.n_bus {
        let row_re = layout.eq_kcl_re(i);
        let row_im = layout.eq_kcl_im(i);
        for &(k, gk, bk) in pnet.ybus_row(i) {
            jac.push(row_re, layout.v_re(k), -gk);
            jac.push(row_re, layout.v_im(k), bk);
            jac.push(row_im, layout.v_re(k), -bk);
            jac.push(row_im, layout.v_im(k), -gk);
        }
        // slack entries are emitted even when the coefficient is zero so the
        // pattern is invariant across homotopy factors
        jac.push(row_re, layout.slack_re(i), slack_coeff);
        jac.push(row_im, layout.slack_im(i), slack_coeff);
    }

    for (gi, gen) in pnet.net.generators.iter().enumerate() {
        let bus = gen.bus;
        let vr = x[layout.v_re(bus)];
        let vi = x[layout.v_im(bus)];
        let kern = InjectionKernel::at(vr, vi);
        let p = x[layout.gen_p(gi)];
        let q = x[layout.gen_q(gi)];
        let row_re = layout.eq_kcl_re(bus);
        let row_im = layout.eq_kcl_im(bus);
        jac.push(row_re, layout.gen_p(gi), kern.r1);
        jac.push(row_re, layout.gen_q(gi), kern.r2);
        jac.push(row_re, layout.v_re(bus), p * kern.r1_dr + q * kern.r2_dr);
        jac.push(row_re, layout.v_im(bus), p * kern.r1_di + q * kern.r2_di);
        jac.push(row_im, layout.gen_p(gi), kern.r2);
        jac.push(row_im, layout.gen_q(gi), -kern.r1);
        jac.push(row_im, layout.v_re(bus), p * kern.r2_dr - q * kern.r1_dr);
        jac.push(row_im, layout.v_im(bus), p * kern.r2_di - q * kern.r1_di);
    }

    for load in &pnet.net.loads {
        let bus = load.bus;
        let vr = x[layout.v_re(bus)];
        let vi = x[layout.v_im(bus)];
        let kern = InjectionKernel::at(vr, vi);
        let p = pnet.load_scale * load.p;
        let q = pnet.load_scale * load.q;
        let row_re = layout.eq_kcl_re(bus);
        let row_im = layout.eq_kcl_im(bus);
        jac.push(row_re, layout.v_re(bus), -(p * kern.r1_dr + q * kern.r2_dr));
        jac.push(row_re, layout.v_im(bus), -(p * kern.r1_di + q * kern.r2_di));
        jac.push(row_im, layout.v_re(bus), -(p * kern.r2_dr - q * kern.r1_dr));
        jac.push(row_im, layout.v_im(bus), -(p * kern.r2_di - q * kern.r1_di));
    }

    for i in 0..layout.n_bus {
        let row = layout.eq_v_sq(i);
        jac.push(row, layout.v_sq(i), 1.0);
        jac.push(row, layout.v_re(i), -2.0 * x[layout.v_re(i)]);
        jac.push(row, layout.v_im(i), -2.0 * x[layout.v_im(i)]);
    }

    for slot in 0..layout.n_limited() {
        let e = layout.limited_branches[slot];
        let br = &pnet.net.branches[e];
        let (y_ff, y_ft) = pnet.ammeter_admittances(slot);
        let (f, t) = (br.from_bus, br.to_bus);
        let row_re = layout.eq_kvl_re(slot);
        let row_im = layout.eq_kvl_im(slot);
        jac.push(row_re, layout.amm_re(slot), 1.0);
        jac.push(row_re, layout.v_re(f), -y_ff.re);
        jac.push(row_re, layout.v_im(f), y_ff.im);
        jac.push(row_re, layout.v_re(t), -y_ft.re);
        jac.push(row_re, layout.v_im(t), y_ft.im);
        jac.push(row_im, layout.amm_im(slot), 1.0);
        jac.push(row_im, layout.v_re(f), -y_ff.im);
        jac.push(row_im, layout.v_im(f), -y_ff.re);
        jac.push(row_im, layout.v_re(t), -y_ft.im);
        jac.push(row_im, layout.v_im(t), -y_ft.re);

        let row_flow = layout.eq_flow(slot);
        jac.push(row_flow, layout.flow_sq(slot), 1.0);
        match br.limit.expect("limited branch") {
            FlowLimit::Current(_) => {
                jac.push(row_flow, layout.amm_re(slot), -2.0 * x[layout.amm_re(slot)]);
                jac.push(row_flow, layout.amm_im(slot), -2.0 * x[layout.amm_im(slot)]);
            }
            FlowLimit::Power(_) => {
                let (vr, vi, ire, iim, p, q) = power_flow_terms(it, pnet, slot);
                jac.push(row_flow, layout.amm_re(slot), -2.0 * (p * vr + q * vi));
                jac.push(row_flow, layout.amm_im(slot), -2.0 * (p * vi - q * vr));
                jac.push(row_flow, layout.v_re(f), -2.0 * (p * ire - q * iim));
                jac.push(row_flow, layout.v_im(f), -2.0 * (p * iim + q * ire));
            }
        }
    }

    jac.push(
        layout.eq_reference(),
        layout.v_im(pnet.net.reference_bus()),
        1.0,
    );
    Ok(jac)
}

/// Hessian of the Lagrangian f(x) + lambda^T g(x) with respect to x.
/// Emitted symmetric (both triangles); bound-multiplier terms do not enter
/// here, they appear as the diagonal barrier matrix during KKT assembly.
pub fn lagrangian_hessian(
    it: &Iterate,
    pnet: &ParameterizedNetwork,
) -> Result<CooMatrix, EvalError> {
    check_voltages(it, pnet)?;
    let layout = &pnet.layout;
    let x = &it.x;
    let lambda = &it.lambda;
    let mut hess = CooMatrix::with_capacity(
        layout.n_primal(),
        layout.n_primal(),
        3 * layout.n_bus + layout.n_gen + 14 * layout.n_limited(),
    );

    // objective curvature
    for (gi, gen) in pnet.net.generators.iter().enumerate() {
        hess.push(layout.gen_p(gi), layout.gen_p(gi), 2.0 * gen.cost_c);
    }
    let w = pnet.params.slack_weight;
    for i in 0..layout.n_bus {
        hess.push(layout.slack_re(i), layout.slack_re(i), 2.0 * w);
        hess.push(layout.slack_im(i), layout.slack_im(i), 2.0 * w);
    }

    let sym = |h: &mut CooMatrix, a: usize, b: usize, v: f64| {
        h.push(a, b, v);
        if a != b {
            h.push(b, a, v);
        }
    };

    // generator injection curvature
    for (gi, gen) in pnet.net.generators.iter().enumerate() {
        let bus = gen.bus;
        let vr_ix = layout.v_re(bus);
        let vi_ix = layout.v_im(bus);
        let kern = InjectionKernel::at(x[vr_ix], x[vi_ix]);
        let p = x[layout.gen_p(gi)];
        let q = x[layout.gen_q(gi)];
        let l_re = lambda[layout.eq_kcl_re(bus)];
        let l_im = lambda[layout.eq_kcl_im(bus)];

        let h_rr = l_re * (p * kern.r1_drr + q * kern.r2_drr)
            + l_im * (p * kern.r2_drr - q * kern.r1_drr);
        let h_ri = l_re * (p * kern.r1_dri + q * kern.r2_dri)
            + l_im * (p * kern.r2_dri - q * kern.r1_dri);
        let h_ii = l_re * (p * kern.r1_dii + q * kern.r2_dii)
            + l_im * (p * kern.r2_dii - q * kern.r1_dii);
        sym(&mut hess, vr_ix, vr_ix, h_rr);
        sym(&mut hess, vr_ix, vi_ix, h_ri);
        sym(&mut hess, vi_ix, vi_ix, h_ii);
        sym(
            &mut hess,
            layout.gen_p(gi),
            vr_ix,
            l_re * kern.r1_dr + l_im * kern.r2_dr,
        );
        sym(
            &mut hess,
            layout.gen_p(gi),
            vi_ix,
            l_re * kern.r1_di + l_im * kern.r2_di,
        );
        sym(
            &mut hess,
            layout.gen_q(gi),
            vr_ix,
            l_re * kern.r2_dr - l_im * kern.r1_dr,
        );
        sym(
            &mut hess,
            layout.gen_q(gi),
            vi_ix,
            l_re * kern.r2_di - l_im * kern.r1_di,
        );
    }

    // load injection curvature (enters the KCL rows with a minus sign)
    for load in &pnet.net.loads {
        let bus = load.bus;
        let vr_ix = layout.v_re(bus);
        let vi_ix = layout.v_im(bus);
        let kern = InjectionKernel::at(x[vr_ix], x[vi_ix]);
        let p = pnet.load_scale * load.p;
        let q = pnet.load_scale * load.q;
        let l_re = -lambda[layout.eq_kcl_re(bus)];
        let l_im = -lambda[layout.eq_kcl_im(bus)];
        let h_rr = l_re * (p * kern.r1_drr + q * kern.r2_drr)
            + l_im * (p * kern.r2_drr - q * kern.r1_drr);
        let h_ri = l_re * (p * kern.r1_dri + q * kern.r2_dri)
            + l_im * (p * kern.r2_dri - q * kern.r1_dri);
        let h_ii = l_re * (p * kern.r1_dii + q * kern.r2_dii)
            + l_im * (p * kern.r2_dii - q * kern.r1_dii);
        sym(&mut hess, vr_ix, vr_ix, h_rr);
        sym(&mut hess, vr_ix, vi_ix, h_ri);
        sym(&mut hess, vi_ix, vi_ix, h_ii);
    }

    // squared-voltage definitions
    for i in 0..layout.n_bus {
        let l = lambda[layout.eq_v_sq(i)];
        sym(&mut hess, layout.v_re(i), layout.v_re(i), -2.0 * l);
        sym(&mut hess, layout.v_im(i), layout.v_im(i), -2.0 * l);
    }

    // flow-magnitude definitions
    for slot in 0..layout.n_limited() {
        let e = layout.limited_branches[slot];
        let br = &pnet.net.branches[e];
        let l = lambda[layout.eq_flow(slot)];
        let ire_ix = layout.amm_re(slot);
        let iim_ix = layout.amm_im(slot);
        match br.limit.expect("limited branch") {
            FlowLimit::Current(_) => {
                sym(&mut hess, ire_ix, ire_ix, -2.0 * l);
                sym(&mut hess, iim_ix, iim_ix, -2.0 * l);
            }
            FlowLimit::Power(_) => {
                let (vr, vi, ire, iim, _, _) = power_flow_terms(it, pnet, slot);
                let f = br.from_bus;
                let vr_ix = layout.v_re(f);
                let vi_ix = layout.v_im(f);
                let current_sq = ire * ire + iim * iim;
                let voltage_sq = vr * vr + vi * vi;
                sym(&mut hess, vr_ix, vr_ix, -2.0 * l * current_sq);
                sym(&mut hess, vi_ix, vi_ix, -2.0 * l * current_sq);
                sym(&mut hess, ire_ix, ire_ix, -2.0 * l * voltage_sq);
                sym(&mut hess, iim_ix, iim_ix, -2.0 * l * voltage_sq);
                sym(&mut hess, vr_ix, ire_ix, -4.0 * l * vr * ire);
                sym(&mut hess, vr_ix, iim_ix, -4.0 * l * vr * iim);
                sym(&mut hess, vi_ix, ire_ix, -4.0 * l * vi * ire);
                sym(&mut hess, vi_ix, iim_ix, -4.0 * l * vi * iim);
            }
        }
    }

    Ok(hess)
}
