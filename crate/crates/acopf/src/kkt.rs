//! Perturbed KKT residual and the linearized Newton system, in both the
//! bound-multiplier-eliminated (reduced) form used by the solver and the
//! full form kept for cross-checking.

use crate::formulation::{
    equality_jacobian, equality_residuals, lagrangian_hessian, objective_value_gradient, Bounds,
    EvalError, Iterate, ParameterizedNetwork,
};
use crate::sparse::CooMatrix;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum KktError {
    #[error("iterate not strictly interior at entry {index}")]
    NotInterior { index: usize },
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("regularization exhausted at delta = {delta:.3e}")]
    RegularizationExhausted { delta: f64 },
}

/// Complementarity relaxation, one entry per bound (upper bounds first,
/// then lower, each in primal index order over the bounded entries).
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub epsilon: Vec<f64>,
}

impl Perturbation {
    pub fn uniform(bounds: &Bounds, value: f64) -> Self {
        Self {
            epsilon: vec![value; bounds.count()],
        }
    }
}

/// Stacked perturbed KKT residual split by role.
#[derive(Debug, Clone)]
pub struct KktResidual {
    /// grad f + grad g^T lambda + mu_upper - mu_lower
    pub dual: Vec<f64>,
    /// g(x)
    pub primal: Vec<f64>,
    /// mu_upper o (x - upper) + eps, on upper-bounded entries
    pub comp_upper: Vec<f64>,
    /// mu_lower o (x - lower) - eps, on lower-bounded entries
    pub comp_lower: Vec<f64>,
}

impl KktResidual {
    pub fn inf_norm(&self) -> f64 {
        crate::sparse::norm_inf(&self.dual)
            .max(crate::sparse::norm_inf(&self.primal))
            .max(crate::sparse::norm_inf(&self.comp_upper))
            .max(crate::sparse::norm_inf(&self.comp_lower))
    }
}

fn require_interior(it: &Iterate, bounds: &Bounds) -> Result<(), KktError> {
    for i in 0..it.x.len() {
        let xi = it.x[i];
        if bounds.has_upper(i) && (xi >= bounds.upper[i] || it.mu_upper[i] <= 0.0) {
            return Err(KktError::NotInterior { index: i });
        }
        if bounds.has_lower(i) && (xi <= bounds.lower[i] || it.mu_lower[i] <= 0.0) {
            return Err(KktError::NotInterior { index: i });
        }
    }
    Ok(())
}

/// Evaluates the perturbed KKT residual at a strictly interior iterate.
pub fn kkt_residual(
    it: &Iterate,
    pnet: &ParameterizedNetwork,
    pert: &Perturbation,
) -> Result<KktResidual, KktError> {
    let bounds = pnet.bounds();
    require_interior(it, &bounds)?;
    let (_, mut dual) = objective_value_gradient(it, pnet);
    let jac = equality_jacobian(it, pnet)?;
    jac.add_mul_transpose_vec(&it.lambda, &mut dual);
    for i in 0..it.x.len() {
        if bounds.has_upper(i) {
            dual[i] += it.mu_upper[i];
        }
        if bounds.has_lower(i) {
            dual[i] -= it.mu_lower[i];
        }
    }
    let primal = equality_residuals(it, pnet)?;

    let mut comp_upper = Vec::new();
    let mut comp_lower = Vec::new();
    let mut eps_iter = pert.epsilon.iter();
    for i in 0..it.x.len() {
        if bounds.has_upper(i) {
            let eps = *eps_iter.next().expect("epsilon entry per upper bound");
            comp_upper.push(it.mu_upper[i] * (it.x[i] - bounds.upper[i]) + eps);
        }
    }
    for i in 0..it.x.len() {
        if bounds.has_lower(i) {
            let eps = *eps_iter.next().expect("epsilon entry per lower bound");
            comp_lower.push(it.mu_lower[i] * (it.x[i] - bounds.lower[i]) - eps);
        }
    }
    Ok(KktResidual {
        dual,
        primal,
        comp_upper,
        comp_lower,
    })
}

/// Data needed to recover the eliminated bound-multiplier steps after a
/// reduced solve.
#[derive(Debug, Clone)]
pub struct EliminationData {
    /// Per primal entry: gap to the upper bound and the residual of the
    /// linearized upper complementarity row; NaN-free only where bounded.
    pub upper_gap: Vec<f64>,
    pub upper_comp: Vec<f64>,
    pub lower_gap: Vec<f64>,
    pub lower_comp: Vec<f64>,
    pub mu_upper: Vec<f64>,
    pub mu_lower: Vec<f64>,
    pub has_upper: Vec<bool>,
    pub has_lower: Vec<bool>,
}

impl EliminationData {
    /// Recovers (delta mu_upper, delta mu_lower) from the primal step.
    pub fn recover(&self, dx: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = dx.len();
        let mut dmu_upper = vec![0.0; n];
        let mut dmu_lower = vec![0.0; n];
        for i in 0..n {
            if self.has_upper[i] {
                dmu_upper[i] = (self.upper_comp[i] + self.mu_upper[i] * dx[i]) / self.upper_gap[i];
            }
            if self.has_lower[i] {
                dmu_lower[i] = -(self.lower_comp[i] + self.mu_lower[i] * dx[i]) / self.lower_gap[i];
            }
        }
        (dmu_upper, dmu_lower)
    }
}

/// The reduced Newton system over [dx; dlambda]:
/// [H + delta I + Sigma, J^T; J, 0] with the negated residual on the right.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub matrix: CooMatrix,
    pub rhs: Vec<f64>,
    pub elimination: EliminationData,
    pub regularization: f64,
    pub n_primal: usize,
    pub n_equality: usize,
}

/// Assembles the reduced KKT system at regularization `delta`.
///
/// Sigma = mu_upper / (upper - x) + mu_lower / (x - lower) on bounded rows;
/// the right-hand side carries the same elimination applied to the negated
/// residual.
pub fn assemble_kkt(
    it: &Iterate,
    pnet: &ParameterizedNetwork,
    pert: &Perturbation,
    delta: f64,
) -> Result<KktSystem, KktError> {
    let bounds = pnet.bounds();
    require_interior(it, &bounds)?;
    let residual = kkt_residual(it, pnet, pert)?;
    let hess = lagrangian_hessian(it, pnet)?;
    let jac = equality_jacobian(it, pnet)?;

    let nx = it.x.len();
    let m = residual.primal.len();
    let dim = nx + m;
    let mut matrix = CooMatrix::with_capacity(dim, dim, hess.entries.len() + 2 * jac.entries.len() + nx);
    for &(i, j, v) in &hess.entries {
        matrix.push(i, j, v);
    }
    for &(i, j, v) in &jac.entries {
        matrix.push(nx + i, j, v);
        matrix.push(j, nx + i, v);
    }

    let mut upper_gap = vec![f64::NAN; nx];
    let mut lower_gap = vec![f64::NAN; nx];
    let mut upper_comp = vec![f64::NAN; nx];
    let mut lower_comp = vec![f64::NAN; nx];
    let mut has_upper = vec![false; nx];
    let mut has_lower = vec![false; nx];
    let mut iter_upper = residual.comp_upper.iter();
    for i in 0..nx {
        if bounds.has_upper(i) {
            has_upper[i] = true;
            upper_gap[i] = bounds.upper[i] - it.x[i];
            upper_comp[i] = *iter_upper.next().unwrap();
        }
    }
    let mut iter_lower = residual.comp_lower.iter();
    for i in 0..nx {
        if bounds.has_lower(i) {
            has_lower[i] = true;
            lower_gap[i] = it.x[i] - bounds.lower[i];
            lower_comp[i] = *iter_lower.next().unwrap();
        }
    }

    let mut rhs = vec![0.0; dim];
    for i in 0..nx {
        let mut sigma = 0.0;
        let mut shift = 0.0;
        if has_upper[i] {
            sigma += it.mu_upper[i] / upper_gap[i];
            shift -= upper_comp[i] / upper_gap[i];
        }
        if has_lower[i] {
            sigma += it.mu_lower[i] / lower_gap[i];
            shift -= lower_comp[i] / lower_gap[i];
        }
        // the diagonal is always structurally present
        matrix.push(i, i, sigma + delta);
        rhs[i] = -residual.dual[i] + shift;
    }
    for (j, r) in residual.primal.iter().enumerate() {
        rhs[nx + j] = -r;
    }

    Ok(KktSystem {
        matrix,
        rhs,
        elimination: EliminationData {
            upper_gap,
            upper_comp,
            lower_gap,
            lower_comp,
            mu_upper: it.mu_upper.clone(),
            mu_lower: it.mu_lower.clone(),
            has_upper,
            has_lower,
        },
        regularization: delta,
        n_primal: nx,
        n_equality: m,
    })
}

/// The unreduced Newton system over [dx; dlambda; dmu_upper; dmu_lower],
/// used to cross-check the reduced form.
pub fn assemble_kkt_full(
    it: &Iterate,
    pnet: &ParameterizedNetwork,
    pert: &Perturbation,
    delta: f64,
) -> Result<(CooMatrix, Vec<f64>), KktError> {
    let bounds = pnet.bounds();
    require_interior(it, &bounds)?;
    let residual = kkt_residual(it, pnet, pert)?;
    let hess = lagrangian_hessian(it, pnet)?;
    let jac = equality_jacobian(it, pnet)?;

    let nx = it.x.len();
    let m = residual.primal.len();
    let upper_ix: Vec<usize> = (0..nx).filter(|&i| bounds.has_upper(i)).collect();
    let lower_ix: Vec<usize> = (0..nx).filter(|&i| bounds.has_lower(i)).collect();
    let (nu, nl) = (upper_ix.len(), lower_ix.len());
    let dim = nx + m + nu + nl;

    let mut matrix = CooMatrix::new(dim, dim);
    for &(i, j, v) in &hess.entries {
        matrix.push(i, j, v);
    }
    for i in 0..nx {
        matrix.push(i, i, delta);
    }
    for &(i, j, v) in &jac.entries {
        matrix.push(nx + i, j, v);
        matrix.push(j, nx + i, v);
    }
    // dual rows: + I on mu_upper columns, - I on mu_lower columns
    for (k, &i) in upper_ix.iter().enumerate() {
        matrix.push(i, nx + m + k, 1.0);
    }
    for (k, &i) in lower_ix.iter().enumerate() {
        matrix.push(i, nx + m + nu + k, -1.0);
    }
    // linearized complementarity rows: U dx + X dmu = -comp
    for (k, &i) in upper_ix.iter().enumerate() {
        let row = nx + m + k;
        matrix.push(row, i, it.mu_upper[i]);
        matrix.push(row, row, it.x[i] - bounds.upper[i]);
    }
    for (k, &i) in lower_ix.iter().enumerate() {
        let row = nx + m + nu + k;
        matrix.push(row, i, it.mu_lower[i]);
        matrix.push(row, row, it.x[i] - bounds.lower[i]);
    }

    let mut rhs = vec![0.0; dim];
    for i in 0..nx {
        rhs[i] = -residual.dual[i];
    }
    for j in 0..m {
        rhs[nx + j] = -residual.primal[j];
    }
    for k in 0..nu {
        rhs[nx + m + k] = -residual.comp_upper[k];
    }
    for k in 0..nl {
        rhs[nx + m + nu + k] = -residual.comp_lower[k];
    }
    Ok((matrix, rhs))
}

/// Outcome classification driving the regularization policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveOutcome {
    /// Factorization succeeded and the step decreased the merit measure.
    Healthy,
    /// The factorization failed (singular to pivot tolerance).
    FactorizationFailed,
    /// The step was not a descent direction for the merit measure.
    Ascent,
}

pub const DELTA_MIN: f64 = 1e-8;
pub const DELTA_MAX: f64 = 1e8;

/// Failure-driven inertia repair: escalate tenfold on trouble, decay by a
/// third after success, error out past DELTA_MAX.
pub fn choose_regularization(outcome: SolveOutcome, delta_prev: f64) -> Result<f64, KktError> {
    match outcome {
        SolveOutcome::Healthy => {
            let next = delta_prev / 3.0;
            Ok(if next < DELTA_MIN { 0.0 } else { next })
        }
        SolveOutcome::FactorizationFailed | SolveOutcome::Ascent => {
            let next = (10.0 * delta_prev).max(DELTA_MIN);
            if next > DELTA_MAX {
                Err(KktError::RegularizationExhausted { delta: delta_prev })
            } else {
                Ok(next)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::formulation::{apply_homotopy, HomotopyParams, Iterate};
    use crate::testnets;

    fn interior_setup() -> (ParameterizedNetwork, Iterate) {
        let net = testnets::two_bus();
        let pnet = apply_homotopy(&net, &HomotopyParams::default().at(0.5));
        let bounds = pnet.bounds();
        let layout = pnet.layout.clone();
        let mut it = Iterate::zeros(&layout);
        for i in 0..layout.n_bus {
            it.x[layout.v_re(i)] = 1.0;
            it.x[layout.v_sq(i)] = 1.0;
        }
        for i in 0..it.x.len() {
            if bounds.has_upper(i) {
                it.mu_upper[i] = 1.0;
            }
            if bounds.has_lower(i) {
                it.mu_lower[i] = 1.0;
            }
            if bounds.has_upper(i) && bounds.has_lower(i) {
                // center strictly inside
                it.x[i] = 0.5 * (bounds.lower[i] + bounds.upper[i]);
            }
        }
        (pnet, it)
    }

    #[test]
    fn dual_residual_is_gradient_when_duals_vanish() {
        let (pnet, mut it) = interior_setup();
        // mu = 0 violates strict interiority for the residual contract, so
        // compare against the mu contribution explicitly instead
        it.lambda.iter_mut().for_each(|l| *l = 0.0);
        let pert = Perturbation::uniform(&pnet.bounds(), 0.0);
        let res = kkt_residual(&it, &pnet, &pert).unwrap();
        let (_, grad) = crate::formulation::objective_value_gradient(&it, &pnet);
        let bounds = pnet.bounds();
        for i in 0..it.x.len() {
            let mut expected = grad[i];
            if bounds.has_upper(i) {
                expected += it.mu_upper[i];
            }
            if bounds.has_lower(i) {
                expected -= it.mu_lower[i];
            }
            assert!((res.dual[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn iterate_at_bound_rejected() {
        let (pnet, mut it) = interior_setup();
        let layout = pnet.layout.clone();
        let bounds = pnet.bounds();
        it.x[layout.gen_p(0)] = bounds.upper[layout.gen_p(0)];
        let pert = Perturbation::uniform(&bounds, 1e-3);
        assert!(matches!(
            kkt_residual(&it, &pnet, &pert),
            Err(KktError::NotInterior { .. })
        ));
    }

    #[test]
    fn sigma_entry_formula() {
        // one variable at 0.5 in [0, 1] with unit multipliers: 1/0.5 + 1/0.5
        let (pnet, it) = interior_setup();
        let layout = pnet.layout.clone();
        let bounds = pnet.bounds();
        let pert = Perturbation::uniform(&bounds, 1e-3);
        let sys = assemble_kkt(&it, &pnet, &pert, 0.0).unwrap();
        // find the diagonal entry for a doubly bounded variable
        let i = layout.gen_q(0); // q in [-1.5, 1.5] at v = 0.5 -> x centered at 0
        let gap_u = bounds.upper[i] - it.x[i];
        let gap_l = it.x[i] - bounds.lower[i];
        let expected = 1.0 / gap_u + 1.0 / gap_l;
        let diag: f64 = sys
            .matrix
            .entries
            .iter()
            .filter(|&&(r, c, _)| r == i && c == i)
            .map(|&(_, _, v)| v)
            .sum();
        assert!((diag - expected).abs() < 1e-12, "{diag} vs {expected}");
    }

    #[test]
    fn unbounded_rows_have_zero_sigma() {
        let (pnet, it) = interior_setup();
        let layout = pnet.layout.clone();
        let pert = Perturbation::uniform(&pnet.bounds(), 1e-3);
        let sys = assemble_kkt(&it, &pnet, &pert, 0.0).unwrap();
        let i = layout.v_re(0); // voltages are unbounded
        let diag: f64 = sys
            .matrix
            .entries
            .iter()
            .filter(|&&(r, c, _)| r == i && c == i)
            .map(|&(_, _, v)| v)
            .sum();
        assert_eq!(diag, 0.0);
    }

    #[test]
    fn reduced_matrix_is_symmetric() {
        let (pnet, it) = interior_setup();
        let pert = Perturbation::uniform(&pnet.bounds(), 1e-3);
        let sys = assemble_kkt(&it, &pnet, &pert, 1e-6).unwrap();
        let dense = sys.matrix.to_dense();
        for r in 0..dense.len() {
            for c in 0..dense.len() {
                assert_eq!(dense[r][c], dense[c][r], "asymmetry at ({r},{c})");
            }
        }
    }

    #[test]
    fn regularization_policy() {
        assert_eq!(
            choose_regularization(SolveOutcome::Healthy, 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            choose_regularization(SolveOutcome::FactorizationFailed, 1e-4).unwrap(),
            1e-3
        );
        // decay by one third, flooring to zero below DELTA_MIN
        let decayed = choose_regularization(SolveOutcome::Healthy, 9e-8).unwrap();
        assert!((decayed - 3e-8).abs() < 1e-22, "{decayed}");
        assert_eq!(
            choose_regularization(SolveOutcome::Healthy, 2e-8).unwrap(),
            0.0
        );
    }

    /// From DELTA_MIN, tenfold escalation runs out after
    /// ceil(log10(DELTA_MAX / DELTA_MIN)) = 16 steps; the 17th errors.
    #[test]
    fn repeated_failures_exhaust_regularization() {
        let mut delta = choose_regularization(SolveOutcome::FactorizationFailed, 0.0).unwrap();
        assert_eq!(delta, DELTA_MIN);
        let mut escalations = 0;
        loop {
            match choose_regularization(SolveOutcome::FactorizationFailed, delta) {
                Ok(next) => {
                    delta = next;
                    escalations += 1;
                }
                Err(KktError::RegularizationExhausted { .. }) => break,
                Err(other) => panic!("unexpected error {other:?}"),
            }
        }
        let expected = (DELTA_MAX / DELTA_MIN).log10().ceil() as usize;
        assert_eq!(escalations, expected);
        assert_eq!(escalations, 16);
    }
}
