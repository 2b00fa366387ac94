//! AC optimal power flow in the current-voltage formulation, solved by a
//! primal-dual interior-point method wrapped in an incremental model
//! building homotopy so that flat, uninformed starts converge reliably.
//!
//! The pipeline: parse a MATPOWER case ([`matpower`]), normalize it to
//! per-unit and validate ([`grid`]), then [`homotopy::solve_acopf`] marches
//! the homotopy factor from the trivially solvable shorted/unloaded network
//! down to the original problem, solving one interior-point sub-problem per
//! step ([`pdip`], [`kkt`], [`linsolve`]). Results are independently
//! verified ([`oracle`], [`homotopy::verify_report`]) and serialized
//! ([`output`]).

pub mod formulation;
pub mod grid;
pub mod kkt;
pub mod linsolve;
pub mod matpower;
pub mod sparse;
pub mod testnets;
