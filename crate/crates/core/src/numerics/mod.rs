//! Quadrature, ODE stepping and finite-difference verification tools.

pub mod ode;
pub mod quadrature;
pub mod reference_pde;
pub mod residual;
