//! Monotone wide-stencil finite-difference solver for the
//! Hamilton-Jacobi-Bellman form of the simple Monge-Ampere equation, with
//! machine checks of viscosity sub/supersolution properties under several
//! boundary-condition semantics.

pub mod grid;
pub mod hamiltonian;
pub mod scheme;
pub mod solver;
pub mod viscosity;
