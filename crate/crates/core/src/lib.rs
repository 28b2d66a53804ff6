//! One-sided (Laplace) symbols of nonnegative Itô–Lévy processes and the
//! integral criterion for invariant laws.

pub mod catalog;
pub mod expr;
pub mod invariance;
pub mod laplace_ode;
pub mod levy;
pub mod model;
pub mod montecarlo;
pub mod numeric;
pub mod quad;
pub mod symbol;
pub mod transforms;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] expr::ExprError),
    #[error(transparent)]
    Quad(#[from] quad::QuadError),
    #[error(transparent)]
    Levy(#[from] levy::LevyError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Symbol(#[from] symbol::SymbolError),
    #[error(transparent)]
    Sim(#[from] montecarlo::SimError),
    #[error(transparent)]
    Ode(#[from] laplace_ode::OdeError),
    #[error(transparent)]
    Invariance(#[from] invariance::InvarianceError),
    #[error(transparent)]
    Transform(#[from] transforms::TransformError),
    #[error(transparent)]
    Catalog(#[from] catalog::CatalogError),
}
