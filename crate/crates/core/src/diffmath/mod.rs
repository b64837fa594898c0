//! Linear algebra and exact differentiation for the small models in
//! [`crate::models`].

mod cg;
mod deriv;
pub mod scalar;
mod vector;

pub use cg::{cg_solve, cg_solve_with_stats, CgSettings, CgStats, FnOperator, LinearOperator};
pub use deriv::{
    explicit_hessian, hessian_vector_product, logits_vjp, loss_gradient, mixed_second_derivative, sample_gradient,
    scaled_hessian_vector_product, weighted_gradient_sum, HessianOperator, EXPLICIT_HESSIAN_LIMIT,
};
pub use vector::{axpy, dot, norm, DenseMatrix, ParamVector};
