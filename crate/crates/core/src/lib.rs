//! Doubly robust Lasso value iteration (RDRLVI) for episodic sparse linear
//! MDPs, the explore-then-commit Lasso-FQI baseline, a synthetic sparse MDP
//! family with a controllable restricted minimum eigenvalue, and exact
//! dynamic-programming regret accounting.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod fqi;
pub mod lasso;
pub mod mdp;
pub mod rdrlvi;
pub mod synthetic;

pub use error::{Error, Result};
