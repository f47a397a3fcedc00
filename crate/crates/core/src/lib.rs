//! Numerical laboratory for the facelift of the dual terminal value in
//! utility maximization with an unspanned endowment.

pub mod control;
pub mod dual;
pub mod error;
pub mod facelift;
pub mod germ;
pub mod hjb;
pub mod market;
pub mod model;
pub mod nonattain;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod table;
pub mod utility;

pub use control::{ControlFamily, ControlParams};
pub use error::{Error, Result};
pub use facelift::{critical_z, primal_limit, FaceliftEnvelope};
pub use market::{EndowmentSpec, InfSet, MarketParams, PathBundle};
pub use model::Model;
pub use stats::Estimate;
pub use utility::UtilitySpec;
