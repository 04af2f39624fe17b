//! Worst-case verification of neural-network DC-OPF proxies: grid model,
//! data generation, training, bound tightening, exact MILP verification and
//! gradient attacks.

// `!(a <= b)` is deliberate: it is true for NaN. Index loops mirror the math.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::too_many_arguments)]

pub mod attack;
pub mod bounds;
pub mod dataset;
pub mod dcopf;
pub mod domain;
pub mod grid;
pub mod lp;
pub mod nn;
pub mod verify;
