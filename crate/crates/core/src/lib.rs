//! Surface-electrode Paul trap simulation: boundary-element electrostatics,
//! pseudopotential analysis, RF ion dynamics and Monte Carlo loading.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli_io;
pub mod constants;
pub mod dynamics;
pub mod fieldsolver;
pub mod geometry;
pub mod loading_mc;
pub mod trap_analysis;
