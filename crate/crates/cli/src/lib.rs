//! Library surface of the experiment front-end; the `vlae` binary is a thin
//! wrapper over these modules.

pub mod check;
pub mod checkpoint;
pub mod config;
pub mod csvout;
pub mod run;
