pub mod analysis;
pub mod calibrate;
pub mod kinetics;
pub mod kv;
pub mod ple;
pub mod pulse;
pub mod rng;
pub mod ssa;
pub mod units;
