pub mod analysis;
pub mod bessel;
pub mod classical;
pub mod error;
pub mod harness;
pub mod measured;
pub mod model;
pub mod observables;
pub mod quantum;
