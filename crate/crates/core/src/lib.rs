pub mod baselines;
pub mod dataset;
pub mod eval;
pub mod gan;
pub mod harness;
pub mod imaging;
pub mod tensor;
