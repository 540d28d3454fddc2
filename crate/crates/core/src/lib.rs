pub mod comb;
pub mod error;
pub mod exec;
pub mod codec;
pub mod measurement;
pub mod chsh;
pub mod loss;
pub mod security;
pub mod fock_oracle;
pub mod protocol;
