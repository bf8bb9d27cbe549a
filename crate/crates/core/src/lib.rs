pub mod cep;
pub mod crypto;
pub mod edge;
pub mod federation;
pub mod gf256;
pub mod mobility;
pub mod pdr;
pub mod runner;
pub mod vault;
pub mod wire;
