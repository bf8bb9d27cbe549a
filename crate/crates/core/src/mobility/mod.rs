//! Deterministic synthetic world: stations, phone movement, a planted
//! infection chain, and the measurement process that produces PDRs.

mod config;
mod world;

pub use config::{
    AnalysisParams, EpidemicParams, FederationParams, ForeignPhones, Incubation, MobilityParams,
    NoiseParams, ScenarioConfig, StationCounts, Thresholds, UsefulRanges, VaultParams,
};
pub use world::{
    generate_world, observe, GroundTruth, Infection, MobilityTrace, ProviderId, ProviderRegistry,
    StationInfo, World,
};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MobilityError {
    #[error("configuration error: {0}")]
    Config(String),
}
