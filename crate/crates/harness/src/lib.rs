//! Experiment harness: phantoms, simulated interactive sessions, baselines
//! and CSV/SVG reports.

pub mod backend;
pub mod boxes;
pub mod evaluate;
pub mod phantom;
pub mod report;
pub mod training;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error on {0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error(transparent)]
    Volume(#[from] dins_core::volume::VolumeError),
    #[error(transparent)]
    Net(#[from] dins_net::NetError),
    #[error("backend failed: {0}")]
    Backend(String),
    #[error(transparent)]
    Click(#[from] dins_core::clicksim::ClickError),
}
