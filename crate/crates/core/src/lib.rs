//! Populations of neural agents that learn miniature artificial languages by
//! supervised learning and then negotiate them through reinforcement-learning
//! communication turns, in pairs or in fully connected groups.

pub mod agent;
pub mod diffcore;
pub mod error;
pub mod lang;
pub mod metrics;
pub mod population;
pub mod training;

pub use error::{Error, Result};
