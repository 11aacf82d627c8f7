//! Monocular collision avoidance for a wheeled inverted pendulum.

pub mod agent;
pub mod config;
pub mod env;
pub mod geometry;
pub mod mpc;
pub mod nn;
pub mod pipeline;
pub mod render;
pub mod teleop;
pub mod vision;
