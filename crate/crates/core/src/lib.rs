//! Tray-tilting simulation and pose-entropy analysis for sensorless part
//! orienting.
//!
//! A polygonal part slides in a rectangular tray that is tilted 30° toward one
//! of eight headings at a time. Repeating one random tilt sequence from many
//! random starting poses and measuring the Shannon entropy of the discretized
//! pose distribution after every tilt shows whether the sequence drives the
//! part toward a single final pose.

pub mod dynamics;
pub mod friction;
pub mod geometry;
pub mod rng;
pub mod entropy;
pub mod experiment;
pub mod shapes;
