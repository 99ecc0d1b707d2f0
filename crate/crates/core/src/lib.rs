//! Software testbed for teleoperated driving over an impaired cellular link.
//!
//! The crate models the pieces of a teleoperation setup that determine what
//! the remote driver experiences: the command/telemetry wire format
//! ([`messages`]), the one-way network legs ([`netem`]), the vehicle control
//! loop and steering actuator ([`vehicle`]), the camera-to-screen video path
//! ([`videopath`]), and the measurement procedures used to evaluate them
//! ([`metrics`]). [`runner`] wires everything together on a virtual clock.

pub mod clock;
pub mod messages;
pub mod metrics;
pub mod netem;
pub mod runner;
pub mod vehicle;
pub mod videopath;
