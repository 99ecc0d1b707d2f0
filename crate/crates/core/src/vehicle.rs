//! Remote vehicle agent.
//!
//! The agent drains inbound command records on a fixed tick (100 Hz by
//! default), keeps the freshest command by sequence number, drives a
//! first-order steering actuator and a kinematic bicycle model, and emits
//! telemetry that echoes the last processed command.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::{self, Telemetry, TeleopCommand};
use crate::netem::Delivered;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VehicleError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("time constant must be positive, got {0}")]
    NonPositiveTau(f64),
    #[error("invalid vehicle parameter `{field}`: {reason}")]
    InvalidParam { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discretization {
    /// `theta + dt/tau * (u - theta)`
    #[default]
    Euler,
    /// `theta + (1 - exp(-dt/tau)) * (u - theta)`
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase_m: f64,
    pub tau_steer_s: f64,
    pub max_steer_rad: f64,
    pub max_speed_mps: f64,
    pub tick_period_us: u64,
    pub telemetry_period_us: u64,
    pub discretization: Discretization,
    /// Command silence after which the failsafe engages.
    pub cmd_timeout_us: u64,
    /// Time for the failsafe brake to ramp from 0 to 1.
    pub brake_ramp_us: u64,
    pub accel_max_mps2: f64,
    pub brake_max_mps2: f64,
    pub drag_per_s: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            wheelbase_m: 2.57,
            tau_steer_s: 0.2,
            max_steer_rad: 0.6,
            max_speed_mps: 20.0,
            tick_period_us: 10_000,
            telemetry_period_us: 50_000,
            discretization: Discretization::Euler,
            cmd_timeout_us: 500_000,
            brake_ramp_us: 1_000_000,
            accel_max_mps2: 2.5,
            brake_max_mps2: 5.0,
            drag_per_s: 0.05,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), VehicleError> {
        let positive = [
            ("wheelbase_m", self.wheelbase_m),
            ("tau_steer_s", self.tau_steer_s),
            ("max_steer_rad", self.max_steer_rad),
            ("max_speed_mps", self.max_speed_mps),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(VehicleError::InvalidParam {
                    field,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        for (field, v) in [
            ("accel_max_mps2", self.accel_max_mps2),
            ("brake_max_mps2", self.brake_max_mps2),
            ("drag_per_s", self.drag_per_s),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(VehicleError::InvalidParam {
                    field,
                    reason: format!("must be non-negative, got {v}"),
                });
            }
        }
        if self.max_steer_rad >= std::f64::consts::FRAC_PI_2 {
            return Err(VehicleError::InvalidParam {
                field: "max_steer_rad",
                reason: "must be below pi/2".into(),
            });
        }
        for (field, v) in [
            ("tick_period_us", self.tick_period_us),
            ("telemetry_period_us", self.telemetry_period_us),
            ("cmd_timeout_us", self.cmd_timeout_us),
            ("brake_ramp_us", self.brake_ramp_us),
        ] {
            if v == 0 {
                return Err(VehicleError::InvalidParam {
                    field,
                    reason: "must be positive".into(),
                });
            }
        }
        if !self.telemetry_period_us.is_multiple_of(self.tick_period_us) {
            return Err(VehicleError::InvalidParam {
                field: "telemetry_period_us",
                reason: format!(
                    "must be a multiple of tick_period_us ({})",
                    self.tick_period_us
                ),
            });
        }
        Ok(())
    }
}

/// One actuator step of the first-order steering lag, clamped to [-1, 1].
pub fn actuator_step(
    theta: f64,
    u: f64,
    dt_s: f64,
    tau_s: f64,
    discretization: Discretization,
) -> Result<f64, VehicleError> {
    if dt_s.is_nan() || dt_s <= 0.0 {
        return Err(VehicleError::NonPositiveStep(dt_s));
    }
    if tau_s.is_nan() || tau_s <= 0.0 {
        return Err(VehicleError::NonPositiveTau(tau_s));
    }
    let gain = match discretization {
        Discretization::Euler => dt_s / tau_s,
        Discretization::Exact => -(-dt_s / tau_s).exp_m1(),
    };
    Ok((theta + gain * (u - theta)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Controls {
    pub steering: f64,
    pub throttle: f64,
    pub brake: f64,
}

impl From<&TeleopCommand> for Controls {
    fn from(c: &TeleopCommand) -> Self {
        Self {
            steering: c.steering,
            throttle: c.throttle,
            brake: c.brake,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub x_m: f64,
    pub y_m: f64,
    pub heading_rad: f64,
    pub speed_mps: f64,
    /// Realized steering, normalized.
    pub steering_norm: f64,
    pub last_cmd: Option<TeleopCommand>,
}

/// Kinematic bicycle update with explicit Euler integration.
///
/// Steering comes from `state.steering_norm`; speed follows
/// `v' = v + (a_max*throttle - b_max*brake - drag*v) * dt`, clamped to
/// `[0, max_speed]`.
pub fn dynamics_step(
    state: &VehicleState,
    params: &VehicleParams,
    pedals: Controls,
    dt_s: f64,
) -> VehicleState {
    let v = state.speed_mps;
    let delta = state.steering_norm * params.max_steer_rad;
    let accel = params.accel_max_mps2 * pedals.throttle
        - params.brake_max_mps2 * pedals.brake
        - params.drag_per_s * v;
    VehicleState {
        x_m: state.x_m + v * state.heading_rad.cos() * dt_s,
        y_m: state.y_m + v * state.heading_rad.sin() * dt_s,
        heading_rad: state.heading_rad + v / params.wheelbase_m * delta.tan() * dt_s,
        speed_mps: (v + accel * dt_s).clamp(0.0, params.max_speed_mps),
        ..*state
    }
}

/// Effective controls after the command-silence failsafe.
///
/// After `cmd_timeout_us` without a command the throttle is cut and the brake
/// ramps linearly to 1 over `brake_ramp_us`; steering holds.
pub fn failsafe(
    last: Option<&TeleopCommand>,
    silent_since_us: u64,
    now_us: u64,
    params: &VehicleParams,
) -> (Controls, bool) {
    let mut c = last.map(Controls::from).unwrap_or_default();
    let age = now_us.saturating_sub(silent_since_us);
    if age <= params.cmd_timeout_us {
        return (c, false);
    }
    let ramp = ((age - params.cmd_timeout_us) as f64 / params.brake_ramp_us as f64).min(1.0);
    c.throttle = 0.0;
    c.brake = c.brake.max(ramp);
    (c, true)
}

/// When an accepted command was delivered and first processed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandReceipt {
    pub seq: u64,
    pub ts_us: u64,
    pub delivered_us: u64,
    pub processed_us: u64,
}

impl CommandReceipt {
    pub fn processing_delay_us(&self) -> u64 {
        self.processed_us - self.delivered_us
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentCounters {
    pub accepted: u64,
    pub stale: u64,
    pub malformed: u64,
    pub failsafe_ticks: u64,
}

#[derive(Debug, Clone, Default)]
pub struct TickOutput {
    pub telemetry: Vec<Telemetry>,
    pub receipts: Vec<CommandReceipt>,
    pub controls: Controls,
    pub failsafe: bool,
}

#[derive(Debug, Clone)]
pub struct VehicleAgent {
    params: VehicleParams,
    state: VehicleState,
    last_rx_us: u64,
    last_tick_us: Option<u64>,
    next_telemetry_us: u64,
    telemetry_seq: u64,
    counters: AgentCounters,
}

impl VehicleAgent {
    pub fn new(params: VehicleParams, start_us: u64) -> Result<Self, VehicleError> {
        params.validate()?;
        Ok(Self {
            params,
            state: VehicleState::default(),
            last_rx_us: start_us,
            last_tick_us: None,
            next_telemetry_us: start_us,
            telemetry_seq: 0,
            counters: AgentCounters::default(),
        })
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn state(&self) -> &VehicleState {
        &self.state
    }

    pub fn counters(&self) -> AgentCounters {
        self.counters
    }

    /// Effective controls at `now_us`, with whether the failsafe is active.
    pub fn failsafe(&self, now_us: u64) -> (Controls, bool) {
        failsafe(
            self.state.last_cmd.as_ref(),
            self.last_rx_us,
            now_us,
            &self.params,
        )
    }

    /// One control-loop iteration at `now_us`.
    pub fn tick(
        &mut self,
        now_us: u64,
        inbound: impl IntoIterator<Item = Delivered>,
    ) -> TickOutput {
        let mut out = TickOutput::default();
        for record in inbound {
            let cmd = match messages::decode_command(&record.payload) {
                Ok(c) => c,
                Err(_) => {
                    self.counters.malformed += 1;
                    continue;
                }
            };
            if self.state.last_cmd.is_some_and(|last| cmd.seq <= last.seq) {
                self.counters.stale += 1;
                continue;
            }
            self.counters.accepted += 1;
            self.state.last_cmd = Some(cmd);
            self.last_rx_us = now_us;
            out.receipts.push(CommandReceipt {
                seq: cmd.seq,
                ts_us: cmd.ts_us,
                delivered_us: record.delivery_time_us,
                processed_us: now_us,
            });
        }

        let (controls, engaged) = self.failsafe(now_us);
        if engaged {
            self.counters.failsafe_ticks += 1;
        }
        out.controls = controls;
        out.failsafe = engaged;

        if let Some(prev) = self.last_tick_us {
            if now_us > prev {
                let dt = (now_us - prev) as f64 / 1e6;
                // dt and tau are positive here; the error path is unreachable
                self.state.steering_norm = actuator_step(
                    self.state.steering_norm,
                    controls.steering,
                    dt,
                    self.params.tau_steer_s,
                    self.params.discretization,
                )
                .unwrap_or(self.state.steering_norm);
                self.state = dynamics_step(&self.state, &self.params, controls, dt);
            }
        }
        self.last_tick_us = Some(now_us);

        if now_us >= self.next_telemetry_us {
            out.telemetry.push(self.telemetry(now_us));
            let period = self.params.telemetry_period_us;
            while self.next_telemetry_us <= now_us {
                self.next_telemetry_us += period;
            }
        }
        out
    }

    fn telemetry(&mut self, now_us: u64) -> Telemetry {
        self.telemetry_seq += 1;
        let (echo_seq, echo_ts_us) = self
            .state
            .last_cmd
            .map(|c| (c.seq, c.ts_us))
            .unwrap_or((0, 0));
        Telemetry {
            seq: self.telemetry_seq,
            ts_us: now_us,
            speed_mps: self.state.speed_mps,
            steering_pos: self.state.steering_norm,
            echo_ts_us,
            echo_seq,
            x_m: self.state.x_m,
            y_m: self.state.y_m,
            heading_rad: self.state.heading_rad,
        }
    }
}
