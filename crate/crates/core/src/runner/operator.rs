//! Headless operator: turns an [`OperatorScript`] into a timed command stream.

use std::path::Path;

use super::scenario::{OperatorKind, OperatorScript};
use super::RunError;
use crate::vehicle::Controls;

/// One row of an operator trace file (`t_us,steering,throttle,brake`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub t_us: u64,
    pub controls: Controls,
}

#[derive(Debug, Clone)]
pub struct ScriptedOperator {
    script: OperatorScript,
    trace: Vec<TracePoint>,
}

impl ScriptedOperator {
    /// Loads the trace file for `kind = "trace"`; relative paths resolve
    /// against `base_dir`.
    pub fn new(script: &OperatorScript, base_dir: Option<&Path>) -> Result<Self, RunError> {
        let trace = match (&script.kind, &script.trace) {
            (OperatorKind::Trace, Some(path)) => {
                let path = match base_dir {
                    Some(b) if path.is_relative() => b.join(path),
                    _ => path.clone(),
                };
                let text = std::fs::read_to_string(&path).map_err(|e| RunError::io(&path, e))?;
                parse_trace(&text)?
            }
            _ => Vec::new(),
        };
        Ok(Self {
            script: script.clone(),
            trace,
        })
    }

    pub fn from_trace(script: &OperatorScript, trace: Vec<TracePoint>) -> Self {
        Self {
            script: script.clone(),
            trace,
        }
    }

    /// Normalized controls the operator holds at `t_us`.
    pub fn controls_at(&self, t_us: u64) -> Controls {
        let s = &self.script;
        let t = t_us as f64 / 1e6;
        let pedals = |steering: f64| Controls {
            steering: steering.clamp(-1.0, 1.0),
            throttle: s.throttle,
            brake: s.brake,
        };
        match s.kind {
            OperatorKind::Step => pedals(if t >= s.step_time_s { s.amplitude } else { 0.0 }),
            OperatorKind::Sine => {
                pedals(s.amplitude * (std::f64::consts::TAU * s.frequency_hz * t).sin())
            }
            OperatorKind::Trace => {
                let idx = self.trace.partition_point(|p| p.t_us <= t_us);
                if idx == 0 {
                    Controls::default()
                } else {
                    self.trace[idx - 1].controls
                }
            }
            OperatorKind::Live => Controls::default(),
        }
    }

    /// Send times and controls for every command issued before `duration_us`.
    pub fn schedule(&self, duration_us: u64) -> Vec<(u64, Controls)> {
        let period = self.script.period_us();
        (0..)
            .map(|k| self.script.phase_us + k * period)
            .take_while(|&t| t < duration_us)
            .map(|t| (t, self.controls_at(t)))
            .collect()
    }
}

pub fn parse_trace(text: &str) -> Result<Vec<TracePoint>, RunError> {
    let mut out: Vec<TracePoint> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("t_us")) {
            continue;
        }
        let bad = |what: &str| RunError::Trace(format!("line {}: {what}", i + 1));
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() != 4 {
            return Err(bad("expected 4 columns"));
        }
        let t_us: u64 = cols[0].parse().map_err(|_| bad("bad t_us"))?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let c = Controls {
            steering: num(cols[1])?,
            throttle: num(cols[2])?,
            brake: num(cols[3])?,
        };
        if !((-1.0..=1.0).contains(&c.steering)
            && (0.0..=1.0).contains(&c.throttle)
            && (0.0..=1.0).contains(&c.brake))
        {
            return Err(bad("control value out of range"));
        }
        if out.last().is_some_and(|p| p.t_us >= t_us) {
            return Err(bad("timestamps must increase"));
        }
        out.push(TracePoint { t_us, controls: c });
    }
    Ok(out)
}

pub fn render_trace(points: &[TracePoint]) -> String {
    let mut s = String::from("t_us,steering,throttle,brake\n");
    for p in points {
        s.push_str(&format!(
            "{},{},{},{}\n",
            p.t_us, p.controls.steering, p.controls.throttle, p.controls.brake
        ));
    }
    s
}
