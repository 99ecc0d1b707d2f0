//! Scenario files.
//!
//! A scenario is a TOML document. Only `name` and `duration_s` are required;
//! every other field has a default. Unknown keys produce warnings rather
//! than errors so newer files still load. Validation reports every problem
//! at once, each tagged with its dotted field path.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::netem::ChannelSpec;
use crate::vehicle::{Discretization, VehicleParams};
use crate::videopath::VideoPathSpec;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Virtual,
    Realtime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OperatorKind {
    Step,
    Sine,
    Trace,
    /// Commands come from a connected cockpit.
    Live,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorScript {
    pub kind: OperatorKind,
    pub rate_hz: f64,
    /// Steering amplitude for `step` and `sine`.
    pub amplitude: f64,
    pub frequency_hz: f64,
    pub step_time_s: f64,
    pub throttle: f64,
    pub brake: f64,
    /// Offset of the operator send loop relative to the vehicle tick grid.
    pub phase_us: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<PathBuf>,
}

impl Default for OperatorScript {
    fn default() -> Self {
        Self {
            kind: OperatorKind::Sine,
            rate_hz: 100.0,
            amplitude: 0.5,
            frequency_hz: 0.2,
            step_time_s: 1.0,
            throttle: 0.2,
            brake: 0.0,
            phase_us: 0,
            trace: None,
        }
    }
}

impl OperatorScript {
    pub fn period_us(&self) -> u64 {
        (1e6 / self.rate_hz).round().max(1.0) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub lag_window_us: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            lag_window_us: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration_s: f64,
    /// Extra simulated time after the operator stops, so in-flight
    /// telemetry still arrives.
    pub drain_s: f64,
    pub mode: Mode,
    pub outputs: PathBuf,
    pub vehicle: VehicleParams,
    pub uplink: ChannelSpec,
    pub downlink: ChannelSpec,
    pub video: VideoPathSpec,
    pub operator: OperatorScript,
    pub analysis: AnalysisConfig,
}

impl Scenario {
    /// A scenario with every default applied.
    pub fn new(name: &str, duration_s: f64) -> Self {
        Self {
            name: name.to_string(),
            seed: 0,
            duration_s,
            drain_s: 1.0,
            mode: Mode::Virtual,
            outputs: PathBuf::from("out").join(name),
            vehicle: VehicleParams::default(),
            uplink: ChannelSpec::default(),
            downlink: ChannelSpec::default(),
            video: VideoPathSpec::default(),
            operator: OperatorScript::default(),
            analysis: AnalysisConfig::default(),
        }
    }

    pub fn duration_us(&self) -> u64 {
        (self.duration_s * 1e6).round() as u64
    }

    pub fn drain_us(&self) -> u64 {
        (self.drain_s * 1e6).round() as u64
    }

    /// Canonical TOML rendering; parses back to the same scenario.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario is always representable")
    }

    /// Re-checks invariants of a programmatically built scenario.
    pub fn check(&self) -> Result<(), Vec<ConfigError>> {
        let errors = check_invariants(self);
        if errors.is_empty() {
            Ok(())
        } else {
            Err(errors)
        }
    }
}

#[derive(Debug, Clone)]
pub struct Validated {
    pub scenario: Scenario,
    pub warnings: Vec<ConfigError>,
}

pub fn validate(text: &str) -> Result<Validated, Vec<ConfigError>> {
    validate_with_seed(text, None)
}

/// Like [`validate`], with the scenario seed replaced by `seed` when given.
/// Channels without an explicit `seed` follow the scenario seed.
pub fn validate_with_seed(text: &str, seed: Option<u64>) -> Result<Validated, Vec<ConfigError>> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| {
        vec![ConfigError {
            path: "<file>".into(),
            message: e.message().to_string(),
        }]
    })?;

    let mut cx = Cx::default();
    let mut sc = Scenario::new("", 0.0);
    let root = Obj::new(&table, "");

    match root.get("name") {
        Some(Value::String(s)) => sc.name = s.clone(),
        Some(_) => cx.err("name", "must be a string"),
        None => cx.err("name", "is required"),
    }
    sc.outputs = PathBuf::from("out").join(&sc.name);
    sc.seed = seed.unwrap_or(root.u64(&mut cx, "seed", 0));
    match root.get("duration_s") {
        Some(_) => sc.duration_s = root.f64(&mut cx, "duration_s", 0.0),
        None => cx.err("duration_s", "is required"),
    }
    sc.drain_s = root.f64(&mut cx, "drain_s", sc.drain_s);
    sc.mode = match root.str(&mut cx, "mode").as_deref() {
        None | Some("virtual") => Mode::Virtual,
        Some("realtime") => Mode::Realtime,
        Some(other) => {
            cx.err(
                "mode",
                &format!("expected \"virtual\" or \"realtime\", got {other:?}"),
            );
            Mode::Virtual
        }
    };
    if let Some(p) = root.str(&mut cx, "outputs") {
        sc.outputs = PathBuf::from(p);
    }

    const TOP: &[&str] = &[
        "name",
        "seed",
        "duration_s",
        "drain_s",
        "mode",
        "outputs",
        "vehicle",
        "uplink",
        "downlink",
        "video",
        "operator",
        "analysis",
    ];
    root.warn_unknown(&mut cx, TOP);

    if let Some(v) = root.table(&mut cx, "vehicle") {
        sc.vehicle = parse_vehicle(&mut cx, &v);
    }
    let up = root.table(&mut cx, "uplink");
    sc.uplink = parse_channel(&mut cx, up, "uplink", ChannelSpec::default(), sc.seed);
    let down = root.table(&mut cx, "downlink");
    sc.downlink = parse_channel(&mut cx, down, "downlink", ChannelSpec::default(), sc.seed);
    let video = root.table(&mut cx, "video");
    sc.video = parse_video(&mut cx, video, sc.seed);
    if let Some(op) = root.table(&mut cx, "operator") {
        sc.operator = parse_operator(&mut cx, &op);
    }
    if let Some(a) = root.table(&mut cx, "analysis") {
        sc.analysis.lag_window_us = a.u64(&mut cx, "lag_window_us", sc.analysis.lag_window_us);
        a.warn_unknown(&mut cx, &["lag_window_us"]);
    }

    if cx.errors.is_empty() {
        cx.errors.extend(check_invariants(&sc));
    }
    if cx.errors.is_empty() {
        Ok(Validated {
            scenario: sc,
            warnings: cx.warnings,
        })
    } else {
        Err(cx.errors)
    }
}

pub fn load(path: &Path, seed: Option<u64>) -> Result<Validated, Vec<ConfigError>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        vec![ConfigError {
            path: path.display().to_string(),
            message: e.to_string(),
        }]
    })?;
    validate_with_seed(&text, seed)
}

fn parse_vehicle(cx: &mut Cx, v: &Obj) -> VehicleParams {
    let d = VehicleParams::default();
    let discretization = match v.str(cx, "discretization").as_deref() {
        None | Some("euler") => Discretization::Euler,
        Some("exact") => Discretization::Exact,
        Some(other) => {
            cx.err(
                &v.path("discretization"),
                &format!("expected \"euler\" or \"exact\", got {other:?}"),
            );
            Discretization::Euler
        }
    };
    let p = VehicleParams {
        wheelbase_m: v.f64(cx, "wheelbase_m", d.wheelbase_m),
        tau_steer_s: v.f64(cx, "tau_steer_s", d.tau_steer_s),
        max_steer_rad: v.f64(cx, "max_steer_rad", d.max_steer_rad),
        max_speed_mps: v.f64(cx, "max_speed_mps", d.max_speed_mps),
        tick_period_us: v.u64(cx, "tick_period_us", d.tick_period_us),
        telemetry_period_us: v.u64(cx, "telemetry_period_us", d.telemetry_period_us),
        discretization,
        cmd_timeout_us: v.u64(cx, "cmd_timeout_us", d.cmd_timeout_us),
        brake_ramp_us: v.u64(cx, "brake_ramp_us", d.brake_ramp_us),
        accel_max_mps2: v.f64(cx, "accel_max_mps2", d.accel_max_mps2),
        brake_max_mps2: v.f64(cx, "brake_max_mps2", d.brake_max_mps2),
        drag_per_s: v.f64(cx, "drag_per_s", d.drag_per_s),
    };
    v.warn_unknown(
        cx,
        &[
            "wheelbase_m",
            "tau_steer_s",
            "max_steer_rad",
            "max_speed_mps",
            "tick_period_us",
            "telemetry_period_us",
            "discretization",
            "cmd_timeout_us",
            "brake_ramp_us",
            "accel_max_mps2",
            "brake_max_mps2",
            "drag_per_s",
        ],
    );
    p
}

fn parse_channel(
    cx: &mut Cx,
    t: Option<Obj>,
    _path: &str,
    d: ChannelSpec,
    seed: u64,
) -> ChannelSpec {
    let Some(t) = t else {
        return ChannelSpec { seed, ..d };
    };
    let spec = ChannelSpec {
        base_delay_us: t.u64(cx, "base_delay_us", d.base_delay_us),
        jitter_sigma_us: t.u64(cx, "jitter_sigma_us", d.jitter_sigma_us),
        min_delay_us: t.u64(cx, "min_delay_us", d.min_delay_us),
        loss_prob: t.f64(cx, "loss_prob", d.loss_prob),
        bandwidth_bps: t.u64(cx, "bandwidth_bps", d.bandwidth_bps),
        ordered: t.bool(cx, "ordered", d.ordered),
        seed: t.u64(cx, "seed", seed),
    };
    t.warn_unknown(
        cx,
        &[
            "base_delay_us",
            "jitter_sigma_us",
            "min_delay_us",
            "loss_prob",
            "bandwidth_bps",
            "ordered",
            "seed",
        ],
    );
    spec
}

fn parse_video(cx: &mut Cx, t: Option<Obj>, seed: u64) -> VideoPathSpec {
    let d = VideoPathSpec::default();
    let Some(t) = t else {
        return VideoPathSpec {
            net_channel: ChannelSpec {
                seed,
                ..d.net_channel
            },
            ..d
        };
    };
    let net = t.table(cx, "net_channel");
    let spec = VideoPathSpec {
        fps: t.u64(cx, "fps", d.fps as u64).min(u32::MAX as u64) as u32,
        capture_extra_us: t.u64(cx, "capture_extra_us", d.capture_extra_us),
        encode_us: t.u64(cx, "encode_us", d.encode_us),
        net_channel: parse_channel(cx, net, "video.net_channel", d.net_channel, seed),
        frame_bytes: t.u64(cx, "frame_bytes", d.frame_bytes as u64) as usize,
        decode_us: t.u64(cx, "decode_us", d.decode_us),
        display_hz: t
            .u64(cx, "display_hz", d.display_hz as u64)
            .min(u32::MAX as u64) as u32,
    };
    t.warn_unknown(
        cx,
        &[
            "fps",
            "capture_extra_us",
            "encode_us",
            "net_channel",
            "frame_bytes",
            "decode_us",
            "display_hz",
        ],
    );
    spec
}

fn parse_operator(cx: &mut Cx, t: &Obj) -> OperatorScript {
    let d = OperatorScript::default();
    let kind = match t.str(cx, "kind").as_deref() {
        None | Some("sine") => OperatorKind::Sine,
        Some("step") => OperatorKind::Step,
        Some("trace") => OperatorKind::Trace,
        Some("live") => OperatorKind::Live,
        Some(other) => {
            cx.err(
                &t.path("kind"),
                &format!("expected step, sine, trace or live, got {other:?}"),
            );
            OperatorKind::Sine
        }
    };
    let op = OperatorScript {
        kind,
        rate_hz: t.f64(cx, "rate_hz", d.rate_hz),
        amplitude: t.f64(cx, "amplitude", d.amplitude),
        frequency_hz: t.f64(cx, "frequency_hz", d.frequency_hz),
        step_time_s: t.f64(cx, "step_time_s", d.step_time_s),
        throttle: t.f64(cx, "throttle", d.throttle),
        brake: t.f64(cx, "brake", d.brake),
        phase_us: t.u64(cx, "phase_us", d.phase_us),
        trace: t.str(cx, "trace").map(PathBuf::from),
    };
    t.warn_unknown(
        cx,
        &[
            "kind",
            "rate_hz",
            "amplitude",
            "frequency_hz",
            "step_time_s",
            "throttle",
            "brake",
            "phase_us",
            "trace",
        ],
    );
    op
}

fn check_invariants(sc: &Scenario) -> Vec<ConfigError> {
    let mut cx = Cx::default();
    if sc.name.is_empty() {
        cx.err("name", "must not be empty");
    }
    if !(sc.duration_s > 0.0 && sc.duration_s.is_finite()) {
        cx.err(
            "duration_s",
            &format!("must be positive, got {}", sc.duration_s),
        );
    }
    if !(sc.drain_s >= 0.0 && sc.drain_s.is_finite()) {
        cx.err(
            "drain_s",
            &format!("must be non-negative, got {}", sc.drain_s),
        );
    }

    let v = &sc.vehicle;
    for (k, x) in [
        ("wheelbase_m", v.wheelbase_m),
        ("tau_steer_s", v.tau_steer_s),
        ("max_steer_rad", v.max_steer_rad),
        ("max_speed_mps", v.max_speed_mps),
    ] {
        if !(x > 0.0 && x.is_finite()) {
            cx.err(
                &format!("vehicle.{k}"),
                &format!("must be positive, got {x}"),
            );
        }
    }
    for (k, x) in [
        ("tick_period_us", v.tick_period_us),
        ("telemetry_period_us", v.telemetry_period_us),
        ("cmd_timeout_us", v.cmd_timeout_us),
        ("brake_ramp_us", v.brake_ramp_us),
    ] {
        if x == 0 {
            cx.err(&format!("vehicle.{k}"), "must be positive");
        }
    }
    if cx.errors.is_empty() {
        if let Err(e) = v.validate() {
            cx.err("vehicle", &e.to_string());
        }
    }

    for (name, ch) in [
        ("uplink", &sc.uplink),
        ("downlink", &sc.downlink),
        ("video.net_channel", &sc.video.net_channel),
    ] {
        if !(0.0..=1.0).contains(&ch.loss_prob) {
            cx.err(
                &format!("{name}.loss_prob"),
                &format!("must be in [0, 1], got {}", ch.loss_prob),
            );
        }
        if ch.min_delay_us > ch.base_delay_us {
            cx.err(
                &format!("{name}.min_delay_us"),
                &format!("must not exceed base_delay_us ({})", ch.base_delay_us),
            );
        }
    }
    if sc.video.fps == 0 {
        cx.err("video.fps", "must be positive");
    }
    if sc.video.display_hz == 0 {
        cx.err("video.display_hz", "must be positive");
    }
    if sc.video.frame_bytes < 8 {
        cx.err("video.frame_bytes", "must be at least 8");
    }

    let op = &sc.operator;
    if !(op.rate_hz > 0.0 && op.rate_hz.is_finite()) {
        cx.err(
            "operator.rate_hz",
            &format!("must be positive, got {}", op.rate_hz),
        );
    }
    if !(0.0..=1.0).contains(&op.amplitude.abs()) {
        cx.err(
            "operator.amplitude",
            &format!("must be in [-1, 1], got {}", op.amplitude),
        );
    }
    for (k, x) in [("throttle", op.throttle), ("brake", op.brake)] {
        if !(0.0..=1.0).contains(&x) {
            cx.err(
                &format!("operator.{k}"),
                &format!("must be in [0, 1], got {x}"),
            );
        }
    }
    if !(op.frequency_hz >= 0.0 && op.frequency_hz.is_finite()) {
        cx.err("operator.frequency_hz", "must be non-negative");
    }
    if !(op.step_time_s >= 0.0 && op.step_time_s.is_finite()) {
        cx.err("operator.step_time_s", "must be non-negative");
    }
    match (op.kind, &op.trace) {
        (OperatorKind::Trace, None) => {
            cx.err("operator.trace", "is required when kind = \"trace\"")
        }
        (OperatorKind::Live, _) if sc.mode == Mode::Virtual => {
            cx.err("operator.kind", "\"live\" needs mode = \"realtime\"")
        }
        _ => {}
    }
    if sc.analysis.lag_window_us == 0 {
        cx.err("analysis.lag_window_us", "must be positive");
    }
    cx.errors
}

#[derive(Default)]
struct Cx {
    errors: Vec<ConfigError>,
    warnings: Vec<ConfigError>,
}

impl Cx {
    fn err(&mut self, path: &str, msg: &str) {
        self.errors.push(ConfigError {
            path: path.to_string(),
            message: msg.to_string(),
        });
    }

    fn warn(&mut self, path: &str, msg: &str) {
        self.warnings.push(ConfigError {
            path: path.to_string(),
            message: msg.to_string(),
        });
    }
}

/// A table plus its dotted path.
struct Obj<'a> {
    table: &'a Table,
    prefix: String,
}

impl<'a> Obj<'a> {
    fn new(table: &'a Table, prefix: &str) -> Self {
        Self {
            table,
            prefix: prefix.to_string(),
        }
    }

    fn path(&self, key: &str) -> String {
        if self.prefix.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.prefix)
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.table.get(key)
    }

    fn table(&self, cx: &mut Cx, key: &str) -> Option<Obj<'a>> {
        match self.get(key)? {
            Value::Table(t) => Some(Obj::new(t, &self.path(key))),
            _ => {
                cx.err(&self.path(key), "must be a table");
                None
            }
        }
    }

    fn u64(&self, cx: &mut Cx, key: &str, default: u64) -> u64 {
        match self.get(key) {
            None => default,
            Some(Value::Integer(i)) if *i >= 0 => *i as u64,
            Some(Value::Integer(i)) => {
                cx.err(&self.path(key), &format!("must be non-negative, got {i}"));
                default
            }
            Some(other) => {
                cx.err(
                    &self.path(key),
                    &format!("must be an integer, got {}", other.type_str()),
                );
                default
            }
        }
    }

    fn f64(&self, cx: &mut Cx, key: &str, default: f64) -> f64 {
        match self.get(key) {
            None => default,
            Some(Value::Float(f)) => *f,
            Some(Value::Integer(i)) => *i as f64,
            Some(other) => {
                cx.err(
                    &self.path(key),
                    &format!("must be a number, got {}", other.type_str()),
                );
                default
            }
        }
    }

    fn bool(&self, cx: &mut Cx, key: &str, default: bool) -> bool {
        match self.get(key) {
            None => default,
            Some(Value::Boolean(b)) => *b,
            Some(other) => {
                cx.err(
                    &self.path(key),
                    &format!("must be a boolean, got {}", other.type_str()),
                );
                default
            }
        }
    }

    fn str(&self, cx: &mut Cx, key: &str) -> Option<String> {
        match self.get(key)? {
            Value::String(s) => Some(s.clone()),
            other => {
                cx.err(
                    &self.path(key),
                    &format!("must be a string, got {}", other.type_str()),
                );
                None
            }
        }
    }

    fn warn_unknown(&self, cx: &mut Cx, known: &[&str]) {
        for k in self.table.keys() {
            if !known.contains(&k.as_str()) {
                cx.warn(&self.path(k), "unknown key ignored");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "name = \"minimal\"\nduration_s = 5\n";

    #[test]
    fn minimal_scenario_gets_defaults() {
        let v = validate(MINIMAL).unwrap();
        let s = v.scenario;
        assert!(v.warnings.is_empty());
        assert_eq!(s.name, "minimal");
        assert_eq!(s.duration_us(), 5_000_000);
        assert_eq!(s.mode, Mode::Virtual);
        assert_eq!(s.vehicle, VehicleParams::default());
        assert_eq!(s.vehicle.tick_period_us, 10_000);
        assert_eq!(s.vehicle.telemetry_period_us, 50_000);
        assert_eq!(s.operator.rate_hz, 100.0);
        assert_eq!(s.outputs, PathBuf::from("out/minimal"));
        assert_eq!(
            s.uplink,
            ChannelSpec {
                seed: 0,
                ..ChannelSpec::default()
            }
        );
    }

    #[test]
    fn zero_duration_names_the_field() {
        let errs = validate("name = \"x\"\nduration_s = 0\n").unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].path, "duration_s");
    }

    #[test]
    fn loss_prob_out_of_range() {
        let errs = validate(&format!("{MINIMAL}[uplink]\nloss_prob = 1.5\n")).unwrap_err();
        assert_eq!(errs[0].path, "uplink.loss_prob");
    }

    #[test]
    fn all_errors_reported_together() {
        let text = r#"
name = 3
duration_s = "long"
[vehicle]
tick_period_us = -1
[downlink]
ordered = "yes"
[operator]
kind = "joystick"
"#;
        let errs = validate(text).unwrap_err();
        let paths: Vec<_> = errs.iter().map(|e| e.path.as_str()).collect();
        assert_eq!(
            paths,
            vec![
                "name",
                "duration_s",
                "vehicle.tick_period_us",
                "downlink.ordered",
                "operator.kind"
            ]
        );
    }

    #[test]
    fn unknown_keys_warn() {
        let v = validate(&format!(
            "{MINIMAL}colour = \"red\"\n[uplink]\nmtu = 1500\n"
        ))
        .unwrap();
        let paths: Vec<_> = v.warnings.iter().map(|w| w.path.as_str()).collect();
        assert_eq!(paths, vec!["colour", "uplink.mtu"]);
    }

    #[test]
    fn seed_override_follows_into_channels() {
        let text = format!("{MINIMAL}seed = 4\n[downlink]\nseed = 99\n");
        let s = validate_with_seed(&text, Some(7)).unwrap().scenario;
        assert_eq!(s.seed, 7);
        assert_eq!(s.uplink.seed, 7);
        assert_eq!(s.video.net_channel.seed, 7);
        assert_eq!(s.downlink.seed, 99);
    }

    #[test]
    fn live_operator_needs_realtime() {
        let errs = validate(&format!("{MINIMAL}[operator]\nkind = \"live\"\n")).unwrap_err();
        assert_eq!(errs[0].path, "operator.kind");
        assert!(validate(&format!(
            "{MINIMAL}mode = \"realtime\"\n[operator]\nkind = \"live\"\n"
        ))
        .is_ok());
    }

    #[test]
    fn trace_operator_needs_path() {
        let errs = validate(&format!("{MINIMAL}[operator]\nkind = \"trace\"\n")).unwrap_err();
        assert_eq!(errs[0].path, "operator.trace");
    }

    #[test]
    fn toml_rendering_round_trips() {
        let mut s = validate(MINIMAL).unwrap().scenario;
        s.seed = 12;
        s.uplink.seed = 12;
        s.downlink.seed = 12;
        s.video.net_channel.seed = 12;
        s.vehicle.discretization = Discretization::Exact;
        let back = validate(&s.to_toml()).unwrap();
        assert!(back.warnings.is_empty(), "{:?}", back.warnings);
        assert_eq!(back.scenario, s);
    }
}
