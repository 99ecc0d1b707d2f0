//! Live sessions on the wall clock.
//!
//! Three actors run per session and talk only through channels:
//!
//! * the vehicle actor owns the uplink channel and the [`VehicleAgent`] and
//!   ticks on the vehicle period;
//! * the video actor owns the video pipeline and emits frame ledgers at
//!   their display time;
//! * the bridge actor owns the downlink channel, serves WebSocket clients
//!   and aggregates metrics.
//!
//! Every WebSocket text frame is one wire envelope as produced by
//! [`teleop_core::messages::encode`]. Inbound frames must be `command`
//! envelopes; anything else is counted and dropped.
//!
//! [`VehicleAgent`]: teleop_core::vehicle::VehicleAgent

mod actors;
mod bridge;

use std::net::SocketAddr;
use std::path::Path;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::{mpsc, watch};
use tokio::task::JoinHandle;

use teleop_core::clock::{Clock, WallClock};
use teleop_core::messages::{self, TeleopCommand};
use teleop_core::metrics::MetricSummary;
use teleop_core::netem::NetemError;
use teleop_core::runner::{Mode, OperatorKind, RunData, Scenario, ScriptedOperator};
use teleop_core::vehicle::{AgentCounters, VehicleError};
use teleop_core::videopath::VideoError;

pub use bridge::BridgeEvent;

#[derive(Debug, Error)]
pub enum BridgeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario not runnable live: {0}")]
    Scenario(String),
    #[error(transparent)]
    Netem(#[from] NetemError),
    #[error(transparent)]
    Vehicle(#[from] VehicleError),
    #[error(transparent)]
    Video(#[from] VideoError),
    #[error("actor failed: {0}")]
    Actor(String),
}

/// Live counters published by the bridge actor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BridgeStats {
    pub clients: usize,
    pub commands_accepted: u64,
    /// Inbound frames that were malformed, not commands, or out of range.
    pub commands_rejected: u64,
    pub telemetry_delivered: u64,
    pub frames: u64,
    pub rtt: Option<MetricSummary>,
    pub g2g: Option<MetricSummary>,
    pub vehicle: AgentCounters,
    pub failsafe: bool,
}

/// What the vehicle actor reports between ticks.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VehicleStatus {
    pub t_us: u64,
    pub counters: AgentCounters,
    pub failsafe: bool,
}

/// A running live session.
pub struct Session {
    clock: WallClock,
    addr: Option<SocketAddr>,
    events: mpsc::Sender<BridgeEvent>,
    stats: watch::Receiver<BridgeStats>,
    shutdown: watch::Sender<bool>,
    bridge: JoinHandle<Result<bridge::BridgeLog, BridgeError>>,
    vehicle: JoinHandle<Result<actors::VehicleLog, BridgeError>>,
    video: JoinHandle<Result<actors::VideoLog, BridgeError>>,
    accept: Option<JoinHandle<()>>,
}

impl Session {
    /// Starts the actors. With `listen`, also accepts WebSocket clients
    /// there; port 0 picks a free port.
    pub async fn start(sc: &Scenario, listen: Option<SocketAddr>) -> Result<Self, BridgeError> {
        sc.check().map_err(|e| {
            BridgeError::Scenario(
                e.iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })?;
        if sc.mode != Mode::Realtime {
            return Err(BridgeError::Scenario("mode must be \"realtime\"".into()));
        }
        let listener = match listen {
            Some(addr) => Some(
                TcpListener::bind(addr)
                    .await
                    .map_err(|source| BridgeError::Bind { addr, source })?,
            ),
            None => None,
        };
        let addr = listener.as_ref().and_then(|l| l.local_addr().ok());

        let clock = WallClock::new();
        let (shutdown, shutdown_rx) = watch::channel(false);
        let (events_tx, events_rx) = mpsc::channel(4096);
        let (cmd_tx, cmd_rx) = mpsc::channel(4096);
        let (tel_tx, tel_rx) = mpsc::channel(4096);
        let (frame_tx, frame_rx) = mpsc::channel(4096);
        let (status_tx, status_rx) = watch::channel(VehicleStatus::default());
        let (stats_tx, stats_rx) = watch::channel(BridgeStats::default());

        let vehicle =
            actors::VehicleActor::new(sc, clock, cmd_rx, tel_tx, status_tx, shutdown_rx.clone())?;
        let video = actors::VideoActor::new(sc, clock, frame_tx, shutdown_rx.clone())?;
        let b = bridge::BridgeActor::new(
            sc,
            clock,
            bridge::Inputs {
                events: events_rx,
                telemetry: tel_rx,
                frames: frame_rx,
                vehicle: status_rx,
            },
            cmd_tx,
            stats_tx,
            shutdown_rx.clone(),
        )?;
        let outbound = b.outbound();

        let accept = listener.map(|l| {
            tokio::spawn(bridge::accept_loop(
                l,
                clock,
                events_tx.clone(),
                outbound,
                shutdown_rx,
            ))
        });
        Ok(Self {
            clock,
            addr,
            events: events_tx,
            stats: stats_rx,
            shutdown,
            bridge: tokio::spawn(b.run()),
            vehicle: tokio::spawn(vehicle.run()),
            video: tokio::spawn(video.run()),
            accept,
        })
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.addr
    }

    pub fn clock(&self) -> WallClock {
        self.clock
    }

    pub fn stats(&self) -> watch::Receiver<BridgeStats> {
        self.stats.clone()
    }

    /// Feeds an envelope as if a client had sent it now.
    pub async fn inject(&self, text: String) {
        let at_us = self.clock.now_us();
        let _ = self.events.send(BridgeEvent::Text { text, at_us }).await;
    }

    /// Stops every actor and collects what the session recorded.
    pub async fn finish(self) -> Result<RunData, BridgeError> {
        let _ = self.shutdown.send(true);
        let join = |e: tokio::task::JoinError| BridgeError::Actor(e.to_string());
        let b = self.bridge.await.map_err(join)??;
        let v = self.vehicle.await.map_err(join)??;
        let f = self.video.await.map_err(join)??;
        if let Some(a) = self.accept {
            a.abort();
        }
        let mut data = RunData {
            commands: b.commands,
            telemetry: b.telemetry,
            rtt: b.rtt,
            receipts: v.receipts,
            frames: f.frames,
            trajectory: v.trajectory,
            counters: v.counters,
            ..RunData::default()
        };
        data.links.uplink = v.uplink;
        data.links.downlink = b.downlink;
        data.links.video = f.link;
        Ok(data)
    }
}

/// Runs a realtime scenario with its scripted operator and no clients.
/// Takes `duration_s + drain_s` of wall time.
pub async fn run_headless(sc: &Scenario, base_dir: Option<&Path>) -> Result<RunData, BridgeError> {
    if sc.operator.kind == OperatorKind::Live {
        return Err(BridgeError::Scenario(
            "a live operator needs a cockpit; use serve".into(),
        ));
    }
    let op = ScriptedOperator::new(&sc.operator, base_dir)
        .map_err(|e| BridgeError::Scenario(e.to_string()))?;
    let session = Session::start(sc, None).await?;
    let clock = session.clock();
    for (i, (t, c)) in op.schedule(sc.duration_us()).into_iter().enumerate() {
        tokio::time::sleep_until(clock.instant_at(t).into()).await;
        let cmd = TeleopCommand {
            seq: i as u64 + 1,
            ts_us: clock.now_us(),
            steering: c.steering,
            throttle: c.throttle,
            brake: c.brake,
        };
        let text = String::from_utf8(
            messages::encode_command(&cmd).expect("scripted controls are in range"),
        )
        .expect("envelopes are UTF-8");
        session.inject(text).await;
    }
    tokio::time::sleep_until(clock.instant_at(sc.duration_us() + sc.drain_us()).into()).await;
    session.finish().await
}

/// Serves clients until `duration_s` has elapsed or `stop` resolves.
pub async fn serve(
    sc: &Scenario,
    listen: SocketAddr,
    stop: impl std::future::Future<Output = ()>,
    on_ready: impl FnOnce(SocketAddr),
) -> Result<RunData, BridgeError> {
    if sc.operator.kind != OperatorKind::Live {
        return Err(BridgeError::Scenario(
            "serve needs operator.kind = \"live\"".into(),
        ));
    }
    let session = Session::start(sc, Some(listen)).await?;
    on_ready(session.local_addr().expect("listening"));
    tokio::select! {
        _ = tokio::time::sleep(Duration::from_micros(sc.duration_us())) => {}
        _ = stop => {}
    }
    session.finish().await
}
