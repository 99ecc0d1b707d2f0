//! Bridge actor and WebSocket plumbing.

use std::collections::HashMap;
use std::time::Duration;

use futures_util::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{broadcast, mpsc, watch};
use tokio::time::{interval, sleep_until, MissedTickBehavior};
use tokio_tungstenite::tungstenite::Message as Ws;

use teleop_core::clock::{Clock, WallClock};
use teleop_core::messages::{self, FrameMeta, Message, SummarySnapshot, TeleopCommand};
use teleop_core::metrics::{summarize, RttSample};
use teleop_core::netem::EmulatedChannel;
use teleop_core::runner::sim::{LinkStats, TelemetryRow, DOWNLINK_STREAM};
use teleop_core::runner::Scenario;

use crate::actors::Timed;
use crate::{BridgeError, BridgeStats, VehicleStatus};

/// Rolling summaries go out this often.
const SUMMARY_PERIOD: Duration = Duration::from_millis(500);

/// Input to the bridge from client connections or a local operator.
#[derive(Debug, Clone)]
pub enum BridgeEvent {
    Connected,
    Disconnected,
    Text { text: String, at_us: u64 },
}

pub(crate) struct BridgeLog {
    pub commands: Vec<TeleopCommand>,
    pub telemetry: Vec<TelemetryRow>,
    pub rtt: Vec<RttSample>,
    pub downlink: LinkStats,
}

pub(crate) struct Inputs {
    pub events: mpsc::Receiver<BridgeEvent>,
    pub telemetry: mpsc::Receiver<Timed>,
    pub frames: mpsc::Receiver<FrameMeta>,
    pub vehicle: watch::Receiver<VehicleStatus>,
}

pub(crate) struct BridgeActor {
    clock: WallClock,
    inputs: Inputs,
    downlink: EmulatedChannel,
    to_vehicle: mpsc::Sender<Timed>,
    outbound: broadcast::Sender<String>,
    stats_tx: watch::Sender<BridgeStats>,
    shutdown: watch::Receiver<bool>,
    stats: BridgeStats,
    /// Bridge receive time of every forwarded command, by seq.
    received: HashMap<u64, u64>,
    rtt_samples: Vec<u64>,
    g2g_samples: Vec<u64>,
    log: BridgeLog,
}

impl BridgeActor {
    pub fn new(
        sc: &Scenario,
        clock: WallClock,
        inputs: Inputs,
        to_vehicle: mpsc::Sender<Timed>,
        stats_tx: watch::Sender<BridgeStats>,
        shutdown: watch::Receiver<bool>,
    ) -> Result<Self, BridgeError> {
        let (outbound, _) = broadcast::channel(1024);
        Ok(Self {
            clock,
            inputs,
            downlink: EmulatedChannel::new(sc.downlink, DOWNLINK_STREAM)?,
            to_vehicle,
            outbound,
            stats_tx,
            shutdown,
            stats: BridgeStats::default(),
            received: HashMap::new(),
            rtt_samples: Vec::new(),
            g2g_samples: Vec::new(),
            log: BridgeLog {
                commands: Vec::new(),
                telemetry: Vec::new(),
                rtt: Vec::new(),
                downlink: LinkStats::default(),
            },
        })
    }

    pub fn outbound(&self) -> broadcast::Sender<String> {
        self.outbound.clone()
    }

    pub async fn run(mut self) -> Result<BridgeLog, BridgeError> {
        let mut summaries = interval(SUMMARY_PERIOD);
        summaries.set_missed_tick_behavior(MissedTickBehavior::Delay);
        loop {
            let due = self.downlink.next_delivery_us();
            let due_at = self.clock.instant_at(due.unwrap_or(u64::MAX / 4));
            tokio::select! {
                biased;
                _ = self.shutdown.changed() => break,
                _ = sleep_until(due_at.into()), if due.is_some() => self.deliver_telemetry(),
                Some((bytes, at)) = self.inputs.telemetry.recv() => {
                    self.downlink.send(bytes, at)?;
                }
                Some(ev) = self.inputs.events.recv() => self.on_event(ev).await,
                Some(f) = self.inputs.frames.recv() => self.on_frame(f),
                _ = summaries.tick() => self.publish_summary(),
            }
        }
        let st = self.downlink.stats();
        self.log.downlink = LinkStats {
            sent: st.sent,
            delivered: st.delivered,
            dropped: st.dropped,
            in_flight: self.downlink.in_flight() as u64,
        };
        self.publish_stats();
        Ok(self.log)
    }

    async fn on_event(&mut self, ev: BridgeEvent) {
        match ev {
            BridgeEvent::Connected => self.stats.clients += 1,
            BridgeEvent::Disconnected => self.stats.clients = self.stats.clients.saturating_sub(1),
            BridgeEvent::Text { text, at_us } => match messages::decode(text.as_bytes()) {
                Ok(Message::Command(cmd)) => {
                    self.stats.commands_accepted += 1;
                    self.received.entry(cmd.seq).or_insert(at_us);
                    // the bridge clock is the common timeline for analysis
                    self.log.commands.push(TeleopCommand {
                        ts_us: at_us,
                        ..cmd
                    });
                    let _ = self.to_vehicle.send((text.into_bytes(), at_us)).await;
                }
                _ => self.stats.commands_rejected += 1,
            },
        }
        self.publish_stats();
    }

    fn deliver_telemetry(&mut self) {
        let now = self.clock.now_us();
        for d in self.downlink.poll(now) {
            let Ok(tm) = messages::decode_telemetry(&d.payload) else {
                continue;
            };
            if tm.has_echo() {
                if let Some(sent) = self.received.remove(&tm.echo_seq) {
                    let rtt = now.saturating_sub(sent);
                    self.rtt_samples.push(rtt);
                    self.log.rtt.push(RttSample {
                        seq: tm.echo_seq,
                        send_us: sent,
                        recv_us: now,
                        rtt_us: rtt,
                    });
                }
            }
            self.log.telemetry.push(TelemetryRow {
                recv_us: now,
                telemetry: tm,
            });
            self.stats.telemetry_delivered += 1;
            if let Ok(text) = String::from_utf8(d.payload) {
                let _ = self.outbound.send(text);
            }
        }
        self.publish_stats();
    }

    fn on_frame(&mut self, f: FrameMeta) {
        self.stats.frames += 1;
        self.g2g_samples.push(f.g2g_us);
        if let Ok(bytes) = messages::encode(&Message::FrameMeta(f)) {
            let _ = self
                .outbound
                .send(String::from_utf8(bytes).expect("envelopes are UTF-8"));
        }
    }

    fn publish_summary(&mut self) {
        self.stats.rtt = summarize(&self.rtt_samples).ok();
        self.stats.g2g = summarize(&self.g2g_samples).ok();
        let snap = SummarySnapshot {
            ts_us: self.clock.now_us(),
            rtt: self.stats.rtt,
            g2g: self.stats.g2g,
        };
        if let Ok(bytes) = messages::encode(&Message::Summary(snap)) {
            let _ = self
                .outbound
                .send(String::from_utf8(bytes).expect("envelopes are UTF-8"));
        }
        self.publish_stats();
    }

    fn publish_stats(&mut self) {
        let v = *self.inputs.vehicle.borrow();
        self.stats.vehicle = v.counters;
        self.stats.failsafe = v.failsafe;
        self.stats_tx.send_replace(self.stats.clone());
    }
}

pub(crate) async fn accept_loop(
    listener: TcpListener,
    clock: WallClock,
    events: mpsc::Sender<BridgeEvent>,
    outbound: broadcast::Sender<String>,
    mut shutdown: watch::Receiver<bool>,
) {
    loop {
        tokio::select! {
            _ = shutdown.changed() => return,
            accepted = listener.accept() => {
                if let Ok((stream, _)) = accepted {
                    tokio::spawn(client(stream, clock, events.clone(), outbound.subscribe(), shutdown.clone()));
                }
            }
        }
    }
}

async fn client(
    stream: TcpStream,
    clock: WallClock,
    events: mpsc::Sender<BridgeEvent>,
    mut outbound: broadcast::Receiver<String>,
    mut shutdown: watch::Receiver<bool>,
) {
    let Ok(ws) = tokio_tungstenite::accept_async(stream).await else {
        return;
    };
    let (mut sink, mut source) = ws.split();
    let _ = events.send(BridgeEvent::Connected).await;
    loop {
        tokio::select! {
            _ = shutdown.changed() => {
                let _ = sink.send(Ws::Close(None)).await;
                break;
            }
            out = outbound.recv() => match out {
                Ok(text) => {
                    if sink.send(Ws::text(text)).await.is_err() {
                        break;
                    }
                }
                // a slow client skips what it missed
                Err(broadcast::error::RecvError::Lagged(_)) => {}
                Err(broadcast::error::RecvError::Closed) => break,
            },
            inbound = source.next() => {
                let at_us = clock.now_us();
                let text = match inbound {
                    Some(Ok(Ws::Text(t))) => t.as_str().to_owned(),
                    Some(Ok(Ws::Binary(b))) => String::from_utf8_lossy(&b).into_owned(),
                    Some(Ok(Ws::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => continue,
                };
                let _ = events.send(BridgeEvent::Text { text, at_us }).await;
            }
        }
    }
    let _ = events.send(BridgeEvent::Disconnected).await;
}
