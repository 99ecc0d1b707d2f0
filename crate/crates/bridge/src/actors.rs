//! Vehicle and video actors.

use std::collections::VecDeque;

use tokio::sync::{mpsc, watch};
use tokio::time::sleep_until;

use teleop_core::clock::WallClock;
use teleop_core::messages::{self, FrameMeta};
use teleop_core::netem::EmulatedChannel;
use teleop_core::runner::sim::{LinkStats, TrajectoryRow, UPLINK_STREAM, VIDEO_STREAM};
use teleop_core::runner::Scenario;
use teleop_core::vehicle::{AgentCounters, CommandReceipt, VehicleAgent};
use teleop_core::videopath::{self, cadence_tick, VideoFrameRecord, VideoPipeline};

use crate::{BridgeError, VehicleStatus};

/// Raw envelope bytes with their send time on the session clock.
pub(crate) type Timed = (Vec<u8>, u64);

pub(crate) struct VehicleLog {
    pub receipts: Vec<CommandReceipt>,
    pub trajectory: Vec<TrajectoryRow>,
    pub counters: AgentCounters,
    pub uplink: LinkStats,
}

pub(crate) struct VehicleActor {
    clock: WallClock,
    agent: VehicleAgent,
    uplink: EmulatedChannel,
    commands: mpsc::Receiver<Timed>,
    telemetry: mpsc::Sender<Timed>,
    status: watch::Sender<VehicleStatus>,
    shutdown: watch::Receiver<bool>,
}

impl VehicleActor {
    pub fn new(
        sc: &Scenario,
        clock: WallClock,
        commands: mpsc::Receiver<Timed>,
        telemetry: mpsc::Sender<Timed>,
        status: watch::Sender<VehicleStatus>,
        shutdown: watch::Receiver<bool>,
    ) -> Result<Self, BridgeError> {
        Ok(Self {
            clock,
            agent: VehicleAgent::new(sc.vehicle, 0)?,
            uplink: EmulatedChannel::new(sc.uplink, UPLINK_STREAM)?,
            commands,
            telemetry,
            status,
            shutdown,
        })
    }

    /// Ticks on the scheduled grid; late wake-ups still use the scheduled
    /// time so every step has the nominal `dt`.
    pub async fn run(mut self) -> Result<VehicleLog, BridgeError> {
        let tick = self.agent.params().tick_period_us;
        let mut log = VehicleLog {
            receipts: Vec::new(),
            trajectory: Vec::new(),
            counters: AgentCounters::default(),
            uplink: LinkStats::default(),
        };
        let mut t = 0u64;
        loop {
            tokio::select! {
                biased;
                _ = self.shutdown.changed() => break,
                Some((bytes, at)) = self.commands.recv() => {
                    self.uplink.send(bytes, at)?;
                }
                _ = sleep_until(self.clock.instant_at(t).into()) => {
                    let out = self.agent.tick(t, self.uplink.poll(t));
                    log.receipts.extend(out.receipts);
                    for tm in out.telemetry {
                        let bytes = messages::encode_telemetry(&tm).expect("agent telemetry is valid");
                        let _ = self.telemetry.send((bytes, t)).await;
                    }
                    let s = self.agent.state();
                    log.trajectory.push(TrajectoryRow {
                        t_us: t,
                        x_m: s.x_m,
                        y_m: s.y_m,
                        heading_rad: s.heading_rad,
                        speed_mps: s.speed_mps,
                        steering_norm: s.steering_norm,
                    });
                    let _ = self.status.send(VehicleStatus {
                        t_us: t,
                        counters: self.agent.counters(),
                        failsafe: out.failsafe,
                    });
                    t += tick;
                }
            }
        }
        log.counters = self.agent.counters();
        let st = self.uplink.stats();
        log.uplink = LinkStats {
            sent: st.sent,
            delivered: st.delivered,
            dropped: st.dropped,
            in_flight: self.uplink.in_flight() as u64,
        };
        Ok(log)
    }
}

pub(crate) struct VideoLog {
    pub frames: Vec<VideoFrameRecord>,
    pub link: LinkStats,
}

/// Feeds one scene event per capture period into the video path and
/// forwards each ledger when its frame reaches the display.
pub(crate) struct VideoActor {
    clock: WallClock,
    pipeline: VideoPipeline,
    events: VecDeque<u64>,
    display_hz: u32,
    frames: mpsc::Sender<FrameMeta>,
    shutdown: watch::Receiver<bool>,
}

impl VideoActor {
    pub fn new(
        sc: &Scenario,
        clock: WallClock,
        frames: mpsc::Sender<FrameMeta>,
        shutdown: watch::Receiver<bool>,
    ) -> Result<Self, BridgeError> {
        // enough events for the whole session plus drain; unused ones are dropped
        let horizon_s = sc.duration_s + sc.drain_s + 1.0;
        let count = (horizon_s * sc.video.fps as f64).ceil() as u64;
        Ok(Self {
            clock,
            pipeline: VideoPipeline::new(sc.video, VIDEO_STREAM)?,
            events: videopath::uniform_events(count, sc.video.fps, sc.seed).into(),
            display_hz: sc.video.display_hz,
            frames,
            shutdown,
        })
    }

    pub async fn run(mut self) -> Result<VideoLog, BridgeError> {
        let mut shown = Vec::new();
        let mut waiting: VecDeque<VideoFrameRecord> = VecDeque::new();
        let mut refresh = 0u64;
        loop {
            let next_refresh = cadence_tick(refresh, self.display_hz);
            let wake = self
                .events
                .front()
                .map_or(next_refresh, |&e| e.min(next_refresh));
            tokio::select! {
                biased;
                _ = self.shutdown.changed() => break,
                _ = sleep_until(self.clock.instant_at(wake).into()) => {}
            }
            while self.events.front().is_some_and(|&e| e <= wake) {
                let e = self.events.pop_front().expect("checked");
                self.pipeline.push_event(e)?;
            }
            if wake == next_refresh {
                refresh += 1;
                waiting.extend(self.pipeline.poll(wake));
                while waiting.front().is_some_and(|f| f.display_us <= wake) {
                    let f = waiting.pop_front().expect("checked");
                    let _ = self
                        .frames
                        .send(FrameMeta {
                            frame_id: f.frame_id,
                            event_us: f.event_us,
                            display_us: f.display_us,
                            g2g_us: f.g2g_us,
                        })
                        .await;
                    shown.push(f);
                }
            }
        }
        let ch = self.pipeline.channel();
        let st = ch.stats();
        Ok(VideoLog {
            frames: shown,
            link: LinkStats {
                sent: st.sent,
                delivered: st.delivered,
                dropped: st.dropped,
                in_flight: ch.in_flight() as u64,
            },
        })
    }
}
