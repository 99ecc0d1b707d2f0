//! Discrete-event execution of a scenario on the virtual clock.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use super::scenario::Scenario;
use super::RunError;
use crate::clock::{Clock, VirtualClock};
use crate::messages::{self, Telemetry, TeleopCommand};
use crate::metrics::{RttSample, RttTracker};
use crate::netem::{ChannelStats, EmulatedChannel};
use crate::vehicle::{AgentCounters, CommandReceipt, Controls, VehicleAgent};
use crate::videopath::{self, VideoFrameRecord, VideoPipeline};

/// RNG stream ids; one per emulated link.
pub const UPLINK_STREAM: u64 = 1;
pub const DOWNLINK_STREAM: u64 = 2;
pub const VIDEO_STREAM: u64 = 3;

/// Min-queue of timed events. Same-time events pop by priority, then in
/// insertion order.
#[derive(Debug)]
pub struct EventQueue<E> {
    heap: BinaryHeap<Reverse<(u64, u8, u64, usize)>>,
    slots: Vec<Option<E>>,
    inserted: u64,
}

impl<E> Default for EventQueue<E> {
    fn default() -> Self {
        Self {
            heap: BinaryHeap::new(),
            slots: Vec::new(),
            inserted: 0,
        }
    }
}

impl<E> EventQueue<E> {
    pub fn push(&mut self, t_us: u64, priority: u8, event: E) {
        self.slots.push(Some(event));
        self.heap.push(Reverse((
            t_us,
            priority,
            self.inserted,
            self.slots.len() - 1,
        )));
        self.inserted += 1;
    }

    pub fn pop(&mut self) -> Option<(u64, E)> {
        let Reverse((t, _, _, slot)) = self.heap.pop()?;
        let e = self.slots[slot].take().expect("each slot pops once");
        Some((t, e))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    DownlinkDue,
    OperatorSend(usize),
    VehicleTick,
}

impl Event {
    fn priority(&self) -> u8 {
        match self {
            Event::DownlinkDue => 0,
            Event::OperatorSend(_) => 1,
            Event::VehicleTick => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRow {
    pub recv_us: u64,
    pub telemetry: Telemetry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t_us: u64,
    pub x_m: f64,
    pub y_m: f64,
    pub heading_rad: f64,
    pub speed_mps: f64,
    pub steering_norm: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkStats {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
}

impl LinkStats {
    fn from_channel(stats: ChannelStats, in_flight: usize) -> Self {
        Self {
            sent: stats.sent,
            delivered: stats.delivered,
            dropped: stats.dropped,
            in_flight: in_flight as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Links {
    pub uplink: LinkStats,
    pub downlink: LinkStats,
    pub video: LinkStats,
}

/// Everything a run records.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunData {
    pub commands: Vec<TeleopCommand>,
    pub telemetry: Vec<TelemetryRow>,
    pub rtt: Vec<RttSample>,
    pub receipts: Vec<CommandReceipt>,
    pub frames: Vec<VideoFrameRecord>,
    pub trajectory: Vec<TrajectoryRow>,
    pub links: Links,
    pub counters: AgentCounters,
}

/// Runs the control loop for a precomputed operator schedule.
///
/// Commands are sent at their scheduled times into the uplink; the vehicle
/// ticks every `tick_period_us` from 0 through `duration + drain`; telemetry
/// is received when the downlink delivers it. Telemetry still in flight when
/// the run ends is counted but not received.
pub fn simulate_schedule(sc: &Scenario, schedule: &[(u64, Controls)]) -> Result<RunData, RunError> {
    let end_us = sc.duration_us() + sc.drain_us();
    let mut uplink = EmulatedChannel::new(sc.uplink, UPLINK_STREAM)?;
    let mut downlink = EmulatedChannel::new(sc.downlink, DOWNLINK_STREAM)?;
    let mut agent = VehicleAgent::new(sc.vehicle, 0)?;
    let mut clock = VirtualClock::new();
    let mut queue = EventQueue::default();
    let mut data = RunData::default();
    let mut rtt = RttTracker::new();

    for (i, (t, _)) in schedule.iter().enumerate() {
        if *t <= end_us {
            queue.push(
                *t,
                Event::OperatorSend(i).priority(),
                Event::OperatorSend(i),
            );
        }
    }
    let tick = sc.vehicle.tick_period_us;
    let mut t = 0;
    while t <= end_us {
        queue.push(t, Event::VehicleTick.priority(), Event::VehicleTick);
        t += tick;
    }

    while let Some((now, event)) = queue.pop() {
        clock.advance_to(now);
        match event {
            Event::OperatorSend(i) => {
                let c = schedule[i].1;
                let cmd = TeleopCommand {
                    seq: data.commands.len() as u64 + 1,
                    ts_us: clock.now_us(),
                    steering: c.steering,
                    throttle: c.throttle,
                    brake: c.brake,
                };
                uplink.send(messages::encode_command(&cmd)?, now)?;
                data.commands.push(cmd);
            }
            Event::VehicleTick => {
                let out = agent.tick(now, uplink.poll(now));
                data.receipts.extend(out.receipts);
                for tm in out.telemetry {
                    let d = downlink.send(messages::encode_telemetry(&tm)?, now)?;
                    if !d.dropped && d.delivery_time_us <= end_us {
                        queue.push(
                            d.delivery_time_us,
                            Event::DownlinkDue.priority(),
                            Event::DownlinkDue,
                        );
                    }
                }
                let s = agent.state();
                data.trajectory.push(TrajectoryRow {
                    t_us: now,
                    x_m: s.x_m,
                    y_m: s.y_m,
                    heading_rad: s.heading_rad,
                    speed_mps: s.speed_mps,
                    steering_norm: s.steering_norm,
                });
            }
            Event::DownlinkDue => {
                for d in downlink.poll(now) {
                    let tm = messages::decode_telemetry(&d.payload)?;
                    rtt.observe(&tm, now);
                    data.telemetry.push(TelemetryRow {
                        recv_us: now,
                        telemetry: tm,
                    });
                }
            }
        }
    }

    data.rtt = rtt.into_samples();
    data.counters = agent.counters();
    data.links.uplink = LinkStats::from_channel(uplink.stats(), uplink.in_flight());
    data.links.downlink = LinkStats::from_channel(downlink.stats(), downlink.in_flight());

    let frames = (sc.duration_s * sc.video.fps as f64).floor() as u64;
    let mut video = VideoPipeline::new(sc.video, VIDEO_STREAM)?;
    for e in videopath::uniform_events(frames, sc.video.fps, sc.seed) {
        video.push_event(e)?;
    }
    data.frames = video.poll(u64::MAX);
    data.links.video =
        LinkStats::from_channel(video.channel().stats(), video.channel().in_flight());
    Ok(data)
}
