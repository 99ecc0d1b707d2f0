//! Camera-to-display video path as a per-frame delay ledger.
//!
//! An event in the scene is picked up by the next capture tick, then pays
//! capture overhead, encode time, the emulated network leg, decode time and
//! finally waits for the next display refresh. Each stage lands in a
//! [`VideoFrameRecord`], and the G2G latency is exactly the sum of the stages.
//!
//! [`clock_method_reading`] models the running-clock measurement: a clock
//! monitor that only updates at its own refresh, photographed together with
//! the operator screen by a camera that samples at its own rate.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netem::{ChannelSpec, EmulatedChannel, NetemError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VideoError {
    #[error("invalid video spec: {0}")]
    InvalidSpec(String),
    #[error("events must be sorted: {0} after {1}")]
    UnsortedEvents(u64, u64),
    #[error("frame ledger is inconsistent at stage `{0}`")]
    InconsistentLedger(&'static str),
    #[error(transparent)]
    Channel(#[from] NetemError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoPathSpec {
    pub fps: u32,
    pub capture_extra_us: u64,
    pub encode_us: u64,
    pub net_channel: ChannelSpec,
    pub frame_bytes: usize,
    pub decode_us: u64,
    pub display_hz: u32,
}

impl Default for VideoPathSpec {
    /// Illustrative decomposition: 30 fps capture, 60 ms encode, an 80 ms
    /// (sigma 25 ms, floor 40 ms) ordered network leg, 20 ms decode and a
    /// 60 Hz display. `capture_extra_us` absorbs the remaining camera and
    /// preprocessing overhead.
    fn default() -> Self {
        Self {
            fps: 30,
            capture_extra_us: 8_300,
            encode_us: 60_000,
            net_channel: ChannelSpec {
                base_delay_us: 80_000,
                jitter_sigma_us: 25_000,
                min_delay_us: 40_000,
                loss_prob: 0.0,
                bandwidth_bps: 0,
                ordered: true,
                seed: 0,
            },
            frame_bytes: 25_000,
            decode_us: 20_000,
            display_hz: 60,
        }
    }
}

impl VideoPathSpec {
    pub fn validate(&self) -> Result<(), VideoError> {
        if self.fps == 0 {
            return Err(VideoError::InvalidSpec("fps must be positive".into()));
        }
        if self.display_hz == 0 {
            return Err(VideoError::InvalidSpec(
                "display_hz must be positive".into(),
            ));
        }
        self.net_channel.validate()?;
        Ok(())
    }
}

/// Tick `k` of a cadence at `hz`, rounded up to whole microseconds.
pub fn cadence_tick(k: u64, hz: u32) -> u64 {
    (k * 1_000_000).div_ceil(hz as u64)
}

/// First tick index whose time is `>= t_us`, with that time.
pub fn next_cadence_tick(t_us: u64, hz: u32) -> (u64, u64) {
    let k = t_us * hz as u64 / 1_000_000;
    let t = cadence_tick(k, hz);
    if t >= t_us {
        (k, t)
    } else {
        (k + 1, cadence_tick(k + 1, hz))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoFrameRecord {
    pub frame_id: u64,
    pub event_us: u64,
    pub capture_us: u64,
    pub encode_done_us: u64,
    pub arrive_us: u64,
    pub decode_done_us: u64,
    pub display_us: u64,
    pub g2g_us: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageDelays {
    pub capture_wait_us: u64,
    pub encode_us: u64,
    pub network_us: u64,
    pub decode_us: u64,
    pub display_wait_us: u64,
}

impl StageDelays {
    pub fn total_us(&self) -> u64 {
        self.capture_wait_us
            + self.encode_us
            + self.network_us
            + self.decode_us
            + self.display_wait_us
    }
}

impl VideoFrameRecord {
    /// Per-stage waits; fails if any stage runs backwards.
    pub fn stages(&self) -> Result<StageDelays, VideoError> {
        let diff = |later: u64, earlier: u64, stage| {
            later
                .checked_sub(earlier)
                .ok_or(VideoError::InconsistentLedger(stage))
        };
        Ok(StageDelays {
            capture_wait_us: diff(self.capture_us, self.event_us, "capture")?,
            encode_us: diff(self.encode_done_us, self.capture_us, "encode")?,
            network_us: diff(self.arrive_us, self.encode_done_us, "network")?,
            decode_us: diff(self.decode_done_us, self.arrive_us, "decode")?,
            display_wait_us: diff(self.display_us, self.decode_done_us, "display")?,
        })
    }
}

/// G2G latency of a frame: display time minus scene event time.
pub fn g2g_sample(record: &VideoFrameRecord) -> Result<u64, VideoError> {
    let total = record.stages()?.total_us();
    if total != record.g2g_us {
        return Err(VideoError::InconsistentLedger("g2g"));
    }
    Ok(total)
}

#[derive(Debug, Clone)]
struct InFlight {
    events: Vec<u64>,
    capture_us: u64,
    encode_done_us: u64,
}

/// Incremental video path. Events go in with [`push_event`](Self::push_event)
/// and completed ledgers come out of [`poll`](Self::poll).
#[derive(Debug)]
pub struct VideoPipeline {
    spec: VideoPathSpec,
    channel: EmulatedChannel,
    in_flight: BTreeMap<u64, InFlight>,
    last_event_us: Option<u64>,
    last_frame: Option<u64>,
    last_display_us: Option<u64>,
    frames_sent: u64,
    frames_lost: u64,
}

impl VideoPipeline {
    pub fn new(spec: VideoPathSpec, channel_id: u64) -> Result<Self, VideoError> {
        spec.validate()?;
        let channel = EmulatedChannel::new(spec.net_channel, channel_id)?;
        Self::with_channel(spec, channel)
    }

    pub fn with_channel(spec: VideoPathSpec, channel: EmulatedChannel) -> Result<Self, VideoError> {
        spec.validate()?;
        Ok(Self {
            spec,
            channel,
            in_flight: BTreeMap::new(),
            last_event_us: None,
            last_frame: None,
            last_display_us: None,
            frames_sent: 0,
            frames_lost: 0,
        })
    }

    pub fn spec(&self) -> &VideoPathSpec {
        &self.spec
    }

    pub fn channel(&self) -> &EmulatedChannel {
        &self.channel
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent
    }

    pub fn frames_lost(&self) -> u64 {
        self.frames_lost
    }

    /// Registers a scene event. Events sharing a capture tick share a frame.
    pub fn push_event(&mut self, event_us: u64) -> Result<(), VideoError> {
        if let Some(last) = self.last_event_us {
            if event_us < last {
                return Err(VideoError::UnsortedEvents(event_us, last));
            }
        }
        self.last_event_us = Some(event_us);

        let (frame_id, tick_us) = next_cadence_tick(event_us, self.spec.fps);
        if self.last_frame == Some(frame_id) {
            if let Some(f) = self.in_flight.get_mut(&frame_id) {
                f.events.push(event_us);
                return Ok(());
            }
            // frame already left the pipeline; the late event rides the next one
        }
        let (frame_id, tick_us) = match self.last_frame {
            Some(last) if frame_id <= last => (last + 1, cadence_tick(last + 1, self.spec.fps)),
            _ => (frame_id, tick_us),
        };
        let capture_us = tick_us + self.spec.capture_extra_us;
        let encode_done_us = capture_us + self.spec.encode_us;

        let mut payload = frame_id.to_be_bytes().to_vec();
        payload.resize(self.spec.frame_bytes.max(payload.len()), 0);
        let scheduled = self.channel.send(payload, encode_done_us)?;
        self.frames_sent += 1;
        self.last_frame = Some(frame_id);
        if scheduled.dropped {
            self.frames_lost += 1;
            return Ok(());
        }
        self.in_flight.insert(
            frame_id,
            InFlight {
                events: vec![event_us],
                capture_us,
                encode_done_us,
            },
        );
        Ok(())
    }

    /// Ledgers for every frame that arrived by `now_us`, one per event.
    /// Frames lost on the network are never reported.
    pub fn poll(&mut self, now_us: u64) -> Vec<VideoFrameRecord> {
        let mut out = Vec::new();
        for d in self.channel.poll(now_us) {
            let mut id = [0u8; 8];
            id.copy_from_slice(&d.payload[..8]);
            let frame_id = u64::from_be_bytes(id);
            let Some(frame) = self.in_flight.remove(&frame_id) else {
                continue;
            };
            let arrive_us = d.delivery_time_us;
            let decode_done_us = arrive_us + self.spec.decode_us;
            // one new frame per refresh
            let earliest = match self.last_display_us {
                Some(prev) => decode_done_us.max(prev + 1),
                None => decode_done_us,
            };
            let (_, display_us) = next_cadence_tick(earliest, self.spec.display_hz);
            self.last_display_us = Some(display_us);
            for event_us in frame.events {
                out.push(VideoFrameRecord {
                    frame_id,
                    event_us,
                    capture_us: frame.capture_us,
                    encode_done_us: frame.encode_done_us,
                    arrive_us,
                    decode_done_us,
                    display_us,
                    g2g_us: display_us - event_us,
                });
            }
        }
        out
    }
}

/// Runs a whole batch of sorted events through a fresh pipeline.
pub fn pipeline_run(
    spec: &VideoPathSpec,
    event_times_us: &[u64],
    channel: EmulatedChannel,
) -> Result<Vec<VideoFrameRecord>, VideoError> {
    let mut p = VideoPipeline::with_channel(*spec, channel)?;
    for &e in event_times_us {
        p.push_event(e)?;
    }
    Ok(p.poll(u64::MAX))
}

/// One scene event uniformly placed inside each of `frames` capture periods.
pub fn uniform_events(frames: u64, fps: u32, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..frames)
        .map(|k| {
            let lo = cadence_tick(k, fps);
            let hi = cadence_tick(k + 1, fps);
            rng.gen_range(lo..hi)
        })
        .collect()
}

/// Refresh or sampling cadence of a device.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cadence {
    Hz(u32),
    /// Updates continuously; no quantization.
    Continuous,
}

/// Worst-case error of [`clock_method_reading`] for a given clock cadence.
pub fn clock_method_bound_us(clock: Cadence) -> f64 {
    match clock {
        Cadence::Hz(hz) => 1e6 / hz as f64,
        Cadence::Continuous => 0.0,
    }
}

/// Reading obtained by photographing a running-clock monitor next to the
/// operator screen that shows the same clock `true_g2g_us` late.
///
/// The clock monitor shows its most recent update (updates every
/// `1/clock` from `phase_clock_us`). The recording camera samples every
/// `1/camera` from `phase_camera_us`; the frame used is the first sample at
/// or after `true_g2g_us`. The reading is the difference of the two displayed
/// clock values in that frame, so its error is strictly below one clock
/// period. Arithmetic is exact for integer inputs.
pub fn clock_method_reading(
    true_g2g_us: u64,
    clock: Cadence,
    camera: Cadence,
    phase_clock_us: u64,
    phase_camera_us: u64,
) -> f64 {
    let clock_hz = match clock {
        Cadence::Continuous => return true_g2g_us as f64,
        Cadence::Hz(hz) => hz as i128,
    };
    let g = true_g2g_us as i128;
    // sample instant s = s_num / den microseconds
    let (s_num, den) = match camera {
        Cadence::Continuous => (g, 1),
        Cadence::Hz(hz) => {
            let hz = hz as i128;
            let pc = phase_camera_us as i128;
            let k = ceil_div((g - pc) * hz, 1_000_000);
            (pc * hz + k * 1_000_000, hz)
        }
    };
    let pk = phase_clock_us as i128;
    // index of the last clock update at or before t = t_num / den
    let update_index = |t_num: i128| ((t_num - pk * den) * clock_hz).div_euclid(1_000_000 * den);
    let shown_now = update_index(s_num);
    let shown_late = update_index(s_num - g * den);
    (shown_now - shown_late) as f64 * 1e6 / clock_hz as f64
}

fn ceil_div(a: i128, b: i128) -> i128 {
    -((-a).div_euclid(b))
}
