//! One-way impaired link emulation on a microsecond timeline.
//!
//! A channel assigns every record a delivery time when it is sent:
//!
//! ```text
//! delivery = now + max(min_delay, base_delay + jitter) + size_bytes * 8 / bandwidth
//! ```
//!
//! Ordered channels model a reliable stream: they never drop, and a record is
//! never delivered before the one sent ahead of it. Unordered (datagram)
//! channels drop each record independently with `loss_prob`.
//!
//! Randomness comes from a ChaCha8 generator keyed by `(seed, channel id)`,
//! so two channels built from the same seed draw from independent streams.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NetemError {
    #[error("channel is closed")]
    Closed,
    #[error("send time {now_us} is earlier than the previous send at {last_us}")]
    NonMonotone { now_us: u64, last_us: u64 },
    #[error("invalid channel spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub base_delay_us: u64,
    /// Standard deviation of the zero-mean Gaussian added to `base_delay_us`.
    pub jitter_sigma_us: u64,
    pub min_delay_us: u64,
    pub loss_prob: f64,
    /// Serialization rate in bits per second; 0 means infinite.
    pub bandwidth_bps: u64,
    pub ordered: bool,
    pub seed: u64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self {
            base_delay_us: 21_000,
            jitter_sigma_us: 3_000,
            min_delay_us: 0,
            loss_prob: 0.0,
            bandwidth_bps: 0,
            ordered: true,
            seed: 0,
        }
    }
}

impl ChannelSpec {
    /// Fixed delay, no jitter, no loss, infinite bandwidth.
    pub fn fixed(delay_us: u64, ordered: bool) -> Self {
        Self {
            base_delay_us: delay_us,
            jitter_sigma_us: 0,
            min_delay_us: 0,
            loss_prob: 0.0,
            bandwidth_bps: 0,
            ordered,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), NetemError> {
        if self.min_delay_us > self.base_delay_us {
            return Err(NetemError::InvalidSpec(format!(
                "min_delay_us {} exceeds base_delay_us {}",
                self.min_delay_us, self.base_delay_us
            )));
        }
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(NetemError::InvalidSpec(format!(
                "loss_prob {} outside [0, 1]",
                self.loss_prob
            )));
        }
        Ok(())
    }

    /// Serialization time of `size_bytes` at the configured rate, rounded up.
    pub fn serialization_us(&self, size_bytes: usize) -> u64 {
        if self.bandwidth_bps == 0 {
            return 0;
        }
        (size_bytes as u64 * 8 * 1_000_000).div_ceil(self.bandwidth_bps)
    }
}

/// Source of per-record delay and loss draws.
pub trait DelayLaw: Send {
    /// Raw one-way delay in microseconds before the floor is applied.
    fn raw_delay_us(&mut self) -> f64;
    /// Whether a datagram is lost. Never consulted on ordered channels.
    fn lose(&mut self) -> bool;
}

/// Gaussian jitter around a fixed base with independent Bernoulli loss.
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    rng: ChaCha8Rng,
    base_us: f64,
    sigma_us: f64,
    loss_prob: f64,
}

impl GaussianLaw {
    pub fn new(spec: &ChannelSpec, channel_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(channel_id);
        Self {
            rng,
            base_us: spec.base_delay_us as f64,
            sigma_us: spec.jitter_sigma_us as f64,
            loss_prob: spec.loss_prob,
        }
    }
}

impl DelayLaw for GaussianLaw {
    fn raw_delay_us(&mut self) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        self.base_us + self.sigma_us * z
    }

    fn lose(&mut self) -> bool {
        // always draw so the stream position does not depend on loss_prob
        let u: f64 = self.rng.gen();
        u < self.loss_prob
    }
}

/// Replays a fixed list of raw delays and loss decisions. Once the script
/// runs out, delays repeat the last value and nothing is lost.
#[derive(Debug, Clone, Default)]
pub struct ScriptedLaw {
    delays_us: VecDeque<f64>,
    losses: VecDeque<bool>,
    last_delay_us: f64,
}

impl ScriptedLaw {
    pub fn new(delays_us: impl IntoIterator<Item = f64>) -> Self {
        Self {
            delays_us: delays_us.into_iter().collect(),
            ..Self::default()
        }
    }

    pub fn with_losses(mut self, losses: impl IntoIterator<Item = bool>) -> Self {
        self.losses = losses.into_iter().collect();
        self
    }
}

impl DelayLaw for ScriptedLaw {
    fn raw_delay_us(&mut self) -> f64 {
        if let Some(d) = self.delays_us.pop_front() {
            self.last_delay_us = d;
        }
        self.last_delay_us
    }

    fn lose(&mut self) -> bool {
        self.losses.pop_front().unwrap_or(false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledDelivery {
    pub id: u64,
    pub send_time_us: u64,
    pub delivery_time_us: u64,
    pub size_bytes: usize,
    pub dropped: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivered {
    pub id: u64,
    pub send_time_us: u64,
    pub delivery_time_us: u64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
}

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
struct Pending {
    delivery_time_us: u64,
    id: u64,
    send_time_us: u64,
    payload: Vec<u8>,
}

pub struct EmulatedChannel {
    spec: ChannelSpec,
    law: Box<dyn DelayLaw>,
    queue: BinaryHeap<Reverse<Pending>>,
    next_id: u64,
    last_send_us: Option<u64>,
    last_delivery_us: u64,
    stats: ChannelStats,
    closed: bool,
}

impl std::fmt::Debug for EmulatedChannel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EmulatedChannel")
            .field("spec", &self.spec)
            .field("in_flight", &self.queue.len())
            .field("stats", &self.stats)
            .field("closed", &self.closed)
            .finish()
    }
}

impl EmulatedChannel {
    /// Channel with the Gaussian law on the stream `(spec.seed, channel_id)`.
    pub fn new(spec: ChannelSpec, channel_id: u64) -> Result<Self, NetemError> {
        let law = GaussianLaw::new(&spec, channel_id);
        Self::with_law(spec, Box::new(law))
    }

    pub fn with_law(spec: ChannelSpec, law: Box<dyn DelayLaw>) -> Result<Self, NetemError> {
        spec.validate()?;
        Ok(Self {
            spec,
            law,
            queue: BinaryHeap::new(),
            next_id: 0,
            last_send_us: None,
            last_delivery_us: 0,
            stats: ChannelStats::default(),
            closed: false,
        })
    }

    pub fn spec(&self) -> &ChannelSpec {
        &self.spec
    }

    pub fn stats(&self) -> ChannelStats {
        self.stats
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    /// Delivery time of the earliest queued record.
    pub fn next_delivery_us(&self) -> Option<u64> {
        self.queue.peek().map(|Reverse(p)| p.delivery_time_us)
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn send(&mut self, record: Vec<u8>, now_us: u64) -> Result<ScheduledDelivery, NetemError> {
        if self.closed {
            return Err(NetemError::Closed);
        }
        if let Some(last) = self.last_send_us {
            if now_us < last {
                return Err(NetemError::NonMonotone {
                    now_us,
                    last_us: last,
                });
            }
        }
        self.last_send_us = Some(now_us);

        let id = self.next_id;
        self.next_id += 1;
        self.stats.sent += 1;

        let raw = self.law.raw_delay_us().round();
        let floor = self.spec.min_delay_us as f64;
        let prop_us = if raw > floor {
            raw as u64
        } else {
            self.spec.min_delay_us
        };
        let size_bytes = record.len();
        let mut delivery = now_us + prop_us + self.spec.serialization_us(size_bytes);

        let dropped = if self.spec.ordered {
            delivery = delivery.max(self.last_delivery_us);
            false
        } else {
            self.law.lose()
        };

        if dropped {
            self.stats.dropped += 1;
        } else {
            self.last_delivery_us = self.last_delivery_us.max(delivery);
            self.queue.push(Reverse(Pending {
                delivery_time_us: delivery,
                id,
                send_time_us: now_us,
                payload: record,
            }));
        }

        Ok(ScheduledDelivery {
            id,
            send_time_us: now_us,
            delivery_time_us: delivery,
            size_bytes,
            dropped,
        })
    }

    /// Every record due at or before `now_us`, by delivery time then send order.
    pub fn poll(&mut self, now_us: u64) -> Vec<Delivered> {
        let mut out = Vec::new();
        while let Some(Reverse(head)) = self.queue.peek() {
            if head.delivery_time_us > now_us {
                break;
            }
            let Reverse(p) = self.queue.pop().expect("peeked");
            out.push(Delivered {
                id: p.id,
                send_time_us: p.send_time_us,
                delivery_time_us: p.delivery_time_us,
                payload: p.payload,
            });
        }
        self.stats.delivered += out.len() as u64;
        out
    }
}
