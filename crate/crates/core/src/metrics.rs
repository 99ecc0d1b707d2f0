//! Measurement procedures: timestamp-echo RTT, summary statistics,
//! interarrival jitter, loss accounting, steering lag by cross-correlation and
//! distance travelled during a latency.
//!
//! Latency samples are integer microseconds throughout.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::messages::Telemetry;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no samples")]
    Empty,
    #[error("echo timestamp {echo_ts_us} is after the receive time {recv_time_us}")]
    NegativeRtt { echo_ts_us: u64, recv_time_us: u64 },
    #[error("need at least 2 packets, got {0}")]
    TooFewPackets(usize),
    #[error("delivered count {delivered} exceeds sent count {sent}")]
    DeliveredExceedsSent { sent: u64, delivered: u64 },
    #[error("sent count must be positive")]
    NothingSent,
    #[error("series `{0}` is not strictly increasing in time")]
    Unsorted(&'static str),
    #[error("common span {span_us} us is shorter than the required {required_us} us")]
    SpanTooShort { span_us: u64, required_us: u64 },
    #[error("lag window {window_us} us exceeds half the span {span_us} us")]
    WindowTooLarge { window_us: u64, span_us: u64 },
    #[error("series `{0}` is constant; no lag estimate")]
    Degenerate(&'static str),
}

/// Count, moments and nearest-rank percentiles of a latency series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean_us: f64,
    /// Sample standard deviation (n - 1 divisor); 0 for a single sample.
    pub std_us: f64,
    pub min_us: u64,
    pub max_us: u64,
    pub p50_us: u64,
    pub p95_us: u64,
    pub p99_us: u64,
}

pub fn summarize(samples: &[u64]) -> Result<MetricSummary, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::Empty);
    }
    let n = samples.len();
    let sum: u128 = samples.iter().map(|&s| s as u128).sum();
    let mean = sum as f64 / n as f64;
    let std = if n > 1 {
        sample_std(samples, sum, mean)
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_unstable();
    Ok(MetricSummary {
        n,
        mean_us: mean,
        std_us: std,
        min_us: sorted[0],
        max_us: sorted[n - 1],
        p50_us: nearest_rank(&sorted, 50),
        p95_us: nearest_rank(&sorted, 95),
        p99_us: nearest_rank(&sorted, 99),
    })
}

/// n-1 standard deviation. `n*sum(x^2) - sum(x)^2` is exact in integers when
/// it fits, which makes the result independent of sample order.
fn sample_std(samples: &[u64], sum: u128, mean: f64) -> f64 {
    let n = samples.len() as u128;
    let exact = samples
        .iter()
        .try_fold(0u128, |acc, &s| {
            acc.checked_add((s as u128).checked_mul(s as u128)?)
        })
        .and_then(|sq| n.checked_mul(sq))
        .and_then(|nsq| nsq.checked_sub(sum.checked_mul(sum)?));
    match exact {
        Some(num) => (num as f64 / (n * (n - 1)) as f64).sqrt(),
        None => {
            let ss: f64 = samples.iter().map(|&s| (s as f64 - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        }
    }
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)`.
pub fn nearest_rank(sorted: &[u64], pct: u32) -> u64 {
    let n = sorted.len();
    let rank = (pct as usize * n).div_ceil(100).max(1);
    sorted[rank.min(n) - 1]
}

/// RTT of one telemetry record on the operator's own clock.
///
/// `Ok(None)` for the no-command-yet sentinel.
pub fn rtt_from_echo(
    telemetry: &Telemetry,
    recv_time_us: u64,
) -> Result<Option<u64>, MetricsError> {
    if !telemetry.has_echo() {
        return Ok(None);
    }
    recv_time_us
        .checked_sub(telemetry.echo_ts_us)
        .map(Some)
        .ok_or(MetricsError::NegativeRtt {
            echo_ts_us: telemetry.echo_ts_us,
            recv_time_us,
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RttSample {
    pub seq: u64,
    pub send_us: u64,
    pub recv_us: u64,
    pub rtt_us: u64,
}

/// Collects at most one RTT sample per command sequence number; the first
/// telemetry record echoing a command wins.
#[derive(Debug, Default, Clone)]
pub struct RttTracker {
    seen: HashSet<u64>,
    samples: Vec<RttSample>,
    rejected: u64,
}

impl RttTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, telemetry: &Telemetry, recv_time_us: u64) -> Option<RttSample> {
        let rtt = match rtt_from_echo(telemetry, recv_time_us) {
            Ok(Some(rtt)) => rtt,
            Ok(None) => return None,
            Err(_) => {
                self.rejected += 1;
                return None;
            }
        };
        if !self.seen.insert(telemetry.echo_seq) {
            return None;
        }
        let s = RttSample {
            seq: telemetry.echo_seq,
            send_us: telemetry.echo_ts_us,
            recv_us: recv_time_us,
            rtt_us: rtt,
        };
        self.samples.push(s);
        Some(s)
    }

    pub fn samples(&self) -> &[RttSample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<RttSample> {
        self.samples
    }

    /// Records whose echo was later than their receive time.
    pub fn rejected(&self) -> u64 {
        self.rejected
    }
}

/// Smoothed interarrival jitter over per-packet transit times (receive minus
/// send, any common clock offset allowed): `J += (|D| - J) / 16` for each
/// consecutive transit difference `D`, starting from `J = 0`.
pub fn interarrival_jitter(transits_us: &[i64]) -> Result<f64, MetricsError> {
    if transits_us.len() < 2 {
        return Err(MetricsError::TooFewPackets(transits_us.len()));
    }
    Ok(transits_us.windows(2).fold(0.0, |j, w| {
        let d = (w[1] - w[0]).unsigned_abs() as f64;
        j + (d - j) / 16.0
    }))
}

/// Transit times from `(send_us, recv_us)` pairs.
pub fn transit_times(pairs: &[(u64, u64)]) -> Vec<i64> {
    pairs.iter().map(|&(s, r)| r as i64 - s as i64).collect()
}

pub fn loss_rate(sent: u64, delivered: u64) -> Result<f64, MetricsError> {
    if sent == 0 {
        return Err(MetricsError::NothingSent);
    }
    if delivered > sent {
        return Err(MetricsError::DeliveredExceedsSent { sent, delivered });
    }
    Ok((sent - delivered) as f64 / sent as f64)
}

/// Metres covered at `speed_mps` during `latency_us`.
pub fn distance_at_latency(speed_mps: f64, latency_us: u64) -> f64 {
    speed_mps * latency_us as f64 / 1e6
}

pub fn kmh_to_mps(kmh: f64) -> f64 {
    kmh / 3.6
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteeringLagEstimate {
    pub lag_us: u64,
    pub correlation_peak: f64,
    pub window_us: u64,
    pub grid_us: u64,
}

/// Minimum common span for a lag estimate.
pub const MIN_LAG_SPAN_US: u64 = 10_000_000;

/// Estimates how far `theta` trails `u` by normalized cross-correlation.
///
/// Both series are `(t_us, value)` pairs on a shared timeline. They are
/// linearly resampled onto a uniform grid whose step is the finer of the two
/// median sample intervals, then the Pearson correlation of `u(t)` against
/// `theta(t + lag)` is evaluated for every grid lag in `[0, window_us]`.
/// Ties go to the smaller lag.
pub fn steering_lag(
    u: &[(u64, f64)],
    theta: &[(u64, f64)],
    window_us: u64,
) -> Result<SteeringLagEstimate, MetricsError> {
    check_series(u, "u")?;
    check_series(theta, "theta")?;

    let start = u[0].0.max(theta[0].0);
    let end = u[u.len() - 1].0.min(theta[theta.len() - 1].0);
    let span = end.saturating_sub(start);
    if span < MIN_LAG_SPAN_US {
        return Err(MetricsError::SpanTooShort {
            span_us: span,
            required_us: MIN_LAG_SPAN_US,
        });
    }
    if window_us > span / 2 {
        return Err(MetricsError::WindowTooLarge {
            window_us,
            span_us: span,
        });
    }

    let grid = median_step(u).min(median_step(theta)).max(1);
    let points = (span / grid) as usize + 1;
    let ug = resample(u, start, grid, points);
    let tg = resample(theta, start, grid, points);
    if is_constant(&ug) {
        return Err(MetricsError::Degenerate("u"));
    }
    if is_constant(&tg) {
        return Err(MetricsError::Degenerate("theta"));
    }

    let max_lag = (window_us / grid) as usize;
    let mut best: Option<(usize, f64)> = None;
    for lag in 0..=max_lag {
        let n = points - lag;
        let Some(r) = pearson(&ug[..n], &tg[lag..]) else {
            continue;
        };
        if best.is_none_or(|(_, b)| r > b) {
            best = Some((lag, r));
        }
    }
    let (lag, peak) = best.ok_or(MetricsError::Degenerate("theta"))?;
    Ok(SteeringLagEstimate {
        lag_us: lag as u64 * grid,
        correlation_peak: peak.clamp(-1.0, 1.0),
        window_us,
        grid_us: grid,
    })
}

fn check_series(s: &[(u64, f64)], name: &'static str) -> Result<(), MetricsError> {
    if s.len() < 2 {
        return Err(MetricsError::SpanTooShort {
            span_us: 0,
            required_us: MIN_LAG_SPAN_US,
        });
    }
    if s.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(MetricsError::Unsorted(name));
    }
    Ok(())
}

fn median_step(s: &[(u64, f64)]) -> u64 {
    let mut d: Vec<u64> = s.windows(2).map(|w| w[1].0 - w[0].0).collect();
    d.sort_unstable();
    d[d.len() / 2]
}

fn resample(s: &[(u64, f64)], start: u64, step: u64, points: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(points);
    let mut j = 0;
    for k in 0..points {
        let t = start + k as u64 * step;
        while j + 1 < s.len() - 1 && s[j + 1].0 <= t {
            j += 1;
        }
        let (t0, v0) = s[j];
        let (t1, v1) = s[j + 1];
        let w = (t as f64 - t0 as f64) / (t1 - t0) as f64;
        out.push(v0 + w * (v1 - v0));
    }
    out
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|v| *v == x[0])
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn telemetry(echo_seq: u64, echo_ts_us: u64) -> Telemetry {
        Telemetry {
            seq: 1,
            ts_us: 0,
            speed_mps: 0.0,
            steering_pos: 0.0,
            echo_ts_us,
            echo_seq,
            x_m: 0.0,
            y_m: 0.0,
            heading_rad: 0.0,
        }
    }

    #[test]
    fn rtt_is_a_subtraction() {
        assert_eq!(
            rtt_from_echo(&telemetry(4, 100_000), 150_000),
            Ok(Some(50_000))
        );
        assert_eq!(rtt_from_echo(&telemetry(0, 0), 150_000), Ok(None));
        assert!(matches!(
            rtt_from_echo(&telemetry(4, 200_000), 150_000),
            Err(MetricsError::NegativeRtt { .. })
        ));
    }

    #[test]
    fn tracker_keeps_first_echo_only() {
        let mut tr = RttTracker::new();
        assert!(tr.observe(&telemetry(0, 0), 10).is_none());
        assert_eq!(tr.observe(&telemetry(1, 100), 150).unwrap().rtt_us, 50);
        assert!(tr.observe(&telemetry(1, 100), 170).is_none());
        assert!(tr.observe(&telemetry(2, 500), 400).is_none());
        assert_eq!(tr.rejected(), 1);
        assert_eq!(tr.samples().len(), 1);
    }

    #[test]
    fn summary_hand_arithmetic() {
        let s = summarize(&[1_000, 2_000, 3_000]).unwrap();
        assert_eq!(s.n, 3);
        assert_eq!(s.mean_us, 2_000.0);
        assert_eq!(s.std_us, 1_000.0);
        assert_eq!((s.min_us, s.max_us), (1_000, 3_000));
        assert_eq!((s.p50_us, s.p95_us, s.p99_us), (2_000, 3_000, 3_000));
    }

    #[test]
    fn summary_of_constant_series() {
        let s = summarize(&[5_000; 100]).unwrap();
        assert_eq!(s.std_us, 0.0);
        assert_eq!(
            (s.min_us, s.p50_us, s.p95_us, s.p99_us, s.max_us),
            (5_000, 5_000, 5_000, 5_000, 5_000)
        );
    }

    #[test]
    fn summary_single_and_empty() {
        assert_eq!(summarize(&[]), Err(MetricsError::Empty));
        let s = summarize(&[7]).unwrap();
        assert_eq!((s.n, s.std_us, s.p99_us), (1, 0.0, 7));
    }

    #[test]
    fn nearest_rank_on_1_to_100() {
        let v: Vec<u64> = (1..=100).collect();
        assert_eq!(nearest_rank(&v, 50), 50);
        assert_eq!(nearest_rank(&v, 95), 95);
        assert_eq!(nearest_rank(&v, 99), 99);
        assert_eq!(nearest_rank(&v, 100), 100);
    }

    #[test]
    fn jitter_cases() {
        assert_eq!(interarrival_jitter(&[5_000; 50]), Ok(0.0));
        assert_eq!(interarrival_jitter(&[0, 16_000]), Ok(1_000.0));
        assert_eq!(
            interarrival_jitter(&[3]),
            Err(MetricsError::TooFewPackets(1))
        );
        assert_eq!(transit_times(&[(10, 25), (20, 31)]), vec![15, 11]);
    }

    #[test]
    fn loss_cases() {
        assert_eq!(loss_rate(85_068, 85_068), Ok(0.0));
        assert_eq!(loss_rate(100, 90), Ok(0.1));
        assert!(loss_rate(10, 11).is_err());
        assert!(loss_rate(0, 0).is_err());
    }

    #[test]
    fn distance_cases() {
        let v = kmh_to_mps(30.0);
        assert!((distance_at_latency(v, 202_410) - 1.686_75).abs() < 1e-9);
        assert!((distance_at_latency(v, 23_000) - 0.191_666_666).abs() < 1e-6);
        assert_eq!(distance_at_latency(0.0, 202_410), 0.0);
    }

    fn series(step_us: u64, dur_us: u64, f: impl Fn(f64) -> f64) -> Vec<(u64, f64)> {
        (0..=dur_us / step_us)
            .map(|k| {
                let t = k * step_us;
                (t, f(t as f64 / 1e6))
            })
            .collect()
    }

    #[test]
    fn lag_of_identical_series_is_zero() {
        let u = series(10_000, 20_000_000, |t| {
            (1.3 * t).sin() + 0.4 * (0.37 * t).cos()
        });
        let est = steering_lag(&u, &u, 1_000_000).unwrap();
        assert_eq!(est.lag_us, 0);
        assert!((est.correlation_peak - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lag_errors() {
        let u = series(10_000, 20_000_000, |t| t.sin());
        let flat = series(10_000, 20_000_000, |_| 0.25);
        assert_eq!(
            steering_lag(&u, &flat, 1_000_000),
            Err(MetricsError::Degenerate("theta"))
        );
        assert_eq!(
            steering_lag(&flat, &u, 1_000_000),
            Err(MetricsError::Degenerate("u"))
        );
        let short = series(10_000, 5_000_000, |t| t.sin());
        assert!(matches!(
            steering_lag(&short, &short, 1_000_000),
            Err(MetricsError::SpanTooShort { .. })
        ));
        assert!(matches!(
            steering_lag(&u, &u, 10_000_001),
            Err(MetricsError::WindowTooLarge { .. })
        ));
        let mut bad = u.clone();
        bad.swap(3, 4);
        assert_eq!(
            steering_lag(&bad, &u, 1_000_000),
            Err(MetricsError::Unsorted("u"))
        );
    }

    #[test]
    fn lag_grid_follows_finer_series() {
        let f = |t: f64| (0.9 * t).sin() + 0.3 * (2.1 * t).sin();
        let u = series(10_000, 30_000_000, f);
        let theta = series(50_000, 30_000_000, |t| f(t - 0.12));
        let est = steering_lag(&u, &theta, 1_000_000).unwrap();
        assert_eq!(est.grid_us, 10_000);
        assert_eq!(est.lag_us, 120_000);
    }
}
