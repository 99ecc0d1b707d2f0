//! Experiment report and the CSV files behind it.
//!
//! Output directory layout:
//!
//! | file | columns |
//! |------|---------|
//! | `rtt.csv` | seq, send_us, recv_us, rtt_us |
//! | `g2g.csv` | frame_id, event_us, capture_us, encode_done_us, arrive_us, decode_done_us, display_us, g2g_us |
//! | `commands.csv` | seq, ts_us, steering, throttle, brake |
//! | `telemetry.csv` | seq, ts_us, recv_us, speed_mps, steering_pos, echo_ts_us, echo_seq, x_m, y_m, heading_rad |
//! | `processing.csv` | seq, ts_us, delivered_us, processed_us, delay_us |
//! | `trajectory.csv` | t_us, x_m, y_m, heading_rad, speed_mps, steering_norm |
//! | `links.csv` | link, sent, delivered, dropped, in_flight |
//! | `scenario.toml` | the resolved scenario |
//! | `summary.json` | the [`ExperimentReport`] |

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{self, Scenario};
use super::sim::{LinkStats, Links, RunData, TelemetryRow, TrajectoryRow};
use super::RunError;
use crate::messages::{Telemetry, TeleopCommand};
use crate::metrics::{self, MetricSummary, RttSample, SteeringLagEstimate};
use crate::vehicle::CommandReceipt;
use crate::videopath::VideoFrameRecord;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryBlock {
    #[serde(flatten)]
    pub summary: MetricSummary,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JitterBlock {
    /// Smoothed interarrival jitter of the telemetry stream.
    pub jitter_us: f64,
    pub packets: usize,
    pub transit: MetricSummary,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkLoss {
    #[serde(flatten)]
    pub stats: LinkStats,
    /// Dropped fraction of records that had a chance to arrive.
    pub loss_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBlock {
    pub uplink: LinkLoss,
    pub downlink: LinkLoss,
    pub video: LinkLoss,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagBlock {
    pub estimate: Option<SteeringLagEstimate>,
    pub error: Option<String>,
    pub csv: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub scenario: String,
    pub seed: u64,
    pub commands: usize,
    pub rtt: Option<SummaryBlock>,
    pub g2g: Option<SummaryBlock>,
    pub processing: Option<SummaryBlock>,
    pub jitter: Option<JitterBlock>,
    pub loss: LossBlock,
    pub steering_lag: LagBlock,
}

impl ExperimentReport {
    pub fn build(sc: &Scenario, data: &RunData) -> Self {
        let block = |samples: Vec<u64>, csv: &str| {
            metrics::summarize(&samples)
                .ok()
                .map(|summary| SummaryBlock {
                    summary,
                    csv: csv.to_string(),
                })
        };

        let transits: Vec<i64> = data
            .telemetry
            .iter()
            .map(|r| r.recv_us as i64 - r.telemetry.ts_us as i64)
            .collect();
        let jitter = metrics::interarrival_jitter(&transits).ok().and_then(|j| {
            let t: Vec<u64> = transits.iter().map(|&x| x.max(0) as u64).collect();
            Some(JitterBlock {
                jitter_us: j,
                packets: transits.len(),
                transit: metrics::summarize(&t).ok()?,
                csv: "telemetry.csv".into(),
            })
        });

        let loss = |s: LinkStats| LinkLoss {
            stats: s,
            loss_rate: metrics::loss_rate(s.sent - s.in_flight, s.delivered).ok(),
        };

        let u: Vec<(u64, f64)> = data
            .commands
            .iter()
            .map(|c| (c.ts_us, c.steering))
            .collect();
        let theta: Vec<(u64, f64)> = data
            .telemetry
            .iter()
            .map(|r| (r.telemetry.ts_us, r.telemetry.steering_pos))
            .collect();
        let (estimate, error) = match metrics::steering_lag(&u, &theta, sc.analysis.lag_window_us) {
            Ok(e) => (Some(e), None),
            Err(e) => (None, Some(e.to_string())),
        };

        Self {
            scenario: sc.name.clone(),
            seed: sc.seed,
            commands: data.commands.len(),
            rtt: block(data.rtt.iter().map(|s| s.rtt_us).collect(), "rtt.csv"),
            g2g: block(data.frames.iter().map(|f| f.g2g_us).collect(), "g2g.csv"),
            processing: block(
                data.receipts
                    .iter()
                    .map(|r| r.processing_delay_us())
                    .collect(),
                "processing.csv",
            ),
            jitter,
            loss: LossBlock {
                uplink: loss(data.links.uplink),
                downlink: loss(data.links.downlink),
                video: loss(data.links.video),
                csv: "links.csv".into(),
            },
            steering_lag: LagBlock {
                estimate,
                error,
                csv: vec!["commands.csv".into(), "telemetry.csv".into()],
            },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Writes every CSV, the resolved scenario and `summary.json` into `dir`.
pub fn write_outputs(
    dir: &Path,
    sc: &Scenario,
    data: &RunData,
    report: &ExperimentReport,
) -> Result<(), RunError> {
    fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
    let put = |name: &str, body: String| {
        let p = dir.join(name);
        fs::write(&p, body).map_err(|e| RunError::io(&p, e))
    };

    let mut s = String::from("seq,send_us,recv_us,rtt_us\n");
    for r in &data.rtt {
        let _ = writeln!(s, "{},{},{},{}", r.seq, r.send_us, r.recv_us, r.rtt_us);
    }
    put("rtt.csv", s)?;

    let mut s = String::from(
        "frame_id,event_us,capture_us,encode_done_us,arrive_us,decode_done_us,display_us,g2g_us\n",
    );
    for f in &data.frames {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            f.frame_id,
            f.event_us,
            f.capture_us,
            f.encode_done_us,
            f.arrive_us,
            f.decode_done_us,
            f.display_us,
            f.g2g_us
        );
    }
    put("g2g.csv", s)?;

    let mut s = String::from("seq,ts_us,steering,throttle,brake\n");
    for c in &data.commands {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            c.seq, c.ts_us, c.steering, c.throttle, c.brake
        );
    }
    put("commands.csv", s)?;

    let mut s = String::from(
        "seq,ts_us,recv_us,speed_mps,steering_pos,echo_ts_us,echo_seq,x_m,y_m,heading_rad\n",
    );
    for r in &data.telemetry {
        let t = &r.telemetry;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            t.seq,
            t.ts_us,
            r.recv_us,
            t.speed_mps,
            t.steering_pos,
            t.echo_ts_us,
            t.echo_seq,
            t.x_m,
            t.y_m,
            t.heading_rad
        );
    }
    put("telemetry.csv", s)?;

    let mut s = String::from("seq,ts_us,delivered_us,processed_us,delay_us\n");
    for r in &data.receipts {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.seq,
            r.ts_us,
            r.delivered_us,
            r.processed_us,
            r.processing_delay_us()
        );
    }
    put("processing.csv", s)?;

    let mut s = String::from("t_us,x_m,y_m,heading_rad,speed_mps,steering_norm\n");
    for r in &data.trajectory {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.t_us, r.x_m, r.y_m, r.heading_rad, r.speed_mps, r.steering_norm
        );
    }
    put("trajectory.csv", s)?;

    let mut s = String::from("link,sent,delivered,dropped,in_flight\n");
    for (name, l) in [
        ("uplink", data.links.uplink),
        ("downlink", data.links.downlink),
        ("video", data.links.video),
    ] {
        let _ = writeln!(
            s,
            "{name},{},{},{},{}",
            l.sent, l.delivered, l.dropped, l.in_flight
        );
    }
    put("links.csv", s)?;

    put("scenario.toml", sc.to_toml())?;
    put("summary.json", report.to_json())
}

/// Reads a run back from an output directory.
pub fn read_outputs(dir: &Path) -> Result<(Scenario, RunData), RunError> {
    let path = dir.join("scenario.toml");
    let text = fs::read_to_string(&path).map_err(|e| RunError::io(&path, e))?;
    let sc = scenario::validate(&text)
        .map_err(RunError::Config)?
        .scenario;
    let mut data = RunData::default();

    for row in rows(dir, "rtt.csv", 4)? {
        data.rtt.push(RttSample {
            seq: int(&row[0])?,
            send_us: int(&row[1])?,
            recv_us: int(&row[2])?,
            rtt_us: int(&row[3])?,
        });
    }
    for row in rows(dir, "g2g.csv", 8)? {
        data.frames.push(VideoFrameRecord {
            frame_id: int(&row[0])?,
            event_us: int(&row[1])?,
            capture_us: int(&row[2])?,
            encode_done_us: int(&row[3])?,
            arrive_us: int(&row[4])?,
            decode_done_us: int(&row[5])?,
            display_us: int(&row[6])?,
            g2g_us: int(&row[7])?,
        });
    }
    for row in rows(dir, "commands.csv", 5)? {
        data.commands.push(TeleopCommand {
            seq: int(&row[0])?,
            ts_us: int(&row[1])?,
            steering: float(&row[2])?,
            throttle: float(&row[3])?,
            brake: float(&row[4])?,
        });
    }
    for row in rows(dir, "telemetry.csv", 10)? {
        data.telemetry.push(TelemetryRow {
            recv_us: int(&row[2])?,
            telemetry: Telemetry {
                seq: int(&row[0])?,
                ts_us: int(&row[1])?,
                speed_mps: float(&row[3])?,
                steering_pos: float(&row[4])?,
                echo_ts_us: int(&row[5])?,
                echo_seq: int(&row[6])?,
                x_m: float(&row[7])?,
                y_m: float(&row[8])?,
                heading_rad: float(&row[9])?,
            },
        });
    }
    for row in rows(dir, "processing.csv", 5)? {
        data.receipts.push(CommandReceipt {
            seq: int(&row[0])?,
            ts_us: int(&row[1])?,
            delivered_us: int(&row[2])?,
            processed_us: int(&row[3])?,
        });
    }
    for row in rows(dir, "trajectory.csv", 6)? {
        data.trajectory.push(TrajectoryRow {
            t_us: int(&row[0])?,
            x_m: float(&row[1])?,
            y_m: float(&row[2])?,
            heading_rad: float(&row[3])?,
            speed_mps: float(&row[4])?,
            steering_norm: float(&row[5])?,
        });
    }
    let mut links = Links::default();
    for row in rows(dir, "links.csv", 5)? {
        let stats = LinkStats {
            sent: int(&row[1])?,
            delivered: int(&row[2])?,
            dropped: int(&row[3])?,
            in_flight: int(&row[4])?,
        };
        match row[0].as_str() {
            "uplink" => links.uplink = stats,
            "downlink" => links.downlink = stats,
            "video" => links.video = stats,
            other => return Err(RunError::Csv(format!("links.csv: unknown link {other:?}"))),
        }
    }
    data.links = links;
    Ok((sc, data))
}

/// Re-summarizes the CSVs in an output directory.
pub fn report_dir(dir: &Path) -> Result<ExperimentReport, RunError> {
    let (sc, data) = read_outputs(dir)?;
    Ok(ExperimentReport::build(&sc, &data))
}

fn rows(dir: &Path, name: &str, cols: usize) -> Result<Vec<Vec<String>>, RunError> {
    let p = dir.join(name);
    let text = fs::read_to_string(&p).map_err(|e| RunError::io(&p, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != cols {
            return Err(RunError::Csv(format!(
                "{name}:{}: expected {cols} columns, got {}",
                i + 1,
                row.len()
            )));
        }
        out.push(row);
    }
    Ok(out)
}

fn int(s: &str) -> Result<u64, RunError> {
    s.parse()
        .map_err(|_| RunError::Csv(format!("bad integer {s:?}")))
}

fn float(s: &str) -> Result<f64, RunError> {
    s.parse()
        .map_err(|_| RunError::Csv(format!("bad number {s:?}")))
}
