//! Headless acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teleop_core::messages::{encode_command, TeleopCommand};
use teleop_core::metrics::{
    distance_at_latency, interarrival_jitter, kmh_to_mps, loss_rate, steering_lag,
};
use teleop_core::netem::{ChannelSpec, Delivered, EmulatedChannel};
use teleop_core::runner::{self, scenario, Scenario};
use teleop_core::vehicle::{
    actuator_step, dynamics_step, Controls, Discretization, VehicleAgent, VehicleParams,
    VehicleState,
};
use teleop_core::videopath::{clock_method_bound_us, clock_method_reading, Cadence};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario_file(name: &str) -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name);
    scenario::load(&path, None)
        .unwrap_or_else(|e| panic!("{}: {e:?}", path.display()))
        .scenario
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rtt_reproduction() -> Outcome {
    let sc = scenario_file("rtt.toml");
    let start = Instant::now();
    let data = runner::simulate(&sc, None).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let rep = runner::ExperimentReport::build(&sc, &data);
    let rtt = rep.rtt.ok_or("no RTT samples")?.summary;
    let (mean, std) = (rtt.mean_us / 1e3, rtt.std_us / 1e3);
    check(
        data.commands.len() == 1000
            && (45.0..=49.0).contains(&mean)
            && (2.0..=6.0).contains(&std)
            && elapsed.as_secs_f64() < 5.0,
        format!(
            "{} commands, {} samples, mean {mean:.2} ms, std {std:.2} ms, {:.2} s",
            data.commands.len(),
            rtt.n,
            elapsed.as_secs_f64()
        ),
    )
}

fn g2g_reproduction() -> Outcome {
    let sc = scenario_file("g2g.toml");
    let data = runner::simulate(&sc, None).map_err(|e| e.to_string())?;
    let additive = data.frames.iter().all(|f| {
        f.stages().is_ok_and(|s| s.total_us() == f.g2g_us) && f.display_us - f.event_us == f.g2g_us
    });
    let g = runner::ExperimentReport::build(&sc, &data)
        .g2g
        .ok_or("no frames")?
        .summary;
    let mean = g.mean_us / 1e3;
    check(
        g.n >= 100 && (192.0..=212.0).contains(&mean) && additive,
        format!(
            "{} frames, mean {mean:.2} ms, std {:.2} ms, ledger additive: {additive}",
            g.n,
            g.std_us / 1e3
        ),
    )
}

fn clock_method_bound() -> Outcome {
    let clock = Cadence::Hz(60);
    let bound = clock_method_bound_us(clock);
    let mut worst: f64 = 0.0;
    let mut worst_at = (0, 0);
    for truth in [200_000u64, 200_001, 202_410, 216_666, 16_667, 1] {
        for rel in 0..16_667 {
            let err =
                (clock_method_reading(truth, clock, Cadence::Hz(60), 0, rel) - truth as f64).abs();
            if err > worst {
                worst = err;
                worst_at = (truth, rel);
            }
        }
    }
    check(
        worst <= 16_667.0 && worst >= bound - 1.0,
        format!(
            "max error {worst:.2} us (bound {bound:.2}) at truth {} phase {}",
            worst_at.0, worst_at.1
        ),
    )
}

fn tick_quantization() -> Outcome {
    let params = VehicleParams::default();
    let tick = params.tick_period_us;
    let mut agent = VehicleAgent::new(params, 0).map_err(|e| e.to_string())?;
    let mut uplink =
        EmulatedChannel::new(ChannelSpec::fixed(21_000, true), 1).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sends: Vec<u64> = (0..10_000u64)
        .map(|k| k * tick + rng.gen_range(0..tick))
        .collect();
    sends.sort_unstable();
    let mut delays = Vec::with_capacity(sends.len());
    let mut next = 0;
    let mut t = 0;
    while delays.len() < sends.len() {
        while next < sends.len() && sends[next] <= t {
            let cmd = TeleopCommand {
                seq: next as u64 + 1,
                ts_us: sends[next],
                steering: 0.0,
                throttle: 0.0,
                brake: 0.0,
            };
            uplink
                .send(
                    encode_command(&cmd).map_err(|e| e.to_string())?,
                    sends[next],
                )
                .map_err(|e| e.to_string())?;
            next += 1;
        }
        let inbound: Vec<Delivered> = uplink.poll(t);
        let out = agent.tick(t, inbound);
        delays.extend(out.receipts.iter().map(|r| r.processing_delay_us()));
        t += tick;
    }
    let max = *delays.iter().max().unwrap();
    let mean = delays.iter().sum::<u64>() as f64 / delays.len() as f64 / 1e3;
    check(
        max < tick && (4.9..=5.1).contains(&mean),
        format!("{} commands, max {max} us, mean {mean:.3} ms", delays.len()),
    )
}

fn zero_loss() -> Outcome {
    let spec = ChannelSpec {
        loss_prob: 0.0,
        ordered: false,
        seed: 7,
        ..ChannelSpec::default()
    };
    let mut ch = EmulatedChannel::new(spec, 1).map_err(|e| e.to_string())?;
    for i in 0..85_068u64 {
        ch.send(vec![0; 1470], i * 100).map_err(|e| e.to_string())?;
    }
    let delivered = ch.poll(u64::MAX).len() as u64;
    let rate = loss_rate(ch.stats().sent, delivered).map_err(|e| e.to_string())?;
    check(
        rate == 0.0 && delivered == 85_068,
        format!(
            "{} sent, {delivered} delivered, loss rate {rate}",
            ch.stats().sent
        ),
    )
}

fn jitter_recurrence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(2..2_000);
        let ts: Vec<i64> = (0..n).map(|_| rng.gen_range(-100_000..100_000)).collect();
        let mut j = 0.0f64;
        for w in ts.windows(2) {
            j += (((w[1] - w[0]) as f64).abs() - j) / 16.0;
        }
        worst = worst.max((interarrival_jitter(&ts).map_err(|e| e.to_string())? - j).abs());
    }
    let constant = interarrival_jitter(&[21_000; 500]).map_err(|e| e.to_string())?;
    check(
        worst <= 1e-9 && constant == 0.0,
        format!("max deviation {worst:e}, constant-transit jitter {constant}"),
    )
}

fn steering_lag_cases() -> Outcome {
    // pure shift
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let mut x = 0.0;
    let u: Vec<(u64, f64)> = (0..3_000u64)
        .map(|k| {
            x = 0.95 * x + rng.gen_range(-1.0..1.0);
            (k * 10_000, x)
        })
        .collect();
    let shifted: Vec<(u64, f64)> = u.iter().map(|&(t, v)| (t + 40_000, v)).collect();
    let e = steering_lag(&u, &shifted, 1_000_000).map_err(|e| e.to_string())?;
    let shift_ok = e.lag_us.abs_diff(40_000) <= e.grid_us;

    let lag_of = |name: &str| -> Result<(u64, u64), String> {
        let sc = scenario_file(name);
        let rep = runner::ExperimentReport::build(
            &sc,
            &runner::simulate(&sc, None).map_err(|e| e.to_string())?,
        );
        let est = rep
            .steering_lag
            .estimate
            .ok_or(format!("{name}: {:?}", rep.steering_lag.error))?;
        Ok((est.lag_us, est.grid_us))
    };
    let (sine, grid) = lag_of("steering.toml")?;
    let w = std::f64::consts::TAU * 0.2;
    let analytic = 25_000.0 + (w * 0.2).atan() / w * 1e6;
    let sine_ok = (sine as f64 - analytic).abs() <= grid as f64;
    let (stress, _) = lag_of("stress.toml")?;
    let stress_ok = (600_000..=800_000).contains(&stress);
    check(
        shift_ok && sine_ok && stress_ok,
        format!(
            "shift {} us (want 40000), sine {} us (analytic {analytic:.0}, grid {grid}), stress {} us",
            e.lag_us, sine, stress
        ),
    )
}

fn distance_arithmetic() -> Outcome {
    let v = kmh_to_mps(30.0);
    let a = distance_at_latency(v, 202_410);
    let b = distance_at_latency(v, 23_000);
    let r2 = |x: f64| (x * 100.0).round() / 100.0;
    check(
        (a - 1.687).abs() < 5e-4 && (b - 0.192).abs() < 5e-4 && r2(a) == 1.69 && r2(b) == 0.19,
        format!("{a:.4} m at 202.41 ms, {b:.4} m at 23 ms"),
    )
}

fn dynamics_oracles() -> Outcome {
    let tau = 0.2;
    let mut th = 0.0;
    for _ in 0..200 {
        th =
            actuator_step(th, 1.0, 0.001, tau, Discretization::Exact).map_err(|e| e.to_string())?;
    }
    let step_err = (th - (1.0 - (-1.0f64).exp())).abs();

    let p = VehicleParams::default();
    let (v, steer, dt) = (8.0, 0.5, 0.001);
    let radius = p.wheelbase_m / (steer * p.max_steer_rad).tan();
    let hold = Controls {
        steering: steer,
        throttle: p.drag_per_s * v / p.accel_max_mps2,
        brake: 0.0,
    };
    let mut s = VehicleState {
        speed_mps: v,
        steering_norm: steer,
        ..VehicleState::default()
    };
    let steps = (std::f64::consts::TAU * radius / v / dt).ceil() as usize;
    let mut worst: f64 = 0.0;
    for _ in 0..steps {
        s = dynamics_step(&s, &p, hold, dt);
        let r = (s.x_m.powi(2) + (s.y_m - radius).powi(2)).sqrt();
        worst = worst.max((r - radius).abs() / radius);
    }
    check(
        step_err < 1e-6 && worst < 1e-3,
        format!(
            "step response error {step_err:e}, radius error {:.2e} %",
            worst * 100.0
        ),
    )
}

fn listing(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap_or_default(),
            )
        })
        .collect();
    out.sort();
    out
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for name in ["rtt.toml", "g2g.toml", "steering.toml"] {
        let sc = scenario_file(name);
        let dirs: Vec<PathBuf> = ["a", "b"]
            .iter()
            .map(|d| tmp.path().join(name).join(d))
            .collect();
        for d in &dirs {
            runner::run(&sc, None, d).map_err(|e| e.to_string())?;
        }
        let (a, b) = (listing(&dirs[0]), listing(&dirs[1]));
        let same = !a.is_empty() && a == b;
        ok &= same;
        details.push(format!(
            "{name}: {} files {}",
            a.len(),
            if same { "identical" } else { "differ" }
        ));
    }
    check(ok, details.join(", "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("RTT reproduction", rtt_reproduction),
        ("G2G reproduction", g2g_reproduction),
        ("clock-method error bound", clock_method_bound),
        ("tick quantization", tick_quantization),
        ("zero-loss run", zero_loss),
        ("jitter recurrence", jitter_recurrence),
        ("steering lag", steering_lag_cases),
        ("distance arithmetic", distance_arithmetic),
        ("dynamics oracles", dynamics_oracles),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let (tag, detail) = match std::panic::catch_unwind(f) {
            Ok(Ok(d)) => ("PASS", d),
            Ok(Err(d)) => {
                failed += 1;
                ("FAIL", d)
            }
            Err(_) => {
                failed += 1;
                ("FAIL", "panicked".to_string())
            }
        };
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
