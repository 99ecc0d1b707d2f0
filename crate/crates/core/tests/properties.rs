use proptest::prelude::*;

use teleop_core::messages::{self, Message, Telemetry, TeleopCommand};
use teleop_core::metrics::{interarrival_jitter, summarize};
use teleop_core::netem::{ChannelSpec, EmulatedChannel};
use teleop_core::vehicle::{actuator_step, Discretization};
use teleop_core::videopath::{
    clock_method_bound_us, clock_method_reading, uniform_events, Cadence, VideoPathSpec,
    VideoPipeline,
};

fn command() -> impl Strategy<Value = TeleopCommand> {
    (
        1u64..u32::MAX as u64,
        0u64..1u64 << 50,
        -1.0f64..=1.0,
        0.0f64..=1.0,
        0.0f64..=1.0,
    )
        .prop_map(|(seq, ts_us, steering, throttle, brake)| TeleopCommand {
            seq,
            ts_us,
            steering,
            throttle,
            brake,
        })
}

fn telemetry() -> impl Strategy<Value = Telemetry> {
    (
        1u64..u32::MAX as u64,
        0u64..1u64 << 50,
        0.0f64..50.0,
        -1.0f64..=1.0,
        0u64..1u64 << 40,
        -1e4f64..1e4,
        -1e4f64..1e4,
        -10.0f64..10.0,
    )
        .prop_map(
            |(seq, ts_us, speed_mps, steering_pos, echo, x_m, y_m, heading_rad)| Telemetry {
                seq,
                ts_us,
                speed_mps,
                steering_pos,
                echo_ts_us: echo,
                echo_seq: echo / 7,
                x_m,
                y_m,
                heading_rad,
            },
        )
}

proptest! {
    #[test]
    fn command_codec_round_trip(c in command()) {
        let bytes = messages::encode_command(&c).unwrap();
        prop_assert_eq!(messages::decode_command(&bytes).unwrap(), c);
        prop_assert_eq!(messages::decode(&bytes).unwrap(), Message::Command(c));
    }

    #[test]
    fn telemetry_codec_round_trip(t in telemetry()) {
        let bytes = messages::encode_telemetry(&t).unwrap();
        prop_assert_eq!(messages::decode_telemetry(&bytes).unwrap(), t);
    }

    #[test]
    fn summarize_is_permutation_invariant(mut xs in prop::collection::vec(0u64..10_000_000, 1..200), seed in any::<u64>()) {
        let a = summarize(&xs).unwrap();
        // deterministic shuffle
        let mut s = seed | 1;
        for i in (1..xs.len()).rev() {
            s ^= s << 13; s ^= s >> 7; s ^= s << 17;
            xs.swap(i, (s % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(summarize(&xs).unwrap(), a);
    }

    #[test]
    fn summarize_scales(xs in prop::collection::vec(0u64..1_000_000, 2..200), k in 1u64..50) {
        let a = summarize(&xs).unwrap();
        let scaled: Vec<u64> = xs.iter().map(|x| x * k).collect();
        let b = summarize(&scaled).unwrap();
        let kf = k as f64;
        prop_assert!((b.mean_us - kf * a.mean_us).abs() <= 1e-9 * b.mean_us.max(1.0));
        prop_assert!((b.std_us - kf * a.std_us).abs() <= 1e-7 * b.std_us.max(1.0));
        prop_assert_eq!(b.min_us, k * a.min_us);
        prop_assert_eq!(b.max_us, k * a.max_us);
        prop_assert_eq!(b.p50_us, k * a.p50_us);
        prop_assert_eq!(b.p95_us, k * a.p95_us);
        prop_assert_eq!(b.p99_us, k * a.p99_us);
        prop_assert!(a.min_us <= a.p50_us && a.p50_us <= a.p95_us && a.p95_us <= a.p99_us && a.p99_us <= a.max_us);
    }

    #[test]
    fn jitter_ignores_clock_offset(ts in prop::collection::vec(-1_000_000i64..1_000_000, 2..300), off in -1_000_000_000i64..1_000_000_000) {
        let shifted: Vec<i64> = ts.iter().map(|t| t + off).collect();
        prop_assert_eq!(interarrival_jitter(&ts).unwrap(), interarrival_jitter(&shifted).unwrap());
    }

    #[test]
    fn actuator_moves_toward_command_without_overshoot(
        theta in -1.0f64..=1.0, u in -1.0f64..=1.0, dt in 1e-4f64..0.05, tau in 0.05f64..2.0, exact in any::<bool>()
    ) {
        let d = if exact { Discretization::Exact } else { Discretization::Euler };
        let next = actuator_step(theta, u, dt, tau, d).unwrap();
        prop_assert!((-1.0..=1.0).contains(&next));
        // dt < tau here, so even Euler neither overshoots nor moves away
        prop_assert!((next - u).abs() <= (theta - u).abs() + 1e-15);
        prop_assert!((next - theta) * (u - theta) >= 0.0);
    }

    #[test]
    fn actuator_is_monotone_in_command(theta in -1.0f64..=1.0, u1 in -1.0f64..=1.0, u2 in -1.0f64..=1.0, tau in 0.05f64..2.0) {
        let (lo, hi) = if u1 <= u2 { (u1, u2) } else { (u2, u1) };
        for d in [Discretization::Euler, Discretization::Exact] {
            prop_assert!(actuator_step(theta, lo, 0.01, tau, d).unwrap() <= actuator_step(theta, hi, 0.01, tau, d).unwrap());
        }
    }

    #[test]
    fn netem_is_deterministic(seed in any::<u64>(), loss in 0.0f64..0.5, ordered in any::<bool>()) {
        let spec = ChannelSpec { seed, loss_prob: loss, ordered, ..ChannelSpec::default() };
        let run = || {
            let mut ch = EmulatedChannel::new(spec, 1).unwrap();
            (0..200u64).map(|i| ch.send(vec![0; 40], i * 10_000).unwrap()).collect::<Vec<_>>()
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn ordered_channel_delivers_in_send_order(seed in any::<u64>(), sigma in 0u64..40_000, gap in 1u64..20_000) {
        let spec = ChannelSpec { seed, jitter_sigma_us: sigma, min_delay_us: 0, ..ChannelSpec::default() };
        let mut ch = EmulatedChannel::new(spec, 2).unwrap();
        for i in 0..300u64 {
            ch.send(i.to_be_bytes().to_vec(), i * gap).unwrap();
        }
        let out = ch.poll(u64::MAX);
        prop_assert_eq!(out.len(), 300);
        for (i, d) in out.iter().enumerate() {
            prop_assert_eq!(d.payload.clone(), (i as u64).to_be_bytes().to_vec());
            prop_assert!(d.delivery_time_us >= d.send_time_us + spec.min_delay_us);
        }
        prop_assert!(out.windows(2).all(|w| w[0].delivery_time_us <= w[1].delivery_time_us));
    }

    #[test]
    fn ledger_stages_sum_to_g2g(seed in any::<u64>(), extra in 0u64..20_000, encode in 0u64..100_000, sigma in 0u64..40_000) {
        let mut spec = VideoPathSpec { capture_extra_us: extra, encode_us: encode, ..VideoPathSpec::default() };
        spec.net_channel.seed = seed;
        spec.net_channel.jitter_sigma_us = sigma;
        spec.net_channel.min_delay_us = spec.net_channel.min_delay_us.min(spec.net_channel.base_delay_us);
        let mut p = VideoPipeline::new(spec, 3).unwrap();
        for e in uniform_events(120, spec.fps, seed) {
            p.push_event(e).unwrap();
        }
        let frames = p.poll(u64::MAX);
        prop_assert_eq!(frames.len(), 120);
        for f in &frames {
            let s = f.stages().unwrap();
            prop_assert_eq!(s.total_us(), f.g2g_us);
            prop_assert_eq!(f.display_us - f.event_us, f.g2g_us);
        }
        // events sharing a capture tick share a frame; distinct frames never share a refresh
        for w in frames.windows(2) {
            if w[0].frame_id == w[1].frame_id {
                prop_assert_eq!(w[0].display_us, w[1].display_us);
            } else {
                prop_assert!(w[0].frame_id < w[1].frame_id && w[0].display_us < w[1].display_us);
            }
        }
    }

    #[test]
    fn clock_method_error_below_one_clock_period(
        g in 1u64..2_000_000, clock_hz in 1u32..240, cam_hz in 1u32..240, pc in 0u64..1_000_000, pk in 0u64..1_000_000
    ) {
        let clock = Cadence::Hz(clock_hz);
        let r = clock_method_reading(g, clock, Cadence::Hz(cam_hz), pc, pk);
        prop_assert!((r - g as f64).abs() < clock_method_bound_us(clock));
        prop_assert_eq!(clock_method_reading(g, Cadence::Continuous, Cadence::Hz(cam_hz), pc, pk), g as f64);
    }
}
