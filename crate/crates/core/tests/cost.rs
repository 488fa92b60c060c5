use adamec::cost::*;
use adamec::graph::OpConfig;
use adamec::trace::{constant_transmission_ms, transmission_latency, StepTrace};
use proptest::prelude::*;

fn dev() -> DeviceProfile {
    DeviceProfile::new("d", 1e6).with_noise(0.0)
}

/// Convolution with the requested output size.
fn conv_out(out_hw: u32, cin: u32, cout: u32, k_s: u32, s: u32) -> OpConfig {
    OpConfig::conv((out_hw - 1) * s + k_s, cin, cout, k_s, s)
}

const AMPLE: f64 = 1e12;

#[test]
fn channel_staircase() {
    let d = dev();
    for m in 0..8u32 {
        let step: Vec<f64> = (32 * m + 1..=32 * (m + 1)).map(|c| true_latency(&conv_out(16, c, 64, 3, 1), &d, AMPLE)).collect();
        assert!(step.iter().all(|&t| t == step[0]), "cin step {m}");
        let next = true_latency(&conv_out(16, 32 * (m + 1) + 1, 64, 3, 1), &d, AMPLE);
        assert!(next > step[0]);
        let out_step: Vec<f64> = (32 * m + 1..=32 * (m + 1)).map(|c| true_latency(&conv_out(16, 64, c, 3, 1), &d, AMPLE)).collect();
        assert!(out_step.iter().all(|&t| t == out_step[0]), "cout step {m}");
    }
}

#[test]
fn quadratic_in_output_size() {
    let mut previous_gap = f64::INFINITY;
    for overhead in [1.0, 0.1, 0.01, 0.0] {
        let d = dev().with_overhead(overhead);
        let ratio = true_latency(&conv_out(64, 64, 64, 3, 1), &d, AMPLE) / true_latency(&conv_out(32, 64, 64, 3, 1), &d, AMPLE);
        let gap = (4.0 - ratio).abs();
        assert!(gap < previous_gap || gap == 0.0);
        previous_gap = gap;
    }
    assert_eq!(previous_gap, 0.0);
}

#[test]
fn memory_threshold_pattern() {
    let d = dev();
    let c = conv_out(56, 128, 128, 3, 1);
    let m0 = memory_threshold_mb(&c, &d);
    let at = true_latency(&c, &d, m0);
    for k in 0..20 {
        assert_eq!(true_latency(&c, &d, m0 * (1.0 + k as f64 * 0.5)), at);
    }
    let below: Vec<f64> = (0..20).map(|k| true_latency(&c, &d, m0 * k as f64 / 20.0)).collect();
    assert!(below.windows(2).all(|w| w[0] > w[1]));
    assert!(below[19] > at);
    assert_eq!(m0, d.mem_threshold_factor * working_footprint_bytes(&c) as f64 / MB);
}

#[test]
fn spec_conv_example() {
    let t = true_latency(&conv_out(32, 3, 16, 3, 1), &dev(), AMPLE);
    let expected = 32.0 * 32.0 * 9.0 * 32.0 * 32.0 / 1e6;
    assert!((t - expected).abs() < 1e-12);
    assert!((t - 9.437).abs() < 1e-3);
}

#[test]
fn determinism_with_noise() {
    let d = DeviceProfile::new("d", 3e6).with_seed(42);
    for c in [conv_out(8, 3, 16, 3, 1), OpConfig::fc(512, 100), OpConfig::bn(28, 64)] {
        for mem in [0.1, 10.0, AMPLE] {
            assert_eq!(true_latency(&c, &d, mem).to_bits(), true_latency(&c, &d, mem).to_bits());
        }
    }
    let other = d.clone().with_seed(43);
    let c = conv_out(8, 3, 16, 3, 1);
    assert_ne!(true_latency(&c, &d, AMPLE), true_latency(&c, &other, AMPLE));
}

#[test]
fn transmission_examples() {
    let ten_mbit = 10_000_000 / 8;
    assert_eq!(transmission_latency(ten_mbit, &StepTrace::constant(40.0), 0.0).unwrap(), 250.0);
    assert_eq!(constant_transmission_ms(ten_mbit, 40.0), 250.0);
    assert_eq!(transmission_latency(0, &StepTrace::constant(40.0), 3.0).unwrap(), 0.0);
    let trace = StepTrace::new(vec![(0.0, 10.0), (0.5, 30.0)]).unwrap();
    let t = transmission_latency(ten_mbit, &trace, 0.0).unwrap();
    assert!((t - (500.0 + 5.0 / 30.0 * 1e3)).abs() < 1e-9, "{t}");
    let short = StepTrace::constant(1.0).with_horizon(1.0).unwrap();
    assert!(matches!(transmission_latency(ten_mbit, &short, 0.0), Err(adamec::Error::TraceExhausted { .. })));
}

fn kernel() -> impl Strategy<Value = u32> {
    prop::sample::select(vec![1u32, 3, 5, 7])
}

proptest! {
    #[test]
    fn monotone_in_every_dimension(
        out_hw in 1u32..64, cin in 1u32..300, cout in 1u32..300,
        k in kernel(), s in 1u32..=3, overhead in 0.0f64..1.0,
    ) {
        let d = dev().with_overhead(overhead);
        let t = |c: OpConfig| true_latency(&c, &d, AMPLE);
        let base = t(conv_out(out_hw, cin, cout, k, s));
        prop_assert!(t(conv_out(out_hw + 1, cin, cout, k, s)) >= base);
        prop_assert!(t(conv_out(out_hw, cin + 1, cout, k, s)) >= base);
        prop_assert!(t(conv_out(out_hw, cin, cout + 1, k, s)) >= base);
        if k < 7 {
            prop_assert!(t(conv_out(out_hw, cin, cout, k + 2, s)) >= base);
        }
    }

    #[test]
    fn noise_stays_in_band(cin in 1u32..512, cout in 1u32..512, eta in 0.0f64..0.5, seed in any::<u64>(), salt in any::<u64>()) {
        let d = DeviceProfile::new("d", 1e6).with_noise(eta).with_seed(seed);
        let c = OpConfig::fc(cin, cout);
        let base = noiseless_latency(&c, &d, AMPLE);
        let t = true_latency_salted(&c, &d, AMPLE, salt);
        prop_assert!(t >= base * (1.0 - eta) - 1e-12 && t <= base * (1.0 + eta) + 1e-12);
    }

    #[test]
    fn piecewise_matches_constant_when_flat(bytes in 0u64..50_000_000, mbps in 0.5f64..200.0, start in 0.0f64..10.0) {
        let flat = StepTrace::new(vec![(0.0, mbps), (1.0, mbps), (4.0, mbps)]).unwrap();
        let a = transmission_latency(bytes, &flat, start).unwrap();
        let b = constant_transmission_ms(bytes, mbps);
        prop_assert!((a - b).abs() <= 1e-9 * b.max(1.0));
    }
}
