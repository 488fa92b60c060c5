//! Piecewise-constant time series and transfer-time integration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A step function of time (seconds). Each step holds its value until the
/// next one starts; the first value also covers times before it. Without a
/// horizon the last step extends forever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    steps: Vec<(f64, f64)>,
    #[serde(default)]
    horizon_s: Option<f64>,
}

impl StepTrace {
    pub fn new(steps: Vec<(f64, f64)>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("trace needs at least one step"));
        }
        for w in steps.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::invalid("trace steps must have strictly increasing times"));
            }
        }
        if steps.iter().any(|&(t, v)| !t.is_finite() || !v.is_finite() || v < 0.0) {
            return Err(Error::invalid("trace steps must be finite and non-negative"));
        }
        Ok(StepTrace { steps, horizon_s: None })
    }

    pub fn constant(value: f64) -> Self {
        StepTrace { steps: vec![(0.0, value)], horizon_s: None }
    }

    /// Limits the domain to `[.., horizon_s)`.
    pub fn with_horizon(mut self, horizon_s: f64) -> Result<Self> {
        if horizon_s <= self.steps.last().map(|s| s.0).unwrap_or(0.0) {
            return Err(Error::invalid("trace horizon must follow the last step"));
        }
        self.horizon_s = Some(horizon_s);
        Ok(self)
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon_s
    }

    fn segment(&self, t: f64) -> usize {
        self.steps.partition_point(|&(start, _)| start <= t).saturating_sub(1)
    }

    pub fn value_at(&self, t: f64) -> f64 {
        self.steps[self.segment(t)].1
    }
}

/// Milliseconds needed to send `bytes` over a bandwidth trace in Mbps,
/// starting at `start_s`, integrating across bandwidth steps.
pub fn transmission_latency(bytes: u64, trace: &StepTrace, start_s: f64) -> Result<f64> {
    let mut remaining = bytes as f64 * 8.0;
    if remaining == 0.0 {
        return Ok(0.0);
    }
    let end = trace.horizon_s.unwrap_or(f64::INFINITY);
    let mut t = start_s;
    let mut elapsed = 0.0;
    let mut i = trace.segment(t);
    while t < end {
        let seg_end = trace.steps.get(i + 1).map_or(end, |s| s.0.min(end));
        let rate = trace.steps[i].1 * 1e6;
        if rate > 0.0 {
            let need = remaining / rate;
            if t + need <= seg_end {
                return Ok((elapsed + need) * 1e3);
            }
            remaining -= rate * (seg_end - t);
        }
        if seg_end.is_infinite() {
            break;
        }
        elapsed += seg_end - t;
        t = seg_end;
        i += 1;
    }
    Err(Error::TraceExhausted { remaining_bits: remaining })
}

/// Milliseconds to send `bytes` at a constant `mbps`.
pub fn constant_transmission_ms(bytes: u64, mbps: f64) -> f64 {
    if bytes == 0 {
        0.0
    } else {
        bytes as f64 * 8.0 / (mbps * 1e6) * 1e3
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_bandwidth() {
        let t = transmission_latency(1_250_000, &StepTrace::constant(40.0), 3.0).unwrap();
        assert!((t - 250.0).abs() < 1e-9);
        assert_eq!(transmission_latency(0, &StepTrace::constant(40.0), 0.0).unwrap(), 0.0);
        assert!((constant_transmission_ms(1_250_000, 40.0) - 250.0).abs() < 1e-12);
    }

    #[test]
    fn piecewise_integration() {
        let trace = StepTrace::new(vec![(0.0, 10.0), (0.5, 30.0)]).unwrap();
        let t = transmission_latency(1_250_000, &trace, 0.0).unwrap();
        assert!((t - (500.0 + 5.0 / 30.0 * 1e3)).abs() < 1e-9, "{t}");
    }

    #[test]
    fn zero_bandwidth_steps_are_waited_out() {
        let trace = StepTrace::new(vec![(0.0, 0.0), (1.0, 8.0)]).unwrap();
        let t = transmission_latency(1_000_000, &trace, 0.0).unwrap();
        assert!((t - 2000.0).abs() < 1e-9);
    }

    #[test]
    fn exhaustion() {
        let trace = StepTrace::new(vec![(0.0, 8.0)]).unwrap().with_horizon(1.0).unwrap();
        match transmission_latency(2_000_000, &trace, 0.0) {
            Err(Error::TraceExhausted { remaining_bits }) => assert!((remaining_bits - 8e6).abs() < 1e-6),
            other => panic!("{other:?}"),
        }
        let dead = StepTrace::constant(0.0);
        assert!(transmission_latency(1, &dead, 0.0).is_err());
    }

    #[test]
    fn rejects_unsorted_steps() {
        assert!(StepTrace::new(vec![(1.0, 1.0), (0.5, 2.0)]).is_err());
        assert!(StepTrace::new(vec![]).is_err());
    }
}
