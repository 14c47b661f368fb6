use serde::{Deserialize, Serialize};

use crate::clock::Millis;

use super::config::IrmConfig;

/// Backlog length and its signed rate of change in messages per second.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueMetrics {
    pub length: usize,
    pub roc: f64,
    pub sampled_at: Millis,
}

/// Turns successive length readings into [`QueueMetrics`].
#[derive(Debug, Default, Clone)]
pub struct QueueSampler {
    previous: Option<(usize, Millis)>,
}

impl QueueSampler {
    pub fn sample(&mut self, length: usize, now: Millis) -> QueueMetrics {
        let roc = match self.previous {
            Some((prev, at)) if now > at => {
                (length as f64 - prev as f64) / ((now - at) as f64 / 1000.0)
            }
            _ => 0.0,
        };
        self.previous = Some((length, now));
        QueueMetrics {
            length,
            roc,
            sampled_at: now,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingDecision {
    None,
    Small(u32),
    Large(u32),
}

impl ScalingDecision {
    pub fn count(self) -> u32 {
        match self {
            ScalingDecision::None => 0,
            ScalingDecision::Small(n) | ScalingDecision::Large(n) => n,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ScalingDecision::None => "none",
            ScalingDecision::Small(_) => "small",
            ScalingDecision::Large(_) => "large",
        }
    }
}

/// The four-case threshold table, without the timeout.
pub fn classify(metrics: &QueueMetrics, config: &IrmConfig) -> ScalingDecision {
    let long = metrics.length >= config.len_low;
    let fast = metrics.roc >= config.roc_low;
    if metrics.length >= config.len_high || metrics.roc >= config.roc_high || (long && fast) {
        ScalingDecision::Large(config.scale_large)
    } else if long || fast {
        ScalingDecision::Small(config.scale_small)
    } else {
        ScalingDecision::None
    }
}

/// Decides when queue pressure warrants more PEs.
#[derive(Debug, Clone)]
pub struct LoadPredictor {
    config: IrmConfig,
    suppressed_until: Option<Millis>,
}

impl LoadPredictor {
    pub fn new(config: IrmConfig) -> Self {
        Self {
            config,
            suppressed_until: None,
        }
    }

    pub fn evaluate(&mut self, metrics: &QueueMetrics, now: Millis) -> ScalingDecision {
        if self.suppressed_until.is_some_and(|until| now < until) {
            return ScalingDecision::None;
        }
        let decision = classify(metrics, &self.config);
        if decision != ScalingDecision::None {
            self.suppressed_until = Some(now + self.config.predictor_timeout_ms());
        }
        decision
    }

    pub fn suppressed_until(&self) -> Option<Millis> {
        self.suppressed_until
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(length: usize, roc: f64) -> QueueMetrics {
        QueueMetrics {
            length,
            roc,
            sampled_at: 0,
        }
    }

    #[test]
    fn table_cases() {
        let c = IrmConfig::default();
        assert_eq!(classify(&m(60, 0.0), &c), ScalingDecision::Large(4));
        assert_eq!(classify(&m(0, 6.0), &c), ScalingDecision::Large(4));
        assert_eq!(classify(&m(12, 2.0), &c), ScalingDecision::Large(4));
        assert_eq!(classify(&m(12, 0.2), &c), ScalingDecision::Small(1));
        assert_eq!(classify(&m(3, 1.5), &c), ScalingDecision::Small(1));
        assert_eq!(classify(&m(2, 0.1), &c), ScalingDecision::None);
        assert_eq!(classify(&m(12, -3.0), &c), ScalingDecision::Small(1));
    }

    #[test]
    fn roc_from_consecutive_samples() {
        let mut s = QueueSampler::default();
        assert_eq!(s.sample(10, 0).roc, 0.0);
        assert_eq!(s.sample(20, 2000).roc, 5.0);
        assert_eq!(s.sample(14, 4000).roc, -3.0);
    }

    #[test]
    fn timeout_suppresses_followups() {
        let config = IrmConfig::default();
        let mut p = LoadPredictor::new(config);
        assert_eq!(p.evaluate(&m(60, 0.0), 0), ScalingDecision::Large(4));
        assert_eq!(p.evaluate(&m(60, 0.0), 2_000), ScalingDecision::None);
        assert_eq!(p.evaluate(&m(60, 0.0), 9_999), ScalingDecision::None);
        assert_eq!(p.evaluate(&m(60, 0.0), 10_000), ScalingDecision::Large(4));
    }

    #[test]
    fn quiet_decisions_do_not_arm_timeout() {
        let mut p = LoadPredictor::new(IrmConfig::default());
        assert_eq!(p.evaluate(&m(1, 0.0), 0), ScalingDecision::None);
        assert_eq!(p.evaluate(&m(12, 0.0), 1), ScalingDecision::Small(1));
    }
}
