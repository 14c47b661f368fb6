use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{millis, Millis};

#[derive(Debug, Error, PartialEq)]
#[error("invalid IRM config: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

/// Durations are written as seconds (float) in JSON.
pub(crate) mod secs {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}

/// Tunables of the resource manager. JSON keys match the field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IrmConfig {
    #[serde(with = "secs")]
    pub packing_interval: Duration,
    #[serde(alias = "profiler_window_N")]
    pub profiler_window_n: usize,
    #[serde(with = "secs")]
    pub report_interval: Duration,
    #[serde(with = "secs")]
    pub container_idle_timeout: Duration,
    pub default_cpu_estimate: f64,
    pub ttl_initial: u32,
    pub len_low: usize,
    pub len_high: usize,
    pub roc_low: f64,
    pub roc_high: f64,
    pub scale_small: u32,
    pub scale_large: u32,
    #[serde(with = "secs")]
    pub predictor_interval: Duration,
    #[serde(with = "secs")]
    pub predictor_timeout: Duration,
    #[serde(with = "secs")]
    pub worker_grace: Duration,
    pub max_workers: usize,
}

impl Default for IrmConfig {
    fn default() -> Self {
        Self {
            packing_interval: Duration::from_secs(2),
            profiler_window_n: 10,
            report_interval: Duration::from_secs(1),
            container_idle_timeout: Duration::from_secs(1),
            default_cpu_estimate: 0.5,
            ttl_initial: 3,
            len_low: 10,
            len_high: 50,
            roc_low: 1.0,
            roc_high: 5.0,
            scale_small: 1,
            scale_large: 4,
            predictor_interval: Duration::from_secs(2),
            predictor_timeout: Duration::from_secs(10),
            worker_grace: Duration::from_secs(30),
            max_workers: 20,
        }
    }
}

impl IrmConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut errors = Vec::new();
        if self.len_low >= self.len_high {
            errors.push(format!(
                "len_low ({}) must be below len_high ({})",
                self.len_low, self.len_high
            ));
        }
        if !(self.roc_low < self.roc_high) {
            errors.push(format!(
                "roc_low ({}) must be below roc_high ({})",
                self.roc_low, self.roc_high
            ));
        }
        if self.scale_small > self.scale_large {
            errors.push(format!(
                "scale_small ({}) must not exceed scale_large ({})",
                self.scale_small, self.scale_large
            ));
        }
        if self.profiler_window_n == 0 {
            errors.push("profiler_window_n must be at least 1".into());
        }
        if !(self.default_cpu_estimate > 0.0 && self.default_cpu_estimate <= 1.0) {
            errors.push(format!(
                "default_cpu_estimate ({}) must be in (0, 1]",
                self.default_cpu_estimate
            ));
        }
        if self.ttl_initial == 0 {
            errors.push("ttl_initial must be at least 1".into());
        }
        if self.max_workers == 0 {
            errors.push("max_workers must be at least 1".into());
        }
        for (name, d) in [
            ("packing_interval", self.packing_interval),
            ("report_interval", self.report_interval),
            ("predictor_interval", self.predictor_interval),
        ] {
            if d.is_zero() {
                errors.push(format!("{name} must be positive"));
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(errors))
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let config: IrmConfig =
            serde_json::from_str(text).map_err(|e| ConfigError(vec![e.to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn packing_interval_ms(&self) -> Millis {
        millis(self.packing_interval)
    }

    pub fn report_interval_ms(&self) -> Millis {
        millis(self.report_interval)
    }

    pub fn idle_timeout_ms(&self) -> Millis {
        millis(self.container_idle_timeout)
    }

    pub fn predictor_interval_ms(&self) -> Millis {
        millis(self.predictor_interval)
    }

    pub fn predictor_timeout_ms(&self) -> Millis {
        millis(self.predictor_timeout)
    }

    pub fn worker_grace_ms(&self) -> Millis {
        millis(self.worker_grace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        IrmConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_keeps_defaults() {
        let c = IrmConfig::from_json(r#"{"report_interval": 0.5, "profiler_window_N": 4}"#).unwrap();
        assert_eq!(c.report_interval, Duration::from_millis(500));
        assert_eq!(c.profiler_window_n, 4);
        assert_eq!(c.ttl_initial, 3);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(IrmConfig::from_json(r#"{"packing_intervall": 3}"#).is_err());
    }

    #[test]
    fn every_violation_reported() {
        let c = IrmConfig {
            len_low: 60,
            roc_low: 9.0,
            scale_small: 5,
            ..IrmConfig::default()
        };
        let err = c.validate().unwrap_err();
        assert_eq!(err.0.len(), 3);
    }

    #[test]
    fn serializes_durations_as_seconds() {
        let v = serde_json::to_value(IrmConfig::default()).unwrap();
        assert_eq!(v["packing_interval"], 2.0);
        assert_eq!(v["container_idle_timeout"], 1.0);
    }
}
