use std::collections::{BTreeMap, VecDeque};

/// Smallest item size handed to the packer; measured zeros are lifted to it.
pub const MIN_ITEM_SIZE: f64 = 0.01;

/// Estimates are kept to a millionth of a core (`1 / ESTIMATE_STEPS`), so
/// averaging a window of equal samples gives back the sample exactly.
pub const ESTIMATE_STEPS: f64 = 1e6;

fn quantize(x: f64) -> f64 {
    (x * ESTIMATE_STEPS).round() / ESTIMATE_STEPS
}

/// Moving average of an image's CPU usage over its last N samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageProfile {
    pub image: String,
    pub window: VecDeque<f64>,
    pub moving_avg: f64,
    pub sample_count: u64,
    capacity: usize,
}

impl ImageProfile {
    fn new(image: &str, capacity: usize, default_estimate: f64) -> Self {
        Self {
            image: image.to_string(),
            window: VecDeque::with_capacity(capacity),
            moving_avg: default_estimate,
            sample_count: 0,
            capacity,
        }
    }

    fn push(&mut self, sample: f64) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(sample);
        self.sample_count += 1;
        self.moving_avg = quantize(self.window.iter().sum::<f64>() / self.window.len() as f64);
    }
}

/// Master-side half of the worker profiler.
#[derive(Debug, Clone)]
pub struct Profiler {
    window: usize,
    default_estimate: f64,
    profiles: BTreeMap<String, ImageProfile>,
}

impl Profiler {
    pub fn new(window: usize, default_estimate: f64) -> Self {
        Self {
            window: window.max(1),
            default_estimate,
            profiles: BTreeMap::new(),
        }
    }

    pub fn add_sample(&mut self, image: &str, cpu_fraction: f64) -> &ImageProfile {
        let sample = if cpu_fraction.is_nan() {
            0.0
        } else {
            cpu_fraction.clamp(0.0, 1.0)
        };
        let (window, default) = (self.window, self.default_estimate);
        let profile = self
            .profiles
            .entry(image.to_string())
            .or_insert_with(|| ImageProfile::new(image, window, default));
        profile.push(sample);
        profile
    }

    pub fn profile(&self, image: &str) -> Option<&ImageProfile> {
        self.profiles.get(image)
    }

    /// Current CPU estimate, the default for images never measured.
    pub fn estimate(&self, image: &str) -> f64 {
        self.profiles
            .get(image)
            .map_or(self.default_estimate, |p| p.moving_avg)
    }

    /// The estimate as a packable item size in `[MIN_ITEM_SIZE, 1]`.
    pub fn item_size(&self, image: &str) -> f64 {
        self.estimate(image).clamp(MIN_ITEM_SIZE, 1.0)
    }

    pub fn images(&self) -> impl Iterator<Item = &str> {
        self.profiles.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_of_window() {
        let mut p = Profiler::new(3, 0.5);
        for s in [0.2, 0.4, 0.6] {
            p.add_sample("a", s);
        }
        assert!((p.estimate("a") - 0.4).abs() < 1e-12);
    }

    #[test]
    fn unseen_image_uses_default() {
        let p = Profiler::new(3, 0.5);
        assert_eq!(p.estimate("never"), 0.5);
        assert!(p.profile("never").is_none());
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut p = Profiler::new(3, 0.5);
        for s in [0.2, 0.4, 0.6, 0.8] {
            p.add_sample("a", s);
        }
        let profile = p.profile("a").unwrap();
        assert_eq!(profile.window, [0.4, 0.6, 0.8]);
        assert!((profile.moving_avg - 0.6).abs() < 1e-12);
        assert_eq!(profile.sample_count, 4);
    }

    #[test]
    fn zero_samples_are_floored_as_items() {
        let mut p = Profiler::new(2, 0.5);
        p.add_sample("a", 0.0);
        assert_eq!(p.estimate("a"), 0.0);
        assert_eq!(p.item_size("a"), MIN_ITEM_SIZE);
    }

    #[test]
    fn converges_after_window_flush() {
        let mut p = Profiler::new(10, 0.5);
        for _ in 0..10 {
            p.add_sample("a", 0.2);
        }
        assert!((p.estimate("a") - 0.2).abs() < 1e-9);
    }
}
