//! Synthetic trace generation with known ground truth: a population of
//! Pareto-sized elephants plus uniform-sized mice, interleaved by a uniformly
//! random permutation over equally spaced time slots. The permutation makes
//! position-based sampling of the stream equivalent in distribution to
//! proportional flow sampling, which is what the estimator assumes.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{FlowKey, PacketRecord};

/// Parameters of one synthetic window population.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_elephants: u64,
    pub shape_a: f64,
    pub b_min: u64,
    pub n_mice: u64,
    /// Mouse sizes are uniform on `1..=mouse_max`; must stay below `b_min`.
    pub mouse_max: u64,
    /// Length of one generated window, seconds.
    pub window_span: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.shape_a > 0.0) || !self.shape_a.is_finite() {
            return Err(Error::invalid(format!(
                "shape a must be > 0, got {}",
                self.shape_a
            )));
        }
        if self.b_min < 1 {
            return Err(Error::invalid("b_min must be >= 1"));
        }
        if self.mouse_max < 1 {
            return Err(Error::invalid("mouse_max must be >= 1"));
        }
        if self.mouse_max >= self.b_min {
            return Err(Error::invalid(format!(
                "mouse_max {} must be smaller than b_min {}",
                self.mouse_max, self.b_min
            )));
        }
        if !(self.window_span > 0.0) || !self.window_span.is_finite() {
            return Err(Error::invalid("window_span must be > 0"));
        }
        let flows = self.n_elephants + self.n_mice;
        if flows > u32::MAX as u64 {
            return Err(Error::invalid("too many flows per window"));
        }
        Ok(())
    }
}

/// True per-flow sizes and derived counts for a generated trace.
///
/// `k` is the number of flows with at least `b_min` packets, averaged per
/// generated window (for a single window it is the plain count).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(rename = "a")]
    pub shape_a: f64,
    pub b_min: u64,
    pub k: f64,
    pub n_windows: u64,
    pub sizes_histogram: BTreeMap<u64, u64>,
    pub window_span: f64,
}

impl GroundTruth {
    /// Average per-generated-window count of flows with size >= `threshold`.
    pub fn flows_at_least(&self, threshold: u64) -> f64 {
        let total: u64 = self
            .sizes_histogram
            .range(threshold..)
            .map(|(_, c)| c)
            .sum();
        total as f64 / self.n_windows as f64
    }

    /// Total packet count across the whole trace.
    pub fn total_packets(&self) -> u64 {
        self.sizes_histogram.iter().map(|(s, c)| s * c).sum()
    }
}

/// Inverse-transform draw of a discrete Pareto size: `ceil(b_min / u^(1/a))`.
///
/// The resulting variable satisfies `P(S >= x) = (b_min / (x - 1))^a` for
/// integer `x > b_min`, and `P(S >= b_min) = 1`.
pub fn draw_pareto_size(shape_a: f64, b_min: u64, uniform_u: f64) -> Result<u64> {
    if !(shape_a > 0.0) {
        return Err(Error::invalid("shape a must be > 0"));
    }
    if b_min < 1 {
        return Err(Error::invalid("b_min must be >= 1"));
    }
    if !(uniform_u > 0.0 && uniform_u < 1.0) {
        return Err(Error::invalid(format!(
            "uniform draw must lie in (0, 1), got {uniform_u}"
        )));
    }
    Ok((b_min as f64 / uniform_u.powf(1.0 / shape_a)).ceil() as u64)
}

/// Streaming generator over one or more windows. Records come out in time
/// order; flow keys are reused across windows (flow identity is per window).
/// Call [`TraceGenerator::finish`] after exhaustion for the ground truth.
pub struct TraceGenerator {
    cfg: SynthConfig,
    n_windows: u64,
    rng: ChaCha12Rng,
    keys: Vec<Arc<FlowKey>>,
    hist: BTreeMap<u64, u64>,
    elephants_seen: u64,
    window: u64,
    labels: Vec<u32>,
    pos: usize,
    slot_dt: f64,
    window_start: f64,
}

impl TraceGenerator {
    pub fn new(cfg: SynthConfig) -> Result<Self> {
        Self::multi_window(cfg, 1)
    }

    pub fn multi_window(cfg: SynthConfig, n_windows: u64) -> Result<Self> {
        cfg.validate()?;
        if n_windows == 0 {
            return Err(Error::invalid("n_windows must be >= 1"));
        }
        let rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let n_flows = (cfg.n_elephants + cfg.n_mice) as usize;
        let keys = (0..n_flows).map(synthetic_key).collect();
        Ok(Self {
            cfg,
            n_windows,
            rng,
            keys,
            hist: BTreeMap::new(),
            elephants_seen: 0,
            window: 0,
            labels: Vec::new(),
            pos: 0,
            slot_dt: 0.0,
            window_start: 0.0,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.cfg
    }

    /// Ground truth accumulated over every window generated so far.
    pub fn finish(self) -> GroundTruth {
        let windows = self.window.max(1);
        GroundTruth {
            shape_a: self.cfg.shape_a,
            b_min: self.cfg.b_min,
            k: self.elephants_seen as f64 / windows as f64,
            n_windows: windows,
            sizes_histogram: self.hist,
            window_span: self.cfg.window_span,
        }
    }

    fn start_window(&mut self) -> bool {
        if self.window >= self.n_windows {
            return false;
        }
        let cfg = &self.cfg;
        let mut sizes = Vec::with_capacity((cfg.n_elephants + cfg.n_mice) as usize);
        for _ in 0..cfg.n_elephants {
            let u: f64 = self.rng.random();
            // random() lies in [0, 1); map 0 to the open interval
            let u = if u == 0.0 { f64::MIN_POSITIVE } else { u };
            let s = draw_pareto_size(cfg.shape_a, cfg.b_min, u).expect("validated config");
            sizes.push(s);
        }
        for _ in 0..cfg.n_mice {
            sizes.push(self.rng.random_range(1..=cfg.mouse_max));
        }
        let total: u64 = sizes.iter().sum();
        self.labels.clear();
        self.labels.reserve(total as usize);
        for (flow, &s) in sizes.iter().enumerate() {
            if s >= cfg.b_min {
                self.elephants_seen += 1;
            }
            *self.hist.entry(s).or_insert(0) += 1;
            for _ in 0..s {
                self.labels.push(flow as u32);
            }
        }
        self.labels.shuffle(&mut self.rng);
        self.pos = 0;
        self.slot_dt = cfg.window_span / total.max(1) as f64;
        self.window_start = self.window as f64 * cfg.window_span;
        self.window += 1;
        true
    }
}

impl Iterator for TraceGenerator {
    type Item = PacketRecord;

    fn next(&mut self) -> Option<PacketRecord> {
        while self.pos >= self.labels.len() {
            if !self.start_window() {
                return None;
            }
        }
        let flow = self.labels[self.pos] as usize;
        let t = self.window_start + (self.pos as f64 + 0.5) * self.slot_dt;
        self.pos += 1;
        Some(PacketRecord {
            timestamp: t,
            key: Arc::clone(&self.keys[flow]),
        })
    }
}

/// Generate one window into memory. See [`TraceGenerator`] for streaming.
pub fn generate_trace(cfg: &SynthConfig) -> Result<(Vec<PacketRecord>, GroundTruth)> {
    let mut generator = TraceGenerator::new(cfg.clone())?;
    let records: Vec<PacketRecord> = generator.by_ref().collect();
    Ok((records, generator.finish()))
}

fn synthetic_key(flow: usize) -> Arc<FlowKey> {
    let f = flow as u64;
    Arc::new(FlowKey {
        src_addr: format!("10.{}.{}.{}", (f >> 16) & 255, (f >> 8) & 255, f & 255),
        dst_addr: "198.51.100.1".to_string(),
        src_port: 1024 + ((f >> 24) % 60000) as u16,
        dst_port: 443,
        protocol: 6,
    })
}
