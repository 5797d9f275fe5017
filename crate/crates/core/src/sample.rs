//! Packet sampling: the deterministic 1-out-of-kappa scheme the estimator is
//! built for, a Bernoulli per-packet variant kept as a testing reference,
//! and the multinomial oracle realizing proportional flow sampling.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{FlowKey, PacketRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    Deterministic,
    /// Independent per-packet selection at rate 1/kappa. Reference mode for
    /// tests only; routers implement the deterministic scheme.
    Bernoulli,
}

/// 1-out-of-kappa sampling parameters. The position counter is global: it
/// runs across window boundaries, as router sampling does.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub kappa: u64,
    /// Stream position selected modulo kappa; defaults to kappa - 1 so the
    /// kappa-th, 2 kappa-th, ... packets are kept.
    pub phase: u64,
    pub mode: SamplingMode,
}

impl SamplingConfig {
    pub fn deterministic(kappa: u64) -> Result<Self> {
        Self::new(kappa, kappa.saturating_sub(1), SamplingMode::Deterministic)
    }

    pub fn new(kappa: u64, phase: u64, mode: SamplingMode) -> Result<Self> {
        if kappa < 1 {
            return Err(Error::invalid("kappa must be >= 1"));
        }
        if phase >= kappa {
            return Err(Error::invalid(format!(
                "phase {phase} must lie in [0, kappa = {kappa})"
            )));
        }
        Ok(Self { kappa, phase, mode })
    }

    pub fn rate(&self) -> f64 {
        1.0 / self.kappa as f64
    }
}

/// Stateful position filter for the deterministic scheme.
#[derive(Debug, Clone)]
pub struct DeterministicSampler {
    kappa: u64,
    phase: u64,
    position: u64,
}

impl DeterministicSampler {
    pub fn new(cfg: &SamplingConfig) -> Result<Self> {
        if cfg.mode != SamplingMode::Deterministic {
            return Err(Error::invalid("sampler requires deterministic mode"));
        }
        Ok(Self {
            kappa: cfg.kappa,
            phase: cfg.phase,
            position: 0,
        })
    }

    /// Advance past one record; true when this position is selected.
    pub fn admit(&mut self) -> bool {
        let takes = self.position % self.kappa == self.phase;
        self.position += 1;
        takes
    }

    pub fn position(&self) -> u64 {
        self.position
    }
}

/// Filter a record stream down to the selected positions.
pub fn deterministic_sample<I>(records: I, cfg: &SamplingConfig) -> Result<Vec<PacketRecord>>
where
    I: IntoIterator<Item = PacketRecord>,
{
    let mut sampler = DeterministicSampler::new(cfg)?;
    Ok(records
        .into_iter()
        .filter(|_| sampler.admit())
        .collect())
}

/// Independent Bernoulli(1/kappa) selection; reference oracle for tests.
pub fn bernoulli_sample<I>(records: I, cfg: &SamplingConfig, seed: u64) -> Result<Vec<PacketRecord>>
where
    I: IntoIterator<Item = PacketRecord>,
{
    if cfg.mode != SamplingMode::Bernoulli {
        return Err(Error::invalid("bernoulli_sample requires bernoulli mode"));
    }
    let p = cfg.rate();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    Ok(records
        .into_iter()
        .filter(|_| rng.random::<f64>() < p)
        .collect())
}

/// Number of positions selected out of `total` by the deterministic scheme.
pub fn deterministic_sample_count(total: u64, cfg: &SamplingConfig) -> u64 {
    if total <= cfg.phase {
        0
    } else {
        (total - cfg.phase + cfg.kappa - 1) / cfg.kappa
    }
}

/// Draw per-flow sample counts from the proportional-choice model: each of
/// `n_samples` picks lands on flow i with probability `v[i] / V`.
pub fn multinomial_oracle(v: &[u64], n_samples: u64, seed: u64) -> Result<Vec<u64>> {
    if v.iter().any(|&x| x < 1) {
        return Err(Error::invalid("flow sizes must be >= 1"));
    }
    let total: u64 = v.iter().sum();
    if total == 0 {
        return Err(Error::invalid("empty flow population"));
    }
    let mut cumulative = Vec::with_capacity(v.len());
    let mut acc = 0u64;
    for &x in v {
        acc += x;
        cumulative.push(acc);
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut hits = vec![0u64; v.len()];
    for _ in 0..n_samples {
        let r = rng.random_range(0..total);
        let idx = cumulative.partition_point(|&c| c <= r);
        hits[idx] += 1;
    }
    Ok(hits)
}

/// Per-window map from flow to its number of sampled packets.
#[derive(Debug, Clone, Default)]
pub struct SampledFlowTable {
    pub window_index: u64,
    pub counts: HashMap<Arc<FlowKey>, u64>,
    pub total_sampled: u64,
}

/// Window the sampled stream. Flows with zero samples in a window are
/// simply absent; windows with no sampled packets are emitted empty so the
/// indexing stays dense.
pub fn count_sampled_flows<I>(records: I, delta: f64, origin: f64) -> Result<Vec<SampledFlowTable>>
where
    I: IntoIterator<Item = PacketRecord>,
{
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("window length must be > 0, got {delta}")));
    }
    let mut sparse: BTreeMap<u64, SampledFlowTable> = BTreeMap::new();
    let mut any = false;
    for r in records {
        any = true;
        if r.timestamp < origin {
            return Err(Error::invalid(format!(
                "timestamp {} precedes window origin {origin}",
                r.timestamp
            )));
        }
        let idx = ((r.timestamp - origin) / delta).floor() as u64;
        let table = sparse.entry(idx).or_insert_with(|| SampledFlowTable {
            window_index: idx,
            ..Default::default()
        });
        *table.counts.entry(r.key).or_insert(0) += 1;
        table.total_sampled += 1;
    }
    if !any {
        return Ok(Vec::new());
    }
    let last = *sparse.keys().next_back().expect("nonempty");
    let mut dense = Vec::with_capacity(last as usize + 1);
    for idx in 0..=last {
        dense.push(sparse.remove(&idx).unwrap_or(SampledFlowTable {
            window_index: idx,
            ..Default::default()
        }));
    }
    Ok(dense)
}

/// Header comment carried by re-emitted sampled streams.
pub fn format_sampling_header(cfg: &SamplingConfig) -> String {
    format!("# sampled kappa={} phase={}", cfg.kappa, cfg.phase)
}

/// Parse `# sampled kappa=<k> phase=<p>` back into (kappa, phase).
pub fn parse_sampling_header(line: &str) -> Option<(u64, u64)> {
    let rest = line.strip_prefix("# sampled ")?;
    let mut kappa = None;
    let mut phase = None;
    for part in rest.split_whitespace() {
        if let Some(v) = part.strip_prefix("kappa=") {
            kappa = v.parse().ok();
        } else if let Some(v) = part.strip_prefix("phase=") {
            phase = v.parse().ok();
        }
    }
    Some((kappa?, phase?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_trace, SynthConfig};

    fn records(n: u64) -> Vec<PacketRecord> {
        let key = Arc::new(FlowKey {
            src_addr: "10.0.0.1".into(),
            dst_addr: "10.0.0.2".into(),
            src_port: 1,
            dst_port: 2,
            protocol: 6,
        });
        (0..n)
            .map(|i| PacketRecord {
                timestamp: i as f64 * 0.1,
                key: Arc::clone(&key),
            })
            .collect()
    }

    #[test]
    fn positions_follow_phase_mod_kappa() {
        let cfg = SamplingConfig::new(3, 2, SamplingMode::Deterministic).unwrap();
        let sampled = deterministic_sample(records(10), &cfg).unwrap();
        let times: Vec<f64> = sampled.iter().map(|r| r.timestamp).collect();
        assert_eq!(times.len(), 3);
        // positions 2, 5, 8
        assert_eq!(times, vec![0.2, 0.5, 0.8]);
    }

    #[test]
    fn kappa_one_is_identity() {
        let cfg = SamplingConfig::deterministic(1).unwrap();
        let inp = records(17);
        let sampled = deterministic_sample(inp.clone(), &cfg).unwrap();
        assert_eq!(sampled, inp);
    }

    #[test]
    fn sampled_count_matches_closed_form() {
        let cfg = SamplingConfig::deterministic(7).unwrap();
        for total in [0u64, 1, 6, 7, 8, 50, 700, 701] {
            let got = deterministic_sample(records(total), &cfg).unwrap().len() as u64;
            assert_eq!(got, deterministic_sample_count(total, &cfg), "total = {total}");
        }
    }

    #[test]
    fn synthetic_trace_sample_count() {
        let cfg = SynthConfig {
            n_elephants: 30,
            shape_a: 1.85,
            b_min: 20,
            n_mice: 100,
            mouse_max: 5,
            window_span: 1.0,
            seed: 4,
        };
        let (recs, truth) = generate_trace(&cfg).unwrap();
        let v = truth.total_packets();
        let scfg = SamplingConfig::deterministic(10).unwrap();
        let sampled = deterministic_sample(recs, &scfg).unwrap();
        assert_eq!(sampled.len() as u64, deterministic_sample_count(v, &scfg));
    }

    #[test]
    fn composed_sampling_equals_product_kappa() {
        let (a, pa) = (3u64, 1u64);
        let (b, pb) = (4u64, 2u64);
        let ca = SamplingConfig::new(a, pa, SamplingMode::Deterministic).unwrap();
        let cb = SamplingConfig::new(b, pb, SamplingMode::Deterministic).unwrap();
        let combined =
            SamplingConfig::new(a * b, pa + a * pb, SamplingMode::Deterministic).unwrap();
        let inp = records(100);
        let two_step =
            deterministic_sample(deterministic_sample(inp.clone(), &ca).unwrap(), &cb).unwrap();
        let one_step = deterministic_sample(inp, &combined).unwrap();
        assert_eq!(two_step, one_step);
    }

    #[test]
    fn oracle_single_flow_takes_all() {
        assert_eq!(multinomial_oracle(&[4], 3, 0).unwrap(), vec![3]);
    }

    #[test]
    fn oracle_mean_w1_by_enumeration() {
        // v = [3, 1], n = 2: P(vhat_1 = 1) = 2 * (3/4)(1/4) = 3/8 and
        // W_1 = 2 when that happens, else 0: E(W_1) = 3/4.
        let mut w1_sum = 0.0;
        let trials = 200_000u64;
        for seed in 0..trials {
            let hits = multinomial_oracle(&[3, 1], 2, seed).unwrap();
            w1_sum += hits.iter().filter(|&&h| h == 1).count() as f64;
        }
        let mean = w1_sum / trials as f64;
        // variance of W_1 here: W_1 in {0, 2}, P(2) = 3/8 -> var = 4 * (3/8)(5/8)
        let se = (4.0 * (3.0 / 8.0) * (5.0 / 8.0) / trials as f64).sqrt();
        assert!((mean - 0.75).abs() < 4.0 * se, "mean = {mean}");
    }

    #[test]
    fn oracle_equal_split_probability() {
        // v = [1, 1], n = 2: P(vhat = [1, 1]) = 1/2.
        let trials = 100_000u64;
        let mut both = 0u64;
        for seed in 0..trials {
            if multinomial_oracle(&[1, 1], 2, seed).unwrap() == vec![1, 1] {
                both += 1;
            }
        }
        let p = both as f64 / trials as f64;
        let se = (0.25f64 / trials as f64).sqrt();
        assert!((p - 0.5).abs() < 4.0 * se, "p = {p}");
    }

    #[test]
    fn sampled_windows_are_dense_with_gaps_empty() {
        let key = Arc::new(FlowKey {
            src_addr: "1.1.1.1".into(),
            dst_addr: "2.2.2.2".into(),
            src_port: 1,
            dst_port: 2,
            protocol: 17,
        });
        let recs = vec![
            PacketRecord { timestamp: 0.5, key: Arc::clone(&key) },
            PacketRecord { timestamp: 0.6, key: Arc::clone(&key) },
            PacketRecord { timestamp: 2.5, key: Arc::clone(&key) },
        ];
        let tables = count_sampled_flows(recs, 1.0, 0.0).unwrap();
        assert_eq!(tables.len(), 3);
        assert_eq!(tables[0].counts[&key], 2);
        assert_eq!(tables[0].total_sampled, 2);
        assert!(tables[1].counts.is_empty());
        assert_eq!(tables[2].total_sampled, 1);
    }

    #[test]
    fn kappa_one_windows_match_full_tables() {
        let cfg = SynthConfig {
            n_elephants: 5,
            shape_a: 2.0,
            b_min: 8,
            n_mice: 40,
            mouse_max: 3,
            window_span: 2.0,
            seed: 21,
        };
        let (recs, _) = generate_trace(&cfg).unwrap();
        let scfg = SamplingConfig::deterministic(1).unwrap();
        let sampled = deterministic_sample(recs.clone(), &scfg).unwrap();
        let full = crate::trace::window_flows(recs, 0.5, 0.0).unwrap();
        let thin = count_sampled_flows(sampled, 0.5, 0.0).unwrap();
        assert_eq!(full.len(), thin.len());
        for (f, t) in full.iter().zip(&thin) {
            assert_eq!(f.total_packets, t.total_sampled);
            assert_eq!(f.counts.len(), t.counts.len());
            for (k, v) in &f.counts {
                assert_eq!(t.counts[k], *v);
            }
        }
    }

    #[test]
    fn sampling_header_round_trip() {
        let cfg = SamplingConfig::deterministic(100).unwrap();
        let line = format_sampling_header(&cfg);
        assert_eq!(parse_sampling_header(&line), Some((100, 99)));
        assert_eq!(parse_sampling_header("# other comment"), None);
    }
}
