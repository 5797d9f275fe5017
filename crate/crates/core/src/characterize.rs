//! Full-trace characterization: pick the window length, build the empirical
//! flow-size CCDF, bound the fit range, and fit the Pareto shape by ordinary
//! least squares in log10-log10 scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trace::{PacketRecord, WindowFlowTable};

/// Tunables of the characterization pipeline. Defaults follow the method's
/// universal constants: 1000 flows above 20 packets to accept a window
/// length, a 5% exceedance bound for `b_max`, and a 2e-3 mean-square
/// residual gate for `b_min`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CharacterizeOpts {
    pub candidate_deltas: Vec<f64>,
    /// Analysis prefix length in seconds; windows past it are ignored.
    pub prefix_len: f64,
    pub min_large_flows: u64,
    pub large_flow_size: u64,
    pub bmax_exceedance: f64,
    pub residual_threshold: f64,
    /// CCDF points backed by fewer flows than this are left out of the fit.
    pub min_fit_support: u64,
}

impl Default for CharacterizeOpts {
    fn default() -> Self {
        Self {
            candidate_deltas: vec![1.0, 2.0, 5.0, 10.0, 15.0, 30.0, 60.0],
            prefix_len: 120.0,
            min_large_flows: 1000,
            large_flow_size: 20,
            bmax_exceedance: 0.05,
            residual_threshold: 2e-3,
            min_fit_support: 5,
        }
    }
}

/// One point of the empirical complementary CDF.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CcdfPoint {
    pub size: u64,
    /// Fraction of flows with size >= `size`.
    pub ccdf: f64,
    /// Number of flows with size >= `size`.
    pub support: u64,
}

/// Empirical CCDF over per-window flow sizes, possibly pooled across
/// windows. Non-increasing in `size`; the first point has ccdf 1.
#[derive(Debug, Clone, Serialize)]
pub struct SizeCcdf {
    pub points: Vec<CcdfPoint>,
    pub n_flows: u64,
    pub n_windows: u64,
}

impl SizeCcdf {
    pub fn ccdf_at(&self, size: u64) -> f64 {
        match self.points.binary_search_by_key(&size, |p| p.size) {
            Ok(i) => self.points[i].ccdf,
            Err(i) if i < self.points.len() => self.points[i].ccdf,
            Err(_) => 0.0,
        }
    }
}

/// Result of the log-log least-squares fit.
#[derive(Debug, Clone, Serialize)]
pub struct ParetoFit {
    #[serde(rename = "a")]
    pub shape_a: f64,
    pub b_max: u64,
    pub b_min: u64,
    /// Average per pooled window of flows with size >= `b_min`.
    pub n_elephants_window_avg: f64,
    pub qualified: bool,
    #[serde(rename = "residual")]
    pub l2_residual: f64,
    /// Intercept of the fitted line in log10-log10 scale, for plotting.
    #[serde(skip)]
    pub intercept: f64,
}

/// Outcome of window-length selection.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DeltaChoice {
    pub delta: f64,
    pub qualified: bool,
}

/// Empirical CCDF from an iterator of flow sizes (one entry per flow).
pub fn empirical_ccdf_sizes<I>(sizes: I, n_windows: u64) -> Result<SizeCcdf>
where
    I: IntoIterator<Item = u64>,
{
    let mut hist: BTreeMap<u64, u64> = BTreeMap::new();
    let mut n_flows = 0u64;
    for s in sizes {
        *hist.entry(s).or_insert(0) += 1;
        n_flows += 1;
    }
    if n_flows == 0 {
        return Err(Error::insufficient("no flows to build a CCDF from"));
    }
    let mut points = Vec::with_capacity(hist.len());
    let mut at_least = n_flows;
    for (&size, &count) in hist.iter() {
        points.push(CcdfPoint {
            size,
            ccdf: at_least as f64 / n_flows as f64,
            support: at_least,
        });
        at_least -= count;
    }
    Ok(SizeCcdf {
        points,
        n_flows,
        n_windows: n_windows.max(1),
    })
}

/// Empirical CCDF pooled over a set of window tables.
pub fn empirical_ccdf(tables: &[WindowFlowTable]) -> Result<SizeCcdf> {
    let sizes = tables.iter().flat_map(|t| t.counts.values().copied());
    empirical_ccdf_sizes(sizes, tables.len() as u64)
}

/// Smallest integer B such that strictly fewer than `exceedance` of the
/// flows have size > B. Only observed sizes need to be scanned: between
/// observed sizes the exceedance count does not change.
pub fn choose_bmax(ccdf: &SizeCcdf) -> u64 {
    choose_bmax_with(ccdf, CharacterizeOpts::default().bmax_exceedance)
}

pub fn choose_bmax_with(ccdf: &SizeCcdf, exceedance: f64) -> u64 {
    let n = ccdf.n_flows as f64;
    for (i, p) in ccdf.points.iter().enumerate() {
        let above = ccdf.points.get(i + 1).map_or(0, |q| q.support);
        if (above as f64) < exceedance * n {
            return p.size;
        }
    }
    ccdf.points.last().expect("ccdf is nonempty").size
}

/// Least-squares Pareto fit between candidate lower cutoffs and `b_max`.
///
/// For each observed size `b` in ascending order, a line is fitted to
/// `(log10 x, log10 ccdf(x))` over the points `b <= x <= b_max` with enough
/// supporting flows; the residual is the mean squared deviation from the
/// line. `b_min` is the smallest candidate whose residual beats the
/// threshold. If none qualifies the fit is flagged and the best candidate
/// is reported.
pub fn fit_pareto(ccdf: &SizeCcdf, b_max: u64, opts: &CharacterizeOpts) -> Result<ParetoFit> {
    let pts: Vec<(u64, f64, f64, u64)> = ccdf
        .points
        .iter()
        .filter(|p| p.size <= b_max && p.support >= opts.min_fit_support)
        .map(|p| ((p.size), (p.size as f64).log10(), p.ccdf.log10(), p.support))
        .collect();
    if pts.len() < 3 {
        return Err(Error::insufficient(format!(
            "need at least 3 CCDF points below b_max = {b_max}, have {}",
            pts.len()
        )));
    }
    let mut best: Option<(f64, usize, f64, f64)> = None; // (residual, index, slope, intercept)
    for start in 0..pts.len() {
        if pts.len() - start < 3 {
            break;
        }
        let window = &pts[start..];
        let (slope, intercept, mse) = ols(window);
        if best.map_or(true, |(r, ..)| mse < r) {
            best = Some((mse, start, slope, intercept));
        }
        if mse < opts.residual_threshold {
            return Ok(assemble_fit(ccdf, window[0].0, b_max, slope, intercept, mse, true));
        }
    }
    let (mse, start, slope, intercept) = best.expect("at least one candidate window");
    Ok(assemble_fit(ccdf, pts[start].0, b_max, slope, intercept, mse, false))
}

fn assemble_fit(
    ccdf: &SizeCcdf,
    b_min: u64,
    b_max: u64,
    slope: f64,
    intercept: f64,
    mse: f64,
    qualified: bool,
) -> ParetoFit {
    let support = ccdf
        .points
        .iter()
        .find(|p| p.size >= b_min)
        .map_or(0, |p| p.support);
    ParetoFit {
        shape_a: -slope,
        b_min,
        b_max,
        n_elephants_window_avg: support as f64 / ccdf.n_windows as f64,
        qualified,
        l2_residual: mse,
        intercept,
    }
}

fn ols(points: &[(u64, f64, f64, u64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(_, x, y, _) in points {
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let mse = points
        .iter()
        .map(|&(_, x, y, _)| {
            let d = y - (slope * x + intercept);
            d * d
        })
        .sum::<f64>()
        / n;
    (slope, intercept, mse)
}

/// Number of complete windows inside the analysis prefix: the window's right
/// edge must not pass the last observed timestamp or the prefix end.
pub fn complete_window_count(t_max: f64, origin: f64, prefix_len: f64, delta: f64) -> u64 {
    let horizon = (t_max - origin).min(prefix_len);
    if horizon < delta {
        0
    } else {
        (horizon / delta).floor() as u64
    }
}

/// Pick the smallest candidate window length for which complete prefix
/// windows average at least `min_large_flows` flows of more than
/// `large_flow_size` packets. Falls back to the largest candidate,
/// unqualified, when none reaches the bar.
pub fn choose_delta_full<I>(records: I, opts: &CharacterizeOpts) -> Result<DeltaChoice>
where
    I: IntoIterator<Item = PacketRecord>,
{
    let candidates = &opts.candidate_deltas;
    if candidates.is_empty() {
        return Err(Error::invalid("no candidate window lengths"));
    }
    if candidates.windows(2).any(|w| w[0] >= w[1]) || candidates[0] <= 0.0 {
        return Err(Error::invalid(
            "candidate window lengths must be positive and ascending",
        ));
    }
    // One pass; per candidate, per window, per flow counts. Only the prefix
    // is retained.
    let mut maps: Vec<BTreeMap<u64, std::collections::HashMap<std::sync::Arc<crate::trace::FlowKey>, u64>>> =
        candidates.iter().map(|_| BTreeMap::new()).collect();
    let mut t_max = f64::NEG_INFINITY;
    let mut any = false;
    for r in records {
        any = true;
        if r.timestamp < 0.0 {
            return Err(Error::invalid("negative timestamp"));
        }
        t_max = t_max.max(r.timestamp);
        if r.timestamp >= opts.prefix_len {
            continue;
        }
        for (ci, &delta) in candidates.iter().enumerate() {
            let w = (r.timestamp / delta).floor() as u64;
            *maps[ci]
                .entry(w)
                .or_default()
                .entry(std::sync::Arc::clone(&r.key))
                .or_insert(0) += 1;
        }
    }
    if !any {
        return Err(Error::insufficient("empty trace"));
    }
    for (ci, &delta) in candidates.iter().enumerate() {
        let n_complete = complete_window_count(t_max, 0.0, opts.prefix_len, delta);
        if n_complete == 0 {
            continue;
        }
        let large_total: u64 = maps[ci]
            .range(..n_complete)
            .map(|(_, flows)| flows.values().filter(|&&v| v > opts.large_flow_size).count() as u64)
            .sum();
        if large_total as f64 / n_complete as f64 >= opts.min_large_flows as f64 {
            return Ok(DeltaChoice {
                delta,
                qualified: true,
            });
        }
    }
    Ok(DeltaChoice {
        delta: *candidates.last().expect("nonempty"),
        qualified: false,
    })
}

/// Negligibility diagnostic over a window set.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Negligibility {
    /// Across-window mean of the per-window elephant mean of v^2, divided
    /// by the across-window mean of V.
    pub ratio: f64,
    /// Largest per-window v^2 / V over all elephants: a strict witness for
    /// the epsilon of the negligibility condition.
    pub max_ratio: f64,
}

/// The diagnostic E(v^2)/E(V) restricted to elephants (flows with at least
/// `b_min` packets), plus the worst per-window v^2/V witness.
pub fn negligibility_epsilon(tables: &[WindowFlowTable], b_min: u64) -> Result<Negligibility> {
    let mut sq_means = Vec::new();
    let mut v_sum = 0.0;
    let mut max_ratio: f64 = 0.0;
    for t in tables {
        v_sum += t.total_packets as f64;
        let mut sq = 0.0;
        let mut n = 0u64;
        for &v in t.counts.values() {
            if v >= b_min {
                sq += (v as f64) * (v as f64);
                n += 1;
            }
        }
        if n > 0 {
            sq_means.push(sq / n as f64);
            if t.total_packets > 0 {
                let window_max = t
                    .counts
                    .values()
                    .filter(|&&v| v >= b_min)
                    .map(|&v| (v as f64) * (v as f64) / t.total_packets as f64)
                    .fold(0.0, f64::max);
                max_ratio = max_ratio.max(window_max);
            }
        }
    }
    if sq_means.is_empty() || tables.is_empty() {
        return Err(Error::insufficient("no elephants in any window"));
    }
    let mean_sq = sq_means.iter().sum::<f64>() / sq_means.len() as f64;
    let mean_v = v_sum / tables.len() as f64;
    Ok(Negligibility {
        ratio: mean_sq / mean_v,
        max_ratio,
    })
}
