//! Statistics of large TCP flows from packet traces.
//!
//! Two workflows share this crate. With full traces, successive fixed-length
//! windows are aggregated into per-flow packet counts and the size
//! distribution of the large flows ("elephants") is fitted by a Pareto law
//! in log-log scale, with the window length, fit range, and shape all chosen
//! from the data. With 1-out-of-kappa sampled traffic, where per-flow sizes
//! are unobservable, the per-window counts of flows sampled exactly j times
//! are averaged and inverted into estimates of the Pareto shape, the
//! elephant threshold, and the number of elephants per window.

pub mod characterize;
pub mod error;
pub mod estimate;
pub mod numerics;
pub mod sample;
pub mod synth;
pub mod trace;

pub use characterize::{
    choose_bmax, choose_delta_full, empirical_ccdf, empirical_ccdf_sizes, fit_pareto,
    negligibility_epsilon, CharacterizeOpts, DeltaChoice, Negligibility, ParetoFit, SizeCcdf,
};
pub use error::{Error, Result};
pub use estimate::{
    a_of_j, choose_delta_sampled, choose_j, infer, infer_bmin, k_of_j, lecam_bound, observables,
    q_j_asymptotic, q_j_exact, InferOpts, InferenceResult, ObservableSeries, ParetoSpec,
};
pub use sample::{
    bernoulli_sample, count_sampled_flows, deterministic_sample, multinomial_oracle,
    DeterministicSampler, SampledFlowTable, SamplingConfig, SamplingMode,
};
pub use synth::{draw_pareto_size, generate_trace, GroundTruth, SynthConfig, TraceGenerator};
pub use trace::{
    parse_packet_log, window_flows, FlowKey, PacketLogReader, PacketRecord, WindowFlowTable,
};
