//! Monte Carlo sessions, analytic error rates, exhaustive enumeration and
//! the figure-data sweeps.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RunConfig, ThresholdSource};
use crate::ekf::{mean_abs_error, EkfConfig, EkfState, ObservationMode};
use crate::error::Result;
use crate::link::{
    below_probability, conditional_slot_statistics, error_probability, exceed_probability,
    power_control, sample_received_count, slot_statistics, threshold_or_grid, CountModel,
    LinkHistory, SlotRecord, SlotStatistics,
};
use crate::mobility::{step, NanomachineState};
use crate::physics::{arrival_probabilities, PhysicalParams};

/// Counter-based stream: the key comes from `seed`, the ChaCha stream id
/// from the sweep point and batch, so results do not depend on scheduling.
pub fn stream_rng(seed: u64, point: u64, batch: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((point << 32) | (batch & 0xffff_ffff));
    r
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Scheme {
    Constant(f64),
    PowerControl,
}

impl Scheme {
    pub fn label(&self) -> String {
        match self {
            Scheme::PowerControl => "pc".into(),
            Scheme::Constant(n) => level_label(*n),
        }
    }
}

/// `8e4`, `1e5`, ... for round levels, plain digits otherwise.
pub fn level_label(n: f64) -> String {
    let e = n.abs().log10().floor() as i32;
    let m = n / 10f64.powi(e);
    if (m - m.round()).abs() < 1e-9 {
        format!("{}e{}", m.round() as i64, e)
    } else {
        format!("{n}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkSettings {
    pub target: f64,
    pub noise_scale: f64,
    pub count_model: CountModel,
    pub p_min: f64,
}

impl LinkSettings {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            target: cfg.link.target,
            noise_scale: cfg.link.noise_scale(),
            count_model: cfg.link.count_model,
            p_min: cfg.link.p_min,
        }
    }
}

/// Level that holds every slot at the same expectation when all past slots
/// share it: `target / (P_1 + S/2)` under power control.
pub fn steady_level(probs: &[f64], scheme: Scheme, link: &LinkSettings) -> f64 {
    match scheme {
        Scheme::Constant(n) => n,
        Scheme::PowerControl => {
            let tail: f64 = probs.iter().skip(1).sum();
            let denom = probs[0] + 0.5 * tail;
            if denom > 0.0 {
                link.target / denom
            } else {
                0.0
            }
        }
    }
}

/// Receiver statistics with the channel memory filled at the steady level.
pub fn steady_statistics(probs: &[f64], scheme: Scheme, link: &LinkSettings) -> SlotStatistics {
    let level = steady_level(probs, scheme, link);
    let past = vec![level; probs.len().saturating_sub(1)];
    slot_statistics(&past, level, probs, link.noise_scale)
}

pub fn design_threshold(probs: &[f64], scheme: Scheme, link: &LinkSettings) -> f64 {
    threshold_or_grid(&steady_statistics(probs, scheme, link))
}

/// Average of the per-slot error probabilities.
pub fn analytic_ber(stats: &[SlotStatistics], thresholds: &[f64]) -> f64 {
    assert_eq!(stats.len(), thresholds.len());
    if stats.is_empty() {
        return 0.0;
    }
    stats
        .iter()
        .zip(thresholds)
        .map(|(s, &t)| error_probability(s, t))
        .sum::<f64>()
        / stats.len() as f64
}

/// Argmin of the error probability on a uniform grid over
/// `[mu0 - 5 sigma0, mu1 + 5 sigma1]`.
pub fn brute_force_threshold(s: &SlotStatistics, step: f64) -> f64 {
    let lo = s.mu0 - 5.0 * s.var0.sqrt();
    let hi = s.mu1 + 5.0 * s.var1.sqrt();
    crate::link::grid_threshold(s, lo, hi, step)
}

/// Emissions and levels of the slots sent so far.
#[derive(Debug, Clone, Default)]
struct Ledger {
    emitted: Vec<f64>,
    levels: Vec<f64>,
}

impl Ledger {
    fn emitted(&self, probs: &[f64]) -> &[f64] {
        let m = probs.len().saturating_sub(1);
        &self.emitted[self.emitted.len().saturating_sub(m)..]
    }
    fn levels(&self, probs: &[f64]) -> &[f64] {
        let m = probs.len().saturating_sub(1);
        &self.levels[self.levels.len().saturating_sub(m)..]
    }
    fn push(&mut self, level: f64, bit: u8) {
        self.levels.push(level);
        self.emitted.push(if bit == 1 { level } else { 0.0 });
    }
}

#[derive(Debug, Clone, Copy)]
struct SlotOutcome {
    bit: u8,
    level: f64,
    count: u64,
    design: SlotStatistics,
    cond: SlotStatistics,
}

/// One slot: draw the bit, pick the level from the design channel, sample
/// the count through the actual channel.
fn run_slot<R: Rng + ?Sized>(
    scheme: Scheme,
    link: &LinkSettings,
    design: &[f64],
    actual: &[f64],
    ledger: &Ledger,
    rng: &mut R,
) -> Result<SlotOutcome> {
    let bit = u8::from(rng.random::<bool>());
    let level = match scheme {
        Scheme::Constant(n) => n,
        Scheme::PowerControl => {
            power_control(link.target, ledger.emitted(design), design, link.p_min)? as f64
        }
    };
    let ns = link.noise_scale;
    let design_stats = slot_statistics(ledger.levels(design), level, design, ns);
    let cond = conditional_slot_statistics(ledger.emitted(actual), level, actual, ns);
    let count = sample_received_count(
        bit,
        level,
        ledger.emitted(actual),
        actual,
        ns,
        link.count_model,
        rng,
    );
    Ok(SlotOutcome {
        bit,
        level,
        count,
        design: design_stats,
        cond,
    })
}

/// Per-slot record of a fixed-geometry session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub bits: Vec<u8>,
    pub counts: Vec<u64>,
    pub levels: Vec<f64>,
    /// Statistics the receiver designs with (averaged over past bits).
    pub design: Vec<SlotStatistics>,
    /// Statistics given the realized past emissions.
    pub cond: Vec<SlotStatistics>,
}

impl Trace {
    fn push(&mut self, o: &SlotOutcome) {
        self.bits.push(o.bit);
        self.counts.push(o.count);
        self.levels.push(o.level);
        self.design.push(o.design);
        self.cond.push(o.cond);
    }

    fn extend(&mut self, o: Trace) {
        self.bits.extend(o.bits);
        self.counts.extend(o.counts);
        self.levels.extend(o.levels);
        self.design.extend(o.design);
        self.cond.extend(o.cond);
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn errors(&self, thresholds: &[f64]) -> usize {
        self.bits
            .iter()
            .zip(&self.counts)
            .zip(thresholds)
            .filter(|((&b, &c), &t)| crate::link::detect(c as f64, t) != b)
            .count()
    }

    pub fn mean_level(&self) -> f64 {
        self.levels.iter().sum::<f64>() / self.levels.len().max(1) as f64
    }
}

/// Fixed-geometry session. The first `warmup` slots fill the channel
/// memory and are not recorded. `design` may differ from `actual` per slot
/// (distance-estimation error at the transmitter).
pub fn static_trace<R: Rng + ?Sized>(
    actual: &[f64],
    mut design: impl FnMut(usize) -> Option<Vec<f64>>,
    scheme: Scheme,
    link: &LinkSettings,
    bits: usize,
    warmup: usize,
    rng: &mut R,
) -> Result<Trace> {
    let mut ledger = Ledger::default();
    let mut trace = Trace::default();
    for k in 0..(warmup + bits) {
        let own = design(k);
        let d = own.as_deref().unwrap_or(actual);
        let o = run_slot(scheme, link, d, actual, &ledger, rng)?;
        ledger.push(o.level, o.bit);
        if k >= warmup {
            trace.push(&o);
        }
    }
    Ok(trace)
}

/// Splits `trials` bits into independent batches run in parallel; batch
/// `b` of sweep point `point` draws from `stream_rng(seed, point, b)`.
#[allow(clippy::too_many_arguments)]
pub fn batched_trace(
    actual: &[f64],
    design_errors: Option<&[f64]>,
    d_true: f64,
    params: &PhysicalParams,
    scheme: Scheme,
    link: &LinkSettings,
    trials: u64,
    batch_bits: u64,
    seed: u64,
    point: u64,
) -> Result<Trace> {
    let warmup = actual.len();
    let batches: Vec<(u64, u64)> = (0..trials.div_ceil(batch_bits))
        .map(|b| (b, batch_bits.min(trials - b * batch_bits)))
        .collect();
    let parts: Vec<Result<Trace>> = batches
        .par_iter()
        .map(|&(b, n)| {
            let mut rng = stream_rng(seed, point, b);
            let offset = (b * batch_bits) as usize;
            let design = |k: usize| {
                design_errors.map(|e| {
                    let idx = (offset + k) % e.len();
                    arrival_probabilities((d_true + e[idx]).max(1e-9), params)
                })
            };
            static_trace(actual, design, scheme, link, n as usize, warmup, &mut rng)
        })
        .collect();
    let mut out = Trace::default();
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointEstimate {
    pub ber: f64,
    /// Per-slot Gaussian error probability with statistics conditioned on
    /// the realized past emissions.
    pub analytic: f64,
    /// The same average using the receiver's bit-averaged statistics.
    pub analytic_mean_field: f64,
    pub std_error: f64,
    pub trials: u64,
}

pub fn standard_error(ber: f64, trials: u64) -> f64 {
    (ber * (1.0 - ber) / trials as f64).sqrt()
}

pub fn estimate(trace: &Trace, thresholds: &[f64]) -> PointEstimate {
    let n = trace.len() as u64;
    let ber = trace.errors(thresholds) as f64 / n.max(1) as f64;
    PointEstimate {
        ber,
        analytic: analytic_ber(&trace.cond, thresholds),
        analytic_mean_field: analytic_ber(&trace.design, thresholds),
        std_error: standard_error(ber, n),
        trials: n,
    }
}

/// Thresholds a receiver applies: the design value fixed for a session
/// under power control, the per-slot optimum for constant emission.
pub fn policy_thresholds(trace: &Trace, scheme: Scheme, fixed: f64) -> Vec<f64> {
    match scheme {
        Scheme::PowerControl => vec![fixed; trace.len()],
        Scheme::Constant(_) => trace.design.iter().map(threshold_or_grid).collect(),
    }
}

/// Exhaustive average over all `2^k` bit sequences of the per-slot error
/// probability given the full history (Gaussian counts conditioned on the
/// realized emissions), starting from an empty channel.
pub fn exact_ber(
    probs: &[f64],
    scheme: Scheme,
    link: &LinkSettings,
    k: usize,
    threshold: Option<f64>,
) -> Result<f64> {
    #[allow(clippy::too_many_arguments)]
    fn walk(
        probs: &[f64],
        scheme: Scheme,
        link: &LinkSettings,
        k: usize,
        threshold: Option<f64>,
        ledger: &mut Ledger,
        weight: f64,
        acc: &mut f64,
    ) -> Result<()> {
        let depth = ledger.levels.len();
        if depth == k {
            return Ok(());
        }
        let level = match scheme {
            Scheme::Constant(n) => n,
            Scheme::PowerControl => {
                power_control(link.target, ledger.emitted(probs), probs, link.p_min)? as f64
            }
        };
        let ns = link.noise_scale;
        let th = match threshold {
            Some(t) => t,
            None => threshold_or_grid(&slot_statistics(ledger.levels(probs), level, probs, ns)),
        };
        let c = conditional_slot_statistics(ledger.emitted(probs), level, probs, ns);
        let e0 = exceed_probability(th, c.mu0, c.var0);
        let e1 = below_probability(th, c.mu1, c.var1);
        *acc += weight * 0.5 * (e0 + e1);
        for bit in [0u8, 1] {
            ledger.push(level, bit);
            walk(probs, scheme, link, k, threshold, ledger, 0.5 * weight, acc)?;
            ledger.levels.pop();
            ledger.emitted.pop();
        }
        Ok(())
    }
    let mut acc = 0.0;
    walk(
        probs,
        scheme,
        link,
        k,
        threshold,
        &mut Ledger::default(),
        1.0,
        &mut acc,
    )?;
    Ok(acc / k as f64)
}

/// Slot-averaged approximation over `k` slots from an empty channel: each
/// slot uses the bit-averaged statistics with levels following the mean
/// trajectory (power control steering the average received count).
pub fn mean_field_ber(
    probs: &[f64],
    scheme: Scheme,
    link: &LinkSettings,
    k: usize,
    threshold: Option<f64>,
) -> f64 {
    let ns = link.noise_scale;
    let mut levels: Vec<f64> = Vec::with_capacity(k);
    let mut stats = Vec::with_capacity(k);
    let mut ths = Vec::with_capacity(k);
    for _ in 0..k {
        let m = probs.len().saturating_sub(1);
        let past = &levels[levels.len().saturating_sub(m)..];
        let level = match scheme {
            Scheme::Constant(n) => n,
            Scheme::PowerControl => {
                let mu0 = slot_statistics(past, 0.0, probs, ns).mu0;
                ((link.target - mu0) / probs[0]).round().max(0.0)
            }
        };
        let s = slot_statistics(past, level, probs, ns);
        ths.push(threshold.unwrap_or_else(|| threshold_or_grid(&s)));
        stats.push(s);
        levels.push(level);
    }
    analytic_ber(&stats, &ths)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSource {
    True,
    EkfFeedback,
    EkfUpdate,
}

impl DistanceSource {
    pub fn label(self) -> &'static str {
        match self {
            DistanceSource::True => "true",
            DistanceSource::EkfFeedback => "ekf_feedback",
            DistanceSource::EkfUpdate => "ekf_update",
        }
    }

    fn mode(self) -> Option<ObservationMode> {
        match self {
            DistanceSource::True => None,
            DistanceSource::EkfFeedback => Some(ObservationMode::Feedback),
            DistanceSource::EkfUpdate => Some(ObservationMode::Update),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SessionResult {
    pub history: LinkHistory,
    pub ber: f64,
    pub analytic: f64,
    /// Distance used by the transmitter and the true distance, per slot.
    pub distances: Vec<(f64, f64)>,
}

/// Mobile session: both terminals move, the filter tracks the receiver, and
/// every slot is designed on the chosen distance estimate.
pub fn run_session(
    cfg: &RunConfig,
    scheme: Scheme,
    source: DistanceSource,
    bits: usize,
    seed: u64,
) -> Result<SessionResult> {
    let p = cfg.params();
    let link = LinkSettings::from_config(cfg);
    let (tx0, rx0) = cfg.initial.positions();
    let mut tx = NanomachineState::transmitter(tx0, &p);
    let mut rx = NanomachineState::receiver(rx0, &p);
    let mut rng_tx = stream_rng(seed, 0, 0);
    let mut rng_rx = stream_rng(seed, 0, 1);
    let mut rng_obs = stream_rng(seed, 0, 2);
    let mut rng_link = stream_rng(seed, 0, 3);
    let mut filter = source.mode().map(|mode| {
        let ekf = EkfConfig {
            mode,
            ..cfg.ekf.config()
        };
        EkfState::new(rx0, &p, &ekf)
    });

    let mut ledger = Ledger::default();
    let mut history = LinkHistory::default();
    let mut distances = Vec::with_capacity(bits);
    let mut analytic = 0.0;
    let mut fixed_threshold = None;
    for _ in 0..bits {
        let d_true = (rx.x - tx.x).abs();
        let d_est = filter
            .as_ref()
            .map_or(d_true, |f| f.predicted_distance(&tx.position()));
        let design = arrival_probabilities(d_est, &p);
        let actual = arrival_probabilities(d_true, &p);
        let th_probs = match cfg.link.threshold_source {
            ThresholdSource::Predicted => &design,
            ThresholdSource::True => &actual,
        };
        let o = run_slot(scheme, &link, &design, &actual, &ledger, &mut rng_link)?;
        let threshold = match scheme {
            Scheme::PowerControl => {
                *fixed_threshold.get_or_insert_with(|| design_threshold(th_probs, scheme, &link))
            }
            Scheme::Constant(n) => threshold_or_grid(&slot_statistics(
                ledger.levels(th_probs),
                n,
                th_probs,
                link.noise_scale,
            )),
        };
        analytic += error_probability(&o.cond, threshold);
        ledger.push(o.level, o.bit);
        let decision = crate::link::detect(o.count as f64, threshold);
        history.push(SlotRecord {
            bit: o.bit,
            level: o.level as u64,
            emitted: if o.bit == 1 { o.level as u64 } else { 0 },
            probs: design,
            stats: o.design,
            threshold,
            count: o.count,
            decision,
        });
        distances.push((d_est, d_true));

        for _ in 0..p.steps_per_bit {
            tx = step(&tx, &p, &mut rng_tx);
            rx = step(&rx, &p, &mut rng_rx);
            if let Some(f) = filter.as_mut() {
                f.predict();
                let z = f.observe(&rx.position(), &mut rng_obs);
                f.update(&z)?;
            }
        }
    }
    let ber = history.ber();
    Ok(SessionResult {
        history,
        ber,
        analytic: analytic / bits.max(1) as f64,
        distances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackRow {
    pub k: usize,
    pub d_true: f64,
    pub d_measured: f64,
    pub d_predicted: f64,
}

impl TrackRow {
    pub fn err_measured(&self) -> f64 {
        self.d_measured - self.d_true
    }
    pub fn err_predicted(&self) -> f64 {
        self.d_predicted - self.d_true
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tracking {
    pub rows: Vec<TrackRow>,
    pub mae_measured: f64,
    pub mae_predicted: f64,
    pub final_ekf: EkfState,
}

/// Runs the terminals and the filter for `steps` iterations. At step `k`
/// the measured distance comes from the raw observation and the predicted
/// distance from the filter's one-step prediction, made before that
/// observation is used.
pub fn track(
    cfg: &RunConfig,
    mode: ObservationMode,
    steps: usize,
    seed: u64,
    point: u64,
) -> Result<Tracking> {
    let p = cfg.params();
    let (tx0, rx0) = cfg.initial.positions();
    let mut tx = NanomachineState::transmitter(tx0, &p);
    let mut rx = NanomachineState::receiver(rx0, &p);
    let mut rng_tx = stream_rng(seed, point, 0);
    let mut rng_rx = stream_rng(seed, point, 1);
    let mut rng_obs = stream_rng(seed, point, 2);
    let ekf = EkfConfig {
        mode,
        ..cfg.ekf.config()
    };
    let mut f = EkfState::new(rx0, &p, &ekf);
    let mut rows = Vec::with_capacity(steps);
    for k in 1..=steps {
        tx = step(&tx, &p, &mut rng_tx);
        rx = step(&rx, &p, &mut rng_rx);
        f.predict();
        let d_predicted = f.predicted_distance(&tx.position());
        let z = f.observe(&rx.position(), &mut rng_obs);
        rows.push(TrackRow {
            k,
            d_true: (rx.x - tx.x).abs(),
            d_measured: (z[0] - tx.x).abs(),
            d_predicted,
        });
        f.update(&z)?;
    }
    let em: Vec<f64> = rows.iter().map(TrackRow::err_measured).collect();
    let ep: Vec<f64> = rows.iter().map(TrackRow::err_predicted).collect();
    Ok(Tracking {
        mae_measured: mean_abs_error(&em)?,
        mae_predicted: mean_abs_error(&ep)?,
        rows,
        final_ekf: f,
    })
}

/// Signed distance-estimation errors, one per slot, sampled every `stride`
/// filter steps from trackers that restart at the known initial position
/// every `horizon` steps.
pub fn distance_errors(
    cfg: &RunConfig,
    mode: ObservationMode,
    slots: usize,
    stride: usize,
    horizon: usize,
    seed: u64,
    point: u64,
) -> Result<Vec<f64>> {
    let per_segment = (horizon / stride).max(1);
    let mut out = Vec::with_capacity(slots);
    let mut segment = 0;
    while out.len() < slots {
        let t = track(cfg, mode, per_segment * stride, seed, point + segment)?;
        let take = per_segment.min(slots - out.len());
        out.extend(
            t.rows
                .iter()
                .skip(stride - 1)
                .step_by(stride)
                .take(take)
                .map(TrackRow::err_predicted),
        );
        segment += 1;
    }
    Ok(out)
}

/// A named column table written as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.columns)?;
        for r in &self.rows {
            out.write_record(r.iter().map(|v| format!("{v}")))?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub scheme: String,
    pub variable: String,
    pub values: Vec<f64>,
    pub ber: Vec<f64>,
    pub ber_analytic: Vec<f64>,
    pub ber_mean_field: Vec<f64>,
    pub std_error: Vec<f64>,
    pub trials: u64,
    pub seed: u64,
}

impl ExperimentResult {
    fn new(scheme: String, variable: &str, seed: u64, trials: u64) -> Self {
        Self {
            scheme,
            variable: variable.into(),
            values: Vec::new(),
            ber: Vec::new(),
            ber_analytic: Vec::new(),
            ber_mean_field: Vec::new(),
            std_error: Vec::new(),
            trials,
            seed,
        }
    }

    fn push(&mut self, x: f64, e: &PointEstimate) {
        self.values.push(x);
        self.ber.push(e.ber);
        self.ber_analytic.push(e.analytic);
        self.ber_mean_field.push(e.analytic_mean_field);
        self.std_error.push(e.std_error);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    ThresholdVsDistance,
    NtxVsDistance,
    BerVsThreshold,
    BerVsDistance,
    DistancePrediction,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: Table,
    pub results: Vec<ExperimentResult>,
    pub summary: serde_json::Value,
}

fn schemes(cfg: &RunConfig) -> Vec<Scheme> {
    let mut s = vec![Scheme::PowerControl];
    s.extend(
        cfg.link
            .constant_levels
            .iter()
            .map(|&n| Scheme::Constant(n)),
    );
    s
}

pub fn sweep(exp: Experiment, cfg: &RunConfig, seed: u64) -> Result<SweepOutput> {
    match exp {
        Experiment::ThresholdVsDistance => threshold_vs_distance(cfg),
        Experiment::NtxVsDistance => ntx_vs_distance(cfg, seed),
        Experiment::BerVsThreshold => ber_vs_threshold(cfg, seed),
        Experiment::BerVsDistance => ber_vs_distance(cfg, seed),
        Experiment::DistancePrediction => distance_prediction(cfg, seed),
    }
}

pub fn threshold_vs_distance(cfg: &RunConfig) -> Result<SweepOutput> {
    let p = cfg.params();
    let link = LinkSettings::from_config(cfg);
    let sch = schemes(cfg);
    let mut table = Table::new(
        std::iter::once("distance".to_string())
            .chain(sch.iter().map(|s| format!("N_th_opt_{}", s.label())))
            .collect(),
    );
    for &d in &cfg.experiment.distances {
        let probs = arrival_probabilities(d, &p);
        let mut row = vec![d];
        row.extend(sch.iter().map(|&s| design_threshold(&probs, s, &link)));
        table.rows.push(row);
    }
    let spread: serde_json::Map<String, serde_json::Value> = sch
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let col: Vec<f64> = table.rows.iter().map(|r| r[i + 1]).collect();
            let max = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = col.iter().cloned().fold(f64::INFINITY, f64::min);
            (s.label(), serde_json::json!(max - min))
        })
        .collect();
    Ok(SweepOutput {
        table,
        results: Vec::new(),
        summary: serde_json::json!({ "threshold_spread": spread }),
    })
}

pub fn ntx_vs_distance(cfg: &RunConfig, seed: u64) -> Result<SweepOutput> {
    let p = cfg.params();
    let link = LinkSettings::from_config(cfg);
    let sch = schemes(cfg);
    let x = &cfg.experiment;
    let mut table = Table::new(
        std::iter::once("distance".to_string())
            .chain(sch.iter().map(|s| format!("N_tx_{}", s.label())))
            .collect(),
    );
    let rows: Vec<Result<Vec<f64>>> = x
        .distances
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let probs = arrival_probabilities(d, &p);
            let mut row = vec![d];
            for (j, &s) in sch.iter().enumerate() {
                let level = match s {
                    Scheme::Constant(n) => n,
                    Scheme::PowerControl => {
                        let point = (i * sch.len() + j) as u64;
                        batched_trace(
                            &probs,
                            None,
                            d,
                            &p,
                            s,
                            &link,
                            x.trials,
                            x.batch_bits,
                            seed,
                            point,
                        )?
                        .mean_level()
                    }
                };
                row.push(level);
            }
            Ok(row)
        })
        .collect();
    for r in rows {
        table.rows.push(r?);
    }
    Ok(SweepOutput {
        table,
        results: Vec::new(),
        summary: serde_json::json!({}),
    })
}

/// Default threshold grid: 0 to a little past the largest bit-1 mean.
fn threshold_grid(cfg: &RunConfig, probs: &[f64], link: &LinkSettings) -> Vec<f64> {
    if let Some(t) = &cfg.experiment.thresholds {
        return t.clone();
    }
    let hi = schemes(cfg)
        .iter()
        .map(|&s| {
            let st = steady_statistics(probs, s, link);
            st.mu1 + 2.0 * st.var1.sqrt()
        })
        .fold(0.0, f64::max);
    let step = (hi / 40.0).ceil().max(1.0);
    (0..=40).map(|i| i as f64 * step).collect()
}

pub fn ber_vs_threshold(cfg: &RunConfig, seed: u64) -> Result<SweepOutput> {
    let p = cfg.params();
    let link = LinkSettings::from_config(cfg);
    let x = &cfg.experiment;
    let d = x.distance;
    let probs = arrival_probabilities(d, &p);
    let grid = threshold_grid(cfg, &probs, &link);
    let sch = schemes(cfg);
    let traces: Vec<Result<Trace>> = sch
        .par_iter()
        .enumerate()
        .map(|(j, &s)| {
            batched_trace(
                &probs,
                None,
                d,
                &p,
                s,
                &link,
                x.trials,
                x.batch_bits,
                seed,
                j as u64,
            )
        })
        .collect();
    let mut cols = vec!["threshold".to_string()];
    for s in &sch {
        let l = s.label();
        cols.extend([
            format!("ber_{l}"),
            format!("ber_analytic_{l}"),
            format!("se_{l}"),
        ]);
    }
    let mut table = Table::new(cols);
    let mut results: Vec<ExperimentResult> = sch
        .iter()
        .map(|s| ExperimentResult::new(s.label(), "threshold", seed, x.trials))
        .collect();
    let traces: Vec<Trace> = traces.into_iter().collect::<Result<_>>()?;
    for &t in &grid {
        let mut row = vec![t];
        for (j, tr) in traces.iter().enumerate() {
            let e = estimate(tr, &vec![t; tr.len()]);
            row.extend([e.ber, e.analytic, e.std_error]);
            results[j].push(t, &e);
        }
        table.rows.push(row);
    }
    let mut optimum = serde_json::Map::new();
    for (j, s) in sch.iter().enumerate() {
        let th = design_threshold(&probs, *s, &link);
        let e = estimate(&traces[j], &policy_thresholds(&traces[j], *s, th));
        optimum.insert(
            s.label(),
            serde_json::json!({ "threshold": th, "ber": e.ber, "ber_analytic": e.analytic, "std_error": e.std_error }),
        );
    }
    Ok(SweepOutput {
        table,
        results,
        summary: serde_json::json!({ "distance": d, "at_design_threshold": optimum }),
    })
}

/// Labels and distance sources of the schemes compared against distance:
/// power control on the true distance and on both filter modes, then the
/// constant levels.
fn distance_schemes(cfg: &RunConfig) -> Vec<(Scheme, DistanceSource, String)> {
    let mut v = vec![
        (Scheme::PowerControl, DistanceSource::True, "pc".to_string()),
        (
            Scheme::PowerControl,
            DistanceSource::EkfFeedback,
            "pc_ekf_feedback".to_string(),
        ),
        (
            Scheme::PowerControl,
            DistanceSource::EkfUpdate,
            "pc_ekf_update".to_string(),
        ),
    ];
    for &n in &cfg.link.constant_levels {
        v.push((Scheme::Constant(n), DistanceSource::True, level_label(n)));
    }
    v
}

pub fn ber_vs_distance(cfg: &RunConfig, seed: u64) -> Result<SweepOutput> {
    let p = cfg.params();
    let link = LinkSettings::from_config(cfg);
    let x = &cfg.experiment;
    let sch = distance_schemes(cfg);
    let slots = x.trials as usize;
    let errs_fb = distance_errors(
        cfg,
        ObservationMode::Feedback,
        slots,
        x.ekf_stride,
        x.ekf_horizon,
        seed,
        1 << 24,
    )?;
    let errs_up = distance_errors(
        cfg,
        ObservationMode::Update,
        slots,
        x.ekf_stride,
        x.ekf_horizon,
        seed,
        1 << 25,
    )?;

    let jobs: Vec<(usize, usize)> = (0..x.distances.len())
        .flat_map(|i| (0..sch.len()).map(move |j| (i, j)))
        .collect();
    let points: Vec<Result<PointEstimate>> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let d = x.distances[i];
            let probs = arrival_probabilities(d, &p);
            let (s, src, _) = &sch[j];
            let errs = match src {
                DistanceSource::True => None,
                DistanceSource::EkfFeedback => Some(errs_fb.as_slice()),
                DistanceSource::EkfUpdate => Some(errs_up.as_slice()),
            };
            let point = (i * sch.len() + j) as u64;
            let tr = batched_trace(
                &probs,
                errs,
                d,
                &p,
                *s,
                &link,
                x.trials,
                x.batch_bits,
                seed,
                point,
            )?;
            let fixed = match errs {
                Some(e) => {
                    design_threshold(&arrival_probabilities((d + e[0]).max(1e-9), &p), *s, &link)
                }
                None => design_threshold(&probs, *s, &link),
            };
            Ok(estimate(&tr, &policy_thresholds(&tr, *s, fixed)))
        })
        .collect();

    let mut cols = vec!["distance".to_string()];
    for (_, _, l) in &sch {
        cols.extend([
            format!("ber_{l}"),
            format!("ber_analytic_{l}"),
            format!("ber_meanfield_{l}"),
            format!("se_{l}"),
        ]);
    }
    let mut table = Table::new(cols);
    let mut results: Vec<ExperimentResult> = sch
        .iter()
        .map(|(_, _, l)| ExperimentResult::new(l.clone(), "distance", seed, x.trials))
        .collect();
    let mut it = points.into_iter();
    for &d in &x.distances {
        let mut row = vec![d];
        for r in results.iter_mut() {
            let e = it.next().expect("one estimate per job")?;
            row.extend([e.ber, e.analytic, e.analytic_mean_field, e.std_error]);
            r.push(d, &e);
        }
        table.rows.push(row);
    }
    Ok(SweepOutput {
        table,
        results,
        summary: serde_json::json!({
            "mean_abs_distance_error_feedback": mean_abs_error(&errs_fb)?,
            "mean_abs_distance_error_update": mean_abs_error(&errs_up)?,
        }),
    })
}

pub fn distance_prediction(cfg: &RunConfig, seed: u64) -> Result<SweepOutput> {
    let t = track(cfg, cfg.ekf.mode, cfg.experiment.steps, seed, 0)?;
    let mut table = Table::new(
        [
            "k",
            "d_true",
            "d_measured",
            "d_predicted",
            "err_measured",
            "err_predicted",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    );
    for r in &t.rows {
        table.rows.push(vec![
            r.k as f64,
            r.d_true,
            r.d_measured,
            r.d_predicted,
            r.err_measured(),
            r.err_predicted(),
        ]);
    }
    Ok(SweepOutput {
        table,
        results: Vec::new(),
        summary: serde_json::json!({
            "mean_abs_error_measured": t.mae_measured,
            "mean_abs_error_predicted": t.mae_predicted,
            "ratio": t.mae_predicted / t.mae_measured,
            "op_counts": t.final_ekf.counters,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn link(ns: f64) -> LinkSettings {
        LinkSettings {
            target: 100.0,
            noise_scale: ns,
            count_model: CountModel::Binomial,
            p_min: 1e-12,
        }
    }

    #[test]
    fn labels() {
        assert_eq!(level_label(8e4), "8e4");
        assert_eq!(level_label(1e5), "1e5");
        assert_eq!(level_label(12345.0), "12345");
        assert_eq!(Scheme::PowerControl.label(), "pc");
    }

    #[test]
    fn steady_power_control_hits_target() {
        let probs = [1e-3, 3e-4, 1e-4];
        let s = steady_statistics(&probs, Scheme::PowerControl, &link(0.1));
        assert!((s.mu1 - 100.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_channel_has_no_errors() {
        let l = LinkSettings {
            noise_scale: 0.0,
            ..link(0.0)
        };
        let probs = [0.5];
        let mut rng = stream_rng(1, 0, 0);
        let tr = static_trace(
            &probs,
            |_| None,
            Scheme::Constant(1000.0),
            &l,
            1000,
            0,
            &mut rng,
        )
        .unwrap();
        let th = policy_thresholds(&tr, Scheme::Constant(1000.0), 0.0);
        assert_eq!(tr.errors(&th), 0);
    }

    #[test]
    fn infinite_thresholds_give_half() {
        let probs = [1e-3, 2e-4];
        let mut rng = stream_rng(2, 0, 0);
        let tr = static_trace(
            &probs,
            |_| None,
            Scheme::Constant(1e5),
            &link(0.1),
            20_000,
            2,
            &mut rng,
        )
        .unwrap();
        for t in [f64::NEG_INFINITY, f64::INFINITY] {
            let e = estimate(&tr, &vec![t; tr.len()]);
            assert!(
                (e.ber - 0.5).abs() < 4.0 * e.std_error.max(1e-3),
                "{}",
                e.ber
            );
            assert!((e.analytic - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn single_slot_analytic_is_error_probability() {
        let s = SlotStatistics {
            mu0: 3.0,
            var0: 4.0,
            mu1: 20.0,
            var1: 25.0,
        };
        assert_eq!(analytic_ber(&[s], &[10.0]), error_probability(&s, 10.0));
        let many = vec![s; 7];
        assert!((analytic_ber(&many, &[10.0; 7]) - error_probability(&s, 10.0)).abs() < 1e-15);
    }

    #[test]
    fn exact_equals_mean_field_without_memory() {
        // With a single tap there is no ISI, so both reduce to one slot.
        let probs = [1e-3];
        let l = link(0.2);
        let a = exact_ber(&probs, Scheme::PowerControl, &l, 6, Some(50.0)).unwrap();
        let b = mean_field_ber(&probs, Scheme::PowerControl, &l, 6, Some(50.0));
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn exact_enumeration_matches_hand_count_for_two_slots() {
        let probs = [0.01, 0.004];
        let l = link(0.5);
        let th = 60.0;
        let n = 1e4;
        let got = exact_ber(&probs, Scheme::Constant(n), &l, 2, Some(th)).unwrap();
        let slot = |isi: f64| {
            let c = conditional_slot_statistics(&[isi], n, &probs, 0.5);
            error_probability(&c, th)
        };
        let want = (slot(0.0) + 0.5 * (slot(0.0) + slot(n))) / 2.0;
        assert!((got - want).abs() < 1e-15, "{got} {want}");
    }

    #[test]
    fn stream_rng_depends_on_all_coordinates() {
        let a: u64 = stream_rng(1, 2, 3).random();
        assert_eq!(a, stream_rng(1, 2, 3).random::<u64>());
        assert_ne!(a, stream_rng(1, 2, 4).random::<u64>());
        assert_ne!(a, stream_rng(1, 3, 3).random::<u64>());
        assert_ne!(a, stream_rng(2, 2, 3).random::<u64>());
    }
}
