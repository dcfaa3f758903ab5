//! OOK link: power control, received-count statistics, threshold design and
//! detection.
//!
//! Histories are passed oldest first, so the last entry is the slot right
//! before the current one and pairs with `P_2 = probs[1]`.

use std::io::Write;

use libm::erfc;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::fmt;

pub const DEFAULT_P_MIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct SlotStatistics {
    pub mu0: f64,
    pub var0: f64,
    pub mu1: f64,
    pub var1: f64,
}

/// Pairs each history entry with its ISI tap, most recent first.
fn isi_pairs<'a>(history: &'a [f64], probs: &'a [f64]) -> impl Iterator<Item = (f64, f64)> + 'a {
    history
        .iter()
        .rev()
        .zip(probs.iter().skip(1))
        .map(|(&n, &p)| (n, p))
}

/// Expected residual count `sum_i N_i P_{k-i+1}`.
pub fn isi_mean(history: &[f64], probs: &[f64]) -> f64 {
    isi_pairs(history, probs).map(|(n, p)| n * p).sum()
}

/// Emission for the current slot that brings the expected bit-1 count to
/// `target` given the molecules already emitted.
pub fn power_control(target: f64, emitted: &[f64], probs: &[f64], p_min: f64) -> Result<u64> {
    let p1 = probs.first().copied().unwrap_or(0.0);
    if !(p1 > p_min) {
        return Err(Error::UnusableChannel { p1, p_min });
    }
    let n = ((target - isi_mean(emitted, probs)) / p1).round();
    Ok(if n > 0.0 { n as u64 } else { 0 })
}

/// Receiver-side statistics averaged over equiprobable past bits: each past
/// slot with level `N_i` contributes `N_i P` with probability one half.
/// `noise_scale` is the counting-noise variance per expected molecule.
pub fn slot_statistics(
    levels: &[f64],
    n_k: f64,
    probs: &[f64],
    noise_scale: f64,
) -> SlotStatistics {
    let p1 = probs.first().copied().unwrap_or(0.0);
    let mut mu0 = 0.0;
    let mut spread = 0.0;
    for (n, p) in isi_pairs(levels, probs) {
        let x = n * p;
        mu0 += 0.5 * x;
        spread += 0.5 * x * (1.0 - p) + 0.25 * x * x;
    }
    let mu1 = n_k * p1 + mu0;
    SlotStatistics {
        mu0,
        var0: spread + noise_scale * mu0,
        mu1,
        var1: n_k * p1 * (1.0 - p1) + spread + noise_scale * mu1,
    }
}

/// Statistics given the realized emissions of the past slots; only the
/// current bit is unknown.
pub fn conditional_slot_statistics(
    emitted: &[f64],
    n_k: f64,
    probs: &[f64],
    noise_scale: f64,
) -> SlotStatistics {
    let p1 = probs.first().copied().unwrap_or(0.0);
    let mut mu0 = 0.0;
    let mut spread = 0.0;
    for (n, p) in isi_pairs(emitted, probs) {
        mu0 += n * p;
        spread += n * p * (1.0 - p);
    }
    let mu1 = n_k * p1 + mu0;
    SlotStatistics {
        mu0,
        var0: spread + noise_scale * mu0,
        mu1,
        var1: n_k * p1 * (1.0 - p1) + spread + noise_scale * mu1,
    }
}

/// Gaussian tail `Q(x) = P(N(0,1) > x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// `P(X >= th)` for `X ~ N(mu, var)`; a point mass when `var == 0`.
pub fn exceed_probability(th: f64, mu: f64, var: f64) -> f64 {
    if var > 0.0 {
        q_function((th - mu) / var.sqrt())
    } else if th <= mu {
        1.0
    } else {
        0.0
    }
}

/// `P(X < th)`, evaluated as an upper tail to keep precision in the tails.
pub fn below_probability(th: f64, mu: f64, var: f64) -> f64 {
    if var > 0.0 {
        q_function((mu - th) / var.sqrt())
    } else if th <= mu {
        0.0
    } else {
        1.0
    }
}

/// `1/2 Q((th - mu0)/sigma0) + 1/2 (1 - Q((th - mu1)/sigma1))`.
pub fn error_probability(s: &SlotStatistics, th: f64) -> f64 {
    0.5 * exceed_probability(th, s.mu0, s.var0) + 0.5 * below_probability(th, s.mu1, s.var1)
}

/// Crossing of the two weighted Gaussian densities between the hypotheses.
///
/// Solves `a t^2 - 2 b t + c = 0` with `a = var1 - var0`,
/// `b = mu0 var1 - mu1 var0`,
/// `c = mu0^2 var1 - mu1^2 var0 + var0 var1 ln(var0 / var1)`, taking the
/// root `(b + s) / a`, `s = sqrt(b^2 - a c)`. That root lies between the
/// means for either sign of `a`; the conjugate form `c / (b - s)` is used
/// when `b <= 0` to avoid cancellation.
pub fn optimal_threshold(s: &SlotStatistics) -> Result<f64> {
    let (m0, v0, m1, v1) = (s.mu0, s.var0, s.mu1, s.var1);
    if !(v0 > 0.0 && v1 > 0.0) {
        return Err(Error::DegenerateStatistics(format!(
            "variances must be positive (var0 = {v0}, var1 = {v1})"
        )));
    }
    let a = v1 - v0;
    if a.abs() < 1e-9 * v1 {
        return Ok(0.5 * (m0 + m1));
    }
    let b = m0 * v1 - m1 * v0;
    let c = m0 * m0 * v1 - m1 * m1 * v0 + v0 * v1 * (v0 / v1).ln();
    let disc = b * b - a * c;
    if !(disc >= 0.0) {
        return Err(Error::DegenerateStatistics(format!(
            "negative discriminant {disc:e}"
        )));
    }
    let root = disc.sqrt();
    Ok(if b <= 0.0 {
        c / (b - root)
    } else {
        (b + root) / a
    })
}

/// Exhaustive minimization of `error_probability` over `[lo, hi]`.
pub fn grid_threshold(s: &SlotStatistics, lo: f64, hi: f64, step: f64) -> f64 {
    let n = ((hi - lo) / step).floor() as usize;
    let mut best = (f64::INFINITY, lo);
    for i in 0..=n {
        let t = lo + i as f64 * step;
        let e = error_probability(s, t);
        if e < best.0 {
            best = (e, t);
        }
    }
    best.1
}

/// Closed form, falling back to a fine grid on degenerate statistics.
pub fn threshold_or_grid(s: &SlotStatistics) -> f64 {
    match optimal_threshold(s) {
        Ok(t) => t,
        Err(_) => {
            let (sd0, sd1) = (s.var0.max(0.0).sqrt(), s.var1.max(0.0).sqrt());
            let lo = s.mu0 - 5.0 * sd0;
            let hi = s.mu1 + 5.0 * sd1;
            if hi > lo {
                grid_threshold(s, lo, hi, ((hi - lo) / 1e4).max(1e-6))
            } else {
                0.5 * (s.mu0 + s.mu1)
            }
        }
    }
}

/// Decides 1 when the count reaches the threshold.
pub fn detect(count: f64, th: f64) -> u8 {
    u8::from(count >= th)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountModel {
    /// Independent binomial draws per emitting slot.
    #[default]
    Binomial,
    /// A single Gaussian with the matching mean and variance.
    Gaussian,
}

fn binomial<R: Rng + ?Sized>(n: f64, p: f64, rng: &mut R) -> f64 {
    if n < 1.0 || p <= 0.0 {
        return 0.0;
    }
    Binomial::new(n as u64, p.min(1.0))
        .expect("valid binomial")
        .sample(rng) as f64
}

/// Draws the receiver count for the current slot. Counting noise is
/// `N(0, noise_scale * E[count])`; the total is clamped at zero and rounded.
pub fn sample_received_count<R: Rng + ?Sized>(
    bit: u8,
    n_k: f64,
    emitted: &[f64],
    probs: &[f64],
    noise_scale: f64,
    model: CountModel,
    rng: &mut R,
) -> u64 {
    let p1 = probs.first().copied().unwrap_or(0.0);
    let current = if bit == 1 { n_k } else { 0.0 };
    let mean = current * p1 + isi_mean(emitted, probs);
    let total = match model {
        CountModel::Binomial => {
            let mut sum = binomial(current, p1, rng);
            for (n, p) in isi_pairs(emitted, probs) {
                sum += binomial(n, p, rng);
            }
            sum + gaussian(noise_scale * mean, rng)
        }
        CountModel::Gaussian => {
            let var = current * p1 * (1.0 - p1)
                + isi_pairs(emitted, probs)
                    .map(|(n, p)| n * p * (1.0 - p))
                    .sum::<f64>()
                + noise_scale * mean;
            mean + gaussian(var, rng)
        }
    };
    total.max(0.0).round() as u64
}

fn gaussian<R: Rng + ?Sized>(var: f64, rng: &mut R) -> f64 {
    if var > 0.0 {
        Normal::new(0.0, var.sqrt())
            .expect("finite sigma")
            .sample(rng)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlotRecord {
    pub bit: u8,
    /// Molecules scheduled for this slot (what a 1 would emit).
    pub level: u64,
    /// Molecules actually released: `level` for a 1, zero for a 0.
    pub emitted: u64,
    pub probs: Vec<f64>,
    pub stats: SlotStatistics,
    pub threshold: f64,
    pub count: u64,
    pub decision: u8,
}

impl SlotRecord {
    pub fn is_error(&self) -> bool {
        self.bit != self.decision
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LinkHistory {
    pub slots: Vec<SlotRecord>,
    /// Emissions as floats, kept alongside for the ISI sums.
    emitted: Vec<f64>,
    levels: Vec<f64>,
}

impl LinkHistory {
    pub fn push(&mut self, rec: SlotRecord) {
        self.emitted.push(rec.emitted as f64);
        self.levels.push(rec.level as f64);
        self.slots.push(rec);
    }

    /// Emitted counts of at most the last `memory` slots, oldest first.
    pub fn emitted_tail(&self, memory: usize) -> &[f64] {
        &self.emitted[self.emitted.len().saturating_sub(memory)..]
    }

    pub fn levels_tail(&self, memory: usize) -> &[f64] {
        &self.levels[self.levels.len().saturating_sub(memory)..]
    }

    pub fn errors(&self) -> usize {
        self.slots.iter().filter(|s| s.is_error()).count()
    }

    pub fn ber(&self) -> f64 {
        if self.slots.is_empty() {
            0.0
        } else {
            self.errors() as f64 / self.slots.len() as f64
        }
    }
}

pub const SLOT_COLUMNS: [&str; 12] = [
    "slot",
    "bit",
    "N_tx",
    "P1",
    "mu0",
    "mu1",
    "var0",
    "var1",
    "N_th",
    "count",
    "decision",
    "error_flag",
];

pub fn write_history_csv<W: Write>(w: W, h: &LinkHistory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(SLOT_COLUMNS)?;
    for (i, s) in h.slots.iter().enumerate() {
        out.write_record(&[
            (i + 1).to_string(),
            s.bit.to_string(),
            s.emitted.to_string(),
            fmt(s.probs.first().copied().unwrap_or(0.0)),
            fmt(s.stats.mu0),
            fmt(s.stats.mu1),
            fmt(s.stats.var0),
            fmt(s.stats.var1),
            fmt(s.threshold),
            s.count.to_string(),
            s.decision.to_string(),
            u8::from(s.is_error()).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
