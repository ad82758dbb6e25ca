//! Onsets, constant-tempo estimation, meter detection and beat quantization.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::segmentation::NoteEvent;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RhythmError {
    #[error("NoOnsets: neither notes nor energy rises were found")]
    NoOnsets,
    #[error("InsufficientOnsets: {0} onset(s), need at least 2")]
    InsufficientOnsets(usize),
    #[error("TooShort: {beats} beat(s) of material, need {need}")]
    TooShort { beats: usize, need: usize },
    #[error("invalid tempo {0} BPM")]
    InvalidTempo(f64),
    #[error("unsupported time signature numerator {0}")]
    UnsupportedMeter(u8),
}

/// Onsets closer than this are treated as one.
pub const ONSET_MERGE_S: f64 = 0.050;

/// Rectified frame-to-frame energy increase, aligned with the energy frames.
pub fn energy_flux(energy: &[(f64, f64)]) -> Vec<(f64, f64)> {
    energy
        .iter()
        .enumerate()
        .map(|(i, &(t, e))| {
            let rise = if i == 0 { 0.0 } else { (e - energy[i - 1].1).max(0.0) };
            (t, rise)
        })
        .collect()
}

fn local_maxima(flux: &[(f64, f64)]) -> impl Iterator<Item = (f64, f64)> + '_ {
    (0..flux.len()).filter_map(move |i| {
        let d = flux[i].1;
        let left = if i == 0 { 0.0 } else { flux[i - 1].1 };
        let right = flux.get(i + 1).map_or(0.0, |p| p.1);
        (d > 0.0 && d > left && d >= right).then_some(flux[i])
    })
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Note onsets merged with strong energy rises.
///
/// An energy rise counts when it is a local maximum of the rectified energy
/// derivative above three times the median positive rise and above 5% of the
/// loudest frame. Onsets within 50 ms of an earlier one are dropped, note
/// onsets taking precedence.
pub fn detect_onsets(energy: &[(f64, f64)], notes: &[NoteEvent]) -> Result<Vec<f64>, RhythmError> {
    let flux = energy_flux(energy);
    let mut rises: Vec<f64> = flux.iter().map(|p| p.1).filter(|&d| d > 0.0).collect();
    let max_energy = energy.iter().map(|p| p.1).fold(0.0, f64::max);
    let mut onsets: Vec<f64> = notes.iter().map(|n| n.onset_s).collect();
    onsets.sort_by(|a, b| a.total_cmp(b));

    if let Some(med) = median(&mut rises) {
        let threshold = (3.0 * med).max(0.05 * max_energy);
        let extra: Vec<f64> = local_maxima(&flux)
            .filter(|&(_, d)| d > threshold)
            .map(|(t, _)| t)
            .filter(|t| onsets.iter().all(|o| (o - t).abs() > ONSET_MERGE_S))
            .collect();
        onsets.extend(extra);
        onsets.sort_by(|a, b| a.total_cmp(b));
    }

    let mut merged: Vec<f64> = Vec::with_capacity(onsets.len());
    for t in onsets {
        if merged.last().is_none_or(|&l| t - l > ONSET_MERGE_S) {
            merged.push(t);
        }
    }
    if merged.is_empty() {
        return Err(RhythmError::NoOnsets);
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TempoConfig {
    pub min_bpm: f64,
    pub max_bpm: f64,
    /// Inter-onset histogram bin width.
    pub bin_s: f64,
}

impl Default for TempoConfig {
    fn default() -> Self {
        Self {
            min_bpm: 60.0,
            max_bpm: 180.0,
            bin_s: 0.020,
        }
    }
}

/// Bins whose smoothed vote count is within this fraction of the best one
/// are treated as tied; the longest tied period wins.
const TIE_FRACTION: f64 = 0.95;
const MIN_PERIOD_S: f64 = 0.05;
/// A period fits when this share of onsets lies within `GRID_SLACK` beats of its grid.
const GRID_FIT_FRACTION: f64 = 0.9;
const GRID_SLACK: f64 = 0.2;
const FALLBACK_FRACTION: f64 = 0.5;

/// Share of onsets within `GRID_SLACK` beats of the grid anchored at the first onset.
fn grid_fit(sorted: &[f64], period: f64) -> f64 {
    let t0 = sorted[0];
    let on_grid = sorted
        .iter()
        .filter(|&&t| {
            let x = (t - t0) / period;
            (x - x.round()).abs() <= GRID_SLACK
        })
        .count();
    on_grid as f64 / sorted.len() as f64
}

/// Beat period in seconds, before any octave folding.
///
/// Every inter-onset interval votes for itself and, with weights 1/2 and 1/3,
/// for its halves and thirds in a histogram of `bin_s` bins. The mode (with one-bin smoothing) gives a
/// coarse period, which is then refined by a least-squares fit of the onsets
/// to an integer beat grid.
pub fn estimate_beat_period(onsets: &[f64], bin_s: f64) -> Result<f64, RhythmError> {
    let mut sorted = onsets.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    if sorted.len() < 2 {
        return Err(RhythmError::InsufficientOnsets(sorted.len()));
    }

    // (period, weight): a k-th subdivision votes with weight 1/k
    let votes: Vec<(f64, f64)> = sorted
        .windows(2)
        .map(|w| w[1] - w[0])
        .flat_map(|ioi| (1..=3).map(move |k| (ioi / k as f64, 1.0 / k as f64)))
        .filter(|&(v, _)| v >= MIN_PERIOD_S)
        .collect();
    if votes.is_empty() {
        return Err(RhythmError::InsufficientOnsets(sorted.len()));
    }
    let bin_of = |v: f64| (v / bin_s).floor() as i64;
    let mut counts: BTreeMap<i64, f64> = BTreeMap::new();
    for &(v, w) in &votes {
        *counts.entry(bin_of(v)).or_default() += w;
    }
    let count = |b: i64| counts.get(&b).copied().unwrap_or(0.0);
    let score = |b: i64| count(b - 1) + count(b) + count(b + 1);
    let best = counts.keys().map(|&b| score(b)).fold(0.0, f64::max);
    let mean_near = |chosen: i64| {
        let (sum, weight) = votes
            .iter()
            .filter(|&&(v, _)| (bin_of(v) - chosen).abs() <= 1)
            .fold((0.0, 0.0), |(s, tw), &(v, w)| (s + v * w, tw + w));
        sum / weight
    };
    // Candidates: near-ties longest first, then any bin scoring at least
    // half the best in score order. The first whose beat grid explains the
    // onsets wins; otherwise the longest near-tie.
    let mut candidates: Vec<i64> = counts.keys().rev().copied().filter(|&b| score(b) >= TIE_FRACTION * best).collect();
    let mut weaker: Vec<i64> = counts
        .keys()
        .copied()
        .filter(|&b| score(b) < TIE_FRACTION * best && score(b) >= FALLBACK_FRACTION * best)
        .collect();
    weaker.sort_by(|&a, &b| score(b).total_cmp(&score(a)).then(b.cmp(&a)));
    candidates.extend(weaker);
    let mut period = candidates
        .iter()
        .map(|&b| mean_near(b))
        .find(|&p| grid_fit(&sorted, p) >= GRID_FIT_FRACTION)
        .unwrap_or_else(|| mean_near(candidates[0]));

    // least-squares fit of onset times to integer beat indices
    let t0 = sorted[0];
    for _ in 0..2 {
        let ks: Vec<f64> = sorted.iter().map(|t| ((t - t0) / period).round()).collect();
        let n = ks.len() as f64;
        let mk = ks.iter().sum::<f64>() / n;
        let mt = sorted.iter().sum::<f64>() / n;
        let sxx: f64 = ks.iter().map(|k| (k - mk).powi(2)).sum();
        if sxx <= 0.0 {
            break;
        }
        let sxy: f64 = ks.iter().zip(&sorted).map(|(k, t)| (k - mk) * (t - mt)).sum();
        let fitted = sxy / sxx;
        if !(fitted > 0.0) {
            break;
        }
        period = fitted;
    }
    Ok(period)
}

/// Estimates this close (relative) to a range bound are clamped onto it.
pub const FOLD_MARGIN: f64 = 0.02;

/// Doubles or halves `bpm` until it lies in `[min_bpm, max_bpm]`. A value
/// just outside a bound is clamped rather than shifted by an octave.
pub fn fold_tempo(mut bpm: f64, min_bpm: f64, max_bpm: f64) -> f64 {
    debug_assert!(max_bpm >= 2.0 * min_bpm);
    if bpm >= min_bpm * (1.0 - FOLD_MARGIN) && bpm <= max_bpm * (1.0 + FOLD_MARGIN) {
        return bpm.clamp(min_bpm, max_bpm);
    }
    while bpm < min_bpm {
        bpm *= 2.0;
    }
    while bpm > max_bpm {
        bpm /= 2.0;
    }
    bpm
}

/// Constant tempo of the whole piece, folded into the configured range.
pub fn estimate_tempo(onsets: &[f64], cfg: &TempoConfig) -> Result<f64, RhythmError> {
    let period = estimate_beat_period(onsets, cfg.bin_s)?;
    Ok(fold_tempo(60.0 / period, cfg.min_bpm, cfg.max_bpm))
}

/// Beats per bar over a quarter-note beat unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TimeSignature {
    pub numerator: u8,
}

impl TimeSignature {
    pub const SUPPORTED: [u8; 5] = [2, 3, 4, 5, 7];
    pub const COMMON: TimeSignature = TimeSignature { numerator: 4 };
    pub const TRIPLE: TimeSignature = TimeSignature { numerator: 3 };

    pub fn new(numerator: u8) -> Result<Self, RhythmError> {
        if Self::SUPPORTED.contains(&numerator) {
            Ok(Self { numerator })
        } else {
            Err(RhythmError::UnsupportedMeter(numerator))
        }
    }

    pub fn denominator(&self) -> u8 {
        4
    }
}

impl std::fmt::Display for TimeSignature {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator())
    }
}

/// Meter scores closer than this fraction of the best are ties.
const METER_TIE_FRACTION: f64 = 0.05;
const METER_PREFERENCE: [u8; 2] = [4, 3];

/// Per-beat accent strengths: energy-rise peaks summed into beat slots
/// anchored at the first onset.
pub fn beat_accents(onsets: &[f64], energy: &[(f64, f64)], tempo: f64) -> Vec<f64> {
    let (Some(&t0), Some(&(t_end, _))) = (onsets.first(), energy.last()) else {
        return Vec::new();
    };
    let period = 60.0 / tempo;
    if t_end < t0 {
        return Vec::new();
    }
    let slots = ((t_end - t0) / period).floor() as usize + 1;
    let mut accents = vec![0.0; slots];
    let flux = energy_flux(energy);
    for (t, d) in local_maxima(&flux) {
        let slot = ((t - t0) / period).round();
        if slot >= 0.0 && (slot as usize) < slots {
            accents[slot as usize] += d;
        }
    }
    accents
}

/// Normalized autocorrelation of the mean-removed sequence at `lag`.
fn autocorrelation(xs: &[f64], lag: usize) -> f64 {
    let n = xs.len();
    if lag >= n {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return 0.0;
    }
    let cov = (0..n - lag)
        .map(|i| (xs[i] - mean) * (xs[i + lag] - mean))
        .sum::<f64>()
        / (n - lag) as f64;
    cov / var
}

/// Picks the bar length whose lag best explains the beat accent pattern.
/// Flat accents and near-ties resolve to 4/4, then 3/4.
pub fn detect_time_signature(
    onsets: &[f64],
    energy: &[(f64, f64)],
    tempo: f64,
    candidates: &[u8],
) -> Result<TimeSignature, RhythmError> {
    if !(tempo > 0.0 && tempo.is_finite()) {
        return Err(RhythmError::InvalidTempo(tempo));
    }
    let candidates: Vec<u8> = if candidates.is_empty() {
        METER_PREFERENCE.to_vec()
    } else {
        candidates.to_vec()
    };
    for &c in &candidates {
        TimeSignature::new(c)?;
    }
    let default = METER_PREFERENCE
        .iter()
        .copied()
        .find(|p| candidates.contains(p))
        .unwrap_or(candidates[0]);

    let accents = beat_accents(onsets, energy, tempo);
    let longest = *candidates.iter().max().expect("non-empty") as usize;
    if accents.len() < 2 * longest {
        return Err(RhythmError::TooShort {
            beats: accents.len(),
            need: 2 * longest,
        });
    }
    let mean = accents.iter().sum::<f64>() / accents.len() as f64;
    let spread = (accents.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / accents.len() as f64).sqrt();
    if mean <= 0.0 || spread <= METER_TIE_FRACTION * mean {
        return TimeSignature::new(default);
    }

    let scores: Vec<(u8, f64)> = candidates
        .iter()
        .map(|&c| (c, autocorrelation(&accents, c as usize)))
        .collect();
    let best = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let tied = |c: u8| {
        scores
            .iter()
            .any(|&(n, s)| n == c && best - s <= METER_TIE_FRACTION * best.abs())
    };
    let pick = METER_PREFERENCE
        .iter()
        .copied()
        .find(|&p| tied(p))
        .unwrap_or_else(|| {
            scores
                .iter()
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty")
                .0
        });
    TimeSignature::new(pick)
}

/// One note of a quantized score, in beats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizedNote {
    pub midi: u8,
    pub onset_beats: f64,
    pub duration_beats: f64,
}

impl QuantizedNote {
    pub fn end_beats(&self) -> f64 {
        self.onset_beats + self.duration_beats
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedScore {
    pub tempo_bpm: f64,
    pub time_signature: TimeSignature,
    pub notes: Vec<QuantizedNote>,
    pub bar_count: u32,
}

/// Default subdivisions per beat.
pub const GRID_DIVISION: u32 = 16;

/// Microseconds per quarter note as carried by a MIDI set-tempo event.
pub fn micros_per_quarter(bpm: f64) -> u32 {
    (60e6 / bpm).round() as u32
}

/// The tempo a MIDI file can represent exactly: `60e6 / round(60e6 / bpm)`.
pub fn canonical_tempo(bpm: f64) -> f64 {
    60e6 / micros_per_quarter(bpm) as f64
}

/// Bars needed to hold `total_beats`, at least one.
pub fn bars_for(total_beats: f64, numerator: u8) -> u32 {
    ((total_beats / numerator as f64 - 1e-9).ceil() as u32).max(1)
}

impl QuantizedScore {
    /// Builds a score with the tempo canonicalized and `bar_count` derived.
    pub fn new(tempo_bpm: f64, time_signature: TimeSignature, notes: Vec<QuantizedNote>) -> Self {
        let total = notes.iter().map(QuantizedNote::end_beats).fold(0.0, f64::max);
        Self {
            tempo_bpm: canonical_tempo(tempo_bpm),
            time_signature,
            bar_count: bars_for(total, time_signature.numerator),
            notes,
        }
    }

    pub fn total_beats(&self) -> f64 {
        self.notes.iter().map(QuantizedNote::end_beats).fold(0.0, f64::max)
    }

    /// Converts to the reference-score form (bar-length trailing rest kept).
    pub fn to_score_spec(&self) -> crate::audio::ScoreSpec {
        crate::audio::ScoreSpec {
            tempo_bpm: self.tempo_bpm,
            time_signature: (self.time_signature.numerator, self.time_signature.denominator()),
            notes: self
                .notes
                .iter()
                .map(|n| crate::audio::ScoreNote::new(n.midi, n.onset_beats, n.duration_beats))
                .collect(),
            length_beats: Some((self.bar_count * self.time_signature.numerator as u32) as f64),
        }
    }
}

fn snap_to_grid(beats: f64, division: u32) -> f64 {
    (beats * division as f64).round() / division as f64
}

/// Rounds note onsets and durations to a `1/division`-beat grid. Durations
/// are at least one grid step; a note is cut short rather than overlap its
/// successor, and a successor landing on the same grid point is pushed one
/// step later.
pub fn quantize_with_grid(notes: &[NoteEvent], tempo: f64, ts: TimeSignature, division: u32) -> QuantizedScore {
    assert!(tempo > 0.0, "tempo must be positive");
    assert!(division > 0, "grid division must be positive");
    let tempo = canonical_tempo(tempo);
    let step = 1.0 / division as f64;
    let beats_per_s = tempo / 60.0;
    let mut sorted = notes.to_vec();
    sorted.sort_by(|a, b| a.onset_s.total_cmp(&b.onset_s));

    let mut out: Vec<QuantizedNote> = Vec::with_capacity(sorted.len());
    for n in &sorted {
        let mut onset = snap_to_grid(n.onset_s.max(0.0) * beats_per_s, division);
        let duration = snap_to_grid(n.duration_s * beats_per_s, division).max(step);
        if let Some(prev) = out.last_mut() {
            if onset <= prev.onset_beats {
                onset = prev.onset_beats + step;
            }
            if prev.end_beats() > onset {
                prev.duration_beats = onset - prev.onset_beats;
            }
        }
        out.push(QuantizedNote {
            midi: n.midi,
            onset_beats: onset,
            duration_beats: duration,
        });
    }
    QuantizedScore::new(tempo, ts, out)
}

pub fn quantize(notes: &[NoteEvent], tempo: f64, ts: TimeSignature) -> QuantizedScore {
    quantize_with_grid(notes, tempo, ts, GRID_DIVISION)
}
