//! Equal-temperament MIDI pitch grid and frequency snapping.
//!
//! Frequencies are snapped to the nearest of the 128 MIDI pitches in
//! log-frequency. The primary path bisects the sorted table index; a second
//! path runs the continuous dichotomy minimizer over fractional MIDI numbers
//! and is used to cross-check the first.

mod dichotomy;
pub(crate) mod track;

use thiserror::Error;

use crate::spectral::SpectralError;

pub use dichotomy::{dichotomy_minimize, DichotomyResult, DichotomySpec};
pub use track::{build_pitch_track, frame_count, PitchFrame, PitchTrack};

pub const MIDI_LEVELS: usize = 128;
pub const A4_MIDI: u8 = 69;
pub const A4_HZ: f64 = 440.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PitchError {
    #[error("OutOfRange: MIDI number {0} outside 0..=127")]
    OutOfRange(i64),
    #[error("NonPositiveFrequency: {0} Hz")]
    NonPositiveFrequency(f64),
    #[error("InvalidInterval: {0}")]
    InvalidInterval(String),
    #[error("BufferTooShort: {have} samples, one frame needs {need}")]
    BufferTooShort { have: usize, need: usize },
    #[error("invalid hop {hop} for frame size {frame}")]
    InvalidHop { hop: usize, frame: usize },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// `440 · 2^((m − 69)/12)`.
pub fn midi_to_freq(m: u8) -> Result<f64, PitchError> {
    if m as usize >= MIDI_LEVELS {
        return Err(PitchError::OutOfRange(m as i64));
    }
    Ok(fractional_midi_to_freq(m as f64))
}

fn fractional_midi_to_freq(m: f64) -> f64 {
    if m == A4_MIDI as f64 {
        return A4_HZ;
    }
    A4_HZ * ((m - A4_MIDI as f64) / 12.0).exp2()
}

/// The 128 MIDI frequencies with their natural logs.
#[derive(Debug, Clone)]
pub struct PitchTable {
    freqs: [f64; MIDI_LEVELS],
    log_freqs: [f64; MIDI_LEVELS],
}

impl Default for PitchTable {
    fn default() -> Self {
        Self::new()
    }
}

/// Outcome of snapping one frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Snap {
    pub midi: u8,
    pub iterations: u32,
}

impl PitchTable {
    pub fn new() -> Self {
        let mut freqs = [0.0; MIDI_LEVELS];
        let mut log_freqs = [0.0; MIDI_LEVELS];
        for m in 0..MIDI_LEVELS {
            freqs[m] = fractional_midi_to_freq(m as f64);
            log_freqs[m] = freqs[m].ln();
        }
        Self { freqs, log_freqs }
    }

    pub fn freqs(&self) -> &[f64; MIDI_LEVELS] {
        &self.freqs
    }

    pub fn freq(&self, midi: u8) -> f64 {
        self.freqs[midi as usize]
    }

    /// Nearest MIDI pitch by log-frequency distance, found by bisecting the
    /// table index. Seven halvings narrow 128 entries to an adjacent pair and
    /// one final comparison picks between them, so at most 8 steps are taken.
    /// Exact log-midpoints go to the lower pitch; out-of-table input clamps.
    pub fn snap(&self, freq: f64) -> Result<Snap, PitchError> {
        if !(freq > 0.0) || !freq.is_finite() {
            return Err(PitchError::NonPositiveFrequency(freq));
        }
        let lf = freq.ln();
        let last = MIDI_LEVELS - 1;
        if lf <= self.log_freqs[0] {
            return Ok(Snap { midi: 0, iterations: 0 });
        }
        if lf >= self.log_freqs[last] {
            return Ok(Snap {
                midi: last as u8,
                iterations: 0,
            });
        }
        // invariant: log_freqs[lo] < lf < log_freqs[hi]
        let (mut lo, mut hi) = (0usize, last);
        let mut iterations = 0;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            iterations += 1;
            if lf >= self.log_freqs[mid] {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        iterations += 1;
        let below = lf - self.log_freqs[lo];
        let above = self.log_freqs[hi] - lf;
        let midi = if below <= above { lo } else { hi };
        Ok(Snap {
            midi: midi as u8,
            iterations,
        })
    }

    /// Same snap, computed by minimizing the log distance over fractional
    /// MIDI numbers in `[0, 127]` and rounding the minimizer.
    pub fn snap_by_minimization(&self, freq: f64) -> Result<Snap, PitchError> {
        if !(freq > 0.0) || !freq.is_finite() {
            return Err(PitchError::NonPositiveFrequency(freq));
        }
        let lf = freq.ln();
        let spec = DichotomySpec::new(0.0, (MIDI_LEVELS - 1) as f64, 1e-7);
        let r = dichotomy_minimize(|x| (lf - fractional_midi_to_freq(x).ln()).abs(), &spec)?;
        let x = r.x_star.clamp(0.0, (MIDI_LEVELS - 1) as f64);
        let floor = x.floor();
        let midi = if x - floor > 0.5 { floor + 1.0 } else { floor };
        Ok(Snap {
            midi: midi as u8,
            iterations: r.iterations as u32,
        })
    }
}

/// Snaps with the default 440 Hz table.
pub fn snap_frequency(freq: f64, table: &PitchTable) -> Result<Snap, PitchError> {
    table.snap(freq)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Linear scan over the whole table, independent of the bisection.
    fn scan(freq: f64) -> u8 {
        let lf = freq.ln();
        let mut best = (0u8, f64::INFINITY);
        for m in 0..128u8 {
            let d = (lf - (440.0 * 2f64.powf((m as f64 - 69.0) / 12.0)).ln()).abs();
            if d < best.1 {
                best = (m, d);
            }
        }
        best.0
    }

    #[test]
    fn midi_to_freq_anchors() {
        assert_eq!(midi_to_freq(69).unwrap(), 440.0);
        assert!((midi_to_freq(81).unwrap() - 880.0).abs() < 1e-9);
        assert!((midi_to_freq(0).unwrap() - 8.1758).abs() < 1e-3);
        assert!((midi_to_freq(60).unwrap() - 261.6256).abs() < 1e-4);
        assert_eq!(midi_to_freq(128), Err(PitchError::OutOfRange(128)));
    }

    #[test]
    fn table_is_strictly_increasing() {
        let t = PitchTable::new();
        assert_eq!(t.freq(69), 440.0);
        assert!(t.freqs().windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn snap_examples() {
        let t = PitchTable::new();
        let s = t.snap(440.0).unwrap();
        assert_eq!(s.midi, 69);
        assert!(s.iterations <= 8);
        // boundary between 69 and 70 is 440·2^(1/24) ≈ 452.89 Hz
        assert_eq!(t.snap(452.0).unwrap().midi, 69);
        assert_eq!(scan(452.0), 69);
        assert_eq!(t.snap(453.5).unwrap().midi, 70);
        assert_eq!(t.snap(1.0).unwrap().midi, 0);
        assert_eq!(t.snap(20000.0).unwrap().midi, 127);
        assert!(matches!(t.snap(0.0), Err(PitchError::NonPositiveFrequency(_))));
        assert!(matches!(t.snap(-5.0), Err(PitchError::NonPositiveFrequency(_))));
    }

    #[test]
    fn exact_log_midpoint_goes_low() {
        let t = PitchTable::new();
        // geometric mean of two neighbours, computed from the table's own logs
        let mid = (0.5 * (t.log_freqs[60] + t.log_freqs[61])).exp();
        let s = t.snap(mid).unwrap();
        let d_lo = mid.ln() - t.log_freqs[60];
        let d_hi = t.log_freqs[61] - mid.ln();
        assert_eq!(s.midi, if d_lo <= d_hi { 60 } else { 61 });
    }

    #[test]
    fn round_trip_all_levels() {
        let t = PitchTable::new();
        for m in 0..128u8 {
            let s = t.snap(midi_to_freq(m).unwrap()).unwrap();
            assert_eq!(s.midi, m);
            assert!(s.iterations <= 8);
        }
    }

    #[test]
    fn minimization_path_agrees_on_grid_and_detuned_points() {
        let t = PitchTable::new();
        for m in 0..128u8 {
            for cents in [-40.0, -10.0, 0.0, 25.0, 45.0] {
                let f = midi_to_freq(m).unwrap() * (cents / 1200.0f64).exp2();
                assert_eq!(t.snap_by_minimization(f).unwrap().midi, t.snap(f).unwrap().midi, "m={m} c={cents}");
            }
        }
    }
}
