//! Shared fixtures for the benchmarks.

use monomt_core::{synth_melody, AudioBuffer, ScoreNote, ScoreSpec, Timbre};

pub const SAMPLE_RATE: u32 = 44100;

/// A two-bar 4/4 phrase at 120 BPM with a mix of quarter and half notes.
pub fn phrase() -> ScoreSpec {
    let notes = [(60, 0.0, 1.0), (64, 1.0, 1.0), (67, 2.0, 2.0), (65, 4.0, 1.0), (62, 5.0, 1.0), (60, 6.0, 2.0)];
    ScoreSpec {
        tempo_bpm: 120.0,
        time_signature: (4, 4),
        notes: notes.iter().map(|&(m, o, d)| ScoreNote::new(m, o, d)).collect(),
        length_beats: None,
    }
}

pub fn phrase_audio() -> AudioBuffer {
    synth_melody(&phrase(), SAMPLE_RATE, Timbre::harmonic()).expect("fixture score is valid")
}

/// Deterministic test tone of `len` samples.
pub fn tone(len: usize, freq: f64) -> Vec<f64> {
    (0..len)
        .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
        .collect()
}
