//! Turns a framewise pitch/energy track into note events.
//!
//! A note starts when the snapped pitch changes, when a voiced frame follows
//! a rest, or when the pitch holds but the frame energy jumps by at least the
//! re-attack ratio over the previous frame. Equal or falling energy at the
//! same pitch continues the current note.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::pitch::track::{check_framing, frame_centre};
use crate::pitch::{PitchError, PitchTrack};
use crate::preprocess::rms;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    /// Same-pitch frame-to-frame energy ratio that counts as a re-attack.
    pub energy_rise_ratio: f64,
    pub min_note_frames: usize,
    /// Frames quieter than this RMS are rests whatever their pitch.
    pub rest_floor: f64,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            energy_rise_ratio: 1.5,
            min_note_frames: 2,
            rest_floor: 0.01,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoteEvent {
    pub midi: u8,
    pub onset_s: f64,
    pub duration_s: f64,
    pub peak_energy: f64,
}

impl NoteEvent {
    pub fn end_s(&self) -> f64 {
        self.onset_s + self.duration_s
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("EmptyTrack: no frames to segment")]
    EmptyTrack,
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Framing(#[from] PitchError),
}

impl SegmentationConfig {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(self.energy_rise_ratio > 1.0) {
            return Err(SegmentationError::InvalidConfig(
                "energy_rise_ratio must exceed 1".into(),
            ));
        }
        if self.min_note_frames == 0 {
            return Err(SegmentationError::InvalidConfig(
                "min_note_frames must be at least 1".into(),
            ));
        }
        if !(self.rest_floor >= 0.0) {
            return Err(SegmentationError::InvalidConfig(
                "rest_floor must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// RMS per frame, on the same framing as the pitch track.
pub fn energy_track(buf: &AudioBuffer, frame_size: usize, hop: usize) -> Result<Vec<(f64, f64)>, SegmentationError> {
    let count = check_framing(buf.len(), frame_size, hop)?;
    Ok((0..count)
        .map(|i| {
            let start = i * hop;
            (
                frame_centre(i, frame_size, hop, buf.sample_rate),
                rms(&buf.samples[start..start + frame_size]),
            )
        })
        .collect())
}

/// Removes one-frame pitch glitches: a frame sandwiched between two frames
/// of the same pitch takes that pitch when it sits an octave away, or when
/// shorter runs than `min_len` could never form a note of their own.
fn smooth_labels(labels: &mut [Option<u8>], min_len: usize) {
    if labels.len() < 3 {
        return;
    }
    for i in 1..labels.len() - 1 {
        if let (Some(prev), Some(cur), Some(next)) = (labels[i - 1], labels[i], labels[i + 1]) {
            let octave_jump = (cur as i16 - prev as i16).abs() == 12;
            if prev == next && cur != prev && (octave_jump || min_len > 1) {
                labels[i] = Some(prev);
            }
        }
    }
}

/// Accepted re-attack split points inside `[start, end)`. Splits closer than
/// `min_len` frames to the previous accepted split or to the block end are
/// folded into the preceding note. The greedy pass keeps the largest
/// possible set of splits, so fewer candidates never yield more notes.
fn accepted_splits(candidates: &[usize], start: usize, end: usize, min_len: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut last = start;
    for &p in candidates {
        if p - last >= min_len && end - p >= min_len {
            out.push(p);
            last = p;
        }
    }
    out
}

pub fn segment_notes(track: &PitchTrack, cfg: &SegmentationConfig) -> Result<Vec<NoteEvent>, SegmentationError> {
    cfg.validate()?;
    let frames = &track.frames;
    if frames.is_empty() {
        return Err(SegmentationError::EmptyTrack);
    }
    let min_len = cfg.min_note_frames;
    let mut labels: Vec<Option<u8>> = frames
        .iter()
        .map(|f| f.midi.filter(|_| f.energy >= cfg.rest_floor))
        .collect();
    smooth_labels(&mut labels, min_len);

    let hop_s = track.hop_seconds();
    let mut notes = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let Some(midi) = labels[i] else {
            i += 1;
            continue;
        };
        let start = i;
        while i < labels.len() && labels[i] == Some(midi) {
            i += 1;
        }
        let end = i;
        if end - start < min_len {
            continue;
        }
        let candidates: Vec<usize> = (start + 1..end)
            .filter(|&p| {
                let prev = frames[p - 1].energy;
                prev > 0.0 && frames[p].energy >= cfg.energy_rise_ratio * prev
            })
            .collect();
        let mut bounds = vec![start];
        bounds.extend(accepted_splits(&candidates, start, end, min_len));
        bounds.push(end);
        for seg in bounds.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let onset = if a == 0 { 0.0 } else { frames[a].time };
            let note_end = frames[b - 1].time + hop_s;
            let peak_energy = frames[a..b].iter().map(|f| f.energy).fold(0.0, f64::max);
            notes.push(NoteEvent {
                midi,
                onset_s: onset,
                duration_s: note_end - onset,
                peak_energy,
            });
        }
    }
    Ok(notes)
}
