use serde::Serialize;

use super::{PitchError, PitchTable};
use crate::audio::AudioBuffer;
use crate::preprocess::rms;
use crate::spectral::{check_frame_len, Frame, FrameAnalyzer};

/// Analysis of one frame. `time` is the frame centre in seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PitchFrame {
    pub time: f64,
    pub freq_hz: f64,
    pub midi: Option<u8>,
    pub energy: f64,
    pub snap_iterations: u32,
}

impl PitchFrame {
    pub fn is_voiced(&self) -> bool {
        self.midi.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PitchTrack {
    pub frames: Vec<PitchFrame>,
    pub frame_size: usize,
    pub hop: usize,
    pub sample_rate: u32,
}

impl PitchTrack {
    pub fn hop_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }

    pub fn frame_seconds(&self) -> f64 {
        self.frame_size as f64 / self.sample_rate as f64
    }

    /// Centre time of frame `i`.
    pub fn time_of(&self, i: usize) -> f64 {
        frame_centre(i, self.frame_size, self.hop, self.sample_rate)
    }
}

pub(crate) fn frame_centre(i: usize, frame_size: usize, hop: usize, sample_rate: u32) -> f64 {
    (i * hop) as f64 / sample_rate as f64 + 0.5 * frame_size as f64 / sample_rate as f64
}

/// Whole frames that fit in `len` samples; a partial tail frame is dropped.
pub fn frame_count(len: usize, frame_size: usize, hop: usize) -> usize {
    if len < frame_size || hop == 0 {
        0
    } else {
        (len - frame_size) / hop + 1
    }
}

pub(crate) fn check_framing(len: usize, frame_size: usize, hop: usize) -> Result<usize, PitchError> {
    check_frame_len(frame_size)?;
    if hop == 0 || hop > frame_size {
        return Err(PitchError::InvalidHop {
            hop,
            frame: frame_size,
        });
    }
    if len < frame_size {
        return Err(PitchError::BufferTooShort {
            have: len,
            need: frame_size,
        });
    }
    Ok(frame_count(len, frame_size, hop))
}

/// Runs dominant-frequency detection and MIDI snapping over every whole frame.
pub fn build_pitch_track(buf: &AudioBuffer, frame_size: usize, hop: usize) -> Result<PitchTrack, PitchError> {
    let count = check_framing(buf.len(), frame_size, hop)?;
    let table = PitchTable::new();
    let mut analyzer = FrameAnalyzer::new(frame_size)?;
    let mut frames = Vec::with_capacity(count);
    for i in 0..count {
        let start = i * hop;
        let slice = &buf.samples[start..start + frame_size];
        let frame = Frame::new(slice, start as f64 / buf.sample_rate as f64, buf.sample_rate)?;
        let peak = analyzer.dominant_frequency(&frame, true)?;
        let (midi, snap_iterations) = if peak.is_voiced() {
            let s = table.snap(peak.freq_hz)?;
            (Some(s.midi), s.iterations)
        } else {
            (None, 0)
        };
        frames.push(PitchFrame {
            time: frame_centre(i, frame_size, hop, buf.sample_rate),
            freq_hz: peak.freq_hz,
            midi,
            energy: rms(slice),
            snap_iterations,
        });
    }
    Ok(PitchTrack {
        frames,
        frame_size,
        hop,
        sample_rate: buf.sample_rate,
    })
}
