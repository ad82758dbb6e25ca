//! End-to-end transcription: audio in, quantized score out.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;
use crate::midi::MidiOptions;
use crate::pitch::{build_pitch_track, PitchError, PitchTrack};
use crate::preprocess::{noise_gate, normalize, trim_bounds, PreprocessConfig, PreprocessError};
use crate::rhythm::{
    detect_onsets, detect_time_signature, estimate_tempo, quantize_with_grid, QuantizedScore, RhythmError,
    TempoConfig, TimeSignature, GRID_DIVISION,
};
use crate::segmentation::{energy_track, segment_notes, NoteEvent, SegmentationConfig, SegmentationError};

/// Tempo assumed when there are too few onsets to measure one.
pub const FALLBACK_TEMPO_BPM: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub frame_size: usize,
    pub hop: usize,
    pub preprocess: PreprocessConfig,
    pub gate_enabled: bool,
    pub segmentation: SegmentationConfig,
    pub tempo: TempoConfig,
    pub time_signature_candidates: Vec<u8>,
    /// Quantization grid steps per beat.
    pub grid_division: u32,
    pub ppq: u16,
    pub program: u8,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            frame_size: 4096,
            hop: 1024,
            preprocess: PreprocessConfig::default(),
            gate_enabled: true,
            segmentation: SegmentationConfig::default(),
            tempo: TempoConfig::default(),
            time_signature_candidates: vec![3, 4],
            grid_division: GRID_DIVISION,
            ppq: 480,
            program: 0,
        }
    }
}

impl PipelineConfig {
    pub fn midi_options(&self) -> MidiOptions {
        MidiOptions {
            ppq: self.ppq,
            program: self.program,
            ..MidiOptions::default()
        }
    }

    fn validate(&self) -> Result<(), StageError> {
        self.preprocess.validate()?;
        self.segmentation.validate()?;
        if self.grid_division == 0 {
            return Err(StageError::Config("grid_division must be positive".into()));
        }
        let t = &self.tempo;
        if !(t.min_bpm > 0.0 && t.max_bpm >= 2.0 * t.min_bpm && t.bin_s > 0.0) {
            return Err(StageError::Config(
                "tempo range must satisfy 0 < min_bpm and max_bpm >= 2 * min_bpm".into(),
            ));
        }
        for &c in &self.time_signature_candidates {
            TimeSignature::new(c)?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Pitch(#[from] PitchError),
    #[error(transparent)]
    Segmentation(#[from] SegmentationError),
    #[error(transparent)]
    Rhythm(#[from] RhythmError),
    #[error("InvalidConfig: {0}")]
    Config(String),
}

#[derive(Debug, Error)]
#[error("stage \"{stage}\" failed: {source}")]
pub struct PipelineError {
    pub stage: &'static str,
    #[source]
    pub source: StageError,
}

trait AtStage<T> {
    fn at(self, stage: &'static str) -> Result<T, PipelineError>;
}

impl<T, E: Into<StageError>> AtStage<T> for Result<T, E> {
    fn at(self, stage: &'static str) -> Result<T, PipelineError> {
        self.map_err(|e| PipelineError {
            stage,
            source: e.into(),
        })
    }
}

/// Intermediate artifacts kept for inspection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Kept sample range of the input, `[start, end)`.
    pub trim: (usize, usize),
    pub energy: Vec<(f64, f64)>,
    pub notes: Vec<NoteEvent>,
    pub onsets: Vec<f64>,
    pub tempo_bpm: f64,
    pub time_signature: TimeSignature,
    /// Stages that fell back to a default, with the reason.
    pub fallbacks: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transcription {
    pub score: QuantizedScore,
    pub track: PitchTrack,
    pub diagnostics: Diagnostics,
}

/// Trim, gate and normalize. Returns the cleaned audio and the kept range.
pub fn prepare(buf: &AudioBuffer, cfg: &PipelineConfig) -> Result<(AudioBuffer, (usize, usize)), PipelineError> {
    cfg.validate().at("config")?;
    let (start, end) = trim_bounds(buf, &cfg.preprocess).at("trim")?;
    let trimmed = AudioBuffer::new(buf.samples[start..end].to_vec(), buf.sample_rate);
    let gated = if cfg.gate_enabled {
        noise_gate(&trimmed, &cfg.preprocess).at("gate")?
    } else {
        trimmed
    };
    Ok((normalize(&gated).at("normalize")?, (start, end)))
}

/// Pitch track of the prepared audio, without the later stages.
pub fn analyze(buf: &AudioBuffer, cfg: &PipelineConfig) -> Result<PitchTrack, PipelineError> {
    let (clean, _) = prepare(buf, cfg)?;
    build_pitch_track(&clean, cfg.frame_size, cfg.hop).at("pitch")
}

pub fn transcribe(buf: &AudioBuffer, cfg: &PipelineConfig) -> Result<Transcription, PipelineError> {
    let (clean, (start, end)) = prepare(buf, cfg)?;

    let track = build_pitch_track(&clean, cfg.frame_size, cfg.hop).at("pitch")?;
    let energy = energy_track(&clean, cfg.frame_size, cfg.hop).at("energy")?;
    let notes = segment_notes(&track, &cfg.segmentation).at("segment")?;
    let onsets = detect_onsets(&energy, &notes).at("onsets")?;

    let mut fallbacks = Vec::new();
    let tempo = match estimate_tempo(&onsets, &cfg.tempo) {
        Ok(t) => t,
        Err(e @ RhythmError::InsufficientOnsets(_)) => {
            fallbacks.push(format!("tempo: {e}; using {FALLBACK_TEMPO_BPM} BPM"));
            FALLBACK_TEMPO_BPM
        }
        Err(e) => return Err(e).at("tempo"),
    };
    let ts = match detect_time_signature(&onsets, &energy, tempo, &cfg.time_signature_candidates) {
        Ok(ts) => ts,
        Err(e @ RhythmError::TooShort { .. }) => {
            fallbacks.push(format!("time_signature: {e}; using 4/4"));
            TimeSignature::COMMON
        }
        Err(e) => return Err(e).at("time_signature"),
    };
    let score = quantize_with_grid(&notes, tempo, ts, cfg.grid_division);

    Ok(Transcription {
        diagnostics: Diagnostics {
            trim: (start, end),
            energy,
            notes,
            onsets,
            tempo_bpm: score.tempo_bpm,
            time_signature: ts,
            fallbacks,
        },
        score,
        track,
    })
}
