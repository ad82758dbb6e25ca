//! Monophonic music transcription: WAV audio to a quantized score and a
//! Standard MIDI File.
//!
//! The stages are usable on their own ([`spectral`], [`pitch`],
//! [`segmentation`], [`rhythm`], [`midi`]) or chained by
//! [`pipeline::transcribe`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod audio;
pub mod eval;
pub mod midi;
pub mod pipeline;
pub mod pitch;
pub mod preprocess;
pub mod rhythm;
pub mod segmentation;
pub mod spectral;

pub use audio::{read_wav, synth_melody, write_wav, AudioBuffer, ScoreNote, ScoreSpec, Timbre};
pub use eval::{match_notes, EvalReport};
pub use midi::{read_midi, write_midi, MidiOptions};
pub use pipeline::{transcribe, Diagnostics, PipelineConfig, PipelineError, Transcription};
pub use pitch::{midi_to_freq, snap_frequency, PitchFrame, PitchTable, PitchTrack};
pub use rhythm::{QuantizedNote, QuantizedScore, TimeSignature};
pub use segmentation::NoteEvent;
