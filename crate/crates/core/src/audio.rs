//! PCM WAV codec, score descriptions and the reference melody synthesizer.

use std::f64::consts::PI;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pitch::midi_to_freq;

/// Mono PCM signal with samples nominally in `[-1.0, 1.0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0_f64, |m, s| m.max(s.abs()))
    }
}

#[derive(Debug, Error)]
pub enum WavError {
    #[error("MalformedRiff: {0}")]
    MalformedRiff(String),
    #[error("UnsupportedEncoding: {0}")]
    UnsupportedEncoding(String),
    #[error("EmptyAudio: the data chunk holds no samples")]
    EmptyAudio,
    #[error("IoFailure: {0}")]
    Io(#[from] io::Error),
}

const PCM_SCALE: f64 = 32768.0;

fn le_u16(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn le_u32(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

struct FmtChunk {
    channels: u16,
    sample_rate: u32,
}

/// Decodes a RIFF/WAVE byte image holding 16-bit integer PCM.
///
/// Stereo input is reduced to mono by averaging the two channels.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::MalformedRiff(
            "missing RIFF/WAVE signature".into(),
        ));
    }
    let riff_len = le_u32(bytes, 4) as usize;
    if riff_len < 4 || riff_len + 8 > bytes.len() {
        return Err(WavError::MalformedRiff(format!(
            "RIFF size {riff_len} does not fit a {}-byte file",
            bytes.len()
        )));
    }
    let body = &bytes[..riff_len + 8];

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut pos = 12;
    while pos + 8 <= body.len() {
        let id = &body[pos..pos + 4];
        let len = le_u32(body, pos + 4) as usize;
        let start = pos + 8;
        let end = start
            .checked_add(len)
            .filter(|&e| e <= body.len())
            .ok_or_else(|| {
                WavError::MalformedRiff(format!(
                    "chunk {:?} of {len} bytes overruns the file",
                    String::from_utf8_lossy(id)
                ))
            })?;
        let chunk = &body[start..end];
        match id {
            b"fmt " => {
                if chunk.len() < 16 {
                    return Err(WavError::MalformedRiff("fmt chunk shorter than 16 bytes".into()));
                }
                let format = le_u16(chunk, 0);
                let channels = le_u16(chunk, 2);
                let sample_rate = le_u32(chunk, 4);
                let block_align = le_u16(chunk, 12);
                let bits = le_u16(chunk, 14);
                if format != 1 {
                    return Err(WavError::UnsupportedEncoding(format!(
                        "audio format {format} (only integer PCM = 1 is supported)"
                    )));
                }
                if bits != 16 {
                    return Err(WavError::UnsupportedEncoding(format!(
                        "{bits} bits per sample (only 16 is supported)"
                    )));
                }
                if channels != 1 && channels != 2 {
                    return Err(WavError::UnsupportedEncoding(format!(
                        "{channels} channels (only mono and stereo are supported)"
                    )));
                }
                if sample_rate == 0 {
                    return Err(WavError::MalformedRiff("sample rate is zero".into()));
                }
                if block_align != channels * 2 {
                    return Err(WavError::MalformedRiff(format!(
                        "block align {block_align} inconsistent with {channels} channel(s) of int16"
                    )));
                }
                fmt = Some(FmtChunk {
                    channels,
                    sample_rate,
                });
            }
            b"data" => data = Some(chunk),
            _ => {}
        }
        // chunks are padded to even length
        pos = end + (len & 1);
    }

    let fmt = fmt.ok_or_else(|| WavError::MalformedRiff("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| WavError::MalformedRiff("no data chunk".into()))?;
    let frame_bytes = 2 * fmt.channels as usize;
    if data.len() % frame_bytes != 0 {
        return Err(WavError::MalformedRiff(format!(
            "data chunk of {} bytes is not a whole number of {frame_bytes}-byte frames",
            data.len()
        )));
    }
    if data.is_empty() {
        return Err(WavError::EmptyAudio);
    }

    let samples = data
        .chunks_exact(frame_bytes)
        .map(|frame| {
            let sum: f64 = frame
                .chunks_exact(2)
                .map(|s| i16::from_le_bytes([s[0], s[1]]) as f64)
                .sum();
            sum / fmt.channels as f64 / PCM_SCALE
        })
        .collect();
    Ok(AudioBuffer::new(samples, fmt.sample_rate))
}

/// Encodes a buffer as a canonical 44-byte-header mono int16 WAV image.
pub fn encode_wav(buf: &AudioBuffer) -> Vec<u8> {
    let data_len = buf.samples.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate.to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in &buf.samples {
        let q = (s * PCM_SCALE).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer, WavError> {
    decode_wav(&fs::read(path)?)
}

pub fn write_wav(buf: &AudioBuffer, path: impl AsRef<Path>) -> Result<(), WavError> {
    if buf.is_empty() {
        return Err(WavError::EmptyAudio);
    }
    fs::write(path, encode_wav(buf))?;
    Ok(())
}

#[derive(Debug, Error)]
pub enum ScoreError {
    #[error("InvalidScore: {0}")]
    InvalidScore(String),
    #[error("InvalidScore: malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// One note of a reference score, in beats.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreNote {
    pub midi: u8,
    pub onset: f64,
    pub duration: f64,
    /// Loudness multiplier applied by the synthesizer.
    #[serde(default = "unit_gain", skip_serializing_if = "is_unit_gain")]
    pub gain: f64,
}

fn unit_gain() -> f64 {
    1.0
}

fn is_unit_gain(g: &f64) -> bool {
    *g == 1.0
}

impl ScoreNote {
    pub fn new(midi: u8, onset: f64, duration: f64) -> Self {
        Self {
            midi,
            onset,
            duration,
            gain: 1.0,
        }
    }

    pub fn end(&self) -> f64 {
        self.onset + self.duration
    }
}

/// A monophonic melody: tempo, meter and beat-timed notes. Gaps are rests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSpec {
    pub tempo_bpm: f64,
    pub time_signature: (u8, u8),
    pub notes: Vec<ScoreNote>,
    /// Total length in beats when it extends past the last note (trailing rest).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_beats: Option<f64>,
}

const OVERLAP_SLACK: f64 = 1e-9;

impl ScoreSpec {
    pub fn validate(&self) -> Result<(), ScoreError> {
        let bad = |m: String| Err(ScoreError::InvalidScore(m));
        if !(self.tempo_bpm.is_finite() && self.tempo_bpm > 0.0) {
            return bad(format!("tempo {} must be a positive number", self.tempo_bpm));
        }
        let (num, den) = self.time_signature;
        if num == 0 || den == 0 || !den.is_power_of_two() {
            return bad(format!("time signature {num}/{den} is invalid"));
        }
        if let Some(len) = self.length_beats {
            if !(len.is_finite() && len >= 0.0) {
                return bad(format!("length_beats {len} must be non-negative"));
            }
        }
        let mut prev_end = f64::NEG_INFINITY;
        for (i, n) in self.notes.iter().enumerate() {
            if n.midi > 127 {
                return bad(format!("note {i}: midi {} outside 0..=127", n.midi));
            }
            if !(n.onset.is_finite() && n.onset >= 0.0) {
                return bad(format!("note {i}: onset {} must be non-negative", n.onset));
            }
            if !(n.duration.is_finite() && n.duration > 0.0) {
                return bad(format!("note {i}: duration {} must be positive", n.duration));
            }
            if !(n.gain.is_finite() && n.gain > 0.0 && n.gain <= 2.0) {
                return bad(format!("note {i}: gain {} outside (0, 2]", n.gain));
            }
            if n.onset + OVERLAP_SLACK < prev_end {
                return bad(format!("note {i} overlaps its predecessor"));
            }
            prev_end = n.end();
        }
        Ok(())
    }

    /// Length in beats covering every note and any declared trailing rest.
    pub fn total_beats(&self) -> f64 {
        let last = self.notes.iter().map(ScoreNote::end).fold(0.0, f64::max);
        last.max(self.length_beats.unwrap_or(0.0))
    }

    pub fn seconds_per_beat(&self) -> f64 {
        60.0 / self.tempo_bpm
    }

    pub fn from_json(text: &str) -> Result<Self, ScoreError> {
        let score: ScoreSpec = serde_json::from_str(text)?;
        score.validate()?;
        Ok(score)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("score serializes")
    }
}

/// Waveform used to render each note.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Timbre {
    #[default]
    PureSine,
    /// Fundamental plus `overtones` harmonics whose amplitudes fall by `decay` per partial.
    Harmonic { overtones: u32, decay: f64 },
}

impl Timbre {
    /// Four overtones, each half the amplitude of the previous partial.
    pub fn harmonic() -> Self {
        Timbre::Harmonic {
            overtones: 4,
            decay: 0.5,
        }
    }
}

impl FromStr for Timbre {
    type Err = String;

    /// Accepts `pure_sine`, `sine`, `harmonic` (4 overtones, decay 0.5) and `harmonic:K:DECAY`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(':');
        match parts.next() {
            Some("pure_sine") | Some("sine") if parts.clone().next().is_none() => Ok(Timbre::PureSine),
            Some("harmonic") => {
                let rest: Vec<&str> = parts.collect();
                match rest.as_slice() {
                    [] => Ok(Timbre::harmonic()),
                    [k, d] => {
                        let overtones = k.parse().map_err(|_| format!("bad overtone count {k:?}"))?;
                        let decay: f64 = d.parse().map_err(|_| format!("bad decay {d:?}"))?;
                        if !(decay > 0.0 && decay < 1.0) {
                            return Err(format!("decay {decay} must lie in (0, 1)"));
                        }
                        Ok(Timbre::Harmonic { overtones, decay })
                    }
                    _ => Err(format!("expected harmonic:K:DECAY, got {s:?}")),
                }
            }
            _ => Err(format!(
                "unknown timbre {s:?} (expected pure_sine or harmonic[:K:DECAY])"
            )),
        }
    }
}

/// Peak amplitude of a unit-gain note.
pub const NOTE_AMPLITUDE: f64 = 0.5;
/// Linear fade-in and fade-out applied inside every note.
pub const RAMP_SECONDS: f64 = 0.010;

/// Renders a score into audio. Each note occupies exactly its beat span; the
/// 10 ms attack and release ramps lie inside that span, so the buffer length
/// is `total_beats * 60 / tempo` seconds.
pub fn synth_melody(
    score: &ScoreSpec,
    sample_rate: u32,
    timbre: Timbre,
) -> Result<AudioBuffer, ScoreError> {
    score.validate()?;
    if sample_rate == 0 {
        return Err(ScoreError::InvalidScore("sample rate must be positive".into()));
    }
    let sr = sample_rate as f64;
    let spb = score.seconds_per_beat();
    let total = (score.total_beats() * spb * sr).round() as usize;
    let mut samples = vec![0.0; total];

    let partials: Vec<(f64, f64)> = match timbre {
        Timbre::PureSine => vec![(1.0, 1.0)],
        Timbre::Harmonic { overtones, decay } => {
            let raw: Vec<(f64, f64)> = (0..=overtones)
                .map(|h| ((h + 1) as f64, decay.powi(h as i32)))
                .collect();
            let norm: f64 = raw.iter().map(|p| p.1).sum();
            raw.into_iter().map(|(m, a)| (m, a / norm)).collect()
        }
    };

    for note in &score.notes {
        let f0 = midi_to_freq(note.midi).expect("validated midi");
        let start = (note.onset * spb * sr).round() as usize;
        let end = ((note.end() * spb * sr).round() as usize).min(total);
        if end <= start {
            continue;
        }
        let len = end - start;
        let ramp = ((RAMP_SECONDS * sr).round() as usize).min(len / 2).max(1);
        let amp = NOTE_AMPLITUDE * note.gain;
        for (i, out) in samples[start..end].iter_mut().enumerate() {
            let t = i as f64 / sr;
            let env = if i < ramp {
                i as f64 / ramp as f64
            } else if i >= len - ramp {
                (len - 1 - i) as f64 / ramp as f64
            } else {
                1.0
            };
            let wave: f64 = partials
                .iter()
                .filter(|(m, _)| m * f0 < sr / 2.0)
                .map(|(m, a)| a * (2.0 * PI * m * f0 * t).sin())
                .sum();
            *out += amp * env * wave;
        }
    }
    for s in &mut samples {
        *s = s.clamp(-1.0, 1.0);
    }
    Ok(AudioBuffer::new(samples, sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wav_bytes(channels: u16, bits: u16, format: u16, payload: &[i16]) -> Vec<u8> {
        let data_len = payload.len() * 2;
        let mut out = Vec::new();
        out.extend_from_slice(b"RIFF");
        out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
        out.extend_from_slice(b"WAVE");
        out.extend_from_slice(b"fmt ");
        out.extend_from_slice(&16u32.to_le_bytes());
        out.extend_from_slice(&format.to_le_bytes());
        out.extend_from_slice(&channels.to_le_bytes());
        out.extend_from_slice(&44100u32.to_le_bytes());
        out.extend_from_slice(&(44100 * channels as u32 * bits as u32 / 8).to_le_bytes());
        out.extend_from_slice(&(channels * bits / 8).to_le_bytes());
        out.extend_from_slice(&bits.to_le_bytes());
        out.extend_from_slice(b"data");
        out.extend_from_slice(&(data_len as u32).to_le_bytes());
        for s in payload {
            out.extend_from_slice(&s.to_le_bytes());
        }
        out
    }

    #[test]
    fn decodes_mono_int16_by_direct_scaling() {
        let buf = decode_wav(&wav_bytes(1, 16, 1, &[0, 16384, -16384, 32767])).unwrap();
        assert_eq!(buf.sample_rate, 44100);
        assert_eq!(buf.samples[..3], [0.0, 0.5, -0.5]);
        assert!((buf.samples[3] - 0.99997).abs() < 1e-5);
    }

    #[test]
    fn stereo_downmix_is_channel_mean() {
        let buf = decode_wav(&wav_bytes(2, 16, 1, &[16384, -16384, 8000, -8000])).unwrap();
        assert_eq!(buf.samples, vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_rifx_and_foreign_encodings() {
        let mut rifx = wav_bytes(1, 16, 1, &[1, 2]);
        rifx[..4].copy_from_slice(b"RIFX");
        assert!(matches!(decode_wav(&rifx), Err(WavError::MalformedRiff(_))));

        let float = wav_bytes(1, 16, 3, &[1, 2]);
        assert!(matches!(decode_wav(&float), Err(WavError::UnsupportedEncoding(_))));

        let mut b24 = wav_bytes(1, 16, 1, &[1, 2, 3]);
        b24[34..36].copy_from_slice(&24u16.to_le_bytes());
        assert!(matches!(decode_wav(&b24), Err(WavError::UnsupportedEncoding(_))));

        assert!(matches!(
            decode_wav(&wav_bytes(1, 16, 1, &[])),
            Err(WavError::EmptyAudio)
        ));
    }

    #[test]
    fn truncated_chunk_is_malformed() {
        let mut bytes = wav_bytes(1, 16, 1, &[1, 2, 3, 4]);
        bytes[40..44].copy_from_slice(&1000u32.to_le_bytes());
        assert!(matches!(decode_wav(&bytes), Err(WavError::MalformedRiff(_))));
    }

    #[test]
    fn skips_unknown_chunks() {
        let mut bytes = wav_bytes(1, 16, 1, &[100, -100]);
        // splice a 3-byte LIST chunk (padded to 4) before "data"
        let extra = [b'L', b'I', b'S', b'T', 3, 0, 0, 0, 1, 2, 3, 0];
        bytes.splice(36..36, extra);
        let riff = (bytes.len() - 8) as u32;
        bytes[4..8].copy_from_slice(&riff.to_le_bytes());
        let buf = decode_wav(&bytes).unwrap();
        assert_eq!(buf.len(), 2);
    }

    #[test]
    fn single_sample_round_trip() {
        let buf = AudioBuffer::new(vec![0.0], 8000);
        let back = decode_wav(&encode_wav(&buf)).unwrap();
        assert_eq!(back.sample_rate, 8000);
        assert!((back.samples[0] - 0.0).abs() <= 1.0 / 32768.0);
    }

    #[test]
    fn data_chunk_is_two_bytes_per_sample() {
        let buf = AudioBuffer::new(vec![0.1; 44100], 44100);
        let bytes = encode_wav(&buf);
        assert_eq!(&bytes[36..40], b"data");
        assert_eq!(le_u32(&bytes, 40), 88200);
        assert_eq!(bytes.len(), 44 + 88200);
    }

    #[test]
    fn write_rejects_empty_buffer() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_wav(&AudioBuffer::new(vec![], 44100), dir.path().join("x.wav"));
        assert!(matches!(err, Err(WavError::EmptyAudio)));
    }

    fn one_note(midi: u8, beats: f64) -> ScoreSpec {
        ScoreSpec {
            tempo_bpm: 120.0,
            time_signature: (4, 4),
            notes: vec![ScoreNote::new(midi, 0.0, beats)],
            length_beats: None,
        }
    }

    #[test]
    fn one_beat_at_120_bpm_is_half_a_second() {
        let buf = synth_melody(&one_note(69, 1.0), 44100, Timbre::PureSine).unwrap();
        assert_eq!(buf.len(), 22050);
        // steady-state sample matches the 440 Hz sine
        let i = 10_000;
        let expected = NOTE_AMPLITUDE * (2.0 * PI * 440.0 * i as f64 / 44100.0).sin();
        assert!((buf.samples[i] - expected).abs() < 1e-12);
    }

    #[test]
    fn rest_only_score_is_silent() {
        let score = ScoreSpec {
            tempo_bpm: 120.0,
            time_signature: (4, 4),
            notes: vec![],
            length_beats: Some(4.0),
        };
        let buf = synth_melody(&score, 44100, Timbre::PureSine).unwrap();
        assert_eq!(buf.len(), 88200);
        assert!(buf.samples.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn rendered_c4_peaks_at_its_frequency() {
        use num_complex::Complex64;

        let buf = synth_melody(&one_note(60, 1.0), 44100, Timbre::PureSine).unwrap();
        // 4410 samples = 0.1 s, bin width 10 Hz; zero-pad to 44100 for 1 Hz bins
        let mut frame: Vec<Complex64> = buf.samples[..4410]
            .iter()
            .map(|&s| Complex64::new(s, 0.0))
            .collect();
        frame.resize(44100, Complex64::new(0.0, 0.0));
        // direct DFT summation over the 200..320 Hz band only
        let spec = naive_dft_band(&frame, 200..320);
        let (k, _) = spec
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap();
        let freq = (200 + k) as f64;
        assert!((freq - 261.63).abs() <= 1.0, "peak at {freq}");
    }

    fn naive_dft_band(x: &[num_complex::Complex64], band: std::ops::Range<usize>) -> Vec<f64> {
        let n = x.len();
        band.map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, v) in x.iter().enumerate() {
                let ang = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                re += v.re * ang.cos() - v.im * ang.sin();
                im += v.re * ang.sin() + v.im * ang.cos();
            }
            (re * re + im * im).sqrt()
        })
        .collect()
    }

    #[test]
    fn harmonic_timbre_stays_in_range() {
        let score = one_note(48, 2.0);
        let t: Timbre = "harmonic:6:0.7".parse().unwrap();
        let buf = synth_melody(&score, 44100, t).unwrap();
        assert!(buf.peak() <= NOTE_AMPLITUDE + 1e-12);
        assert!(buf.peak() > 0.1);
    }

    #[test]
    fn timbre_names() {
        assert_eq!("pure_sine".parse::<Timbre>(), Ok(Timbre::PureSine));
        assert!(matches!("harmonic".parse::<Timbre>(), Ok(Timbre::Harmonic { .. })));
        assert!("square".parse::<Timbre>().is_err());
        assert!("harmonic:3:1.5".parse::<Timbre>().is_err());
    }

    #[test]
    fn invalid_scores_are_rejected() {
        let mut s = one_note(69, 1.0);
        s.notes.push(ScoreNote::new(70, 0.5, 1.0));
        assert!(matches!(synth_melody(&s, 44100, Timbre::PureSine), Err(ScoreError::InvalidScore(_))));
        let mut s = one_note(128, 1.0);
        assert!(s.validate().is_err());
        s.notes[0].midi = 60;
        s.time_signature = (3, 3);
        assert!(s.validate().is_err());
    }

    #[test]
    fn score_json_shape() {
        let s = ScoreSpec::from_json(
            r#"{"tempo_bpm":90.0,"time_signature":[3,4],"notes":[{"midi":60,"onset":0.0,"duration":1.5}]}"#,
        )
        .unwrap();
        assert_eq!(s.time_signature, (3, 4));
        assert_eq!(s.notes[0].gain, 1.0);
        let back: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        assert_eq!(back["time_signature"], serde_json::json!([3, 4]));
        assert!(back["notes"][0].get("gain").is_none());
        assert!(ScoreSpec::from_json("{not json").is_err());
    }
}
