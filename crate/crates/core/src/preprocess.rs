//! Silence trimming, noise gating and peak normalization.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioBuffer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Trim boundary, as a fraction of the loudest window's RMS.
    pub silence_threshold: f64,
    /// Absolute RMS below which a window is zeroed by the gate.
    pub gate_threshold: f64,
    pub window_ms: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            silence_threshold: 0.02,
            gate_threshold: 0.01,
            window_ms: 20.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("AllSilent: no analysis window reaches the silence threshold")]
    AllSilent,
    #[error("AllZero: buffer has no nonzero sample")]
    AllZero,
    #[error("EmptyAudio: buffer has no samples")]
    Empty,
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if !in_unit(self.silence_threshold) || !in_unit(self.gate_threshold) {
            return Err(PreprocessError::InvalidConfig(
                "thresholds must lie in (0, 1)".into(),
            ));
        }
        if !(self.window_ms > 0.0 && self.window_ms.is_finite()) {
            return Err(PreprocessError::InvalidConfig(
                "window_ms must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn window_len(&self, sample_rate: u32) -> usize {
        ((self.window_ms * 1e-3 * sample_rate as f64).round() as usize).max(1)
    }
}

pub(crate) fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

fn checked(buf: &AudioBuffer, cfg: &PreprocessConfig) -> Result<usize, PreprocessError> {
    cfg.validate()?;
    if buf.is_empty() {
        return Err(PreprocessError::Empty);
    }
    Ok(cfg.window_len(buf.sample_rate))
}

/// Cuts leading and trailing silence on a fixed window grid. The kept span
/// runs from the first to the last window whose RMS reaches
/// `silence_threshold` times the loudest window's RMS.
pub fn trim_silence(buf: &AudioBuffer, cfg: &PreprocessConfig) -> Result<AudioBuffer, PreprocessError> {
    let (start, end) = trim_bounds(buf, cfg)?;
    Ok(AudioBuffer::new(buf.samples[start..end].to_vec(), buf.sample_rate))
}

/// Sample range `[start, end)` that `trim_silence` keeps.
pub fn trim_bounds(buf: &AudioBuffer, cfg: &PreprocessConfig) -> Result<(usize, usize), PreprocessError> {
    let win = checked(buf, cfg)?;
    let levels: Vec<f64> = buf.samples.chunks(win).map(rms).collect();
    let peak = levels.iter().cloned().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(PreprocessError::AllSilent);
    }
    let floor = cfg.silence_threshold * peak;
    let first = levels.iter().position(|&l| l >= floor).ok_or(PreprocessError::AllSilent)?;
    let last = levels.iter().rposition(|&l| l >= floor).ok_or(PreprocessError::AllSilent)?;
    Ok((first * win, ((last + 1) * win).min(buf.len())))
}

/// Zeroes every window whose RMS is below `gate_threshold`.
pub fn noise_gate(buf: &AudioBuffer, cfg: &PreprocessConfig) -> Result<AudioBuffer, PreprocessError> {
    let win = checked(buf, cfg)?;
    let mut out = buf.samples.clone();
    for chunk in out.chunks_mut(win) {
        if rms(chunk) < cfg.gate_threshold {
            chunk.fill(0.0);
        }
    }
    Ok(AudioBuffer::new(out, buf.sample_rate))
}

/// Scales the buffer so its peak absolute sample is exactly 1.0.
pub fn normalize(buf: &AudioBuffer) -> Result<AudioBuffer, PreprocessError> {
    let peak = buf.peak();
    if peak == 0.0 {
        return Err(PreprocessError::AllZero);
    }
    Ok(AudioBuffer::new(
        buf.samples.iter().map(|s| s / peak).collect(),
        buf.sample_rate,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    const SR: u32 = 44100;

    fn sine(len: usize, freq: f64, amp: f64) -> Vec<f64> {
        (0..len)
            .map(|i| amp * (2.0 * PI * freq * i as f64 / SR as f64).sin())
            .collect()
    }

    #[test]
    fn trims_one_second_of_padding_each_side() {
        let cfg = PreprocessConfig::default();
        let mut s = vec![0.0; 44100];
        s.extend(sine(44100, 440.0, 0.8));
        s.extend(vec![0.0; 44100]);
        let out = trim_silence(&AudioBuffer::new(s, SR), &cfg).unwrap();
        let window = cfg.window_ms / 1000.0;
        let d = out.duration_seconds();
        assert!(d >= 1.0 && d <= 1.0 + 2.0 * window, "duration {d}");
    }

    #[test]
    fn trim_is_identity_without_padding() {
        let buf = AudioBuffer::new(sine(10_000, 300.0, 0.5), SR);
        let out = trim_silence(&buf, &PreprocessConfig::default()).unwrap();
        assert_eq!(out, buf);
    }

    #[test]
    fn trim_of_zeros_is_all_silent() {
        let buf = AudioBuffer::silence(5000, SR);
        assert_eq!(
            trim_silence(&buf, &PreprocessConfig::default()),
            Err(PreprocessError::AllSilent)
        );
    }

    #[test]
    fn gate_clears_low_level_noise_in_rests() {
        let cfg = PreprocessConfig::default();
        let win = cfg.window_len(SR);
        // deterministic pseudo-uniform noise in [-0.005, 0.005]
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut noise = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state as f64 / u64::MAX as f64 - 0.5) * 0.01
        };
        let rest = 20 * win;
        let mut s: Vec<f64> = (0..rest).map(|_| noise()).collect();
        s.extend(sine(20 * win, 440.0, 0.5));
        s.extend((0..rest).map(|_| noise()));
        let out = noise_gate(&AudioBuffer::new(s.clone(), SR), &cfg).unwrap();
        assert_eq!(out.len(), s.len());
        assert!(out.samples[..rest].iter().all(|&x| x == 0.0));
        assert!(out.samples[out.len() - rest..].iter().all(|&x| x == 0.0));
        assert_eq!(out.samples[rest..rest + 20 * win], s[rest..rest + 20 * win]);
    }

    #[test]
    fn gate_passes_loud_and_clears_quiet() {
        let cfg = PreprocessConfig::default();
        let loud = AudioBuffer::new(sine(8820, 440.0, 1.0), SR);
        assert_eq!(noise_gate(&loud, &cfg).unwrap(), loud);
        let quiet = AudioBuffer::new(vec![0.001; 8820], SR);
        assert!(noise_gate(&quiet, &cfg).unwrap().samples.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn normalize_examples() {
        let out = normalize(&AudioBuffer::new(vec![0.25, -0.5], SR)).unwrap();
        assert_eq!(out.samples, vec![0.5, -1.0]);
        let peaked = AudioBuffer::new(vec![1.0, -0.3, 0.2], SR);
        assert_eq!(normalize(&peaked).unwrap(), peaked);
        assert_eq!(
            normalize(&AudioBuffer::new(vec![0.0; 3], SR)),
            Err(PreprocessError::AllZero)
        );
    }

    #[test]
    fn config_validation() {
        let cfg = PreprocessConfig {
            gate_threshold: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            noise_gate(&AudioBuffer::new(vec![0.1], SR), &cfg),
            Err(PreprocessError::InvalidConfig(_))
        ));
    }

    fn buffer_strategy() -> impl Strategy<Value = AudioBuffer> {
        (
            0usize..3000,
            prop::collection::vec(-1.0f64..1.0, 1..4000),
            0usize..3000,
        )
            .prop_map(|(lead, body, tail)| {
                let mut s = vec![0.0; lead];
                s.extend(body);
                s.extend(vec![0.0; tail]);
                AudioBuffer::new(s, SR)
            })
    }

    proptest! {
        #[test]
        fn trim_is_idempotent(buf in buffer_strategy()) {
            let cfg = PreprocessConfig::default();
            if let Ok(once) = trim_silence(&buf, &cfg) {
                prop_assert_eq!(trim_silence(&once, &cfg).unwrap(), once);
            }
        }

        #[test]
        fn gate_never_amplifies(buf in buffer_strategy(), amp in 0.001f64..1.0) {
            let scaled = AudioBuffer::new(buf.samples.iter().map(|s| s * amp).collect(), SR);
            let out = noise_gate(&scaled, &PreprocessConfig::default()).unwrap();
            prop_assert_eq!(out.len(), scaled.len());
            for (a, b) in out.samples.iter().zip(&scaled.samples) {
                prop_assert!(a.abs() <= b.abs());
            }
        }

        #[test]
        fn normalize_is_idempotent_and_keeps_argmax(buf in buffer_strategy()) {
            if let Ok(once) = normalize(&buf) {
                prop_assert_eq!(&normalize(&once).unwrap(), &once);
                let argmax = |b: &AudioBuffer| {
                    b.samples.iter().enumerate()
                        .fold((0, -1.0), |acc, (i, s)| if s.abs() > acc.1 { (i, s.abs()) } else { acc }).0
                };
                prop_assert_eq!(argmax(&once), argmax(&buf));
                prop_assert!((once.peak() - 1.0).abs() == 0.0);
            }
        }
    }
}
