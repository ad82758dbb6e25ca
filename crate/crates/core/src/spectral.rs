//! Framewise frequency analysis.
//!
//! A radix-2 decimation-in-time FFT with precomputed twiddles, the direct
//! O(N²) DFT it is checked against, the Hann window, and dominant-frequency
//! extraction with parabolic sub-bin refinement.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("NonPowerOfTwo: length {0} is not a power of two")]
    NonPowerOfTwo(usize),
    #[error("frame of {0} samples is shorter than the 16-sample minimum")]
    FrameTooShort(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Minimum analysis frame length.
pub const MIN_FRAME: usize = 16;

/// A power-of-two slice of audio and where it starts.
#[derive(Debug, Clone, Copy)]
pub struct Frame<'a> {
    pub samples: &'a [f64],
    pub start_time: f64,
    pub sample_rate: u32,
}

impl<'a> Frame<'a> {
    pub fn new(samples: &'a [f64], start_time: f64, sample_rate: u32) -> Result<Self, SpectralError> {
        check_frame_len(samples.len())?;
        Ok(Self {
            samples,
            start_time,
            sample_rate,
        })
    }
}

pub(crate) fn check_frame_len(n: usize) -> Result<(), SpectralError> {
    if !n.is_power_of_two() {
        return Err(SpectralError::NonPowerOfTwo(n));
    }
    if n < MIN_FRAME {
        return Err(SpectralError::FrameTooShort(n));
    }
    Ok(())
}

/// Complex bins of one frame; bin `k` sits at `k * sample_rate / N` Hz.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub sample_rate: u32,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        self.sample_rate as f64 / self.bins.len() as f64
    }

    pub fn frequency(&self, bin: f64) -> f64 {
        bin * self.bin_width()
    }
}

/// `w[i] = 0.5 (1 - cos(2πi / (n-1)))`, zero at both ends.
pub fn hann_window(n: usize) -> Vec<f64> {
    assert!(n >= 2, "hann window needs at least two points");
    let denom = (n - 1) as f64;
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / denom).cos()))
        .collect()
}

/// Precomputed bit-reversal table and twiddles for one transform size.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    rev: Vec<usize>,
    // exp(-2πi k / len) for k in 0..len/2
    twiddles: Vec<Complex64>,
}

impl FftPlan {
    pub fn new(len: usize) -> Result<Self, SpectralError> {
        if !len.is_power_of_two() {
            return Err(SpectralError::NonPowerOfTwo(len));
        }
        let bits = len.trailing_zeros();
        let rev = (0..len)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (usize::BITS - bits) })
            .collect();
        let twiddles = (0..len / 2)
            .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
            .collect();
        Ok(Self { len, rev, twiddles })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Transforms `data` in place. The inverse is scaled by `1/N`.
    pub fn process(&self, data: &mut [Complex64], direction: Direction) -> Result<(), SpectralError> {
        if data.len() != self.len {
            return Err(SpectralError::NonPowerOfTwo(data.len()));
        }
        let n = self.len;
        for i in 0..n {
            let j = self.rev[i];
            if i < j {
                data.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let stride = n / size;
            for start in (0..n).step_by(size) {
                for k in 0..half {
                    let mut w = self.twiddles[k * stride];
                    if direction == Direction::Inverse {
                        w = w.conj();
                    }
                    let u = data[start + k];
                    let v = data[start + k + half] * w;
                    data[start + k] = u + v;
                    data[start + k + half] = u - v;
                }
            }
            size *= 2;
        }
        if direction == Direction::Inverse {
            let scale = 1.0 / n as f64;
            for x in data.iter_mut() {
                *x *= scale;
            }
        }
        Ok(())
    }
}

/// Out-of-place FFT. Forward computes `X[k] = Σ x[n] exp(-2πi kn/N)`.
pub fn fft(input: &[Complex64], direction: Direction) -> Result<Vec<Complex64>, SpectralError> {
    let plan = FftPlan::new(input.len())?;
    let mut out = input.to_vec();
    plan.process(&mut out, direction)?;
    Ok(out)
}

/// Direct evaluation of the DFT definition, any length.
pub fn naive_dft(input: &[Complex64]) -> Vec<Complex64> {
    let n = input.len();
    (0..n)
        .map(|k| {
            input
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    // kj reduced mod n before scaling
                    let phase = -2.0 * PI * ((k * j) % n) as f64 / n as f64;
                    x * Complex64::from_polar(1.0, phase)
                })
                .sum()
        })
        .collect()
}

/// Result of a dominant-frequency search. `freq_hz == 0` marks an unvoiced frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub freq_hz: f64,
    pub magnitude: f64,
}

impl Peak {
    pub const UNVOICED: Peak = Peak {
        freq_hz: 0.0,
        magnitude: 0.0,
    };

    pub fn is_voiced(&self) -> bool {
        self.freq_hz > 0.0
    }
}

/// Peak-to-median magnitude ratio below which a frame counts as unvoiced.
pub const SPECTRAL_FLOOR_RATIO: f64 = 5.0;

/// Reusable state for analysing many frames of one size.
#[derive(Debug, Clone)]
pub struct FrameAnalyzer {
    plan: FftPlan,
    window: Vec<f64>,
    scratch: Vec<Complex64>,
    mags: Vec<f64>,
}

impl FrameAnalyzer {
    pub fn new(frame_len: usize) -> Result<Self, SpectralError> {
        check_frame_len(frame_len)?;
        Ok(Self {
            plan: FftPlan::new(frame_len)?,
            window: hann_window(frame_len),
            scratch: vec![Complex64::new(0.0, 0.0); frame_len],
            mags: Vec::with_capacity(frame_len / 2),
        })
    }

    pub fn frame_len(&self) -> usize {
        self.plan.len()
    }

    pub fn dominant_frequency(&mut self, frame: &Frame, windowed: bool) -> Result<Peak, SpectralError> {
        let n = self.plan.len();
        if frame.samples.len() != n {
            check_frame_len(frame.samples.len())?;
            *self = FrameAnalyzer::new(frame.samples.len())?;
        }
        for (i, (dst, &s)) in self.scratch.iter_mut().zip(frame.samples).enumerate() {
            let w = if windowed { self.window[i] } else { 1.0 };
            *dst = Complex64::new(s * w, 0.0);
        }
        self.plan.process(&mut self.scratch, Direction::Forward)?;

        self.mags.clear();
        self.mags.extend(self.scratch[..n / 2].iter().map(|c| c.norm()));
        let (k, peak) = self.mags[1..n / 2 - 1]
            .iter()
            .enumerate()
            .fold((0, 0.0), |best, (i, &m)| if m > best.1 { (i + 1, m) } else { best });
        if peak <= 0.0 {
            return Ok(Peak::UNVOICED);
        }
        let mut sorted: Vec<f64> = self.mags[1..n / 2].to_vec();
        let mid = sorted.len() / 2;
        let median = *sorted
            .select_nth_unstable_by(mid, |a, b| a.total_cmp(b))
            .1;
        if peak < SPECTRAL_FLOOR_RATIO * median {
            return Ok(Peak::UNVOICED);
        }
        let offset = parabolic_offset(self.mags[k - 1], peak, self.mags[k + 1]);
        let bin_width = frame.sample_rate as f64 / n as f64;
        Ok(Peak {
            freq_hz: (k as f64 + offset) * bin_width,
            magnitude: peak,
        })
    }
}

/// Vertex of the parabola through three log-magnitudes, as a bin offset in
/// `[-1, 1]` from the centre sample.
pub fn parabolic_offset(left: f64, centre: f64, right: f64) -> f64 {
    let tiny = f64::MIN_POSITIVE;
    let (a, b, c) = (left.max(tiny).ln(), centre.max(tiny).ln(), right.max(tiny).ln());
    let denom = a - 2.0 * b + c;
    if denom.abs() < 1e-300 || !denom.is_finite() {
        return 0.0;
    }
    (0.5 * (a - c) / denom).clamp(-1.0, 1.0)
}

/// Dominant frequency of one frame: optional Hann window, forward FFT,
/// argmax over bins `1..N/2-1`, then parabolic log-magnitude refinement.
/// Frames whose peak is under five times the median magnitude are unvoiced.
pub fn dominant_frequency(frame: &Frame, windowed: bool) -> Result<Peak, SpectralError> {
    FrameAnalyzer::new(frame.samples.len())?.dominant_frequency(frame, windowed)
}

/// Spectrum of a real frame.
pub fn real_spectrum(samples: &[f64], sample_rate: u32) -> Result<Spectrum, SpectralError> {
    let input: Vec<Complex64> = samples.iter().map(|&s| Complex64::new(s, 0.0)).collect();
    Ok(Spectrum {
        bins: fft(&input, Direction::Forward)?,
        sample_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn max_dev(a: &[Complex64], b: &[Complex64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    fn random_frame(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn hann_closed_forms() {
        let w = hann_window(4);
        let expect = [0.0, 0.75, 0.75, 0.0];
        for (a, b) in w.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((hann_window(5)[2] - 1.0).abs() < 1e-15);
        // direct summation: Σ 0.5(1 - cos(2πi/1023)) over a full period of the cosine = 512·... = 511.5
        let sum: f64 = hann_window(1024).iter().sum();
        let oracle: f64 = (0..1024)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / 1023.0).cos())
            .sum();
        assert!((sum - oracle).abs() < 1e-9);
        assert!((sum - 511.5).abs() < 1e-9);
    }

    #[test]
    fn impulse_and_constant() {
        let mut impulse = vec![c(0.0, 0.0); 8];
        impulse[0] = c(1.0, 0.0);
        assert!(fft(&impulse, Direction::Forward)
            .unwrap()
            .iter()
            .all(|x| (x - c(1.0, 0.0)).norm() < 1e-15));

        let out = fft(&[c(1.0, 0.0); 8], Direction::Forward).unwrap();
        assert!((out[0] - c(8.0, 0.0)).norm() < 1e-14);
        assert!(out[1..].iter().all(|x| x.norm() < 1e-14));
    }

    #[test]
    fn naive_two_point() {
        assert_eq!(naive_dft(&[c(1.0, 0.0), c(0.0, 0.0)]), vec![c(1.0, 0.0), c(1.0, 0.0)]);
        let out = naive_dft(&[c(1.0, 0.0), c(1.0, 0.0)]);
        assert!((out[0] - c(2.0, 0.0)).norm() < 1e-15 && out[1].norm() < 1e-15);
    }

    #[test]
    fn non_power_of_two_is_rejected() {
        assert_eq!(
            fft(&[c(0.0, 0.0); 12], Direction::Forward),
            Err(SpectralError::NonPowerOfTwo(12))
        );
        assert!(matches!(
            Frame::new(&[0.0; 100], 0.0, 44100),
            Err(SpectralError::NonPowerOfTwo(100))
        ));
    }

    #[test]
    fn fft_matches_naive_dft_1024() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_frame(&mut rng, 1024);
        let dev = max_dev(&fft(&x, Direction::Forward).unwrap(), &naive_dft(&x));
        assert!(dev < 1e-9, "deviation {dev}");
    }

    #[test]
    fn fft_matches_naive_dft_on_all_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for p in 4..=12 {
            let x = random_frame(&mut rng, 1 << p);
            let dev = max_dev(&fft(&x, Direction::Forward).unwrap(), &naive_dft(&x));
            assert!(dev < 1e-9, "size {} deviation {dev}", 1 << p);
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_frame(&mut rng, 2048);
        let back = fft(&fft(&x, Direction::Forward).unwrap(), Direction::Inverse).unwrap();
        assert!(max_dev(&x, &back) < 1e-9);
    }

    #[test]
    fn real_input_is_conjugate_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..256).map(|_| rng.random_range(-1.0..1.0)).collect();
        let spec = real_spectrum(&x, 8000).unwrap();
        for k in 1..128 {
            assert!((spec.bins[k] - spec.bins[256 - k].conj()).norm() < 1e-12);
        }
    }

    fn tone(freq: f64, n: usize, sr: u32) -> Vec<f64> {
        (0..n)
            .map(|i| (2.0 * PI * freq * i as f64 / sr as f64).sin())
            .collect()
    }

    #[test]
    fn a440_is_refined_within_one_hz() {
        let samples = tone(440.0, 4096, 44100);
        let frame = Frame::new(&samples, 0.0, 44100).unwrap();

        // oracle: raw argmax of the windowed naive DFT
        let w = hann_window(4096);
        let windowed: Vec<Complex64> = samples.iter().zip(&w).map(|(s, w)| c(s * w, 0.0)).collect();
        let oracle = naive_dft(&windowed);
        let raw_bin = (1..2047)
            .max_by(|&a, &b| oracle[a].norm().total_cmp(&oracle[b].norm()))
            .unwrap();
        assert_eq!(raw_bin, 41);
        assert!((raw_bin as f64 * 44100.0 / 4096.0 - 441.43).abs() < 0.01);

        let peak = dominant_frequency(&frame, true).unwrap();
        assert!((peak.freq_hz - 440.0).abs() <= 1.0, "{}", peak.freq_hz);
        assert!((peak.magnitude - oracle[41].norm()).abs() < 1e-6);
    }

    #[test]
    fn silent_frame_is_unvoiced() {
        let zeros = vec![0.0; 4096];
        let frame = Frame::new(&zeros, 0.0, 44100).unwrap();
        assert_eq!(dominant_frequency(&frame, true).unwrap(), Peak::UNVOICED);
    }

    #[test]
    fn white_noise_is_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let noise: Vec<f64> = (0..4096).map(|_| rng.random_range(-0.1..0.1)).collect();
        let frame = Frame::new(&noise, 0.0, 44100).unwrap();
        assert!(!dominant_frequency(&frame, true).unwrap().is_voiced());
    }

    #[test]
    fn parabolic_offset_is_bounded() {
        assert_eq!(parabolic_offset(1.0, 2.0, 1.0), 0.0);
        assert!(parabolic_offset(1.9, 2.0, 0.1) > 0.0 - 1.0);
        assert!(parabolic_offset(0.0, 0.0, 0.0).abs() <= 1.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn linearity(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_frame(&mut rng, 256);
            let y = random_frame(&mut rng, 256);
            let mix: Vec<Complex64> = x.iter().zip(&y).map(|(p, q)| p * a + q * b).collect();
            let fx = fft(&x, Direction::Forward).unwrap();
            let fy = fft(&y, Direction::Forward).unwrap();
            let lhs = fft(&mix, Direction::Forward).unwrap();
            let rhs: Vec<Complex64> = fx.iter().zip(&fy).map(|(p, q)| p * a + q * b).collect();
            prop_assert!(max_dev(&lhs, &rhs) < 1e-9);
        }

        #[test]
        fn parseval(seed in any::<u64>(), p in 4u32..=12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 1usize << p;
            let x = random_frame(&mut rng, n);
            let time: f64 = x.iter().map(|v| v.norm_sqr()).sum();
            let freq: f64 = fft(&x, Direction::Forward).unwrap().iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
            prop_assert!(((time - freq) / time).abs() < 1e-6);
        }

        #[test]
        fn refinement_stays_within_a_bin(freq in 100.0f64..5000.0) {
            let samples = tone(freq, 2048, 44100);
            let frame = Frame::new(&samples, 0.0, 44100).unwrap();
            let spec = real_spectrum(&samples.iter().zip(hann_window(2048)).map(|(s, w)| s * w).collect::<Vec<_>>(), 44100).unwrap();
            let raw = (1..1023).max_by(|&a, &b| spec.bins[a].norm().total_cmp(&spec.bins[b].norm())).unwrap();
            let peak = dominant_frequency(&frame, true).unwrap();
            prop_assert!((peak.freq_hz - spec.frequency(raw as f64)).abs() <= spec.bin_width() + 1e-9);
        }
    }
}
