use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use monomt_bench::{tone, SAMPLE_RATE};
use monomt_core::spectral::{naive_dft, Direction, FftPlan, Frame, FrameAnalyzer};
use num_complex::Complex64;
use std::hint::black_box;

fn fft_sizes(c: &mut Criterion) {
    let mut group = c.benchmark_group("fft");
    for n in [256usize, 1024, 4096] {
        let plan = FftPlan::new(n).unwrap();
        let input: Vec<Complex64> = tone(n, 440.0).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &input, |b, input| {
            let mut buf = input.clone();
            b.iter(|| {
                buf.copy_from_slice(input);
                plan.process(black_box(&mut buf), Direction::Forward).unwrap();
            })
        });
    }
    group.finish();
}

fn naive_reference(c: &mut Criterion) {
    let input: Vec<Complex64> = tone(256, 440.0).into_iter().map(|x| Complex64::new(x, 0.0)).collect();
    c.bench_function("naive_dft/256", |b| b.iter(|| naive_dft(black_box(&input))));
}

fn dominant_frequency(c: &mut Criterion) {
    let samples = tone(4096, 440.0);
    let mut analyzer = FrameAnalyzer::new(4096).unwrap();
    c.bench_function("dominant_frequency/4096", |b| {
        b.iter(|| {
            let frame = Frame::new(black_box(&samples), 0.0, SAMPLE_RATE).unwrap();
            analyzer.dominant_frequency(&frame, true).unwrap()
        })
    });
}

criterion_group!(benches, fft_sizes, naive_reference, dominant_frequency);
criterion_main!(benches);
