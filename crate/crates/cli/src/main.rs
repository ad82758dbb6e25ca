use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use monomt_core::audio::{read_wav, synth_melody, write_wav, ScoreSpec, Timbre};
use monomt_core::eval::{match_notes, EvalReport, DEFAULT_ONSET_TOL_BEATS};
use monomt_core::midi::{read_midi, write_midi_with};
use monomt_core::pipeline::{analyze, transcribe, PipelineConfig};

/// Monophonic audio to MIDI transcription.
#[derive(Parser)]
#[command(name = "monomt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Transcribe WAV recordings to Standard MIDI Files.
    Transcribe(TranscribeArgs),
    /// Render a JSON score to a WAV file.
    Synth(SynthArgs),
    /// Score a MIDI transcription against a JSON reference.
    Eval(EvalArgs),
    /// Dump the per-frame pitch track as CSV.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TranscribeArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output MIDI file; a directory when several inputs are given.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the score as JSON (file, or directory for several inputs).
    #[arg(long)]
    score: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    json: bool,
}

/// Overrides applied on top of the defaults or the MONOMT_CONFIG file.
#[derive(Args, Default)]
struct ConfigArgs {
    #[arg(long)]
    frame_size: Option<usize>,
    #[arg(long)]
    hop: Option<usize>,
    #[arg(long)]
    silence_threshold: Option<f64>,
    #[arg(long)]
    gate_threshold: Option<f64>,
    /// Same-pitch energy ratio that starts a new note.
    #[arg(long)]
    energy_ratio: Option<f64>,
    #[arg(long)]
    min_note_frames: Option<usize>,
    #[arg(long)]
    min_bpm: Option<f64>,
    #[arg(long)]
    max_bpm: Option<f64>,
    /// Candidate beats per bar, comma separated.
    #[arg(long, value_delimiter = ',')]
    meters: Option<Vec<u8>>,
    /// Quantization steps per beat.
    #[arg(long)]
    grid: Option<u32>,
    #[arg(long)]
    ppq: Option<u16>,
    /// General MIDI program number.
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=127))]
    program: Option<u8>,
    #[arg(long)]
    no_gate: bool,
}

#[derive(Args)]
struct SynthArgs {
    score: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 44100)]
    sr: u32,
    /// pure_sine, harmonic or harmonic:K:DECAY
    #[arg(long, default_value = "pure_sine")]
    timbre: Timbre,
}

#[derive(Args)]
struct EvalArgs {
    reference: PathBuf,
    hypothesis: PathBuf,
    #[arg(long, default_value_t = DEFAULT_ONSET_TOL_BEATS)]
    onset_tol: f64,
    #[arg(long)]
    octave_invariant: bool,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct InspectArgs {
    input: PathBuf,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

enum Failure {
    Usage(String),
    Domain(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Domain(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Domain(m) => m,
        }
    }
}

type CmdResult = Result<(), Failure>;

const CONFIG_ENV: &str = "MONOMT_CONFIG";

fn load_config(args: &ConfigArgs) -> Result<PipelineConfig, Failure> {
    let mut cfg = match std::env::var_os(CONFIG_ENV) {
        Some(path) => {
            let text = fs::read_to_string(&path)
                .map_err(|e| Failure::Usage(format!("{CONFIG_ENV}={}: {e}", Path::new(&path).display())))?;
            serde_json::from_str(&text)
                .map_err(|e| Failure::Usage(format!("{CONFIG_ENV}={}: {e}", Path::new(&path).display())))?
        }
        None => PipelineConfig::default(),
    };
    if let Some(v) = args.frame_size {
        cfg.frame_size = v;
    }
    if let Some(v) = args.hop {
        cfg.hop = v;
    }
    if let Some(v) = args.silence_threshold {
        cfg.preprocess.silence_threshold = v;
    }
    if let Some(v) = args.gate_threshold {
        cfg.preprocess.gate_threshold = v;
    }
    if let Some(v) = args.energy_ratio {
        cfg.segmentation.energy_rise_ratio = v;
    }
    if let Some(v) = args.min_note_frames {
        cfg.segmentation.min_note_frames = v;
    }
    if let Some(v) = args.min_bpm {
        cfg.tempo.min_bpm = v;
    }
    if let Some(v) = args.max_bpm {
        cfg.tempo.max_bpm = v;
    }
    if let Some(v) = &args.meters {
        cfg.time_signature_candidates = v.clone();
    }
    if let Some(v) = args.grid {
        cfg.grid_division = v;
    }
    if let Some(v) = args.ppq {
        cfg.ppq = v;
    }
    if let Some(v) = args.program {
        cfg.program = v;
    }
    if args.no_gate {
        cfg.gate_enabled = false;
    }
    Ok(cfg)
}

fn require_file(path: &Path) -> CmdResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::Usage(format!("{}: no such file", path.display())))
    }
}

#[derive(Serialize)]
struct TranscribeSummary {
    input: String,
    midi: String,
    tempo_bpm: f64,
    time_signature: String,
    bar_count: u32,
    note_count: usize,
    fallbacks: Vec<String>,
}

/// Output path for `input`: `dest` itself for a single input, else a file in
/// the `dest` directory; next to the input when no destination is given.
fn output_path(input: &Path, dest: Option<&Path>, many: bool, ext: &str) -> PathBuf {
    match dest {
        Some(d) if many => d.join(input.with_extension(ext).file_name().unwrap_or_default()),
        Some(d) => d.to_path_buf(),
        None => input.with_extension(ext),
    }
}

fn transcribe_one(
    input: &Path,
    args: &TranscribeArgs,
    cfg: &PipelineConfig,
    many: bool,
) -> Result<TranscribeSummary, Failure> {
    let name = input.display();
    let audio = read_wav(input).map_err(|e| Failure::Domain(format!("{name}: {e}")))?;
    let t = transcribe(&audio, cfg).map_err(|e| Failure::Domain(format!("{name}: {e}")))?;
    let midi_path = output_path(input, args.out.as_deref(), many, "mid");
    write_midi_with(&t.score, &midi_path, &cfg.midi_options())
        .map_err(|e| Failure::Domain(format!("{}: {e}", midi_path.display())))?;
    if let Some(dest) = &args.score {
        let path = output_path(input, Some(dest), many, "json");
        let json = t.score.to_score_spec().to_json();
        fs::write(&path, json).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    }
    Ok(TranscribeSummary {
        input: input.display().to_string(),
        midi: midi_path.display().to_string(),
        tempo_bpm: t.score.tempo_bpm,
        time_signature: t.score.time_signature.to_string(),
        bar_count: t.score.bar_count,
        note_count: t.score.notes.len(),
        fallbacks: t.diagnostics.fallbacks,
    })
}

fn cmd_transcribe(args: TranscribeArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    for input in &args.inputs {
        require_file(input)?;
    }
    let many = args.inputs.len() > 1;
    if many {
        for dir in [&args.out, &args.score].into_iter().flatten() {
            fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
        }
    }

    let results: Vec<Result<TranscribeSummary, Failure>> = thread::scope(|s| {
        let handles: Vec<_> = args
            .inputs
            .iter()
            .map(|input| s.spawn(|| transcribe_one(input, &args, &cfg, many)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("transcription thread panicked")).collect()
    });

    let mut summaries = Vec::new();
    let mut first_failure = None;
    for r in results {
        match r {
            Ok(s) => summaries.push(s),
            Err(f) => match first_failure {
                None => first_failure = Some(f),
                Some(_) => eprintln!("error: {}", f.message()),
            },
        }
    }
    if args.json {
        let out = if many {
            serde_json::to_string_pretty(&summaries)
        } else {
            serde_json::to_string_pretty(&summaries.first())
        };
        println!("{}", out.expect("summary serializes"));
    } else {
        for s in &summaries {
            println!(
                "{}: tempo {:.2} BPM, time signature {}, {} bars, {} notes -> {}",
                s.input, s.tempo_bpm, s.time_signature, s.bar_count, s.note_count, s.midi
            );
            for f in &s.fallbacks {
                println!("  fallback: {f}");
            }
        }
    }
    match first_failure {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn cmd_synth(args: SynthArgs) -> CmdResult {
    require_file(&args.score)?;
    if args.sr == 0 {
        return Err(Failure::Usage("--sr must be positive".into()));
    }
    let text = fs::read_to_string(&args.score).map_err(|e| Failure::Usage(format!("{}: {e}", args.score.display())))?;
    let spec = ScoreSpec::from_json(&text).map_err(|e| Failure::Domain(format!("{}: {e}", args.score.display())))?;
    let audio = synth_melody(&spec, args.sr, args.timbre).map_err(|e| Failure::Domain(e.to_string()))?;
    write_wav(&audio, &args.out).map_err(|e| Failure::Domain(format!("{}: {e}", args.out.display())))?;
    println!(
        "{}: {} samples at {} Hz ({:.3} s)",
        args.out.display(),
        audio.len(),
        audio.sample_rate,
        audio.duration_seconds()
    );
    Ok(())
}

fn report_table(r: &EvalReport) -> String {
    let mut s = String::new();
    let rows: [(&str, String); 9] = [
        ("precision", format!("{:.4}", r.precision)),
        ("recall", format!("{:.4}", r.recall)),
        ("f_measure", format!("{:.4}", r.f_measure)),
        ("matched", r.matched.to_string()),
        ("reference notes", r.ref_notes.to_string()),
        ("transcribed notes", r.hyp_notes.to_string()),
        ("octave errors", r.octave_errors.to_string()),
        ("pitch errors", r.pitch_errors.to_string()),
        ("timing errors", r.timing_errors.to_string()),
    ];
    for (k, v) in rows {
        let _ = writeln!(s, "{k:<18} {v:>8}");
    }
    s
}

fn cmd_eval(args: EvalArgs) -> CmdResult {
    require_file(&args.reference)?;
    require_file(&args.hypothesis)?;
    if args.onset_tol.is_nan() || args.onset_tol <= 0.0 {
        return Err(Failure::Usage("--onset-tol must be positive".into()));
    }
    let text = fs::read_to_string(&args.reference)
        .map_err(|e| Failure::Usage(format!("{}: {e}", args.reference.display())))?;
    let reference =
        ScoreSpec::from_json(&text).map_err(|e| Failure::Domain(format!("{}: {e}", args.reference.display())))?;
    let hyp = read_midi(&args.hypothesis).map_err(|e| Failure::Domain(format!("{}: {e}", args.hypothesis.display())))?;
    let report = match_notes(&reference, &hyp, args.onset_tol, args.octave_invariant);
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        print!("{}", report_table(&report));
    }
    Ok(())
}

fn cmd_inspect(args: InspectArgs) -> CmdResult {
    let cfg = load_config(&args.config)?;
    require_file(&args.input)?;
    let name = args.input.display();
    let audio = read_wav(&args.input).map_err(|e| Failure::Domain(format!("{name}: {e}")))?;
    let track = analyze(&audio, &cfg).map_err(|e| Failure::Domain(format!("{name}: {e}")))?;
    let mut csv = String::from("time_s,freq_hz,midi,energy\n");
    for f in &track.frames {
        let midi = f.midi.map(|m| m.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{:.6},{:.3},{},{:.6}", f.time, f.freq_hz, midi, f.energy);
    }
    match &args.out {
        Some(path) => fs::write(path, csv).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Transcribe(a) => cmd_transcribe(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Inspect(a) => cmd_inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
