//! Note-level precision, recall and F-measure against a reference score.

use serde::{Deserialize, Serialize};

use crate::audio::ScoreSpec;
use crate::rhythm::QuantizedScore;

pub const DEFAULT_ONSET_TOL_BEATS: f64 = 0.25;

/// Unmatched pairs with equal pitch this many tolerances apart are timing errors.
pub const TIMING_WINDOW_FACTOR: f64 = 4.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub matched: usize,
    pub octave_errors: usize,
    pub pitch_errors: usize,
    pub timing_errors: usize,
    pub ref_notes: usize,
    pub hyp_notes: usize,
}

#[derive(Debug, Clone, Copy)]
struct Pt {
    onset: f64,
    midi: u8,
}

fn sorted(mut v: Vec<Pt>) -> Vec<Pt> {
    v.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.midi.cmp(&b.midi)));
    v
}

/// Walks references in onset order and pairs each with the earliest unused
/// hypothesis that satisfies `accept` within `tol`.
fn greedy<F>(refs: &[Pt], hyps: &[Pt], ref_used: &mut [bool], hyp_used: &mut [bool], tol: f64, accept: F) -> Vec<(usize, usize)>
where
    F: Fn(u8, u8) -> bool,
{
    let mut pairs = Vec::new();
    let mut lo = 0;
    for (i, r) in refs.iter().enumerate() {
        if ref_used[i] {
            continue;
        }
        while lo < hyps.len() && hyps[lo].onset < r.onset - tol - 1e-9 {
            lo += 1;
        }
        let hit = (lo..hyps.len())
            .take_while(|&j| hyps[j].onset <= r.onset + tol + 1e-9)
            .find(|&j| !hyp_used[j] && accept(r.midi, hyps[j].midi));
        if let Some(j) = hit {
            ref_used[i] = true;
            hyp_used[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

fn same_class(a: u8, b: u8) -> bool {
    a % 12 == b % 12
}

/// Scores `hyp` against `reference`; onsets compare in beats.
pub fn match_notes(reference: &ScoreSpec, hyp: &QuantizedScore, onset_tol_beats: f64, octave_invariant: bool) -> EvalReport {
    let refs = sorted(reference.notes.iter().map(|n| Pt { onset: n.onset, midi: n.midi }).collect());
    let hyps = sorted(
        hyp.notes
            .iter()
            .map(|n| Pt {
                onset: n.onset_beats,
                midi: n.midi,
            })
            .collect(),
    );
    let tol = onset_tol_beats.max(0.0);
    let mut ref_used = vec![false; refs.len()];
    let mut hyp_used = vec![false; hyps.len()];

    let pairs = if octave_invariant {
        greedy(&refs, &hyps, &mut ref_used, &mut hyp_used, tol, same_class)
    } else {
        greedy(&refs, &hyps, &mut ref_used, &mut hyp_used, tol, |a, b| a == b)
    };
    let matched = pairs.len();
    let mut octave_errors = pairs.iter().filter(|&&(i, j)| refs[i].midi != hyps[j].midi).count();

    // classify what is left, each leftover hypothesis used at most once
    octave_errors += greedy(&refs, &hyps, &mut ref_used, &mut hyp_used, tol, |a, b| a != b && same_class(a, b)).len();
    let pitch_errors = greedy(&refs, &hyps, &mut ref_used, &mut hyp_used, tol, |a, b| !same_class(a, b)).len();
    let timing_errors = greedy(&refs, &hyps, &mut ref_used, &mut hyp_used, TIMING_WINDOW_FACTOR * tol, |a, b| {
        if octave_invariant {
            same_class(a, b)
        } else {
            a == b
        }
    })
    .len();

    let (precision, recall, f_measure) = if refs.is_empty() && hyps.is_empty() {
        (1.0, 1.0, 1.0)
    } else {
        let p = if hyps.is_empty() { 0.0 } else { matched as f64 / hyps.len() as f64 };
        let r = if refs.is_empty() { 0.0 } else { matched as f64 / refs.len() as f64 };
        let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        (p, r, f)
    };
    EvalReport {
        precision,
        recall,
        f_measure,
        matched,
        octave_errors,
        pitch_errors,
        timing_errors,
        ref_notes: refs.len(),
        hyp_notes: hyps.len(),
    }
}
