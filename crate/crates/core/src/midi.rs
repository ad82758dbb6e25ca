//! Format-0 Standard MIDI File writer and the matching reader.
//!
//! The writer emits a single track: set-tempo, time-signature and program
//! change at tick 0, then note-on/note-off pairs on channel 0 and an
//! end-of-track marker at the end of the last bar. The reader accepts that
//! subset (plus running status, unknown meta events and sysex) and rebuilds
//! the [`QuantizedScore`].

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::rhythm::{bars_for, micros_per_quarter, QuantizedNote, QuantizedScore, TimeSignature};

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("MalformedSmf: {0}")]
    MalformedSmf(String),
    #[error("UnsupportedFeature: {0}")]
    UnsupportedFeature(String),
    #[error("InvalidScore: {0}")]
    InvalidScore(String),
    #[error("IoFailure: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MidiOptions {
    pub ppq: u16,
    /// General MIDI program; 0 is acoustic grand piano.
    pub program: u8,
    pub velocity: u8,
}

impl Default for MidiOptions {
    fn default() -> Self {
        Self {
            ppq: 480,
            program: 0,
            velocity: 90,
        }
    }
}

/// Largest value a four-byte variable-length quantity can carry.
pub const VLQ_MAX: u32 = 0x0FFF_FFFF;

pub fn write_vlq(mut value: u32, out: &mut Vec<u8>) {
    assert!(value <= VLQ_MAX, "VLQ overflow: {value}");
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (value & 0x7F) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = (value & 0x7F) as u8 | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Decodes a VLQ at the start of `bytes`, returning the value and its length.
pub fn read_vlq(bytes: &[u8]) -> Result<(u32, usize), MidiError> {
    let mut value = 0u32;
    for (i, &b) in bytes.iter().take(4).enumerate() {
        value = (value << 7) | (b & 0x7F) as u32;
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    Err(MidiError::MalformedSmf(if bytes.len() < 4 {
        "truncated variable-length quantity".into()
    } else {
        "variable-length quantity longer than 4 bytes".into()
    }))
}

fn ticks(beats: f64, ppq: u16, what: &str) -> Result<u32, MidiError> {
    let t = beats * ppq as f64;
    if !(t >= 0.0) || t.fract() != 0.0 || t > VLQ_MAX as f64 {
        return Err(MidiError::InvalidScore(format!(
            "{what} {beats} beats is not a whole number of ticks at {ppq} PPQ"
        )));
    }
    Ok(t as u32)
}

fn validate(score: &QuantizedScore) -> Result<(), MidiError> {
    if !(score.tempo_bpm.is_finite() && score.tempo_bpm > 0.0) {
        return Err(MidiError::InvalidScore(format!("tempo {}", score.tempo_bpm)));
    }
    TimeSignature::new(score.time_signature.numerator)
        .map_err(|e| MidiError::InvalidScore(e.to_string()))?;
    let mut prev_end = 0.0;
    for (i, n) in score.notes.iter().enumerate() {
        if n.midi > 127 {
            return Err(MidiError::InvalidScore(format!("note {i}: midi {}", n.midi)));
        }
        if !(n.duration_beats > 0.0) {
            return Err(MidiError::InvalidScore(format!("note {i}: non-positive duration")));
        }
        if n.onset_beats < prev_end {
            return Err(MidiError::InvalidScore(format!("note {i} overlaps its predecessor")));
        }
        prev_end = n.end_beats();
    }
    Ok(())
}

/// Serializes a score to SMF bytes.
pub fn encode_midi(score: &QuantizedScore, opts: &MidiOptions) -> Result<Vec<u8>, MidiError> {
    validate(score)?;
    if opts.program > 127 || opts.velocity == 0 || opts.velocity > 127 {
        return Err(MidiError::InvalidScore("program/velocity outside 0..=127".into()));
    }
    let ppq = opts.ppq;
    if ppq == 0 || ppq & 0x8000 != 0 {
        return Err(MidiError::InvalidScore(format!("ppq {ppq}")));
    }

    // (tick, event bytes) in emission order
    let mut events: Vec<(u32, Vec<u8>)> = Vec::new();
    let us = micros_per_quarter(score.tempo_bpm);
    if us == 0 || us > 0xFF_FFFF {
        return Err(MidiError::InvalidScore(format!("tempo {} not representable", score.tempo_bpm)));
    }
    events.push((0, vec![0xFF, 0x51, 0x03, (us >> 16) as u8, (us >> 8) as u8, us as u8]));
    events.push((0, vec![0xFF, 0x58, 0x04, score.time_signature.numerator, 2, 24, 8]));
    events.push((0, vec![0xC0, opts.program]));
    let mut last_tick = 0;
    for n in &score.notes {
        let on = ticks(n.onset_beats, ppq, "onset")?;
        let off = ticks(n.end_beats(), ppq, "note end")?;
        events.push((on, vec![0x90, n.midi, opts.velocity]));
        events.push((off, vec![0x80, n.midi, 0]));
        last_tick = last_tick.max(off);
    }
    let bar_ticks = score.bar_count as u64 * score.time_signature.numerator as u64 * ppq as u64;
    if bar_ticks > VLQ_MAX as u64 {
        return Err(MidiError::InvalidScore("score too long".into()));
    }
    let end = last_tick.max(bar_ticks as u32);
    events.push((end, vec![0xFF, 0x2F, 0x00]));

    let mut track = Vec::new();
    let mut now = 0;
    for (tick, bytes) in &events {
        write_vlq(tick - now, &mut track);
        track.extend_from_slice(bytes);
        now = *tick;
    }

    let mut out = Vec::with_capacity(22 + track.len());
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&0u16.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&ppq.to_be_bytes());
    out.extend_from_slice(b"MTrk");
    out.extend_from_slice(&(track.len() as u32).to_be_bytes());
    out.extend_from_slice(&track);
    Ok(out)
}

fn be_u16(b: &[u8], at: usize) -> u16 {
    u16::from_be_bytes([b[at], b[at + 1]])
}

fn be_u32(b: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn malformed<T>(msg: impl Into<String>) -> Result<T, MidiError> {
    Err(MidiError::MalformedSmf(msg.into()))
}

struct TrackReader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> TrackReader<'a> {
    fn byte(&mut self) -> Result<u8, MidiError> {
        let b = *self
            .data
            .get(self.pos)
            .ok_or_else(|| MidiError::MalformedSmf("track ends mid-event".into()))?;
        self.pos += 1;
        Ok(b)
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let (v, n) = read_vlq(&self.data[self.pos..])?;
        self.pos += n;
        Ok(v)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.pos + n > self.data.len() {
            return malformed("event payload runs past the track end");
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
}

/// Parses SMF bytes written by [`encode_midi`] or an equivalent subset.
pub fn decode_midi(bytes: &[u8]) -> Result<QuantizedScore, MidiError> {
    if bytes.len() < 14 || &bytes[0..4] != b"MThd" {
        return malformed("missing MThd header");
    }
    let header_len = be_u32(bytes, 4) as usize;
    if header_len < 6 || 8 + header_len > bytes.len() {
        return malformed(format!("header length {header_len}"));
    }
    let format = be_u16(bytes, 8);
    let ntrks = be_u16(bytes, 10);
    let division = be_u16(bytes, 12);
    if format != 0 {
        return Err(MidiError::UnsupportedFeature(format!("SMF format {format}")));
    }
    if ntrks != 1 {
        return Err(MidiError::UnsupportedFeature(format!("{ntrks} tracks in a format-0 file")));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::UnsupportedFeature("SMPTE time division".into()));
    }
    if division == 0 {
        return malformed("zero ticks per quarter note");
    }
    let ppq = division as f64;

    // find the track chunk, skipping alien chunks
    let mut pos = 8 + header_len;
    let track = loop {
        if pos + 8 > bytes.len() {
            return malformed("no MTrk chunk");
        }
        let len = be_u32(bytes, pos + 4) as usize;
        let end = pos + 8 + len;
        if end > bytes.len() {
            return malformed(format!("chunk length {len} overruns the file"));
        }
        if &bytes[pos..pos + 4] == b"MTrk" {
            break &bytes[pos + 8..end];
        }
        pos = end;
    };

    let mut rd = TrackReader { data: track, pos: 0 };
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut channel: Option<u8> = None;
    let mut tempo_us: Option<u32> = None;
    let mut meter: Option<TimeSignature> = None;
    let mut sounding: Option<(u8, u64)> = None;
    let mut notes: Vec<QuantizedNote> = Vec::new();
    let mut end_tick: Option<u64> = None;

    while rd.pos < rd.data.len() {
        tick += rd.vlq()? as u64;
        let mut status = rd.byte()?;
        if status < 0x80 {
            status = running.ok_or_else(|| MidiError::MalformedSmf("data byte without running status".into()))?;
            rd.pos -= 1;
        }
        match status {
            0xFF => {
                running = None;
                let kind = rd.byte()?;
                let len = rd.vlq()? as usize;
                let payload = rd.take(len)?;
                match kind {
                    0x2F => {
                        end_tick = Some(tick);
                        break;
                    }
                    0x51 => {
                        if len != 3 {
                            return malformed("set-tempo payload must be 3 bytes");
                        }
                        let us = (payload[0] as u32) << 16 | (payload[1] as u32) << 8 | payload[2] as u32;
                        if us == 0 {
                            return malformed("zero tempo");
                        }
                        match tempo_us {
                            Some(prev) if prev != us => {
                                return Err(MidiError::UnsupportedFeature("tempo change".into()))
                            }
                            _ => tempo_us = Some(us),
                        }
                    }
                    0x58 => {
                        if len != 4 {
                            return malformed("time-signature payload must be 4 bytes");
                        }
                        if payload[1] != 2 {
                            return Err(MidiError::UnsupportedFeature(format!(
                                "beat unit 1/{}",
                                1u32 << payload[1].min(31)
                            )));
                        }
                        let ts = TimeSignature::new(payload[0])
                            .map_err(|e| MidiError::UnsupportedFeature(e.to_string()))?;
                        match meter {
                            Some(prev) if prev != ts => {
                                return Err(MidiError::UnsupportedFeature("time-signature change".into()))
                            }
                            _ => meter = Some(ts),
                        }
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = rd.vlq()? as usize;
                rd.take(len)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let kind = status & 0xF0;
                let ch = status & 0x0F;
                if *channel.get_or_insert(ch) != ch {
                    return Err(MidiError::UnsupportedFeature("events on more than one channel".into()));
                }
                let data_len = if kind == 0xC0 || kind == 0xD0 { 1 } else { 2 };
                let data = rd.take(data_len)?;
                if data.iter().any(|&b| b & 0x80 != 0) {
                    return malformed("status byte inside channel data");
                }
                let is_on = kind == 0x90 && data[1] > 0;
                let is_off = kind == 0x80 || (kind == 0x90 && data[1] == 0);
                if is_on {
                    if sounding.is_some() {
                        return Err(MidiError::UnsupportedFeature("overlapping notes".into()));
                    }
                    sounding = Some((data[0], tick));
                } else if is_off {
                    if let Some((key, start)) = sounding {
                        if key == data[0] {
                            if tick == start {
                                return malformed("zero-length note");
                            }
                            notes.push(QuantizedNote {
                                midi: key,
                                onset_beats: start as f64 / ppq,
                                duration_beats: (tick - start) as f64 / ppq,
                            });
                            sounding = None;
                        }
                    }
                }
            }
            _ => return malformed(format!("unexpected status byte {status:#04x}")),
        }
    }
    let end_tick = end_tick.ok_or_else(|| MidiError::MalformedSmf("missing end-of-track".into()))?;
    if sounding.is_some() {
        return malformed("note left sounding at end of track");
    }

    let time_signature = meter.unwrap_or(TimeSignature::COMMON);
    let us = tempo_us.unwrap_or(500_000);
    let bar_ticks = time_signature.numerator as f64 * ppq;
    let total = notes.iter().map(QuantizedNote::end_beats).fold(0.0, f64::max);
    let bar_count = ((end_tick as f64 / bar_ticks).ceil() as u32).max(bars_for(total, time_signature.numerator));
    Ok(QuantizedScore {
        tempo_bpm: 60e6 / us as f64,
        time_signature,
        notes,
        bar_count,
    })
}

pub fn write_midi(score: &QuantizedScore, path: impl AsRef<Path>) -> Result<(), MidiError> {
    write_midi_with(score, path, &MidiOptions::default())
}

pub fn write_midi_with(score: &QuantizedScore, path: impl AsRef<Path>, opts: &MidiOptions) -> Result<(), MidiError> {
    fs::write(path, encode_midi(score, opts)?)?;
    Ok(())
}

pub fn read_midi(path: impl AsRef<Path>) -> Result<QuantizedScore, MidiError> {
    decode_midi(&fs::read(path)?)
}
