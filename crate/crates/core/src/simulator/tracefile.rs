//! `HPT1` binary trace files.
//!
//! Layout, all little-endian: magic `"HPT1"`, version `u32`, sample rate
//! `f64` (Hz), trace length `u32`, trace count `u32`, master seed `u64`; then
//! per trace: trigger offset `f64` (s), LO phase `f64` (rad) and `trace_len`
//! samples as `f32`.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result, TraceFileError};
use crate::simulator::{Trace, TraceBatch};

pub const MAGIC: [u8; 4] = *b"HPT1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 8 + 4 + 4 + 8;

fn record_len(trace_len: usize) -> usize {
    16 + 4 * trace_len
}

pub fn encode(batch: &TraceBatch) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + batch.traces.len() * record_len(batch.trace_len));
    write_to(batch, &mut out).expect("writing to a Vec cannot fail");
    out
}

fn write_to<W: Write>(batch: &TraceBatch, out: &mut W) -> std::io::Result<()> {
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&batch.sample_rate.to_le_bytes())?;
    out.write_all(&(batch.trace_len as u32).to_le_bytes())?;
    out.write_all(&(batch.traces.len() as u32).to_le_bytes())?;
    out.write_all(&batch.master_seed.to_le_bytes())?;
    for trace in &batch.traces {
        debug_assert_eq!(trace.samples.len(), batch.trace_len);
        out.write_all(&trace.trigger_offset.to_le_bytes())?;
        out.write_all(&trace.lo_phase.to_le_bytes())?;
        for s in &trace.samples {
            out.write_all(&s.to_le_bytes())?;
        }
    }
    Ok(())
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

pub fn decode(bytes: &[u8]) -> std::result::Result<TraceBatch, TraceFileError> {
    if bytes.len() < 8 {
        return Err(TraceFileError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TraceFileError::BadMagic { found: magic });
    }
    let version = u32_at(bytes, 4);
    if version != VERSION {
        return Err(TraceFileError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(TraceFileError::Truncated {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let sample_rate = f64_at(bytes, 8);
    if !(sample_rate.is_finite() && sample_rate > 0.0) {
        return Err(TraceFileError::InvalidHeader {
            field: "sample_rate",
            reason: format!("{sample_rate} is not a positive finite rate"),
        });
    }
    let trace_len = u32_at(bytes, 16) as usize;
    let n_traces = u32_at(bytes, 20) as usize;
    let master_seed = u64::from_le_bytes(bytes[24..32].try_into().unwrap());

    let expected = HEADER_LEN as u64 + n_traces as u64 * record_len(trace_len) as u64;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(TraceFileError::Truncated { expected, found });
    }
    if found > expected {
        return Err(TraceFileError::TrailingData { expected, found });
    }

    let mut traces = Vec::with_capacity(n_traces);
    let mut at = HEADER_LEN;
    for _ in 0..n_traces {
        let trigger_offset = f64_at(bytes, at);
        let lo_phase = f64_at(bytes, at + 8);
        at += 16;
        let samples = bytes[at..at + 4 * trace_len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        at += 4 * trace_len;
        traces.push(Trace {
            trigger_offset,
            lo_phase,
            samples,
        });
    }
    Ok(TraceBatch {
        sample_rate,
        trace_len,
        master_seed,
        traces,
    })
}

pub fn write_trace_file(batch: &TraceBatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_to(batch, &mut out)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TraceBatch> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    Ok(decode(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small_batch(n: usize, len: usize) -> TraceBatch {
        TraceBatch {
            sample_rate: 5e8,
            trace_len: len,
            master_seed: 0xDEAD_BEEF,
            traces: (0..n)
                .map(|i| Trace {
                    trigger_offset: 1e-6 + i as f64 * 1e-12,
                    lo_phase: 0.1 * i as f64,
                    samples: (0..len).map(|k| (k as f32 - 3.5) * 0.25 + i as f32).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn empty_batch_round_trips() {
        let b = small_batch(0, 1000);
        let bytes = encode(&b);
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(decode(&bytes).unwrap(), b);
    }

    #[test]
    fn single_trace_round_trips_through_disk() {
        let b = small_batch(1, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.hpt");
        write_trace_file(&b, &path).unwrap();
        let back = read_trace_file(&path).unwrap();
        assert_eq!(back, b);
        for (x, y) in back.traces[0].samples.iter().zip(&b.traces[0].samples) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode(&small_batch(2, 3));
        assert_eq!(&bytes[0..4], b"HPT1");
        assert_eq!(u32_at(&bytes, 4), 1);
        assert_eq!(f64_at(&bytes, 8), 5e8);
        assert_eq!(u32_at(&bytes, 16), 3);
        assert_eq!(u32_at(&bytes, 20), 2);
        assert_eq!(bytes.len(), HEADER_LEN + 2 * (16 + 12));
    }

    #[test]
    fn corrupted_header_bytes_are_rejected() {
        let clean = encode(&small_batch(2, 5));
        // magic, version, trace_len, n_traces: every byte flip must fail to parse
        let positions = (0..8).chain(16..24);
        for pos in positions {
            let mut bad = clean.clone();
            bad[pos] ^= 0xFF;
            assert!(decode(&bad).is_err(), "byte {pos} flip accepted");
        }
        // sign byte of the sample rate
        let mut bad = clean.clone();
        bad[15] ^= 0x80;
        assert!(matches!(
            decode(&bad),
            Err(TraceFileError::InvalidHeader { .. })
        ));
    }

    #[test]
    fn distinct_error_kinds() {
        let clean = encode(&small_batch(1, 4));
        let mut magic = clean.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(TraceFileError::BadMagic { .. })));
        let mut version = clean.clone();
        version[4] = 9;
        assert!(matches!(
            decode(&version),
            Err(TraceFileError::VersionMismatch { found: 9, .. })
        ));
        assert!(matches!(
            decode(&clean[..clean.len() - 1]),
            Err(TraceFileError::Truncated { .. })
        ));
        let mut long = clean.clone();
        long.push(0);
        assert!(matches!(
            decode(&long),
            Err(TraceFileError::TrailingData { .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            samples in proptest::collection::vec(any::<f32>(), 0..40),
            offset in any::<f64>(),
            phase in any::<f64>(),
            seed in any::<u64>(),
        ) {
            let batch = TraceBatch {
                sample_rate: 5e8,
                trace_len: samples.len(),
                master_seed: seed,
                traces: vec![Trace { trigger_offset: offset, lo_phase: phase, samples: samples.clone() }],
            };
            let back = decode(&encode(&batch)).unwrap();
            prop_assert_eq!(back.traces[0].trigger_offset.to_bits(), offset.to_bits());
            prop_assert_eq!(back.traces[0].lo_phase.to_bits(), phase.to_bits());
            let bits: Vec<u32> = back.traces[0].samples.iter().map(|s| s.to_bits()).collect();
            let want: Vec<u32> = samples.iter().map(|s| s.to_bits()).collect();
            prop_assert_eq!(bits, want);
            prop_assert_eq!(back.master_seed, seed);
        }
    }
}
