//! Binary chain-trace files.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size | field                          |
//! |--------|------|--------------------------------|
//! | 0      | 8    | magic `MRFTRACE`               |
//! | 8      | 2    | version (1)                    |
//! | 10     | 1    | sampler kind (0 exact, 1 approx) |
//! | 11     | 1    | reserved, 0                    |
//! | 12     | 4    | width                          |
//! | 16     | 4    | height                         |
//! | 20     | 2    | disparity levels D             |
//! | 22     | 2    | reserved, 0                    |
//! | 24     | 4    | iterations run                 |
//! | 28     | 4    | first recorded sweep           |
//! | 32     | 4    | recorded sweeps K              |
//! | 36     | 8    | chain seed                     |
//! | 44     | 8    | config hash                    |
//! | 52     | 8    | degenerate fallbacks           |
//! | 60     | K·W·H | label planes, row-major, one byte per label |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::mrf::{ChainTrace, SamplerKind, TraceMeta};

pub const TRACE_MAGIC: &[u8; 8] = b"MRFTRACE";
pub const TRACE_VERSION: u16 = 1;
const HEADER_LEN: usize = 60;

pub fn encode_trace(trace: &ChainTrace) -> Vec<u8> {
    let meta = trace.meta();
    let mut out = Vec::with_capacity(HEADER_LEN + trace.raw_planes().len());
    out.extend_from_slice(TRACE_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.push(meta.sampler.code());
    out.push(0);
    out.extend_from_slice(&(trace.width() as u32).to_le_bytes());
    out.extend_from_slice(&(trace.height() as u32).to_le_bytes());
    out.extend_from_slice(&(trace.disparity_levels() as u16).to_le_bytes());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(meta.iterations as u32).to_le_bytes());
    out.extend_from_slice(&(trace.first_sweep() as u32).to_le_bytes());
    out.extend_from_slice(&(trace.window_len() as u32).to_le_bytes());
    out.extend_from_slice(&meta.seed.to_le_bytes());
    out.extend_from_slice(&meta.config_hash.to_le_bytes());
    out.extend_from_slice(&meta.degenerate_fallbacks.to_le_bytes());
    out.extend_from_slice(trace.raw_planes());
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes(b[at..at + 2].try_into().unwrap())
}

fn u32_at(b: &[u8], at: usize) -> usize {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap()) as usize
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn decode_trace(bytes: &[u8]) -> Result<ChainTrace> {
    let corrupt = |offset: usize, message: String| Error::Parse { offset, message };
    if bytes.len() < HEADER_LEN {
        return Err(corrupt(bytes.len(), format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..8] != TRACE_MAGIC {
        return Err(corrupt(0, "bad magic".into()));
    }
    let version = u16_at(bytes, 8);
    if version != TRACE_VERSION {
        return Err(Error::Unsupported(format!("trace version {version}")));
    }
    let sampler = SamplerKind::from_code(bytes[10])
        .ok_or_else(|| corrupt(10, format!("unknown sampler kind {}", bytes[10])))?;
    let width = u32_at(bytes, 12);
    let height = u32_at(bytes, 16);
    let levels = usize::from(u16_at(bytes, 20));
    let iterations = u32_at(bytes, 24);
    let first_sweep = u32_at(bytes, 28);
    let window = u32_at(bytes, 32);
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(window))
        .ok_or_else(|| corrupt(12, "dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(corrupt(
            HEADER_LEN + payload.len().min(expected),
            format!("expected {expected} label bytes, found {}", payload.len()),
        ));
    }
    let meta = TraceMeta {
        sampler,
        config_hash: u64_at(bytes, 44),
        seed: u64_at(bytes, 36),
        iterations,
        degenerate_fallbacks: u64_at(bytes, 52),
    };
    ChainTrace::new(width, height, levels, first_sweep, payload.to_vec(), meta)
        .map_err(|e| corrupt(HEADER_LEN, e.to_string()))
}

pub fn write_trace(path: impl AsRef<Path>, trace: &ChainTrace) -> Result<()> {
    fs::write(path, encode_trace(trace))?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<ChainTrace> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::Trace {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    decode_trace(&bytes).map_err(|e| Error::Trace {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approx_hw::ApproxConfig;
    use crate::ingest::{make_random_dot_stereogram, ShiftRegion};
    use crate::mrf::{run_chain, ChainConfig, MrfParams, Sampler, StereoMrf};

    fn sample_trace() -> ChainTrace {
        let pair = make_random_dot_stereogram(12, 8, 4, ShiftRegion::centered(12, 8, 1), 1).unwrap();
        let params = MrfParams { disparity_levels: 4, ..Default::default() };
        let model = StereoMrf::new(&pair.left, &pair.right, params).unwrap();
        let config = ChainConfig { iterations: 9, record_window: 5, seed: 77, ..Default::default() };
        run_chain(&model, &config, &Sampler::Approx(ApproxConfig::default())).unwrap()
    }

    #[test]
    fn header_layout() {
        let trace = sample_trace();
        let bytes = encode_trace(&trace);
        assert_eq!(&bytes[..8], b"MRFTRACE");
        assert_eq!(bytes.len(), 60 + 12 * 8 * 5);
        assert_eq!(bytes[10], 1);
        assert_eq!(u32_at(&bytes, 12), 12);
        assert_eq!(u32_at(&bytes, 28), 4);
        assert_eq!(u64_at(&bytes, 36), 77);
        assert_eq!(decode_trace(&bytes).unwrap(), trace);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = encode_trace(&sample_trace());
        assert!(matches!(decode_trace(&bytes[..30]), Err(Error::Parse { .. })));
        assert!(matches!(decode_trace(&bytes[..bytes.len() - 1]), Err(Error::Parse { .. })));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_trace(&bad), Err(Error::Parse { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(decode_trace(&bad), Err(Error::Unsupported(_))));
        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() = 200;
        assert!(decode_trace(&bad).is_err());
    }

    #[test]
    fn file_errors_name_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trace");
        write_trace(&path, &sample_trace()).unwrap();
        assert_eq!(read_trace(&path).unwrap(), sample_trace());
        let missing = dir.path().join("missing.trace");
        let err = read_trace(&missing).unwrap_err().to_string();
        assert!(err.contains("missing.trace"), "{err}");
    }
}
