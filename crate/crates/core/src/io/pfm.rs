use std::path::Path;

use super::{read_bytes, write_atomic};
use crate::error::{Error, Result};

/// Single-channel PFM (`Pf`). Rows are returned top to bottom; a `PF` file
/// contributes its first channel.
pub fn decode_pfm(bytes: &[u8]) -> std::result::Result<(Vec<f64>, usize, usize), String> {
    // three whitespace-separated header tokens, then one whitespace byte
    let mut tokens = Vec::new();
    let mut at = 0;
    while tokens.len() < 4 {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err("truncated PFM header".into());
        }
        tokens.push(std::str::from_utf8(&bytes[start..at]).map_err(|_| "non-ASCII PFM header")?.to_string());
    }
    at += 1;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format!("not a PFM file (magic {other:?})")),
    };
    let parse = |s: &str| s.parse::<usize>().map_err(|_| format!("bad PFM dimension {s:?}"));
    let (w, h) = (parse(&tokens[1])?, parse(&tokens[2])?);
    let scale: f64 = tokens[3].parse().map_err(|_| format!("bad PFM scale {:?}", tokens[3]))?;
    let little = scale < 0.0;
    let need = w * h * channels * 4;
    if bytes.len() < at + need {
        return Err(format!("PFM body has {} bytes, expected {need}", bytes.len().saturating_sub(at)));
    }
    let body = &bytes[at..at + need];
    let mut out = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let o = ((r * w + c) * channels) * 4;
            let b: [u8; 4] = body[o..o + 4].try_into().unwrap();
            let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
            out[(h - 1 - r) * w + c] = v as f64;
        }
    }
    Ok((out, w, h))
}

pub fn encode_pfm(values: &[f64], width: usize, height: usize) -> Vec<u8> {
    let mut out = format!("Pf\n{width} {height}\n-1.0\n").into_bytes();
    for r in (0..height).rev() {
        for v in &values[r * width..(r + 1) * width] {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

pub fn read_pfm(path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    decode_pfm(&read_bytes(path)?).map_err(|m| Error::format(path, m))
}

pub fn write_pfm(path: &Path, values: &[f64], width: usize, height: usize) -> Result<()> {
    write_atomic(path, &encode_pfm(values, width, height))
}
