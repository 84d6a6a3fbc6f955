//! Grayscale PGM (P5) output.

use anyhow::{ensure, Result};

/// Maps `[min, max]` linearly to `[0, 255]`, clamping outside values. A
/// degenerate range maps everything to mid-gray.
pub fn to_pgm(values: &[f64], rows: usize, cols: usize, min: f64, max: f64) -> Result<Vec<u8>> {
    ensure!(values.len() == rows * cols, "{} values for a {rows}x{cols} image", values.len());
    ensure!(min.is_finite() && max.is_finite() && min <= max, "invalid range [{min}, {max}]");
    let mut out = format!("P5\n{cols} {rows}\n255\n").into_bytes();
    let span = max - min;
    out.extend(values.iter().map(|&v| {
        if span <= 0.0 {
            128
        } else {
            (((v - min) / span).clamp(0.0, 1.0) * 255.0).round() as u8
        }
    }));
    Ok(out)
}

/// Header fields and pixel payload of a P5 image.
pub fn parse_pgm(bytes: &[u8]) -> Result<(usize, usize, &[u8])> {
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        ensure!(pos > start, "truncated PGM header");
        fields.push(std::str::from_utf8(&bytes[start..pos])?.to_string());
    }
    ensure!(fields[0] == "P5", "not a binary PGM");
    ensure!(fields[3] == "255", "unsupported max value {}", fields[3]);
    let (cols, rows): (usize, usize) = (fields[1].parse()?, fields[2].parse()?);
    let data = &bytes[pos + 1..];
    ensure!(data.len() == rows * cols, "PGM payload has {} bytes, expected {}", data.len(), rows * cols);
    Ok((rows, cols, data))
}
