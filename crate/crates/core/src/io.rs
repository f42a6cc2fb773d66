//! Output formats shared by the experiments.
//!
//! Floats are written with Rust's shortest round-trip formatting, so equal
//! values always produce identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde_json::json;

use crate::error::{check_len, Result};
use crate::tomography::{AngleEstimate, Image, ProjectionSet};

/// Flat numeric array with its shape, as JSON.
pub fn array_json(data: &[f64], shape: &[usize]) -> Result<String> {
    check_len("data", data.len(), shape.iter().product())?;
    Ok(serde_json::to_string_pretty(&json!({ "shape": shape, "data": data }))?)
}

/// One projection per line, comma separated.
pub fn sinogram_csv(p: &ProjectionSet) -> String {
    let mut out = String::new();
    for row in &p.rows {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Header with `h`, `detectors`, `k`, and the hidden angles under `truth`
/// when known.
pub fn sinogram_header_json(p: &ProjectionSet) -> Result<String> {
    let mut v = json!({ "h": p.h, "detectors": p.detectors, "k": p.k() });
    if let Some(t) = &p.true_angles {
        v["truth"] = json!(t);
    }
    Ok(serde_json::to_string_pretty(&v)?)
}

/// `index,unsigned,sign,final`.
pub fn angles_csv(est: &AngleEstimate) -> String {
    let mut out = String::from("index,unsigned,sign,final\n");
    for (i, (u, s)) in est.unsigned.iter().zip(&est.sign).enumerate() {
        let _ = writeln!(out, "{i},{u},{s},{}", *s as f64 * u);
    }
    out
}

/// 8-bit binary PGM, scaled so the maximum pixel maps to 255.
pub fn pgm_bytes(img: &Image) -> Vec<u8> {
    let n = img.n();
    let max = img.pixels().iter().copied().fold(0.0f64, f64::max);
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(img.pixels().iter().map(
        |&p| {
            if max > 0.0 {
                (p / max * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        },
    ));
    out
}

/// Raw little-endian f64 pixels, row-major.
pub fn raw_bytes(img: &Image) -> Vec<u8> {
    img.pixels().iter().flat_map(|p| p.to_le_bytes()).collect()
}

/// Writes `<stem>.pgm` and the `<stem>.f64` sidecar.
pub fn write_image(dir: &Path, stem: &str, img: &Image) -> Result<()> {
    fs::write(dir.join(format!("{stem}.pgm")), pgm_bytes(img))?;
    fs::write(dir.join(format!("{stem}.f64")), raw_bytes(img))?;
    Ok(())
}
