//! File emission: CSV traces and binary portable pixmaps.
//!
//! Floats are written with the shortest round-trip representation, so every
//! CSV parses back losslessly and identical runs produce byte-identical
//! files. CSVs use comma separators, `\n` line endings and a header row.

use std::io::Write;
use std::path::Path;

use crate::distill::{phi_psi, WeightingSchedule};
use crate::error::Result;
use crate::generator::IterRecord;
use crate::image::ImageTensor;
use crate::schedule::NoiseSchedule;
use crate::sdedit::SdeditStepRecord;

/// `(t, Φ(t), Ψ(t))` rows for every `t ∈ {1..T}`.
pub fn coefficient_rows(ws: &WeightingSchedule, sched: &NoiseSchedule) -> Result<Vec<(usize, f64, f64)>> {
    (1..=sched.t_max())
        .map(|t| phi_psi(ws, t, sched).map(|(phi, psi)| (t, phi, psi)))
        .collect()
}

pub fn write_coefficients_csv(path: &Path, rows: &[(usize, f64, f64)]) -> std::io::Result<()> {
    let mut out = String::from("t,phi,psi\n");
    for &(t, phi, psi) in rows {
        out.push_str(&format!("{t},{phi},{psi}\n"));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_metrics_csv(path: &Path, records: &[IterRecord]) -> std::io::Result<()> {
    let mut out = String::from("iter,t,grad_norm,d_id,d_edit\n");
    for r in records {
        out.push_str(&format!("{},{},{},{},{}\n", r.iter, r.t, r.grad_norm, r.d_id, r.d_edit));
    }
    write_atomic(path, out.as_bytes())
}

pub fn write_sdedit_trace_csv(path: &Path, records: &[SdeditStepRecord]) -> std::io::Result<()> {
    let mut out = String::from("step,t,x_prev_norm,objective\n");
    for (i, r) in records.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", i, r.t, r.x_prev.norm(), r.objective));
    }
    write_atomic(path, out.as_bytes())
}

/// Binary portable pixmap: P5 for single-channel images, P6 for RGB.
/// Values are mapped affinely from `data_range` to 0..=255 and clamped.
pub fn write_ppm(path: &Path, img: &ImageTensor, data_range: (f64, f64)) -> std::io::Result<()> {
    let (h, w, c) = img.shape();
    let (lo, hi) = data_range;
    let span = if hi > lo { hi - lo } else { 1.0 };
    let quantize = |v: f64| ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8;

    let magic = match c {
        1 => "P5",
        3 => "P6",
        other => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidInput,
                format!("pixmap export supports 1 or 3 channels, got {other}"),
            ))
        }
    };
    let mut bytes = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes.push(quantize(img.get(y, x, ch)));
            }
        }
    }
    write_atomic(path, &bytes)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(bytes)
}
