//! Binary PPM (P6) export of prompts.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vp::VisualPrompt;

pub const INTERIOR_GRAY: f32 = 0.5;

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders `clamp01(params)` on the canvas with a mid-gray interior.
/// Single-channel prompts are written as gray RGB; prompts with two or more
/// than three channels use their first three (padding with the last).
pub fn export_prompt_image(prompt: &VisualPrompt, path: &Path) -> Result<()> {
    let canvas = prompt.render(INTERIOR_GRAY);
    let (c, h, w) = prompt.canvas();
    let plane = h * w;
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(3 * plane);
    for i in 0..plane {
        for rgb in 0..3 {
            let ch = rgb.min(c - 1);
            bytes.push(quantize(canvas.data()[ch * plane + i]));
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Width, height and RGB bytes of a P6 file with maxval 255.
pub fn read_pixmap(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        reason: reason.into(),
    };
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
        if start == pos {
            return Err(corrupt("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P6" || fields[3] != "255" {
        return Err(corrupt("not a P6 pixmap with maxval 255"));
    }
    let w: usize = fields[1].parse().map_err(|_| corrupt("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| corrupt("bad height"))?;
    let body = bytes.get(pos..).ok_or_else(|| corrupt("missing raster"))?;
    if body.len() != 3 * w * h {
        return Err(corrupt("raster size mismatch"));
    }
    Ok((w, h, body.to_vec()))
}
