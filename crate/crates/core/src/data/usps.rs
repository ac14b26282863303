use std::path::Path;

use super::{read_file, ImageDataset, Provenance, Split, SIDE};
use crate::error::{Error, Result};

pub const USPS_SIDE: usize = 16;
const ATTRS: usize = USPS_SIDE * USPS_SIDE;

/// Corner-aligned bilinear resize of a single-channel image.
pub fn resize_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let scale = |d: usize, s: usize| if d > 1 { (s - 1) as f32 / (d - 1) as f32 } else { 0.0 };
    let (ry, rx) = (scale(dh, sh), scale(dw, sw));
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let fy = y as f32 * ry;
        let y0 = (fy.floor() as usize).min(sh - 1);
        let y1 = (y0 + 1).min(sh - 1);
        let ty = fy - y0 as f32;
        for x in 0..dw {
            let fx = x as f32 * rx;
            let x0 = (fx.floor() as usize).min(sw - 1);
            let x1 = (x0 + 1).min(sw - 1);
            let tx = fx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - tx) + src[y0 * sw + x1] * tx;
            let bottom = src[y1 * sw + x0] * (1.0 - tx) + src[y1 * sw + x1] * tx;
            out.push((top * (1.0 - ty) + bottom * ty).clamp(0.0, 1.0));
        }
    }
    out
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads the sparse `label index:value ...` text format with 256 attributes
/// in `[-1, 1]`. Labels `1..=10` map to digits `0..=9`, values map to
/// `[0, 1]` (absent attributes are 0, i.e. 0.5 after mapping), and each
/// image is upsampled to 28×28.
pub fn load_usps(path: &Path) -> Result<ImageDataset> {
    let bytes = read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_err(path, line, "invalid UTF-8")
    })?;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    let mut raw = [0.0f32; ATTRS];
    for (no, line) in text.lines().enumerate() {
        let no = no + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label_field = fields.next().unwrap_or_default();
        let label: f64 = label_field
            .parse()
            .map_err(|_| parse_err(path, no, format!("unparsable label `{label_field}`")))?;
        if label.fract() != 0.0 || !(1.0..=10.0).contains(&label) {
            return Err(parse_err(path, no, format!("label {label_field} outside 1..=10")));
        }
        raw.fill(0.5);
        for field in fields {
            let (idx, val) = field
                .split_once(':')
                .ok_or_else(|| parse_err(path, no, format!("expected index:value, got `{field}`")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(path, no, format!("unparsable attribute index `{idx}`")))?;
            if !(1..=ATTRS).contains(&idx) {
                return Err(parse_err(
                    path,
                    no,
                    format!("attribute index {idx} outside [1, {ATTRS}]"),
                ));
            }
            let v: f32 = val
                .parse()
                .map_err(|_| parse_err(path, no, format!("unparsable attribute value `{val}`")))?;
            if !v.is_finite() {
                return Err(parse_err(path, no, format!("non-finite attribute value `{val}`")));
            }
            raw[idx - 1] = ((v + 1.0) * 0.5).clamp(0.0, 1.0);
        }
        labels.push(label as u8 - 1);
        pixels.extend(resize_bilinear(&raw, USPS_SIDE, USPS_SIDE, SIDE, SIDE));
    }
    if labels.is_empty() {
        return Err(parse_err(path, 0, "no records"));
    }
    ImageDataset::new(SIDE, SIDE, pixels, Some(labels), Provenance::Usps, Split::Train)
}
