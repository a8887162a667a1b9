//! Plain-text 16-bit PGM (P2) image output.
//!
//! Each channel becomes its own file, values mapped linearly from `[0, A]`
//! to `[0, 65535]`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

pub const MAX_VALUE: u16 = 65535;

/// Quantizes one value; out-of-range inputs clamp to the endpoints.
pub fn quantize(v: f64, amplitude: f64) -> u16 {
    ((v / amplitude).clamp(0.0, 1.0) * f64::from(MAX_VALUE)).round() as u16
}

/// P2 text for one channel.
pub fn encode_channel(grid: &LatentGrid, channel: usize, amplitude: f64) -> String {
    let (w, h) = (grid.width(), grid.height());
    let mut out = format!("P2\n{w} {h}\n{MAX_VALUE}\n");
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| quantize(grid.get(channel, y, x), amplitude).to_string())
            .collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    out
}

/// `out/img.pgm` -> `out/img_c{channel}.pgm`.
pub fn channel_path(path: &Path, channel: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}_c{channel}.pgm"))
}

/// Writes every channel of `grid`; returns the files written.
pub fn write_image(grid: &LatentGrid, amplitude: f64, path: &Path) -> Result<Vec<PathBuf>> {
    if !(amplitude > 0.0) {
        return Err(Error::invalid("amplitude must be positive"));
    }
    (0..grid.channels())
        .map(|c| {
            let p = channel_path(path, c);
            fs::write(&p, encode_channel(grid, c, amplitude))?;
            Ok(p)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub width: usize,
    pub height: usize,
    pub max_value: u32,
    pub pixels: Vec<u32>,
}

/// Parses P2 text, including `#` comments.
pub fn parse_pgm(text: &str) -> Result<PgmImage> {
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(Error::Parse("missing P2 magic".into()));
    }
    let mut number = |what: &str| -> Result<u32> {
        tokens
            .next()
            .ok_or_else(|| Error::Parse(format!("missing {what}")))?
            .parse()
            .map_err(|_| Error::Parse(format!("bad {what}")))
    };
    let width = number("width")? as usize;
    let height = number("height")? as usize;
    let max_value = number("max value")?;
    let pixels = (0..width * height)
        .map(|_| number("pixel"))
        .collect::<Result<Vec<_>>>()?;
    if pixels.iter().any(|&p| p > max_value) {
        return Err(Error::Parse("pixel exceeds max value".into()));
    }
    Ok(PgmImage { width, height, max_value, pixels })
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    parse_pgm(&fs::read_to_string(path)?)
}
