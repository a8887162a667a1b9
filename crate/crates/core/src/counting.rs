//! Blob counting by thresholding and connected-component labelling.
//!
//! Stands in for an object detector: the same counter reads intermediate
//! clean estimates and final images.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::LatentGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Connectivity {
    Four,
    Eight,
}

impl TryFrom<u8> for Connectivity {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            4 => Ok(Connectivity::Four),
            8 => Ok(Connectivity::Eight),
            other => Err(Error::Parse(format!("connectivity must be 4 or 8, got {other}"))),
        }
    }
}

impl From<Connectivity> for u8 {
    fn from(c: Connectivity) -> u8 {
        match c {
            Connectivity::Four => 4,
            Connectivity::Eight => 8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterConfig {
    /// Foreground threshold as a fraction of the blob amplitude.
    pub threshold_frac: f64,
    /// Components smaller than this many pixels are discarded.
    pub area_min: usize,
    pub connectivity: Connectivity,
    /// Blob amplitude `A` the threshold is relative to.
    pub amplitude: f64,
}

impl Default for CounterConfig {
    fn default() -> Self {
        Self {
            threshold_frac: 0.5,
            area_min: 3,
            connectivity: Connectivity::Eight,
            amplitude: 1.0,
        }
    }
}

impl CounterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold_frac > 0.0 && self.threshold_frac < 1.0) {
            return Err(Error::config("counter.threshold_frac", "must lie in (0, 1)"));
        }
        if self.area_min == 0 {
            return Err(Error::config("counter.area_min", "must be positive"));
        }
        if !(self.amplitude > 0.0) {
            return Err(Error::config("counter.amplitude", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub x: f64,
    pub y: f64,
    pub area: usize,
    pub peak: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountEstimate {
    pub count: u32,
    pub blobs: Vec<Blob>,
}

const N4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const N8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

/// Counts connected foreground regions of `channel` at `threshold_frac * A`.
pub fn count_objects(image: &LatentGrid, channel: usize, cfg: &CounterConfig) -> Result<CountEstimate> {
    if channel >= image.channels() {
        return Err(Error::invalid(format!(
            "channel {channel} out of range for a {}-channel image",
            image.channels()
        )));
    }
    let (h, w) = (image.height(), image.width());
    let data = image.channel(channel);
    let threshold = cfg.threshold_frac * cfg.amplitude;
    let neighbours: &[(isize, isize)] = match cfg.connectivity {
        Connectivity::Four => &N4,
        Connectivity::Eight => &N8,
    };

    let mut seen = vec![false; h * w];
    let mut blobs = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if seen[start] || data[start] < threshold {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        let (mut area, mut sx, mut sy, mut peak) = (0usize, 0.0, 0.0, f64::NEG_INFINITY);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            area += 1;
            sx += x as f64;
            sy += y as f64;
            peak = peak.max(data[i]);
            for &(dx, dy) in neighbours {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !seen[j] && data[j] >= threshold {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if area >= cfg.area_min {
            blobs.push(Blob {
                x: sx / area as f64,
                y: sy / area as f64,
                area,
                peak,
            });
        }
    }
    Ok(CountEstimate {
        count: blobs.len() as u32,
        blobs,
    })
}
