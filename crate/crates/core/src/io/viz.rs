//! Color renderings of flow fields and scalar maps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FlowField, Image, ScalarMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    /// Black through red and yellow to white.
    #[default]
    Heat,
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Png,
    Ppm,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Png => "png",
            OutputFormat::Ppm => "ppm",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct VisualizationSpec {
    /// Flow magnitude drawn at full saturation; `None` uses the field's maximum.
    pub flow_max: Option<f64>,
    pub colormap: Colormap,
    pub format: OutputFormat,
}

impl VisualizationSpec {
    pub fn validate(&self) -> Result<()> {
        match self.flow_max {
            Some(m) if !(m.is_finite() && m > 0.0) => {
                Err(Error::InvalidConfig(format!("flow_max must be positive, got {m}")))
            }
            _ => Ok(()),
        }
    }
}

const SEGMENTS: [usize; 6] = [15, 6, 4, 11, 13, 6];

/// The 55-entry Middlebury hue wheel, red through yellow, green, cyan, blue
/// and magenta.
fn color_wheel() -> Vec<[f64; 3]> {
    let mut wheel = Vec::with_capacity(SEGMENTS.iter().sum());
    for (seg, &n) in SEGMENTS.iter().enumerate() {
        for i in 0..n {
            let up = i as f64 / n as f64;
            let down = 1.0 - up;
            wheel.push(match seg {
                0 => [1.0, up, 0.0],
                1 => [down, 1.0, 0.0],
                2 => [0.0, 1.0, up],
                3 => [0.0, down, 1.0],
                4 => [up, 0.0, 1.0],
                _ => [1.0, 0.0, down],
            });
        }
    }
    wheel
}

/// Hue encodes direction and saturation encodes magnitude relative to the
/// spec's maximum; zero flow is white and flow beyond the maximum is dimmed.
/// Non-finite vectors render black.
pub fn colorize_flow(flow: &FlowField, spec: &VisualizationSpec) -> Image {
    let max = spec.flow_max.unwrap_or_else(|| {
        let m = flow.iter().filter(|f| f.x.is_finite() && f.y.is_finite()).map(|f| f.norm()).fold(0.0, f64::max);
        if m > 0.0 { m } else { 1.0 }
    });
    let wheel = color_wheel();
    let n = wheel.len();
    Image::from_fn(flow.width(), flow.height(), 3, |u, v, px| {
        let f = flow.get(u, v);
        if !(f.x.is_finite() && f.y.is_finite()) {
            px.fill(0.0);
            return;
        }
        let (x, y) = (f.x / max, f.y / max);
        let rad = x.hypot(y);
        let angle = (-y).atan2(-x) / std::f64::consts::PI;
        let pos = (angle + 1.0) / 2.0 * (n - 1) as f64;
        let k0 = (pos.floor() as usize).min(n - 1);
        let k1 = (k0 + 1) % n;
        let t = pos - k0 as f64;
        for c in 0..3 {
            let col = (1.0 - t) * wheel[k0][c] + t * wheel[k1][c];
            px[c] = if rad <= 1.0 { 1.0 - rad * (1.0 - col) } else { 0.75 * col };
        }
    })
    .expect("colors lie in [0, 1]")
}

/// Renders a map with values in [0, 1] (clamped; NaN as black).
pub fn colorize_map(map: &ScalarMap, spec: &VisualizationSpec) -> Image {
    Image::from_fn(map.width(), map.height(), 3, |u, v, px| {
        let m = *map.get(u, v);
        let x = if m.is_nan() { 0.0 } else { m.clamp(0.0, 1.0) };
        match spec.colormap {
            Colormap::Gray => px.fill(x),
            Colormap::Heat => {
                for (c, out) in px.iter_mut().enumerate() {
                    *out = (3.0 * x - c as f64).clamp(0.0, 1.0);
                }
            }
        }
    })
    .expect("colors lie in [0, 1]")
}
