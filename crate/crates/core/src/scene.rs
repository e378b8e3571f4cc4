//! Ground-truth scenes on the hr-pixel grid.
//!
//! A [`DynamicScene`] is a static background with opaque sprites composited
//! in z-order. Sprite trajectories are piecewise-linear in time and snap to
//! the nearest hr-pixel, so evaluation is exact and deterministic.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::{Error, Field, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sprite {
    pub image: Field,
    /// Top-left corner over time, in hr-pixels.
    pub path: Vec<Waypoint>,
    pub z: i32,
    pub start: Option<f64>,
    pub stop: Option<f64>,
}

impl Sprite {
    pub fn new(image: Field, path: Vec<Waypoint>) -> Self {
        Sprite {
            image,
            path,
            z: 0,
            start: None,
            stop: None,
        }
    }

    pub fn visible_at(&self, t: f64) -> bool {
        self.start.is_none_or(|s| t >= s) && self.stop.is_none_or(|s| t < s)
    }

    /// Interpolated top-left position; clamps outside the path's time span.
    pub fn position(&self, t: f64) -> (f64, f64) {
        let path = &self.path;
        match path.len() {
            0 => (0.0, 0.0),
            1 => (path[0].x, path[0].y),
            _ => {
                if t <= path[0].t {
                    return (path[0].x, path[0].y);
                }
                for w in path.windows(2) {
                    let (a, b) = (w[0], w[1]);
                    if t <= b.t {
                        let span = b.t - a.t;
                        let f = if span > 0.0 { (t - a.t) / span } else { 1.0 };
                        return (a.x + f * (b.x - a.x), a.y + f * (b.y - a.y));
                    }
                }
                let last = path[path.len() - 1];
                (last.x, last.y)
            }
        }
    }

    /// Nearest hr-pixel placement of the top-left corner.
    pub fn placement(&self, t: f64) -> (i64, i64) {
        let (x, y) = self.position(t);
        (x.round() as i64, y.round() as i64)
    }

    /// Centre of the snapped sprite footprint.
    pub fn center(&self, t: f64) -> (f64, f64) {
        let (x, y) = self.placement(t);
        (
            x as f64 + self.image.width as f64 / 2.0,
            y as f64 + self.image.height as f64 / 2.0,
        )
    }
}

/// Background plus sprites, evaluated at any time `t >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicScene {
    pub width: usize,
    pub height: usize,
    pub background: Field,
    /// Painter's order: later entries are drawn on top.
    sprites: Vec<Sprite>,
}

impl DynamicScene {
    pub fn new(background: Field, mut sprites: Vec<Sprite>) -> Self {
        // Stable sort keeps list order for equal z.
        sprites.sort_by_key(|s| s.z);
        DynamicScene {
            width: background.width,
            height: background.height,
            background,
            sprites,
        }
    }

    pub fn from_static(image: Field) -> Self {
        DynamicScene::new(image, Vec::new())
    }

    pub fn sprites(&self) -> &[Sprite] {
        &self.sprites
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn is_static(&self) -> bool {
        self.sprites.is_empty()
    }

    /// Identifies the rendered state at `t`: two times with equal keys render
    /// identical fields.
    pub fn state_key(&self, t: f64) -> Vec<Option<(i64, i64)>> {
        self.sprites
            .iter()
            .map(|s| s.visible_at(t).then(|| s.placement(t)))
            .collect()
    }

    pub fn evaluate(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.pixel_count()];
        self.evaluate_into(t, &mut out);
        out
    }

    pub fn evaluate_into(&self, t: f64, out: &mut [f64]) {
        let (w, h) = (self.width as i64, self.height as i64);
        out.copy_from_slice(&self.background.data);
        for s in &self.sprites {
            if !s.visible_at(t) {
                continue;
            }
            let (px, py) = s.placement(t);
            for sy in 0..s.image.height as i64 {
                let y = py + sy;
                if y < 0 || y >= h {
                    continue;
                }
                for sx in 0..s.image.width as i64 {
                    let x = px + sx;
                    if x < 0 || x >= w {
                        continue;
                    }
                    out[(y * w + x) as usize] = s.image.get(sx as usize, sy as usize);
                }
            }
        }
        for v in out.iter_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn evaluate_field(&self, t: f64) -> Field {
        Field {
            width: self.width,
            height: self.height,
            data: self.evaluate(t),
        }
    }
}

/// Loads a grayscale (luma) image and area-averages it to the target size.
pub fn load_image(path: &Path, target_width: usize, target_height: usize) -> Result<Field> {
    let img = image::open(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let luma = img.to_luma32f();
    let (w, h) = (luma.width() as usize, luma.height() as usize);
    let data: Vec<f64> = luma.into_raw().into_iter().map(|v| (v as f64).clamp(0.0, 1.0)).collect();
    let native = Field::new(w, h, data)?;
    Ok(resample_area(&native, target_width, target_height))
}

/// Area-weighted resample: each target pixel averages the source area it covers.
pub fn resample_area(src: &Field, width: usize, height: usize) -> Field {
    if src.width == width && src.height == height {
        return src.clone();
    }
    let wx = overlap_weights(src.width, width);
    let wy = overlap_weights(src.height, height);
    Field::from_fn(width, height, |x, y| {
        let mut acc = 0.0;
        for &(sy, fy) in &wy[y] {
            for &(sx, fx) in &wx[x] {
                acc += fy * fx * src.get(sx, sy);
            }
        }
        acc
    })
}

/// For every target index, the source indices it overlaps and the normalised
/// overlap fractions (summing to one).
fn overlap_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    // Work in units of 1/(src*dst) to keep the interval arithmetic exact.
    (0..dst)
        .map(|d| {
            let lo = d * src;
            let hi = (d + 1) * src;
            let mut out = Vec::new();
            let first = lo / dst;
            let last = (hi - 1) / dst;
            for s in first..=last {
                let a = lo.max(s * dst);
                let b = hi.min((s + 1) * dst);
                if b > a {
                    out.push((s, (b - a) as f64 / src as f64));
                }
            }
            out
        })
        .collect()
}

/// Image reference inside a scene script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageSource {
    Path(String),
    File {
        file: String,
        width: Option<usize>,
        height: Option<usize>,
    },
    Fill {
        fill: f64,
        width: Option<usize>,
        height: Option<usize>,
    },
    Builtin {
        builtin: String,
        width: Option<usize>,
        height: Option<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpriteScript {
    pub image: ImageSource,
    pub path: Vec<Waypoint>,
    #[serde(default)]
    pub z: i32,
    #[serde(default)]
    pub start: Option<f64>,
    #[serde(default)]
    pub stop: Option<f64>,
}

/// Declarative scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneScript {
    #[serde(default = "default_side")]
    pub width: usize,
    #[serde(default = "default_side")]
    pub height: usize,
    pub background: ImageSource,
    #[serde(default)]
    pub sprites: Vec<SpriteScript>,
}

fn default_side() -> usize {
    128
}

impl SceneScript {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Scene(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Resolves image references (relative to `base_dir`) into a scene.
    pub fn build(&self, base_dir: &Path) -> Result<DynamicScene> {
        let background =
            resolve_image(&self.background, base_dir, Some((self.width, self.height)))?;
        let background = resample_area(&background, self.width, self.height);
        let mut sprites = Vec::with_capacity(self.sprites.len());
        for s in &self.sprites {
            if s.path.is_empty() {
                return Err(Error::Scene("sprite path needs at least one waypoint".into()));
            }
            if s.path.windows(2).any(|w| w[1].t < w[0].t) {
                return Err(Error::Scene("sprite waypoints must be time-ordered".into()));
            }
            sprites.push(Sprite {
                image: resolve_image(&s.image, base_dir, None)?,
                path: s.path.clone(),
                z: s.z,
                start: s.start,
                stop: s.stop,
            });
        }
        Ok(DynamicScene::new(background, sprites))
    }
}

fn resolve_image(src: &ImageSource, base: &Path, fallback: Option<(usize, usize)>) -> Result<Field> {
    let size = |w: Option<usize>, h: Option<usize>| -> Result<(usize, usize)> {
        match (w.zip(h), fallback) {
            (Some(s), _) | (None, Some(s)) => Ok(s),
            (None, None) => Err(Error::Scene("sprite image needs width and height".into())),
        }
    };
    match src {
        ImageSource::Path(p) => load_native(&base.join(p), fallback),
        ImageSource::File { file, width, height } => {
            let path = base.join(file);
            match width.zip(*height) {
                Some((w, h)) => load_image(&path, w, h),
                None => load_native(&path, fallback),
            }
        }
        ImageSource::Fill { fill, width, height } => {
            let (w, h) = size(*width, *height)?;
            Ok(Field::filled(w, h, fill.clamp(0.0, 1.0)))
        }
        ImageSource::Builtin { builtin, width, height } => {
            let (w, h) = size(*width, *height)?;
            presets::builtin(builtin, w, h)
        }
    }
}

fn load_native(path: &PathBuf, fallback: Option<(usize, usize)>) -> Result<Field> {
    match fallback {
        Some((w, h)) => load_image(path, w, h),
        None => {
            let (w, h) = image::image_dimensions(path).map_err(|e| Error::Ingestion {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            load_image(path, w as usize, h as usize)
        }
    }
}

/// Built-in synthetic scenes used by tests, the CLI and the acceptance suite.
pub mod presets {
    use super::*;

    pub fn builtin(name: &str, width: usize, height: usize) -> Result<Field> {
        match name {
            "test-card" => Ok(test_card(width, height)),
            "sign" => Ok(sign(width, height)),
            "checker" => Ok(Field::from_fn(width, height, |x, y| ((x + y) % 2) as f64)),
            "gradient" => Ok(Field::from_fn(width, height, |x, _| {
                x as f64 / (width.max(2) - 1) as f64
            })),
            "dark" => Ok(Field::filled(width, height, 0.0)),
            _ => Err(Error::Scene(format!("unknown builtin image {name:?}"))),
        }
    }

    /// Resolution-target style card: bar groups of several pitches, a
    /// checkerboard patch and a smooth background ramp.
    pub fn test_card(width: usize, height: usize) -> Field {
        Field::from_fn(width, height, |x, y| {
            let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
            let ramp = 0.35 + 0.25 * u + 0.15 * v;
            let tile = ((x * 4 / width.max(1)) + 4 * (y * 4 / height.max(1))) % 8;
            let pitch = 1 + tile / 2;
            let bars = if tile % 2 == 0 { x / pitch % 2 } else { y / pitch % 2 };
            let ring = (((x as f64 - width as f64 / 2.0).powi(2)
                + (y as f64 - height as f64 / 2.0).powi(2))
            .sqrt()
                / 3.0)
                .floor() as usize
                % 2;
            let detail = if (x / 8 + y / 8) % 3 == 0 { ring } else { bars };
            (ramp + 0.4 * (detail as f64 - 0.5)).clamp(0.0, 1.0)
        })
    }

    const GLYPHS: [[&str; 7]; 3] = [
        [
            "X...X", "X...X", "X...X", "X...X", "X...X", "X...X", ".XXX.",
        ],
        [
            ".....", ".....", ".XXX.", "X...X", "X...X", "X...X", ".XXX.",
        ],
        [
            ".XXX.", "X...X", "X....", "X.XXX", "X...X", "X...X", ".XXX.",
        ],
    ];

    /// Bright panel carrying dark block lettering.
    pub fn sign(width: usize, height: usize) -> Field {
        let mut f = Field::filled(width, height, 0.95);
        let glyph_w = 5;
        let total = 3 * glyph_w + 2;
        let scale = (width / (total + 2)).min(height / 9).max(1);
        let x0 = (width.saturating_sub(total * scale)) / 2;
        let y0 = (height.saturating_sub(7 * scale)) / 2;
        for (g, glyph) in GLYPHS.iter().enumerate() {
            for (row, line) in glyph.iter().enumerate() {
                for (col, ch) in line.bytes().enumerate() {
                    if ch != b'X' {
                        continue;
                    }
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let x = x0 + (g * (glyph_w + 1) + col) * scale + dx;
                            let y = y0 + row * scale + dy;
                            if x < width && y < height {
                                f.set(x, y, 0.1);
                            }
                        }
                    }
                }
            }
        }
        f
    }

    /// Lettered sign swept left to right and back over the test card.
    pub fn moving_sign(width: usize, height: usize, duration: f64) -> DynamicScene {
        let (sw, sh) = (width * 3 / 8, height / 4);
        let y = (height / 2 - sh / 2) as f64;
        let x_max = (width - sw) as f64;
        let path = vec![
            Waypoint { t: 0.0, x: 0.0, y },
            Waypoint { t: duration / 2.0, x: x_max, y },
            Waypoint { t: duration, x: 0.0, y },
        ];
        DynamicScene::new(test_card(width, height), vec![Sprite::new(sign(sw, sh), path)])
    }

    /// Uniform bright square of side `side` moving at `speed` hr-pixels/s
    /// horizontally along row `center_y`, bouncing between `margin` and the
    /// opposite margin, over a dim textured background.
    pub fn moving_square(
        width: usize,
        height: usize,
        side: usize,
        speed: f64,
        center_y: f64,
        margin: f64,
        duration: f64,
    ) -> DynamicScene {
        let background = Field::from_fn(width, height, |x, y| {
            0.2 + 0.1 * (((x / 4) + (y / 4)) % 2) as f64
        });
        let y = center_y - side as f64 / 2.0;
        let x_min = margin - side as f64 / 2.0;
        let x_max = width as f64 - margin - side as f64 / 2.0;
        let leg = (x_max - x_min) / speed;
        let mut path = vec![Waypoint { t: 0.0, x: x_min, y }];
        let mut t = 0.0;
        let mut forward = true;
        while t < duration {
            t += leg;
            let x = if forward { x_max } else { x_min };
            path.push(Waypoint { t, x, y });
            forward = !forward;
        }
        let square = Field::from_fn(side, side, |x, y| {
            0.9 - 0.2 * (((x / 2) + (y / 2)) % 2) as f64
        });
        DynamicScene::new(background, vec![Sprite::new(square, path)])
    }

    /// Field of single-hr-pixel impulses on a square lattice.
    pub fn impulse_grid(width: usize, height: usize, spacing: usize, offset: usize) -> Field {
        Field::from_fn(width, height, |x, y| {
            let on = x >= offset
                && y >= offset
                && (x - offset) % spacing == 0
                && (y - offset) % spacing == 0;
            if on {
                1.0
            } else {
                0.0
            }
        })
    }
}
