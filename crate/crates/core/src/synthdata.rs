//! Procedural face-like images with known attributes.
//!
//! Each image is an ellipse "face" with two eyes and a mouth over a textured
//! background. The face sits at the frame center (offset only by jitter) and
//! its size, shape, brightness and eye spacing are recorded so that probes
//! have ground-truth targets.

use crate::error::{Error, Result};
use crate::export::atomic_write;
use crate::grid::GridSpec;
use crate::image::Image;
use crate::rng::{stream, Purpose};
use rand::Rng;
use std::f64::consts::PI;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceAttributes {
    /// Face height as a fraction of the frame side.
    pub face_scale: f64,
    /// Face width over face height.
    pub eccentricity: f64,
    /// Skin intensity in `[0, 1]`.
    pub brightness: f64,
    /// Eye offset from the face axis as a fraction of the face half-width.
    pub eye_spacing: f64,
    /// Face center offset in pixels.
    pub jitter_x: f64,
    pub jitter_y: f64,
}

impl FaceAttributes {
    pub const NAMES: [&'static str; 6] = [
        "face_scale",
        "eccentricity",
        "brightness",
        "eye_spacing",
        "jitter_x",
        "jitter_y",
    ];

    /// Looks an attribute up by its column name.
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "face_scale" => self.face_scale,
            "eccentricity" => self.eccentricity,
            "brightness" => self.brightness,
            "eye_spacing" => self.eye_spacing,
            "jitter_x" => self.jitter_x,
            "jitter_y" => self.jitter_y,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttributeRanges {
    pub face_scale: (f64, f64),
    pub eccentricity: (f64, f64),
    pub brightness: (f64, f64),
    pub eye_spacing: (f64, f64),
    /// Maximum absolute jitter as a fraction of the frame side.
    pub jitter: f64,
}

impl Default for AttributeRanges {
    fn default() -> Self {
        AttributeRanges {
            face_scale: (0.30, 0.55),
            eccentricity: (0.70, 0.95),
            brightness: (0.35, 0.95),
            eye_spacing: (0.30, 0.50),
            jitter: 1.0 / 56.0,
        }
    }
}

impl AttributeRanges {
    pub fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64), min: f64, max: f64| lo >= min && lo <= hi && hi <= max;
        if !ok(self.face_scale, 0.01, 1.0)
            || !ok(self.eccentricity, 0.1, 2.0)
            || !ok(self.brightness, 0.0, 1.0)
            || !ok(self.eye_spacing, 0.0, 0.9)
            || !(0.0..=0.25).contains(&self.jitter)
        {
            return Err(Error::Config("synthetic attribute range out of bounds".into()));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, image_size: usize, rng: &mut R) -> FaceAttributes {
        let u = |r: &mut R, (lo, hi): (f64, f64)| if lo == hi { lo } else { r.random_range(lo..hi) };
        let j = self.jitter * image_size as f64;
        FaceAttributes {
            face_scale: u(rng, self.face_scale),
            eccentricity: u(rng, self.eccentricity),
            brightness: u(rng, self.brightness),
            eye_spacing: u(rng, self.eye_spacing),
            jitter_x: u(rng, (-j, j)),
            jitter_y: u(rng, (-j, j)),
        }
    }
}

/// Face ellipse in continuous pixel coordinates (pixel `x` covers `[x, x+1)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaceGeometry {
    pub center_x: f64,
    pub center_y: f64,
    pub semi_x: f64,
    pub semi_y: f64,
}

impl FaceGeometry {
    pub fn new(attrs: &FaceAttributes, image_size: usize) -> Self {
        let s = image_size as f64;
        let semi_y = 0.5 * attrs.face_scale * s;
        FaceGeometry {
            center_x: 0.5 * s + attrs.jitter_x,
            center_y: 0.5 * s + attrs.jitter_y,
            semi_x: semi_y * attrs.eccentricity,
            semi_y,
        }
    }

    /// Whether the center of pixel `(x, y)` lies inside the ellipse.
    pub fn contains(&self, x: usize, y: usize) -> bool {
        let dx = (x as f64 + 0.5 - self.center_x) / self.semi_x;
        let dy = (y as f64 + 0.5 - self.center_y) / self.semi_y;
        dx * dx + dy * dy <= 1.0
    }
}

/// Anti-aliased ellipse coverage of pixel center `(px, py)`.
fn ellipse_alpha(px: f64, py: f64, cx: f64, cy: f64, ax: f64, ay: f64) -> f64 {
    let dx = (px - cx) / ax;
    let dy = (py - cy) / ay;
    let q = (dx * dx + dy * dy).sqrt();
    ((1.0 - q) * ax.min(ay) + 0.5).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: f64,
}

/// Renders `attrs` into a `[0, 1]` RGB image. Background texture comes from
/// `rng`; the face itself depends on `attrs` alone.
pub fn render<R: Rng + ?Sized>(attrs: &FaceAttributes, image_size: usize, rng: &mut R) -> Image {
    let s = image_size as f64;
    let base: f64 = rng.random_range(0.10..0.50);
    let tint: [f64; 3] = [
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
        rng.random_range(-0.05..0.05),
    ];
    let waves: Vec<Wave> = (0..3)
        .map(|_| Wave {
            fx: rng.random_range(1.0..6.0) / s,
            fy: rng.random_range(1.0..6.0) / s,
            phase: rng.random_range(0.0..2.0 * PI),
            amp: rng.random_range(0.02..0.05),
        })
        .collect();

    let g = FaceGeometry::new(attrs, image_size);
    let skin = [1.0, 0.85, 0.72].map(|k| k * attrs.brightness);
    let lip = [0.55, 0.2, 0.2].map(|k| k * attrs.brightness);
    let eye_dx = attrs.eye_spacing * g.semi_x;
    let eye_y = g.center_y - 0.25 * g.semi_y;
    let (eye_ax, eye_ay) = (0.13 * g.semi_x, 0.09 * g.semi_y);
    let mouth_y = g.center_y + 0.45 * g.semi_y;
    let (mouth_ax, mouth_ay) = (0.38 * g.semi_x, 0.07 * g.semi_y);

    // sin(a + b) = sin a cos b + cos a sin b, so each wave only needs
    // per-column and per-row tables.
    let table = |f: f64, phase: f64| -> Vec<(f64, f64)> {
        (0..image_size)
            .map(|i| (2.0 * PI * f * (i as f64 + 0.5) + phase).sin_cos())
            .collect()
    };
    let cols: Vec<_> = waves.iter().map(|w| table(w.fx, w.phase)).collect();
    let rows: Vec<_> = waves.iter().map(|w| table(w.fy, 0.0)).collect();

    let mut img = Image::zeros(3, image_size, image_size);
    for y in 0..image_size {
        let py = y as f64 + 0.5;
        for x in 0..image_size {
            let px = x as f64 + 0.5;
            let texture: f64 = waves
                .iter()
                .zip(cols.iter().zip(&rows))
                .map(|(w, (c, r))| {
                    let ((sa, ca), (sb, cb)) = (c[x], r[y]);
                    w.amp * (sa * cb + ca * sb)
                })
                .sum::<f64>()
                + rng.random_range(-0.03..0.03);
            let face = ellipse_alpha(px, py, g.center_x, g.center_y, g.semi_x, g.semi_y);
            let eye = ellipse_alpha(px, py, g.center_x - eye_dx, eye_y, eye_ax, eye_ay)
                .max(ellipse_alpha(px, py, g.center_x + eye_dx, eye_y, eye_ax, eye_ay));
            let mouth = ellipse_alpha(px, py, g.center_x, mouth_y, mouth_ax, mouth_ay);
            for c in 0..3 {
                let bg = base + tint[c] + texture;
                let mut v = skin[c];
                v = v * (1.0 - eye) + 0.08 * eye;
                v = v * (1.0 - mouth) + lip[c] * mouth;
                let out = bg * (1.0 - face) + v * face;
                *img.at_mut(c, y, x) = out.clamp(0.0, 1.0) as f32;
            }
        }
    }
    img
}

/// Seeded generator: sample `i` depends only on `(seed, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub grid: GridSpec,
    pub ranges: AttributeRanges,
}

impl SynthConfig {
    pub fn new(seed: u64, grid: GridSpec) -> Self {
        SynthConfig {
            seed,
            grid,
            ranges: AttributeRanges::default(),
        }
    }

    pub fn attributes(&self, index: usize) -> FaceAttributes {
        let mut rng = stream(self.seed, Purpose::Data, index as u64);
        self.ranges.sample(self.grid.image_size(), &mut rng)
    }

    /// `[0, 1]` image plus its attributes.
    pub fn generate(&self, index: usize) -> (Image, FaceAttributes) {
        let mut rng = stream(self.seed, Purpose::Data, index as u64);
        let attrs = self.ranges.sample(self.grid.image_size(), &mut rng);
        (render(&attrs, self.grid.image_size(), &mut rng), attrs)
    }
}

pub const ATTRIBUTE_HEADER: &str =
    "index,file,face_scale,eccentricity,brightness,eye_spacing,jitter_x,jitter_y";

pub fn image_file_name(index: usize) -> String {
    format!("face_{index:06}.png")
}

/// Writes `count` PNGs plus `attributes.csv` into `dir`.
pub fn write_dataset(config: &SynthConfig, count: usize, dir: &Path) -> Result<()> {
    config.ranges.validate()?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut csv = String::from(ATTRIBUTE_HEADER);
    csv.push('\n');
    for i in 0..count {
        let (img, a) = config.generate(i);
        let name = image_file_name(i);
        img.save_png(&dir.join(&name))?;
        csv.push_str(&format!(
            "{i},{name},{},{},{},{},{},{}\n",
            a.face_scale, a.eccentricity, a.brightness, a.eye_spacing, a.jitter_x, a.jitter_y
        ));
    }
    atomic_write(&dir.join("attributes.csv"), csv.as_bytes())
}

/// Reads `attributes.csv` back as `(file, attributes)` rows.
pub fn read_attributes(path: &Path) -> Result<Vec<(String, FaceAttributes)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(ATTRIBUTE_HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{ATTRIBUTE_HEADER}`"),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = || Error::Parse {
                line: i + 2,
                message: format!("malformed attribute row `{l}`"),
            };
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != 8 {
                return Err(bad());
            }
            let num = |k: usize| cols[k].trim().parse::<f64>().map_err(|_| bad());
            Ok((
                cols[1].to_string(),
                FaceAttributes {
                    face_scale: num(2)?,
                    eccentricity: num(3)?,
                    brightness: num(4)?,
                    eye_spacing: num(5)?,
                    jitter_x: num(6)?,
                    jitter_y: num(7)?,
                },
            ))
        })
        .collect()
}
