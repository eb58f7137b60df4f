use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::GrayImage;
use crate::label::{Channel, ConfidenceMap};

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const GAIN_RANGE: (f64, f64) = (0.8, 1.2);
pub const GAMMA_RANGE: (f64, f64) = (0.8, 1.25);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub rotate: bool,
    pub intensity: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { flip: true, rotate: true, intensity: true }
    }
}

impl AugmentConfig {
    pub const NONE: Self = Self { flip: false, rotate: false, intensity: false };
}

/// One concrete draw of the random transforms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub flip: bool,
    pub angle_deg: f64,
    pub gain: f64,
    pub gamma: f64,
}

impl AugmentDraw {
    pub const IDENTITY: Self = Self { flip: false, angle_deg: 0.0, gain: 1.0, gamma: 1.0 };

    /// Each enabled transform fires with probability 1/2.
    pub fn sample<R: Rng>(config: &AugmentConfig, rng: &mut R) -> Self {
        let mut d = Self::IDENTITY;
        if config.flip && rng.random_bool(0.5) {
            d.flip = true;
        }
        if config.rotate && rng.random_bool(0.5) {
            d.angle_deg = rng.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG);
        }
        if config.intensity && rng.random_bool(0.5) {
            d.gain = rng.random_range(GAIN_RANGE.0..=GAIN_RANGE.1);
            d.gamma = rng.random_range(GAMMA_RANGE.0..=GAMMA_RANGE.1);
        }
        d
    }

    /// Source coordinate that lands on output pixel `(x, y)`: the inverse
    /// rotation about the image centre, then the (self-inverse) flip.
    pub fn source_point(&self, x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
        let (cx, cy) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
        let (mut sx, sy) = if self.angle_deg == 0.0 {
            (x, y)
        } else {
            let (s, c) = (-self.angle_deg.to_radians()).sin_cos();
            let (dx, dy) = (x - cx, y - cy);
            (cx + c * dx - s * dy, cy + s * dx + c * dy)
        };
        if self.flip {
            sx = width as f64 - 1.0 - sx;
        }
        (sx, sy)
    }

    pub fn apply(&self, image: &GrayImage, cmap: &ConfidenceMap) -> (GrayImage, ConfidenceMap) {
        assert_eq!(image.dims(), cmap.dims(), "augment: image and label dimensions differ");
        let (w, h) = image.dims();
        let mut pixels = Vec::with_capacity(w * h);
        let mut labels = ConfidenceMap::zeros(w, h).expect("nonzero dims");
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source_point(x as f64, y as f64, w, h);
                pixels.push(self.intensity(bilinear(image, sx, sy)));
                if let Some((nx, ny)) = nearest(sx, sy, w, h) {
                    for c in Channel::ALL {
                        labels.set(c, x, y, cmap.get(c, nx, ny));
                    }
                }
            }
        }
        (GrayImage::new(w, h, pixels).expect("dims match"), labels)
    }

    fn intensity(&self, v: f64) -> u8 {
        if self.gain == 1.0 && self.gamma == 1.0 {
            return v.round().clamp(0.0, 255.0) as u8;
        }
        let scaled = (v * self.gain / 255.0).clamp(0.0, 1.0);
        (255.0 * scaled.powf(self.gamma)).round().clamp(0.0, 255.0) as u8
    }
}

fn bilinear(image: &GrayImage, x: f64, y: f64) -> f64 {
    let (w, h) = image.dims();
    if x < 0.0 || y < 0.0 || x > (w - 1) as f64 || y > (h - 1) as f64 {
        return 0.0;
    }
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |xx, yy| f64::from(image.get(xx, yy));
    let top = p(x0, y0) * (1.0 - fx) + p(x1, y0) * fx;
    let bottom = p(x0, y1) * (1.0 - fx) + p(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn nearest(x: f64, y: f64, w: usize, h: usize) -> Option<(usize, usize)> {
    let (nx, ny) = (x.round(), y.round());
    (nx >= 0.0 && ny >= 0.0 && nx < w as f64 && ny < h as f64).then_some((nx as usize, ny as usize))
}

/// Draws transforms with `rng` and applies them to an image/label pair.
pub fn augment<R: Rng>(image: &GrayImage, cmap: &ConfidenceMap, config: &AugmentConfig, rng: &mut R) -> (GrayImage, ConfidenceMap) {
    AugmentDraw::sample(config, rng).apply(image, cmap)
}
