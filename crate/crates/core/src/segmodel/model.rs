use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::GrayImage;
use crate::label::CHANNELS;
use crate::tensornet::{Conv2d, ParamStore, Real, Tape, Tensor, TensorError, Var};

/// Geometry of the pyramid segmenter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegModelSpec {
    pub width: usize,
    pub height: usize,
    pub encoder_widths: [usize; 3],
    pub lateral_width: usize,
}

impl Default for SegModelSpec {
    fn default() -> Self {
        Self { width: 64, height: 64, encoder_widths: [8, 16, 32], lateral_width: 16 }
    }
}

impl SegModelSpec {
    pub fn validate(&self) -> Result<(), TensorError> {
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return Err(TensorError::Shape(format!(
                "segmenter input {}x{} must be a nonzero multiple of 8",
                self.width, self.height
            )));
        }
        if self.encoder_widths.contains(&0) || self.lateral_width == 0 {
            return Err(TensorError::Shape("layer widths must be nonzero".into()));
        }
        Ok(())
    }
}

/// Three stride-2 encoder stages, 1x1 laterals, a nearest-upsample top-down
/// path and a 3x3 head producing six logits at input resolution.
#[derive(Debug, Clone)]
pub struct TinyFpn {
    pub spec: SegModelSpec,
    encoder: [Conv2d; 3],
    laterals: [Conv2d; 3],
    head: Conv2d,
}

impl TinyFpn {
    pub fn new<T: Real, R: rand::Rng>(spec: SegModelSpec, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self, TensorError> {
        spec.validate()?;
        let [w1, w2, w3] = spec.encoder_widths;
        let lat = spec.lateral_width;
        let encoder = [
            Conv2d::new(store, "enc1", 1, w1, 3, 2, rng),
            Conv2d::new(store, "enc2", w1, w2, 3, 2, rng),
            Conv2d::new(store, "enc3", w2, w3, 3, 2, rng),
        ];
        let laterals = [
            Conv2d::new(store, "lat1", w1, lat, 1, 1, rng),
            Conv2d::new(store, "lat2", w2, lat, 1, 1, rng),
            Conv2d::new(store, "lat3", w3, lat, 1, 1, rng),
        ];
        let head = Conv2d::new(store, "head", lat, CHANNELS, 3, 1, rng);
        Ok(Self { spec, encoder, laterals, head })
    }

    /// Builds a freshly initialized model and its parameters from a seed.
    pub fn init<T: Real>(spec: SegModelSpec, seed: u64) -> Result<(Self, ParamStore<T>), TensorError> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Self::new(spec, &mut store, &mut rng)?;
        Ok((model, store))
    }

    /// Zeroes the head so every output logit is 0 (probability 1/2).
    pub fn zero_head<T: Real>(&self, store: &mut ParamStore<T>) {
        store.get_mut(self.head.weight).data_mut().fill(T::zero());
        store.get_mut(self.head.bias).data_mut().fill(T::zero());
    }

    /// Maps `[n, 1, H, W]` images to `[n, 6, H, W]` logits.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, TensorError> {
        let (_, c, h, w) = tape.value(x).dims4()?;
        if c != 1 || h != self.spec.height || w != self.spec.width {
            return Err(TensorError::Shape(format!(
                "segmenter expects [n,1,{},{}], got [_, {c}, {h}, {w}]",
                self.spec.height, self.spec.width
            )));
        }
        let mut features = Vec::with_capacity(3);
        let mut cur = x;
        for stage in &self.encoder {
            let z = stage.forward(tape, store, cur)?;
            cur = tape.relu(z);
            features.push(cur);
        }
        let mut top = self.laterals[2].forward(tape, store, features[2])?;
        for level in (0..2).rev() {
            let lateral = self.laterals[level].forward(tape, store, features[level])?;
            let up = tape.upsample2(top)?;
            top = tape.add(lateral, up)?;
        }
        let full = tape.upsample2(top)?;
        self.head.forward(tape, store, full)
    }
}

/// Stacks images into a `[n, 1, H, W]` tensor scaled to `[0, 1]`.
pub fn images_to_tensor<T: Real>(images: &[&GrayImage]) -> Result<Tensor<T>, TensorError> {
    let (w, h) = images.first().map(|i| i.dims()).ok_or_else(|| TensorError::Shape("empty image batch".into()))?;
    let mut data = Vec::with_capacity(images.len() * w * h);
    for img in images {
        if img.dims() != (w, h) {
            return Err(TensorError::Shape(format!("image {:?} in a batch of {:?}", img.dims(), (w, h))));
        }
        data.extend(img.pixels().iter().map(|&p| T::from_f64(f64::from(p) / 255.0)));
    }
    Tensor::from_vec(&[images.len(), 1, h, w], data)
}
