use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fused::FUSED_CHANNELS;
use crate::dataio::View;
use crate::tensornet::{Conv2d, Linear, ParamStore, Real, Tape, TensorError, Var};

/// Prefix shared by every encoder parameter, used for warm starts.
pub const ENCODER_PREFIX: &str = "enc.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderSpec {
    pub widths: [usize; 2],
    pub shift_fraction: f64,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { widths: [16, 32], shift_fraction: 0.125 }
    }
}

impl EncoderSpec {
    pub fn feature_width(&self) -> usize {
        self.widths[1]
    }
}

/// Two strided conv stages, each followed by a residual temporal-shift
/// block, then an average over space and time.
#[derive(Debug, Clone)]
pub struct VideoEncoder {
    pub spec: EncoderSpec,
    stem1: Conv2d,
    block1: Conv2d,
    stem2: Conv2d,
    block2: Conv2d,
}

impl VideoEncoder {
    pub fn new<T: Real, R: rand::Rng>(spec: EncoderSpec, store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let [w1, w2] = spec.widths;
        Self {
            stem1: Conv2d::new(store, "enc.stem1", FUSED_CHANNELS, w1, 3, 2, rng),
            block1: Conv2d::new(store, "enc.block1", w1, w1, 3, 1, rng),
            stem2: Conv2d::new(store, "enc.stem2", w1, w2, 3, 2, rng),
            block2: Conv2d::new(store, "enc.block2", w2, w2, 3, 1, rng),
            spec,
        }
    }

    /// Maps a `[T, 7, H, W]` video to a `[1, width]` feature row.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, TensorError> {
        let mut h = x;
        for (stem, block) in [(&self.stem1, &self.block1), (&self.stem2, &self.block2)] {
            let z = stem.forward(tape, store, h)?;
            h = tape.relu(z);
            let shifted = tape.temporal_shift(h, self.spec.shift_fraction)?;
            let z = block.forward(tape, store, shifted)?;
            let r = tape.relu(z);
            h = tape.add(h, r)?;
        }
        let pooled = tape.global_avg_pool(h)?;
        tape.mean_rows(pooled)
    }
}

/// Late-fusion change classifier: `head(encode(b) - encode(a))`.
#[derive(Debug, Clone)]
pub struct SfChangeNet {
    pub encoder: VideoEncoder,
    pub head: Linear,
}

impl SfChangeNet {
    pub fn init<T: Real>(spec: EncoderSpec, seed: u64) -> (Self, ParamStore<T>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = spec.feature_width();
        let encoder = VideoEncoder::new(spec, &mut store, &mut rng);
        let head = Linear::new(&mut store, "change.head", width, 3, &mut rng);
        (Self { encoder, head }, store)
    }

    /// Returns the `[1, 3]` logits and the feature difference.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, a: Var, b: Var) -> Result<(Var, Var), TensorError> {
        let fa = self.encoder.forward(tape, store, a)?;
        let fb = self.encoder.forward(tape, store, b)?;
        let diff = tape.sub(fb, fa)?;
        Ok((self.head.forward(tape, store, diff)?, diff))
    }
}

/// Per-view S/F regressor with two hidden layers.
#[derive(Debug, Clone)]
pub struct SfRegressNet {
    pub encoder: VideoEncoder,
    pub hidden: [Linear; 2],
    pub out: Linear,
}

/// Hidden widths of the regression head.
pub const REGRESS_HIDDEN: [usize; 2] = [32, 16];

impl SfRegressNet {
    pub fn init<T: Real>(spec: EncoderSpec, seed: u64) -> (Self, ParamStore<T>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = spec.feature_width();
        let encoder = VideoEncoder::new(spec, &mut store, &mut rng);
        let [h1, h2] = REGRESS_HIDDEN;
        let hidden = [
            Linear::new(&mut store, "reg.l1", width, h1, &mut rng),
            Linear::new(&mut store, "reg.l2", h1, h2, &mut rng),
        ];
        let out = Linear::new(&mut store, "reg.out", h2, 1, &mut rng);
        (Self { encoder, hidden, out }, store)
    }

    /// Returns a `[1, 1]` prediction.
    pub fn forward<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Result<Var, TensorError> {
        let mut h = self.encoder.forward(tape, store, x)?;
        for layer in &self.hidden {
            let z = layer.forward(tape, store, h)?;
            h = tape.relu(z);
        }
        self.out.forward(tape, store, h)
    }
}

/// Shared encoder with one two-class head per view.
#[derive(Debug, Clone)]
pub struct ReadmissionNet {
    pub encoder: VideoEncoder,
    pub heads: Vec<Linear>,
}

impl ReadmissionNet {
    pub fn init<T: Real>(spec: EncoderSpec, seed: u64) -> (Self, ParamStore<T>) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = spec.feature_width();
        let encoder = VideoEncoder::new(spec, &mut store, &mut rng);
        let heads = View::ALL
            .iter()
            .map(|v| Linear::new(&mut store, &format!("readmit.head.{v}"), width, 2, &mut rng))
            .collect();
        (Self { encoder, heads }, store)
    }

    /// `[1, 2]` logits of one view from its day-one and day-two videos.
    pub fn forward_view<T: Real>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        view: View,
        day1: Var,
        day2: Var,
    ) -> Result<Var, TensorError> {
        let f1 = self.encoder.forward(tape, store, day1)?;
        let f2 = self.encoder.forward(tape, store, day2)?;
        let diff = tape.sub(f2, f1)?;
        self.heads[view.index()].forward(tape, store, diff)
    }
}
