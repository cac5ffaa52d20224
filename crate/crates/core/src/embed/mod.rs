//! The layout latent space: linear encoders over normalized depth, a linear
//! layout decoder, the training losses and the two-stage training routine.

mod io;
pub mod loss;
mod train;
mod triplet;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::{PanoDepth, EMBED_HEIGHT, EMBED_WIDTH};

pub use io::{load_params, read_params, save_params, write_params};
pub use train::{
    mean_l2, train_layout_branch, train_query_branch, PairSet, QueryLoss, TrainConfig, TrainReport, TrainingCorpus,
};
pub use triplet::{
    label_chamfer, sample_triplets, ChamferCache, PosePool, Triplet, TripletBatch, CHAMFER_FLOOR, LABEL_POINTS,
    NEGATIVE_RADIUS, POSITIVE_RADIUS,
};

pub const EMBED_DIM: usize = 128;
pub const INPUT_DIM: usize = EMBED_HEIGHT * EMBED_WIDTH;
pub const MIN_DEPTH: f64 = 0.1;
pub const MAX_DEPTH: f64 = 20.0;

/// Unit-norm latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding<T = f64> {
    pub values: Vec<T>,
}

impl<T: Real> Embedding<T> {
    /// Normalizes `raw`; a zero vector has no direction and is rejected.
    pub fn normalize(raw: &[T]) -> Result<Self> {
        let norm = l2_norm(raw);
        if norm == T::zero() || !norm.is_finite() {
            return Err(Error::Degenerate("cannot normalize a zero or non-finite vector".into()));
        }
        Ok(Embedding {
            values: raw.iter().map(|&v| v / norm).collect(),
        })
    }

    pub fn distance(&self, other: &Embedding<T>) -> T {
        euclidean(&self.values, &other.values)
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Dot product with four independent partial sums, which lets the compiler
/// vectorize the reduction. The summation order is fixed.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(&x, &y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn l2_norm<T: Real>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

pub fn euclidean<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Layout,
    Query,
}

impl Branch {
    pub fn code(self) -> u32 {
        match self {
            Branch::Layout => 0,
            Branch::Query => 1,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Branch::Layout),
            1 => Some(Branch::Query),
            _ => None,
        }
    }
}

/// `y = W x + b` with `W` stored row-major, `out_dim × in_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap<T = f64> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LinearMap<T> {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        LinearMap {
            in_dim,
            out_dim,
            weights: vec![T::zero(); in_dim * out_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Gaussian weights with variance `1 / in_dim`.
    pub fn random(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (1.0 / in_dim as f64).sqrt()).expect("positive variance");
        let weights = (0..in_dim * out_dim).map(|_| T::lit(normal.sample(rng))).collect();
        let bias = (0..out_dim).map(|_| T::lit(normal.sample(rng))).collect();
        LinearMap {
            in_dim,
            out_dim,
            weights,
            bias,
        }
    }

    pub fn apply(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| dot(row, x) + b)
            .collect()
    }

    /// `W x + b` for several inputs in one sweep over the weights. Each
    /// output equals [`LinearMap::apply`] bitwise.
    pub fn apply_many(&self, xs: &[&[T]]) -> Vec<Vec<T>> {
        let mut out = vec![Vec::with_capacity(self.out_dim); xs.len()];
        for (row, &b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            for (o, x) in out.iter_mut().zip(xs) {
                o.push(dot(row, x) + b);
            }
        }
        out
    }

    /// `W^T g` for several gradients in one sweep over the weights.
    pub fn apply_transpose_many(&self, gs: &[&[T]]) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.in_dim]; gs.len()];
        for (r, row) in self.weights.chunks_exact(self.in_dim).enumerate() {
            for (o, g) in out.iter_mut().zip(gs) {
                let gi = g[r];
                if gi == T::zero() {
                    continue;
                }
                for (o, &w) in o.iter_mut().zip(row) {
                    *o += w * gi;
                }
            }
        }
        out
    }

    /// [`LinearMap::accumulate_outer`] over pairs `(g, x)` in order, in one
    /// sweep over the weights.
    pub fn accumulate_outer_many(&mut self, gs: &[&[T]], xs: &[&[T]]) {
        debug_assert_eq!(gs.len(), xs.len());
        for (r, (row, b)) in self.weights.chunks_exact_mut(self.in_dim).zip(&mut self.bias).enumerate() {
            for (g, x) in gs.iter().zip(xs) {
                let gi = g[r];
                if gi == T::zero() {
                    continue;
                }
                *b += gi;
                for (w, &v) in row.iter_mut().zip(x.iter()) {
                    *w += gi * v;
                }
            }
        }
    }

    /// `W^T g`.
    pub fn apply_transpose(&self, g: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.in_dim];
        for (row, &gi) in self.weights.chunks_exact(self.in_dim).zip(g) {
            if gi == T::zero() {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * gi;
            }
        }
        out
    }

    /// Accumulates the gradient of `g · (W x + b)` into `self`.
    pub fn accumulate_outer(&mut self, g: &[T], x: &[T]) {
        for ((row, b), &gi) in self.weights.chunks_exact_mut(self.in_dim).zip(&mut self.bias).zip(g) {
            if gi == T::zero() {
                continue;
            }
            *b += gi;
            for (w, &v) in row.iter_mut().zip(x) {
                *w += gi * v;
            }
        }
    }

    /// `self -= lr · grad`.
    pub fn descend(&mut self, grad: &LinearMap<T>, lr: T) {
        for (w, &g) in self.weights.iter_mut().zip(&grad.weights) {
            *w -= lr * g;
        }
        for (b, &g) in self.bias.iter_mut().zip(&grad.bias) {
            *b -= lr * g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> LinearMap<U> {
        LinearMap {
            in_dim: self.in_dim,
            out_dim: self.out_dim,
            weights: self.weights.iter().map(|v| U::lit(v.as_f64())).collect(),
            bias: self.bias.iter().map(|v| U::lit(v.as_f64())).collect(),
        }
    }
}

/// Clips depth to `[MIN_DEPTH, MAX_DEPTH]` meters.
pub fn clipped_depth<T: Real>(depth: &PanoDepth<T>) -> Result<Vec<T>> {
    if depth.width != EMBED_WIDTH || depth.height != EMBED_HEIGHT {
        return Err(Error::Dimension(format!(
            "encoder input must be {EMBED_WIDTH}x{EMBED_HEIGHT}, got {}x{}",
            depth.width, depth.height
        )));
    }
    let (lo, hi) = (T::lit(MIN_DEPTH), T::lit(MAX_DEPTH));
    Ok(depth.depth.iter().map(|&d| d.max(lo).min(hi)).collect())
}

/// Encoder input: clipped depth divided by `MAX_DEPTH`.
pub fn preprocess<T: Real>(depth: &PanoDepth<T>) -> Result<Vec<T>> {
    let scale = T::lit(MAX_DEPTH);
    Ok(clipped_depth(depth)?.into_iter().map(|d| d / scale).collect())
}

/// Decoder output in meters; unlike a render it may hold negative values.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodedDepth<T = f64> {
    pub width: usize,
    pub height: usize,
    pub values: Vec<T>,
}

/// Intermediate values of one encoder pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct EncodeTrace<T = f64> {
    pub input: Vec<T>,
    pub raw: Vec<T>,
    pub norm: T,
    pub embedding: Embedding<T>,
}

impl<T: Real> EncodeTrace<T> {
    /// Maps a gradient with respect to the embedding to one with respect to
    /// the unnormalized encoder output: `(I − e eᵀ) g / ‖z‖`.
    pub fn raw_gradient(&self, g: &[T]) -> Vec<T> {
        let e = &self.embedding.values;
        let along: T = e.iter().zip(g).map(|(&a, &b)| a * b).sum();
        e.iter().zip(g).map(|(&ei, &gi)| (gi - ei * along) / self.norm).collect()
    }
}

fn trace<T: Real>(input: Vec<T>, raw: Vec<T>) -> Result<EncodeTrace<T>> {
    let norm = l2_norm(&raw);
    let embedding = Embedding::normalize(&raw)?;
    Ok(EncodeTrace {
        input,
        raw,
        norm,
        embedding,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams<T = f64> {
    pub branch: Branch,
    pub encoder: LinearMap<T>,
    pub decoder: Option<LinearMap<T>>,
}

impl<T: Real> EncoderParams<T> {
    /// Random encoder; the layout branch also gets a small random decoder
    /// with zero bias.
    pub fn random(branch: Branch, seed: u64) -> Self {
        let mut rng = crate::seed::named_rng(seed, "encoder-init");
        let encoder = LinearMap::random(INPUT_DIM, EMBED_DIM, &mut rng);
        let decoder = (branch == Branch::Layout).then(|| {
            let mut d = LinearMap::random(EMBED_DIM, INPUT_DIM, &mut rng);
            d.weights.iter_mut().for_each(|w| *w *= T::lit(0.1));
            d.bias.iter_mut().for_each(|b| *b = T::zero());
            d
        });
        EncoderParams {
            branch,
            encoder,
            decoder,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let enc = &self.encoder;
        if enc.in_dim != INPUT_DIM || enc.out_dim != EMBED_DIM {
            return Err(Error::InvalidParams(format!(
                "encoder is {}->{}, expected {INPUT_DIM}->{EMBED_DIM}",
                enc.in_dim, enc.out_dim
            )));
        }
        if enc.weights.len() != enc.in_dim * enc.out_dim || enc.bias.len() != enc.out_dim {
            return Err(Error::InvalidParams("encoder storage does not match its dimensions".into()));
        }
        match (&self.decoder, self.branch) {
            (Some(d), Branch::Layout) => {
                if d.in_dim != EMBED_DIM || d.out_dim != INPUT_DIM {
                    return Err(Error::InvalidParams(format!(
                        "decoder is {}->{}, expected {EMBED_DIM}->{INPUT_DIM}",
                        d.in_dim, d.out_dim
                    )));
                }
                if d.weights.len() != d.in_dim * d.out_dim || d.bias.len() != d.out_dim {
                    return Err(Error::InvalidParams("decoder storage does not match its dimensions".into()));
                }
                if !d.is_finite() {
                    return Err(Error::InvalidParams("non-finite decoder weights".into()));
                }
            }
            (None, Branch::Query) => {}
            (Some(_), Branch::Query) => return Err(Error::InvalidParams("query branch must not carry a decoder".into())),
            (None, Branch::Layout) => return Err(Error::InvalidParams("layout branch is missing its decoder".into())),
        }
        if !enc.is_finite() {
            return Err(Error::InvalidParams("non-finite encoder weights".into()));
        }
        Ok(())
    }

    pub fn encode(&self, depth: &PanoDepth<T>) -> Result<Embedding<T>> {
        Ok(self.encode_input(preprocess(depth)?)?.embedding)
    }

    /// Encodes an already preprocessed input, keeping the intermediates.
    pub fn encode_input(&self, input: Vec<T>) -> Result<EncodeTrace<T>> {
        if input.len() != self.encoder.in_dim {
            return Err(Error::Dimension(format!(
                "encoder expects {} inputs, got {}",
                self.encoder.in_dim,
                input.len()
            )));
        }
        let raw = self.encoder.apply(&input);
        trace(input, raw)
    }

    /// [`EncoderParams::encode_input`] over several inputs, sweeping the
    /// weights once.
    pub fn encode_many(&self, inputs: Vec<Vec<T>>) -> Result<Vec<EncodeTrace<T>>> {
        if let Some(x) = inputs.iter().find(|x| x.len() != self.encoder.in_dim) {
            return Err(Error::Dimension(format!(
                "encoder expects {} inputs, got {}",
                self.encoder.in_dim,
                x.len()
            )));
        }
        let refs: Vec<&[T]> = inputs.iter().map(Vec::as_slice).collect();
        let raws = self.encoder.apply_many(&refs);
        inputs.into_iter().zip(raws).map(|(x, raw)| trace(x, raw)).collect()
    }

    pub fn decode(&self, e: &Embedding<T>) -> Result<DecodedDepth<T>> {
        let decoder = self
            .decoder
            .as_ref()
            .ok_or_else(|| Error::InvalidParams("query-branch params have no decoder".into()))?;
        if e.dim() != decoder.in_dim {
            return Err(Error::Dimension(format!(
                "decoder expects {} latent values, got {}",
                decoder.in_dim,
                e.dim()
            )));
        }
        Ok(DecodedDepth {
            width: EMBED_WIDTH,
            height: EMBED_HEIGHT,
            values: decoder.apply(&e.values),
        })
    }

    pub fn cast<U: Real>(&self) -> EncoderParams<U> {
        EncoderParams {
            branch: self.branch,
            encoder: self.encoder.cast(),
            decoder: self.decoder.as_ref().map(LinearMap::cast),
        }
    }
}
