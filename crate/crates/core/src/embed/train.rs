//! Two-stage training: the layout branch on log-ratio plus decode losses,
//! then the query branch against the frozen layout branch.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::render::{render_furnished_depth, EMBED_HEIGHT, EMBED_WIDTH};
use crate::scene::{extrude, place_furniture, FloorPlan, FurnishedScene, FurnitureLevel};
use crate::seed;

use super::loss;
use super::triplet::{sample_triplets, ChamferCache, PosePool, TripletBatch};
use super::{preprocess, Branch, EncodeTrace, EncoderParams, Embedding, LinearMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Fractions of the run after which the learning rate is multiplied by
    /// `decay`.
    pub milestones: Vec<f64>,
    pub decay: f64,
    pub n_neg: usize,
    /// Uniform base poses per scene; each gets a nearby companion.
    pub poses_per_scene: usize,
    pub clearance: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn layout_default() -> Self {
        TrainConfig {
            epochs: 20,
            lr: 1.0,
            batch_size: 4,
            milestones: vec![0.5, 0.75],
            decay: 0.1,
            n_neg: 20,
            poses_per_scene: 24,
            clearance: 0.3,
            seed: 0,
        }
    }

    pub fn query_default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 0.1,
            batch_size: 64,
            poses_per_scene: 12,
            ..Self::layout_default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParams(m.into()));
        if self.epochs == 0 || self.batch_size == 0 || self.poses_per_scene == 0 {
            return bad("epochs, batch size and poses per scene must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("learning rate must be positive and decay in (0, 1]");
        }
        if self.milestones.iter().any(|m| !(0.0..=1.0).contains(m)) {
            return bad("milestones are fractions of the run");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * self.epochs as f64).floor() as usize)
            .count();
        self.lr * self.decay.powi(passed as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryLoss {
    L2,
    LogRatioCross,
    L2LogRatioCross,
    L2KdLr,
}

impl QueryLoss {
    pub const ALL: [QueryLoss; 4] = [
        QueryLoss::L2,
        QueryLoss::LogRatioCross,
        QueryLoss::L2LogRatioCross,
        QueryLoss::L2KdLr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            QueryLoss::L2 => "l2",
            QueryLoss::LogRatioCross => "log_ratio_cross",
            QueryLoss::L2LogRatioCross => "l2+log_ratio_cross",
            QueryLoss::L2KdLr => "l2+kd_lr",
        }
    }

    fn uses_l2(self) -> bool {
        self != QueryLoss::LogRatioCross
    }

    fn uses_triplets(self) -> bool {
        self != QueryLoss::L2
    }
}

impl std::str::FromStr for QueryLoss {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        QueryLoss::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| Error::InvalidParams(format!("unknown query loss `{s}`")))
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport<T = f64> {
    pub params: EncoderParams<T>,
    pub epoch_losses: Vec<f64>,
}

/// Layout pool of one furnished scene plus the furnished render at every
/// pool pose.
#[derive(Debug, Clone)]
pub struct PairSet<T = f64> {
    pub level: FurnitureLevel,
    pub pool: PosePool<T>,
    pub queries: Vec<Vec<T>>,
}

impl<T: Real> PairSet<T> {
    pub fn build(scene: &FurnishedScene<T>, base: usize, seed: u64, clearance: T) -> Result<Self> {
        let pool = PosePool::sample_clear(scene, base, seed, clearance)?;
        let model = extrude(&scene.plan);
        let mut queries = Vec::with_capacity(pool.len());
        for &p in &pool.poses {
            let r = render_furnished_depth(&model, &scene.furniture, p, EMBED_WIDTH, EMBED_HEIGHT)?;
            queries.push(preprocess(&r)?);
        }
        Ok(PairSet {
            level: scene.level,
            pool,
            queries,
        })
    }
}

/// Pose pools for layout training and furnished pair sets for query
/// training, built from one list of plans.
#[derive(Debug, Clone)]
pub struct TrainingCorpus<T = f64> {
    pub pools: Vec<PosePool<T>>,
    pub pairs: Vec<PairSet<T>>,
}

impl<T: Real> TrainingCorpus<T> {
    pub fn layout(plans: &[FloorPlan<T>], config: &TrainConfig) -> Result<Self> {
        config.check()?;
        if plans.is_empty() {
            return Err(Error::Empty("training scene set".into()));
        }
        let pools = plans
            .par_iter()
            .enumerate()
            .map(|(i, plan)| {
                let scene = FurnishedScene::empty(plan.clone());
                let s = seed::sub_seed(config.seed, &format!("pool-{i}"));
                PosePool::sample_clear(&scene, config.poses_per_scene, s, T::lit(config.clearance))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingCorpus { pools, pairs: Vec::new() })
    }

    /// One pair set per plan and furniture level.
    pub fn query(plans: &[FloorPlan<T>], levels: &[FurnitureLevel], config: &TrainConfig) -> Result<Self> {
        config.check()?;
        if plans.is_empty() || levels.is_empty() {
            return Err(Error::Empty("training scene set".into()));
        }
        let jobs: Vec<(usize, FurnitureLevel)> = (0..plans.len())
            .flat_map(|i| levels.iter().map(move |&l| (i, l)))
            .collect();
        let pairs = jobs
            .par_iter()
            .map(|&(i, level)| {
                let fs = seed::sub_seed(config.seed, &format!("furniture-{i}"));
                let scene = place_furniture(&plans[i], level, fs)?;
                let ps = seed::sub_seed(config.seed, &format!("pairs-{i}-{}", level.name()));
                PairSet::build(&scene, config.poses_per_scene, ps, T::lit(config.clearance))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainingCorpus { pools: Vec::new(), pairs })
    }
}

fn check_divergence(losses: &[f64]) -> Result<()> {
    let last = *losses.last().expect("at least one epoch");
    if !last.is_finite() {
        return Err(Error::Training(format!("non-finite loss at epoch {}", losses.len())));
    }
    if losses.len() > 3 && losses[losses.len() - 3..].iter().all(|&l| l > 10.0 * losses[0]) {
        return Err(Error::Training(format!(
            "loss exceeded 10x its initial value {} for 3 epochs",
            losses[0]
        )));
    }
    Ok(())
}

fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seed::named_rng(seed, &format!("epoch-{epoch}")));
    order
}

struct Grads<T> {
    encoder: LinearMap<T>,
    decoder: Option<LinearMap<T>>,
}

impl<T: Real> Grads<T> {
    fn zeros_like(p: &EncoderParams<T>) -> Self {
        Grads {
            encoder: LinearMap::zeros(p.encoder.in_dim, p.encoder.out_dim),
            decoder: p.decoder.as_ref().map(|d| LinearMap::zeros(d.in_dim, d.out_dim)),
        }
    }

    fn apply(&self, params: &mut EncoderParams<T>, lr: T) {
        params.encoder.descend(&self.encoder, lr);
        if let (Some(d), Some(g)) = (params.decoder.as_mut(), self.decoder.as_ref()) {
            d.descend(g, lr);
        }
    }
}

/// Loss of one anchor batch; embedding gradients are scaled by `weight`
/// and backpropagated into `grads`.
fn layout_anchor_step<T: Real>(
    params: &EncoderParams<T>,
    pool: &PosePool<T>,
    batch: &TripletBatch,
    weight: T,
    grads: &mut Grads<T>,
) -> Result<f64> {
    let mut slots = vec![batch.anchor];
    slots.extend(&batch.neighbours);
    let traces: Vec<EncodeTrace<T>> = params.encode_many(slots.iter().map(|&k| pool.inputs[k].clone()).collect())?;
    let dim = traces[0].embedding.dim();
    let mut ge = vec![vec![T::zero(); dim]; slots.len()];

    let pair_count = T::lit(batch.pairs().count() as f64);
    let mut ratio_total = 0.0;
    for (i, j) in batch.pairs() {
        let g = loss::log_ratio(
            &traces[0].embedding.values,
            &traces[i + 1].embedding.values,
            &traces[j + 1].embedding.values,
            T::lit(batch.gt[i]),
            T::lit(batch.gt[j]),
        );
        let g = match g {
            Ok(g) => g,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        ratio_total += g.value.as_f64();
        for (k, part) in [(0, &g.anchor), (i + 1, &g.first), (j + 1, &g.second)] {
            for (a, &b) in ge[k].iter_mut().zip(part.iter()) {
                *a += b / pair_count;
            }
        }
    }

    let decoder = params.decoder.as_ref().expect("layout branch has a decoder");
    let n_img = T::lit(slots.len() as f64);
    let latents: Vec<&[T]> = traces.iter().map(|t| t.embedding.values.as_slice()).collect();
    let preds = decoder.apply_many(&latents);
    let mut decode_total = 0.0;
    let mut gps = Vec::with_capacity(slots.len());
    for (&k, pred) in slots.iter().zip(&preds) {
        let (v, gp) = loss::decode(pred, &pool.targets[k])?;
        decode_total += v.as_f64();
        gps.push(gp.into_iter().map(|g| g / n_img).collect::<Vec<T>>());
    }
    let gp_refs: Vec<&[T]> = gps.iter().map(Vec::as_slice).collect();
    for (g, back) in ge.iter_mut().zip(decoder.apply_transpose_many(&gp_refs)) {
        for (a, b) in g.iter_mut().zip(back) {
            *a += b;
        }
    }
    let weighted: Vec<Vec<T>> = gps.iter().map(|gp| gp.iter().map(|&g| g * weight).collect()).collect();
    let weighted_refs: Vec<&[T]> = weighted.iter().map(Vec::as_slice).collect();
    grads
        .decoder
        .as_mut()
        .expect("decoder gradient")
        .accumulate_outer_many(&weighted_refs, &latents);

    let raw_grads: Vec<Vec<T>> = traces
        .iter()
        .zip(&ge)
        .map(|(trace, g)| trace.raw_gradient(&g.iter().map(|&v| v * weight).collect::<Vec<T>>()))
        .collect();
    let raw_refs: Vec<&[T]> = raw_grads.iter().map(Vec::as_slice).collect();
    let inputs: Vec<&[T]> = traces.iter().map(|t| t.input.as_slice()).collect();
    grads.encoder.accumulate_outer_many(&raw_refs, &inputs);
    Ok(ratio_total / pair_count.as_f64() + decode_total / slots.len() as f64)
}

fn anchor_items<T: Real>(pools: &[PosePool<T>]) -> Vec<(usize, usize)> {
    pools
        .iter()
        .enumerate()
        .flat_map(|(s, p)| (0..p.len()).map(move |a| (s, a)))
        .collect()
}

/// Trains the layout branch with the log-ratio loss over all ordered
/// neighbour pairs plus the L1 decode loss on every image in the batch.
pub fn train_layout_branch<T: Real>(pools: &[PosePool<T>], config: &TrainConfig) -> Result<TrainReport<T>> {
    config.check()?;
    let items = anchor_items(pools);
    if items.is_empty() {
        return Err(Error::Empty("training pose pools".into()));
    }
    let mut params = EncoderParams::<T>::random(Branch::Layout, seed::sub_seed(config.seed, "layout-init"));
    init_decoder_bias(&mut params, pools);
    let mut caches = vec![ChamferCache::default(); pools.len()];
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = T::lit(config.lr_at(epoch));
        let order = epoch_order(items.len(), config.seed, epoch);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let mut grads = Grads::zeros_like(&params);
            let mut batches = Vec::new();
            for &it in chunk {
                let (s, a) = items[it];
                let ts = seed::sub_seed(config.seed, &format!("triplet-{epoch}-{s}-{a}"));
                if let Some(b) = sample_triplets(&pools[s], a, config.n_neg, ts, &mut caches[s])? {
                    batches.push((s, b));
                }
            }
            if batches.is_empty() {
                continue;
            }
            let weight = T::one() / T::lit(batches.len() as f64);
            for (s, b) in &batches {
                total += layout_anchor_step(&params, &pools[*s], b, weight, &mut grads)?;
                count += 1;
            }
            grads.apply(&mut params, lr);
        }
        if count == 0 {
            return Err(Error::Training("no anchor had a valid positive and enough negatives".into()));
        }
        losses.push(total / count as f64);
        log::info!("layout epoch {epoch}: loss {:.6}", losses[epoch]);
        check_divergence(&losses)?;
    }
    Ok(TrainReport {
        params,
        epoch_losses: losses,
    })
}

/// Starts the decoder from the mean training depth image.
fn init_decoder_bias<T: Real>(params: &mut EncoderParams<T>, pools: &[PosePool<T>]) {
    let Some(dec) = params.decoder.as_mut() else { return };
    let n: usize = pools.iter().map(PosePool::len).sum();
    if n == 0 {
        return;
    }
    let mut mean = vec![T::zero(); dec.out_dim];
    for t in pools.iter().flat_map(|p| &p.targets) {
        for (m, &v) in mean.iter_mut().zip(t) {
            *m += v;
        }
    }
    let n = T::lit(n as f64);
    dec.bias = mean.into_iter().map(|m| m / n).collect();
}

fn teacher_embeddings<T: Real>(layout: &EncoderParams<T>, set: &PairSet<T>) -> Result<Vec<Embedding<T>>> {
    set.pool
        .inputs
        .iter()
        .map(|x| Ok(layout.encode_input(x.clone())?.embedding))
        .collect()
}

/// Trains a query-branch encoder on furnished renders so that its
/// embeddings land on the frozen layout embeddings of the same poses.
pub fn train_query_branch<T: Real>(
    sets: &[PairSet<T>],
    layout: &EncoderParams<T>,
    loss_kind: QueryLoss,
    config: &TrainConfig,
) -> Result<TrainReport<T>> {
    config.check()?;
    layout.validate()?;
    if layout.branch != Branch::Layout {
        return Err(Error::InvalidParams("query training needs layout-branch params as teacher".into()));
    }
    let teachers: Vec<Vec<Embedding<T>>> = sets.iter().map(|s| teacher_embeddings(layout, s)).collect::<Result<_>>()?;
    let items: Vec<(usize, usize)> = sets
        .iter()
        .enumerate()
        .flat_map(|(s, p)| (0..p.pool.len()).map(move |a| (s, a)))
        .collect();
    if items.is_empty() {
        return Err(Error::Empty("training pairs".into()));
    }
    let mut params = EncoderParams::<T>::random(Branch::Query, seed::sub_seed(config.seed, "query-init"));
    let mut caches = vec![ChamferCache::default(); sets.len()];
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let lr = T::lit(config.lr_at(epoch));
        let order = epoch_order(items.len(), seed::sub_seed(config.seed, "query"), epoch);
        let (mut total, mut count) = (0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            let mut grads = Grads::zeros_like(&params);
            let mut steps = Vec::new();
            for &it in chunk {
                let (s, a) = items[it];
                let trace = params.encode_input(sets[s].queries[a].clone())?;
                let f = &trace.embedding.values;
                let g_p = &teachers[s][a].values;
                let mut value = 0.0;
                let mut ge = vec![T::zero(); f.len()];
                let mut used = false;
                if loss_kind.uses_l2() {
                    let (v, g) = loss::l2(f, g_p);
                    value += v.as_f64();
                    ge.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                    used = true;
                }
                if loss_kind.uses_triplets() {
                    let ts = seed::sub_seed(config.seed, &format!("query-triplet-{epoch}-{s}-{a}"));
                    if let Some(b) = sample_triplets(&sets[s].pool, a, config.n_neg, ts, &mut caches[s])? {
                        let pairs: Vec<(usize, usize)> = b.pairs().collect();
                        let scale = T::one() / T::lit(pairs.len() as f64);
                        let mut sub = 0.0;
                        for (i, j) in pairs {
                            let (gi, gj) = (&teachers[s][b.neighbours[i]].values, &teachers[s][b.neighbours[j]].values);
                            let r = match loss_kind {
                                QueryLoss::L2KdLr => loss::kd_lr(f, g_p, gi, gj),
                                _ => loss::log_ratio_cross(f, gi, gj, T::lit(b.gt[i]), T::lit(b.gt[j])),
                            };
                            let (v, g) = match r {
                                Ok(r) => r,
                                Err(Error::Degenerate(_)) => continue,
                                Err(e) => return Err(e),
                            };
                            sub += v.as_f64();
                            ge.iter_mut().zip(g).for_each(|(a, b)| *a += b * scale);
                        }
                        value += sub * scale.as_f64();
                        used = true;
                    }
                }
                if used {
                    steps.push((trace, ge));
                    total += value;
                    count += 1;
                }
            }
            if steps.is_empty() {
                continue;
            }
            let weight = T::one() / T::lit(steps.len() as f64);
            for (trace, ge) in &steps {
                let g: Vec<T> = ge.iter().map(|&v| v * weight).collect();
                grads.encoder.accumulate_outer(&trace.raw_gradient(&g), &trace.input);
            }
            grads.apply(&mut params, lr);
        }
        if count == 0 {
            return Err(Error::Training("no usable query training pairs".into()));
        }
        losses.push(total / count as f64);
        log::info!("query epoch {epoch}: loss {:.6}", losses[epoch]);
        check_divergence(&losses)?;
    }
    Ok(TrainReport {
        params,
        epoch_losses: losses,
    })
}

/// Mean `‖f_p − g_p‖` over every pair of the given sets.
pub fn mean_l2<T: Real>(query: &EncoderParams<T>, layout: &EncoderParams<T>, sets: &[PairSet<T>]) -> Result<f64> {
    let (mut total, mut n) = (0.0, 0usize);
    for set in sets {
        for (q, l) in set.queries.iter().zip(&set.pool.inputs) {
            let f = query.encode_input(q.clone())?.embedding;
            let g = layout.encode_input(l.clone())?.embedding;
            total += f.distance(&g).as_f64();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Empty("pair sets".into()));
    }
    Ok(total / n as f64)
}
