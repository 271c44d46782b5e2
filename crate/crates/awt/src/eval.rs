//! Quality analysis: distribution distance (MMD), probe classifiers over
//! raw sequences and latents, paired ground-truth error, the naive
//! resampling baseline, ablation arms, and the two-stream recognition
//! experiment.
//!
//! Every function here works on *standardized* datasets (the same space the
//! translator trains in) and is deterministic given its seed.

use crate::data::{resample, Dataset, Domain, PairingManifest, Sample, Seq};
use crate::model::{encode_batch, DurationPolicy, ModelConfig, ModelParams};
use crate::numerics::{
    adam_step, affine, affine_backward, conv1d, conv1d_backward, leaky_relu, leaky_relu_backward,
    softmax_probs, softmax_xent, Activation, AdamConfig, AffineParams, ConvParams, ConvSpec,
    ParamBlock, Tensor3,
};
use crate::training::{pad_and_mask, train, Batch, TrainConfig};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

/// Fixed length sequences are resampled to before the MMD kernel.
pub const MMD_RESAMPLE_LEN: usize = 64;

/// Batch size used by every probe-style training loop here.
const EVAL_BATCH: usize = 64;

/// Learning rate for probe-style trainings.
const PROBE_LR: f64 = 1e-3;

/// Biased squared maximum mean discrepancy between two sets of sequences.
///
/// Each sequence is linearly resampled to [`MMD_RESAMPLE_LEN`] steps and
/// flattened; the RBF bandwidth is the median pairwise distance over the
/// pooled set (median heuristic). The biased estimator keeps the result
/// non-negative and zero for identical multisets.
pub fn mmd_score(set_a: &[Seq], set_b: &[Seq]) -> Result<f64> {
    if set_a.is_empty() || set_b.is_empty() {
        return Err(Error::Data("mmd needs non-empty sets".into()));
    }
    let c = set_a[0].c;
    if set_a.iter().chain(set_b.iter()).any(|s| s.c != c) {
        return Err(Error::Shape("mmd sets mix channel counts".into()));
    }
    let flatten = |s: &Seq| -> Vec<f64> { resample(s, MMD_RESAMPLE_LEN).values };
    let xs: Vec<Vec<f64>> = set_a.iter().map(flatten).collect();
    let ys: Vec<Vec<f64>> = set_b.iter().map(flatten).collect();

    let dist2 = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };
    // Median heuristic over all pooled pairs (i < j).
    let pooled: Vec<&Vec<f64>> = xs.iter().chain(ys.iter()).collect();
    let mut dists = Vec::with_capacity(pooled.len() * (pooled.len() - 1) / 2);
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            dists.push(dist2(pooled[i], pooled[j]).sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if dists.is_empty() { 0.0 } else { dists[dists.len() / 2] };
    // All-identical pools give kernel value 1 everywhere and MMD 0; any
    // positive bandwidth works, so clamp to keep the division defined.
    let sigma2 = (median * median).max(1e-12);

    let kernel = |a: &[f64], b: &[f64]| (-dist2(a, b) / (2.0 * sigma2)).exp();
    let mean_kernel = |p: &[Vec<f64>], q: &[Vec<f64>]| -> f64 {
        let mut acc = 0.0;
        for a in p {
            for b in q {
                acc += kernel(a, b);
            }
        }
        acc / (p.len() * q.len()) as f64
    };
    let mmd2 = mean_kernel(&xs, &xs) + mean_kernel(&ys, &ys) - 2.0 * mean_kernel(&xs, &ys);
    Ok(mmd2.max(0.0))
}

/// The translation a signal-processing baseline would do: linear resampling
/// to the rate-scaled length plus channel truncation (6→3) or tiling (3→6).
pub fn naive_translate_seq(seq: &Seq, from: Domain, rate_from: f64, rate_to: f64) -> Seq {
    let target_len = ((seq.l as f64 * rate_to / rate_from).round() as usize).max(2);
    let scaled = resample(seq, target_len);
    let c_to = from.other().channels();
    let mut out = Seq::zeros(c_to, target_len);
    for ci in 0..c_to {
        let src = scaled.channel(ci % scaled.c);
        out.channel_mut(ci).copy_from_slice(src);
    }
    out
}

/// Applies [`naive_translate_seq`] to a whole dataset.
pub fn naive_translate_dataset(ds: &Dataset, rate_to: f64) -> Result<Dataset> {
    let to = ds.domain.other();
    let samples = ds
        .samples
        .iter()
        .map(|s| Sample {
            id: format!("{}.naive", s.id),
            domain: to,
            label: s.label,
            class_name: s.class_name.clone(),
            rate_hz: rate_to,
            seq: naive_translate_seq(&s.seq, ds.domain, s.rate_hz, rate_to),
        })
        .collect();
    Dataset::from_samples(samples)
}

/// Translates every sample of a standardized dataset through the model
/// (standardized output space), preserving order and labels.
pub fn translate_dataset(
    params: &ModelParams,
    ds: &Dataset,
    policy: DurationPolicy,
) -> Result<Dataset> {
    let to = ds.domain.other();
    let tag = match ds.domain {
        Domain::Inertia => "i2t",
        Domain::Trajectory => "t2i",
    };
    let samples = ds
        .samples
        .iter()
        .map(|s| {
            Ok(Sample {
                id: format!("{}.{tag}", s.id),
                domain: to,
                label: s.label,
                class_name: s.class_name.clone(),
                rate_hz: params.rate(to),
                seq: params.translate_seq(&s.seq, ds.domain, policy)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_samples(samples)
}

/// Encodes a whole standardized dataset to latent rows `(N, latent_dim)`.
pub fn dataset_latents(params: &ModelParams, ds: &Dataset) -> Result<(Vec<f64>, Vec<usize>)> {
    let d = params.config.latent_dim;
    let mut latents = Vec::with_capacity(ds.len() * d);
    let mut labels = Vec::with_capacity(ds.len());
    let idxs: Vec<usize> = (0..ds.len()).collect();
    for chunk in idxs.chunks(EVAL_BATCH) {
        let batch = pad_and_mask(ds, chunk)?;
        let (lat, _) = encode_batch(params.encoder(ds.domain), &batch.x, &batch.lengths)?;
        latents.extend_from_slice(&lat);
        labels.extend_from_slice(&batch.labels);
    }
    Ok((latents, labels))
}

/// Shared convolutional feature trunk of the probes: three stride-2
/// convolutions (kernel 5, widths 32/64/64) with leaky-ReLU and the same
/// validity masking as the main encoder, then a masked global time-average
/// pool to a 64-dimensional feature.
#[derive(Debug, Clone)]
pub struct ProbeTrunk {
    conv1: ConvParams,
    conv2: ConvParams,
    conv3: ConvParams,
}

/// Pooled feature width delivered by [`ProbeTrunk`].
pub const TRUNK_FEATURES: usize = 64;

pub struct TrunkCache {
    x: Tensor3,
    a1: Tensor3,
    h1: Tensor3,
    a2: Tensor3,
    h2: Tensor3,
    a3: Tensor3,
    lens: [Vec<usize>; 4],
}

impl ProbeTrunk {
    fn init(name: &str, channels: usize, rng: &mut impl rand::Rng) -> Self {
        let spec = |c_in, c_out| ConvSpec { c_in, c_out, kernel: 5, stride: 2, pad: 2 };
        ProbeTrunk {
            conv1: ConvParams::init(&format!("{name}.conv1"), spec(channels, 32), rng),
            conv2: ConvParams::init(&format!("{name}.conv2"), spec(32, 64), rng),
            conv3: ConvParams::init(&format!("{name}.conv3"), spec(64, TRUNK_FEATURES), rng),
        }
    }

    fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![
            &mut self.conv1.w, &mut self.conv1.b, &mut self.conv2.w, &mut self.conv2.b,
            &mut self.conv3.w, &mut self.conv3.b,
        ]
    }

    /// Forward pass to pooled features `(B, TRUNK_FEATURES)`.
    fn forward(&self, x: &Tensor3, lengths: &[usize]) -> Result<(Vec<f64>, TrunkCache)> {
        let lens0 = lengths.to_vec();
        let lens1: Vec<usize> = lens0.iter().map(|&l| l.div_ceil(2)).collect();
        let lens2: Vec<usize> = lens1.iter().map(|&l| l.div_ceil(2)).collect();
        let lens3: Vec<usize> = lens2.iter().map(|&l| l.div_ceil(2)).collect();
        let mask = |t: &mut Tensor3, lens: &[usize]| {
            for bi in 0..t.b {
                for ci in 0..t.c {
                    let base = (bi * t.c + ci) * t.l;
                    t.data[base + lens[bi].min(t.l)..base + t.l]
                        .iter_mut()
                        .for_each(|v| *v = 0.0);
                }
            }
        };
        let a1 = conv1d(x, &self.conv1)?;
        let mut h1 = leaky_relu(&a1);
        mask(&mut h1, &lens1);
        let a2 = conv1d(&h1, &self.conv2)?;
        let mut h2 = leaky_relu(&a2);
        mask(&mut h2, &lens2);
        let a3 = conv1d(&h2, &self.conv3)?;
        let mut h3 = leaky_relu(&a3);
        mask(&mut h3, &lens3);

        // Masked global average over valid feature frames.
        let mut pooled = vec![0.0; x.b * TRUNK_FEATURES];
        for bi in 0..x.b {
            let n = lens3[bi] as f64;
            for j in 0..TRUNK_FEATURES {
                let mut acc = 0.0;
                for t in 0..lens3[bi] {
                    acc += h3.at(bi, j, t);
                }
                pooled[bi * TRUNK_FEATURES + j] = acc / n;
            }
        }
        Ok((
            pooled,
            TrunkCache { x: x.clone(), a1, h1, a2, h2, a3, lens: [lens0, lens1, lens2, lens3] },
        ))
    }

    /// Backward from pooled-feature gradients, accumulating into blocks.
    fn backward(&mut self, cache: &TrunkCache, grad_pooled: &[f64]) {
        let tf = cache.a3.l;
        let mut g_h3 = Tensor3::zeros(cache.x.b, TRUNK_FEATURES, tf);
        for bi in 0..cache.x.b {
            let n = cache.lens[3][bi] as f64;
            for j in 0..TRUNK_FEATURES {
                let g = grad_pooled[bi * TRUNK_FEATURES + j] / n;
                for t in 0..cache.lens[3][bi] {
                    *g_h3.at_mut(bi, j, t) = g;
                }
            }
        }
        let g_a3 = leaky_relu_backward(&cache.a3, &g_h3);
        let g_h2 = conv1d_backward(&cache.h2, &mut self.conv3, &g_a3);
        let g_a2 = leaky_relu_backward(&cache.a2, &g_h2);
        let g_h1 = conv1d_backward(&cache.h1, &mut self.conv2, &g_a2);
        let g_a1 = leaky_relu_backward(&cache.a1, &g_h1);
        let _ = conv1d_backward(&cache.x, &mut self.conv1, &g_a1);
    }
}

/// Small convolutional sequence classifier used as the measuring instrument
/// for translation quality; fixed architecture so accuracy differences are
/// attributable to the data, not probe capacity.
#[derive(Debug, Clone)]
pub struct ProbeClassifier {
    pub domain: Domain,
    pub class_count: usize,
    trunk: ProbeTrunk,
    head: AffineParams,
}

impl ProbeClassifier {
    fn init(domain: Domain, class_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ProbeClassifier {
            domain,
            class_count,
            trunk: ProbeTrunk::init("probe.trunk", domain.channels(), &mut rng),
            head: AffineParams::init(
                "probe.head",
                TRUNK_FEATURES,
                class_count,
                Activation::Linear,
                &mut rng,
            ),
        }
    }

    fn logits(&self, batch: &Batch) -> Result<(Vec<f64>, TrunkCache, crate::numerics::AffineCache)> {
        let (pooled, tcache) = self.trunk.forward(&batch.x, &batch.lengths)?;
        let (logits, acache) = affine(&pooled, batch.x.b, &self.head)?;
        Ok((logits, tcache, acache))
    }

    /// Hard predictions for a batch.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<usize>> {
        let (logits, _, _) = self.logits(batch)?;
        let probs = softmax_probs(&logits, batch.x.b, self.class_count);
        Ok(argmax_rows(&probs, batch.x.b, self.class_count))
    }
}

fn argmax_rows(rows: &[f64], n: usize, k: usize) -> Vec<usize> {
    (0..n)
        .map(|i| {
            let row = &rows[i * k..(i + 1) * k];
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0
        })
        .collect()
}

/// Trains a probe on a standardized dataset with Adam; deterministic per
/// seed.
pub fn train_probe(ds: &Dataset, epochs: usize, seed: u64) -> Result<ProbeClassifier> {
    train_probe_with_k(ds, ds.class_count(), epochs, seed)
}

/// Accuracy, mean cross-entropy, and per-class accuracy of a probe over a
/// standardized dataset (order-independent).
pub fn probe_eval(probe: &ProbeClassifier, ds: &Dataset) -> Result<(f64, f64, Vec<f64>)> {
    if ds.domain != probe.domain {
        return Err(Error::Data(format!(
            "probe reads {} data, dataset is {}",
            probe.domain.name(),
            ds.domain.name()
        )));
    }
    let k = probe.class_count;
    let mut correct = vec![0usize; k];
    let mut totals = vec![0usize; k];
    let mut loss_sum = 0.0;
    let idxs: Vec<usize> = (0..ds.len()).collect();
    for chunk in idxs.chunks(EVAL_BATCH) {
        let batch = pad_and_mask(ds, chunk)?;
        let (logits, _, _) = probe.logits(&batch)?;
        let (loss, _) = softmax_xent(&logits, batch.x.b, k, &batch.labels)?;
        loss_sum += loss * batch.x.b as f64;
        let preds = argmax_rows(&softmax_probs(&logits, batch.x.b, k), batch.x.b, k);
        for (p, &y) in preds.iter().zip(batch.labels.iter()) {
            totals[y] += 1;
            if *p == y {
                correct[y] += 1;
            }
        }
    }
    let n: usize = totals.iter().sum();
    let acc = correct.iter().sum::<usize>() as f64 / n as f64;
    let per_class = correct
        .iter()
        .zip(totals.iter())
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    Ok((acc, loss_sum / n as f64, per_class))
}

/// Outcome of probing translated samples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslatedEval {
    pub accuracy: f64,
    pub mean_loss: f64,
    pub per_class: Vec<f64>,
    /// Mean absolute error against the true paired counterpart (resampled
    /// to the counterpart's length, standardized space); present only when
    /// a pairing manifest was supplied.
    pub paired_l1: Option<f64>,
}

/// Translates a standardized source test set (rate-scaled), scores it with
/// the target-domain probe, and optionally measures error against the true
/// paired counterparts.
pub fn eval_translated(
    probe: &ProbeClassifier,
    params: &ModelParams,
    source_test: &Dataset,
    paired: Option<(&PairingManifest, &Dataset)>,
) -> Result<TranslatedEval> {
    if probe.domain != source_test.domain.other() {
        return Err(Error::Data(format!(
            "probe domain {} cannot score translations from {}",
            probe.domain.name(),
            source_test.domain.name()
        )));
    }
    let translated = translate_dataset(params, source_test, DurationPolicy::RateScaled)?;
    let (accuracy, mean_loss, per_class) = probe_eval(probe, &translated)?;

    let paired_l1 = match paired {
        None => None,
        Some((manifest, target_ds)) => {
            let by_id: HashMap<&str, usize> = target_ds
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| (s.id.as_str(), i))
                .collect();
            let mut total = 0.0;
            let mut count = 0usize;
            for (src, tr) in source_test.samples.iter().zip(translated.samples.iter()) {
                let counterpart_id = match source_test.domain {
                    Domain::Trajectory => manifest.inertia_for(&src.id),
                    Domain::Inertia => manifest.trajectory_for(&src.id),
                };
                let Some(cid) = counterpart_id else { continue };
                let Some(&ti) = by_id.get(cid) else { continue };
                let truth = &target_ds.samples[ti].seq;
                let aligned = resample(&tr.seq, truth.l);
                let n = (truth.c * truth.l) as f64;
                let err: f64 = aligned
                    .values
                    .iter()
                    .zip(truth.values.iter())
                    .map(|(a, b)| (a - b).abs())
                    .sum();
                total += err / n;
                count += 1;
            }
            if count == 0 { None } else { Some(total / count as f64) }
        }
    };
    Ok(TranslatedEval { accuracy, mean_loss, per_class, paired_l1 })
}

/// Latent-space probe results: what a qualitative embedding scatter plot
/// would show, reduced to assertable numbers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentProbes {
    /// 5-fold accuracy of one affine softmax over pooled latents of both
    /// domains.
    pub class_probe_acc: f64,
    /// Same probe restricted to each single domain.
    pub class_probe_acc_inertia: f64,
    pub class_probe_acc_trajectory: f64,
    /// 5-fold accuracy of an affine probe told to separate the domains;
    /// 0.5 means aligned latents.
    pub domain_probe_acc: f64,
    /// Trajectory latents classified by their nearest inertial class
    /// centroid — the cross-domain alignment measure.
    pub centroid_acc: f64,
}

/// K-fold cross-validated accuracy of a single affine-softmax probe over
/// fixed feature rows.
fn affine_probe_cv(
    rows: &[f64],
    dim: usize,
    labels: &[usize],
    class_count: usize,
    folds: usize,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    let n = labels.len();
    if n < folds {
        return Err(Error::Data(format!("{n} rows cannot form {folds} folds")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let opt = AdamConfig::with_lr(1e-2);
    let mut correct = 0usize;
    for fold in 0..folds {
        let lo = fold * n / folds;
        let hi = (fold + 1) * n / folds;
        let held: &[usize] = &order[lo..hi];
        let used: Vec<usize> = order[..lo].iter().chain(order[hi..].iter()).copied().collect();

        let gather = |idxs: &[usize]| -> (Vec<f64>, Vec<usize>) {
            let mut xs = Vec::with_capacity(idxs.len() * dim);
            let mut ys = Vec::with_capacity(idxs.len());
            for &i in idxs {
                xs.extend_from_slice(&rows[i * dim..(i + 1) * dim]);
                ys.push(labels[i]);
            }
            (xs, ys)
        };
        let (train_x, train_y) = gather(&used);
        let (held_x, held_y) = gather(held);

        let mut fold_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        fold_rng.set_stream(fold as u64);
        let mut probe = AffineParams::init("latent-probe", dim, class_count, Activation::Linear, &mut fold_rng);
        // Full-batch Adam: the problem is tiny.
        for _ in 0..epochs {
            let (logits, cache) = affine(&train_x, train_y.len(), &probe)?;
            let (_, grad) = softmax_xent(&logits, train_y.len(), class_count, &train_y)?;
            let _ = affine_backward(&mut probe, &cache, &grad);
            adam_step(probe.blocks_mut(), &opt);
        }
        let (logits, _) = affine(&held_x, held_y.len(), &probe)?;
        let preds = argmax_rows(&logits, held_y.len(), class_count);
        correct += preds.iter().zip(held_y.iter()).filter(|(p, y)| p == y).count();
    }
    Ok(correct as f64 / n as f64)
}

/// Nearest-centroid transfer: class centroids from one latent set classify
/// the other set's latents.
fn centroid_accuracy(
    ref_rows: &[f64],
    ref_labels: &[usize],
    query_rows: &[f64],
    query_labels: &[usize],
    dim: usize,
    class_count: usize,
) -> f64 {
    let mut centroids = vec![0.0; class_count * dim];
    let mut counts = vec![0usize; class_count];
    for (i, &y) in ref_labels.iter().enumerate() {
        counts[y] += 1;
        for j in 0..dim {
            centroids[y * dim + j] += ref_rows[i * dim + j];
        }
    }
    for y in 0..class_count {
        if counts[y] > 0 {
            let n = counts[y] as f64;
            centroids[y * dim..(y + 1) * dim].iter_mut().for_each(|v| *v /= n);
        }
    }
    let mut correct = 0usize;
    for (i, &y) in query_labels.iter().enumerate() {
        let q = &query_rows[i * dim..(i + 1) * dim];
        let mut best = (f64::INFINITY, 0usize);
        for (k, cent) in centroids.chunks(dim).enumerate() {
            if counts[k] == 0 {
                continue;
            }
            let d: f64 = q.iter().zip(cent).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        if best.1 == y {
            correct += 1;
        }
    }
    correct as f64 / query_labels.len().max(1) as f64
}

/// Probes the latent space of a trained model over standardized test sets.
pub fn latent_probes(
    params: &ModelParams,
    test_i: &Dataset,
    test_t: &Dataset,
    seed: u64,
) -> Result<LatentProbes> {
    let d = params.config.latent_dim;
    let k = params.config.class_count;
    let (lat_i, lab_i) = dataset_latents(params, test_i)?;
    let (lat_t, lab_t) = dataset_latents(params, test_t)?;

    let mut pooled = lat_i.clone();
    pooled.extend_from_slice(&lat_t);
    let mut pooled_labels = lab_i.clone();
    pooled_labels.extend_from_slice(&lab_t);
    let domain_labels: Vec<usize> = std::iter::repeat_n(0usize, lab_i.len())
        .chain(std::iter::repeat_n(1usize, lab_t.len()))
        .collect();

    const FOLDS: usize = 5;
    const EPOCHS: usize = 300;
    Ok(LatentProbes {
        class_probe_acc: affine_probe_cv(&pooled, d, &pooled_labels, k, FOLDS, EPOCHS, seed)?,
        class_probe_acc_inertia: affine_probe_cv(&lat_i, d, &lab_i, k, FOLDS, EPOCHS, seed ^ 1)?,
        class_probe_acc_trajectory: affine_probe_cv(&lat_t, d, &lab_t, k, FOLDS, EPOCHS, seed ^ 2)?,
        domain_probe_acc: affine_probe_cv(&pooled, d, &domain_labels, 2, FOLDS, EPOCHS, seed ^ 3)?,
        centroid_acc: centroid_accuracy(&lat_i, &lab_i, &lat_t, &lab_t, d, k),
    })
}

/// Two-trunk recognition model: one trunk per domain, pooled features
/// concatenated into a single affine softmax.
struct TwoStreamNet {
    trunk_a: ProbeTrunk,
    trunk_b: ProbeTrunk,
    head: AffineParams,
    class_count: usize,
}

impl TwoStreamNet {
    fn init(dom_a: Domain, class_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TwoStreamNet {
            trunk_a: ProbeTrunk::init("two.trunk_a", dom_a.channels(), &mut rng),
            trunk_b: ProbeTrunk::init("two.trunk_b", dom_a.other().channels(), &mut rng),
            head: AffineParams::init(
                "two.head",
                2 * TRUNK_FEATURES,
                class_count,
                Activation::Linear,
                &mut rng,
            ),
            class_count,
        }
    }

    fn forward(
        &self,
        batch_a: &Batch,
        batch_b: &Batch,
    ) -> Result<(Vec<f64>, TrunkCache, TrunkCache, crate::numerics::AffineCache)> {
        let bsz = batch_a.x.b;
        let (pa, ca) = self.trunk_a.forward(&batch_a.x, &batch_a.lengths)?;
        let (pb, cb) = self.trunk_b.forward(&batch_b.x, &batch_b.lengths)?;
        let mut fused = vec![0.0; bsz * 2 * TRUNK_FEATURES];
        for bi in 0..bsz {
            let dst = bi * 2 * TRUNK_FEATURES;
            fused[dst..dst + TRUNK_FEATURES]
                .copy_from_slice(&pa[bi * TRUNK_FEATURES..(bi + 1) * TRUNK_FEATURES]);
            fused[dst + TRUNK_FEATURES..dst + 2 * TRUNK_FEATURES]
                .copy_from_slice(&pb[bi * TRUNK_FEATURES..(bi + 1) * TRUNK_FEATURES]);
        }
        let (logits, acache) = affine(&fused, bsz, &self.head)?;
        Ok((logits, ca, cb, acache))
    }

    fn train_step(&mut self, batch_a: &Batch, batch_b: &Batch, opt: &AdamConfig) -> Result<f64> {
        let bsz = batch_a.x.b;
        let (logits, ca, cb, acache) = self.forward(batch_a, batch_b)?;
        let (loss, grad_logits) = softmax_xent(&logits, bsz, self.class_count, &batch_a.labels)?;
        let grad_fused = affine_backward(&mut self.head, &acache, &grad_logits);
        let mut ga = vec![0.0; bsz * TRUNK_FEATURES];
        let mut gb = vec![0.0; bsz * TRUNK_FEATURES];
        for bi in 0..bsz {
            let src = bi * 2 * TRUNK_FEATURES;
            ga[bi * TRUNK_FEATURES..(bi + 1) * TRUNK_FEATURES]
                .copy_from_slice(&grad_fused[src..src + TRUNK_FEATURES]);
            gb[bi * TRUNK_FEATURES..(bi + 1) * TRUNK_FEATURES]
                .copy_from_slice(&grad_fused[src + TRUNK_FEATURES..src + 2 * TRUNK_FEATURES]);
        }
        self.trunk_a.backward(&ca, &ga);
        self.trunk_b.backward(&cb, &gb);
        let mut blocks = self.trunk_a.blocks_mut();
        blocks.extend(self.trunk_b.blocks_mut());
        blocks.push(&mut self.head.w);
        blocks.push(&mut self.head.b);
        adam_step(blocks, opt);
        Ok(loss)
    }

    fn predict(&self, batch_a: &Batch, batch_b: &Batch) -> Result<Vec<usize>> {
        let (logits, _, _, _) = self.forward(batch_a, batch_b)?;
        Ok(argmax_rows(&logits, batch_a.x.b, self.class_count))
    }
}

/// Results of the two-stream augmentation experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStreamReport {
    pub two_stream_acc: f64,
    pub single_stream_acc: f64,
    /// Two-stream accuracy when translations are paired with the wrong
    /// inputs — the no-information control.
    pub control_acc: f64,
    pub per_class_two: Vec<f64>,
    pub per_class_single: Vec<f64>,
}

fn two_stream_fit_and_score(
    train_a: &Dataset,
    train_b: &Dataset,
    test_a: &Dataset,
    test_b: &Dataset,
    class_count: usize,
    epochs: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let mut net = TwoStreamNet::init(train_a.domain, class_count, seed);
    let opt = AdamConfig::with_lr(PROBE_LR);
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + epoch as u64);
        let mut order: Vec<usize> = (0..train_a.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(EVAL_BATCH) {
            let ba = pad_and_mask(train_a, chunk)?;
            let bb = pad_and_mask(train_b, chunk)?;
            let loss = net.train_step(&ba, &bb, &opt)?;
            if !loss.is_finite() {
                return Err(Error::Numeric("two-stream loss diverged".into()));
            }
        }
    }
    let mut correct = vec![0usize; class_count];
    let mut totals = vec![0usize; class_count];
    let idxs: Vec<usize> = (0..test_a.len()).collect();
    for chunk in idxs.chunks(EVAL_BATCH) {
        let ba = pad_and_mask(test_a, chunk)?;
        let bb = pad_and_mask(test_b, chunk)?;
        let preds = net.predict(&ba, &bb)?;
        for (p, &y) in preds.iter().zip(ba.labels.iter()) {
            totals[y] += 1;
            if *p == y {
                correct[y] += 1;
            }
        }
    }
    let acc = correct.iter().sum::<usize>() as f64 / totals.iter().sum::<usize>().max(1) as f64;
    let per_class = correct
        .iter()
        .zip(totals.iter())
        .map(|(&c, &t)| if t == 0 { 0.0 } else { c as f64 / t as f64 })
        .collect();
    Ok((acc, per_class))
}

fn permute_dataset(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let samples = order.iter().map(|&i| ds.samples[i].clone()).collect();
    Dataset::from_samples(samples)
}

/// Compares recognition of domain-A samples alone against recognition with
/// each sample's frozen translation into the other domain as a second
/// stream, plus a wrong-pairing control. Same split, seed, and budget for
/// all three models.
pub fn two_stream_eval(
    train_a: &Dataset,
    test_a: &Dataset,
    params: &ModelParams,
    epochs: usize,
    seed: u64,
) -> Result<TwoStreamReport> {
    let k = train_a.class_count().max(test_a.class_count());
    let train_b = translate_dataset(params, train_a, DurationPolicy::RateScaled)?;
    let test_b = translate_dataset(params, test_a, DurationPolicy::RateScaled)?;

    let (two_stream_acc, per_class_two) =
        two_stream_fit_and_score(train_a, &train_b, test_a, &test_b, k, epochs, seed)?;

    // Single stream: the plain probe on the same split and budget.
    let probe = train_probe_with_k(train_a, k, epochs, seed)?;
    let (single_stream_acc, _, per_class_single) = probe_eval(&probe, test_a)?;

    // Control: translations shuffled against their inputs.
    let train_b_shuf = permute_dataset(&train_b, seed ^ 0xc0171701)?;
    let test_b_shuf = permute_dataset(&test_b, seed ^ 0xc0171702)?;
    let (control_acc, _) =
        two_stream_fit_and_score(train_a, &train_b_shuf, test_a, &test_b_shuf, k, epochs, seed)?;

    Ok(TwoStreamReport {
        two_stream_acc,
        single_stream_acc,
        control_acc,
        per_class_two,
        per_class_single,
    })
}

/// [`train_probe`] with an explicit class count (needed when a split does
/// not contain every class).
pub fn train_probe_with_k(
    ds: &Dataset,
    k: usize,
    epochs: usize,
    seed: u64,
) -> Result<ProbeClassifier> {
    if ds.is_empty() {
        return Err(Error::Data("cannot train a probe on an empty dataset".into()));
    }
    let mut probe = ProbeClassifier::init(ds.domain, k, seed);
    let opt = AdamConfig::with_lr(PROBE_LR);
    for epoch in 0..epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1 + epoch as u64);
        let mut order: Vec<usize> = (0..ds.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(EVAL_BATCH) {
            let batch = pad_and_mask(ds, chunk)?;
            let (logits, tcache, acache) = probe.logits(&batch)?;
            let (loss, grad_logits) = softmax_xent(&logits, batch.x.b, k, &batch.labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("probe loss diverged in epoch {epoch}")));
            }
            let grad_pooled = affine_backward(&mut probe.head, &acache, &grad_logits);
            probe.trunk.backward(&tcache, &grad_pooled);
            let mut blocks = probe.trunk.blocks_mut();
            blocks.push(&mut probe.head.w);
            blocks.push(&mut probe.head.b);
            adam_step(blocks, &opt);
        }
    }
    Ok(probe)
}

/// One trained arm of the ablation study.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AblationArm {
    pub name: String,
    pub latent: LatentProbes,
    pub i2t: TranslatedEval,
    pub t2i: TranslatedEval,
}

/// Trains full / no-cls / no-gan arms from one shared model seed and common
/// budget, probing each with the same pretrained probes.
#[allow(clippy::too_many_arguments)]
pub fn ablation_suite(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train_i: &Dataset,
    train_t: &Dataset,
    test_i: &Dataset,
    test_t: &Dataset,
    probe_i: &ProbeClassifier,
    probe_t: &ProbeClassifier,
    probe_seed: u64,
) -> Result<Vec<AblationArm>> {
    let arms = [
        ("full", true, true),
        ("no_cls", false, true),
        ("no_gan", true, false),
    ];
    let mut out = Vec::with_capacity(arms.len());
    for (name, enable_cls, enable_gan) in arms {
        let mut params = ModelParams::init(model_cfg.clone())?;
        params.rate_i = train_i.rate_hz;
        params.rate_t = train_t.rate_hz;
        let cfg = TrainConfig { enable_cls, enable_gan, ..train_cfg.clone() };
        train(&mut params, train_i, train_t, &cfg)?;
        out.push(AblationArm {
            name: name.to_string(),
            latent: latent_probes(&params, test_i, test_t, probe_seed)?,
            i2t: eval_translated(probe_t, &params, test_i, None)?,
            t2i: eval_translated(probe_i, &params, test_t, None)?,
        });
    }
    Ok(out)
}

/// The complete evaluation record written by the command-line tool.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// MMD of model translations against real target-domain test data.
    pub mmd_i2t: f64,
    pub mmd_t2i: f64,
    /// Same comparison for the naive resample-and-remap baseline.
    pub mmd_naive_i2t: f64,
    pub mmd_naive_t2i: f64,
    /// Probe sanity on real held-out data.
    pub probe_acc_inertia: f64,
    pub probe_acc_trajectory: f64,
    /// Probe results on translated test sets (per direction).
    pub translated_i2t: TranslatedEval,
    pub translated_t2i: TranslatedEval,
    pub latent: LatentProbes,
    pub two_stream: Option<TwoStreamReport>,
}
