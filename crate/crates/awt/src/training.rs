//! Alternating optimization over unpaired batches.
//!
//! Each iteration draws one batch per domain (aligned only by position in
//! two independently shuffled streams) and applies, in order: one
//! reconstruction step, one classification step, one adversarial generator
//! step, then several discriminator steps on the same batch pair. Every
//! step updates exactly its declared parameter subset through its own Adam
//! state; everything else is left bit-identical.

use crate::data::{Dataset, Domain};
use crate::model::{
    decode_batch, decoder_backward, disc_backward, disc_forward, encode_batch, encoder_backward,
    DurationPolicy, ModelParams,
};
use crate::numerics::{
    adam_step, affine, affine_backward, l1_loss, lsgan_disc_grads, lsgan_gen_grads, softmax_xent,
    zero_grads, AdamConfig, SeqMask, Tensor3,
};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

/// Knobs of the training loop.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub disc_updates_per_iter: usize,
    /// Seed of the batch shuffle streams (independent of the model seed).
    pub seed: u64,
    pub enable_cls: bool,
    pub enable_gan: bool,
    pub duration_policy: DurationPolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 2e-4,
            batch_size: 64,
            epochs: 40,
            disc_updates_per_iter: 3,
            seed: 0,
            enable_cls: true,
            enable_gan: true,
            duration_policy: DurationPolicy::RateScaled,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.disc_updates_per_iter == 0 {
            return Err(Error::Config("disc_updates_per_iter must be at least 1".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("lr must be positive and finite".into()));
        }
        Ok(())
    }
}

/// One same-domain mini-batch, zero-padded to a multiple of eight steps so
/// the decoder's eightfold upsampling reproduces the padded length exactly.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x: Tensor3,
    pub mask: SeqMask,
    pub lengths: Vec<usize>,
    pub labels: Vec<usize>,
    pub domain: Domain,
    pub rate_hz: f64,
}

/// Packs dataset rows into a [`Batch`].
pub fn pad_and_mask(ds: &Dataset, idxs: &[usize]) -> Result<Batch> {
    if idxs.is_empty() {
        return Err(Error::Shape("cannot batch zero samples".into()));
    }
    let c = ds.domain.channels();
    let max_len = idxs.iter().map(|&i| ds.samples[i].seq.l).max().unwrap();
    let l_pad = max_len.div_ceil(8) * 8;
    let mut x = Tensor3::zeros(idxs.len(), c, l_pad);
    let mut lengths = Vec::with_capacity(idxs.len());
    let mut labels = Vec::with_capacity(idxs.len());
    for (bi, &i) in idxs.iter().enumerate() {
        let s = &ds.samples[i];
        for ci in 0..c {
            let dst = (bi * c + ci) * l_pad;
            x.data[dst..dst + s.seq.l].copy_from_slice(s.seq.channel(ci));
        }
        lengths.push(s.seq.l);
        labels.push(s.label);
    }
    let mask = SeqMask::from_lengths(&lengths, l_pad);
    Ok(Batch {
        x,
        mask,
        lengths,
        labels,
        domain: ds.domain,
        rate_hz: ds.rate_hz,
    })
}

/// Endless shuffled index stream over one dataset; reshuffles whenever the
/// permutation is exhausted.
struct Cycler {
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    fn new(n: usize, mut rng: ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        Cycler { order, pos: 0, rng }
    }

    fn take(&mut self, n: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Streams aligned unpaired batch pairs: the larger dataset is the driver
/// (each of its samples appears exactly once per epoch), the smaller cycles
/// with reshuffles. No pairing information is consulted — the two shuffles
/// are independent.
pub struct BatchStream<'a> {
    ds_i: &'a Dataset,
    ds_t: &'a Dataset,
    batch_size: usize,
    seed: u64,
    follower: Cycler,
    driver_is_inertia: bool,
}

impl<'a> BatchStream<'a> {
    pub fn new(ds_i: &'a Dataset, ds_t: &'a Dataset, batch_size: usize, seed: u64) -> Result<Self> {
        if ds_i.is_empty() || ds_t.is_empty() {
            return Err(Error::Data("both domains need at least one sample".into()));
        }
        // Ties go to the inertial domain as driver.
        let driver_is_inertia = ds_i.len() >= ds_t.len();
        let follower_n = if driver_is_inertia { ds_t.len() } else { ds_i.len() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(BatchStream {
            ds_i,
            ds_t,
            batch_size,
            seed,
            follower: Cycler::new(follower_n, rng),
            driver_is_inertia,
        })
    }

    /// Number of iterations in one epoch.
    pub fn iters_per_epoch(&self) -> usize {
        let n = if self.driver_is_inertia { self.ds_i.len() } else { self.ds_t.len() };
        n.div_ceil(self.batch_size)
    }

    /// Batch pairs for one epoch. The driver permutation is drawn from a
    /// per-epoch stream so epochs differ but runs are reproducible.
    pub fn epoch(&mut self, epoch: usize) -> Result<Vec<(Batch, Batch)>> {
        let driver = if self.driver_is_inertia { self.ds_i } else { self.ds_t };
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(2 + epoch as u64);
        let mut order: Vec<usize> = (0..driver.len()).collect();
        order.shuffle(&mut rng);

        let mut out = Vec::with_capacity(self.iters_per_epoch());
        for chunk in order.chunks(self.batch_size) {
            let follow_idx = self.follower.take(chunk.len());
            let (idx_i, idx_t) = if self.driver_is_inertia {
                (chunk.to_vec(), follow_idx)
            } else {
                (follow_idx, chunk.to_vec())
            };
            out.push((
                pad_and_mask(self.ds_i, &idx_i)?,
                pad_and_mask(self.ds_t, &idx_t)?,
            ));
        }
        Ok(out)
    }
}

fn check_domains(batch_i: &Batch, batch_t: &Batch) -> Result<()> {
    if batch_i.domain != Domain::Inertia || batch_t.domain != Domain::Trajectory {
        return Err(Error::Shape("batches passed in the wrong domain order".into()));
    }
    Ok(())
}

/// Reconstruction step: masked L1 between each batch and its own-domain
/// autoencoding, summed over domains. Updates encoders and decoders only.
pub fn rec_step(
    params: &mut ModelParams,
    batch_i: &Batch,
    batch_t: &Batch,
    opt: &AdamConfig,
) -> Result<f64> {
    check_domains(batch_i, batch_t)?;
    let mut total = 0.0;
    for (batch, dom) in [(batch_i, Domain::Inertia), (batch_t, Domain::Trajectory)] {
        let (latents, ecache) = encode_batch(params.encoder(dom), &batch.x, &batch.lengths)?;
        let t = batch.x.l / 8;
        let (out, dcache) = decode_batch(params.decoder(dom), &latents, batch.x.b, t)?;
        let (loss, grad_out) = l1_loss(&out, &batch.x, &batch.mask)?;
        let grad_latent = decoder_backward(params.decoder_mut(dom), &dcache, &grad_out);
        encoder_backward(params.encoder_mut(dom), &ecache, &grad_latent);
        total += loss;
    }
    adam_step(params.rec_scope_mut(), opt);
    Ok(total)
}

/// Classification step: latent cross-entropy against each domain's own
/// labels, summed. Updates encoders and the classifier only.
pub fn cls_step(
    params: &mut ModelParams,
    batch_i: &Batch,
    batch_t: &Batch,
    opt: &AdamConfig,
) -> Result<f64> {
    check_domains(batch_i, batch_t)?;
    let k = params.config.class_count;
    for batch in [batch_i, batch_t] {
        if let Some(&bad) = batch.labels.iter().find(|&&y| y >= k) {
            return Err(Error::Data(format!("label {bad} out of range for {k} classes")));
        }
    }
    let mut total = 0.0;
    for (batch, dom) in [(batch_i, Domain::Inertia), (batch_t, Domain::Trajectory)] {
        let bsz = batch.x.b;
        let (latents, ecache) = encode_batch(params.encoder(dom), &batch.x, &batch.lengths)?;
        let (logits, acache) = affine(&latents, bsz, &params.cls)?;
        let (loss, grad_logits) = softmax_xent(&logits, bsz, k, &batch.labels)?;
        let grad_latent = affine_backward(&mut params.cls, &acache, &grad_logits);
        encoder_backward(params.encoder_mut(dom), &ecache, &grad_latent);
        total += loss;
    }
    adam_step(params.cls_scope_mut(), opt);
    Ok(total)
}

/// Adversarial generator step: encoders move their latents toward the
/// targets the discriminator assigns to the *other* domain. Only the
/// encoders are updated; discriminator gradients accumulated on the way
/// through are discarded.
pub fn gan_gen_step(
    params: &mut ModelParams,
    batch_i: &Batch,
    batch_t: &Batch,
    opt: &AdamConfig,
) -> Result<f64> {
    check_domains(batch_i, batch_t)?;
    let (lat_i, cache_i) = encode_batch(params.encoder(Domain::Inertia), &batch_i.x, &batch_i.lengths)?;
    let (lat_t, cache_t) = encode_batch(params.encoder(Domain::Trajectory), &batch_t.x, &batch_t.lengths)?;
    let (scores_i, dcache_i) = disc_forward(&params.disc, &lat_i, batch_i.x.b)?;
    let (scores_t, dcache_t) = disc_forward(&params.disc, &lat_t, batch_t.x.b)?;
    let (g_loss, gs_i, gs_t) = lsgan_gen_grads(&scores_i, &scores_t);
    let grad_lat_i = disc_backward(&mut params.disc, &dcache_i, &gs_i);
    let grad_lat_t = disc_backward(&mut params.disc, &dcache_t, &gs_t);
    encoder_backward(params.encoder_mut(Domain::Inertia), &cache_i, &grad_lat_i);
    encoder_backward(params.encoder_mut(Domain::Trajectory), &cache_t, &grad_lat_t);
    adam_step(params.gen_scope_mut(), opt);
    // The pass-through accumulated discriminator gradients; drop them so the
    // next discriminator update starts clean.
    zero_grads(params.disc.blocks_mut());
    Ok(g_loss)
}

/// Discriminator step: latents are computed forward-only (no gradient
/// reaches the encoders) and only the discriminator is updated.
pub fn gan_disc_step(
    params: &mut ModelParams,
    batch_i: &Batch,
    batch_t: &Batch,
    opt: &AdamConfig,
) -> Result<f64> {
    gan_disc_steps(params, batch_i, batch_t, opt, 1)
}

/// Runs `n` consecutive discriminator updates on one batch pair. The
/// encoders are untouched by these updates, so the latents are computed
/// once and reused — each sub-step sees exactly the floats a fresh
/// encoding pass would produce. Returns the mean discriminator loss.
pub fn gan_disc_steps(
    params: &mut ModelParams,
    batch_i: &Batch,
    batch_t: &Batch,
    opt: &AdamConfig,
    n: usize,
) -> Result<f64> {
    check_domains(batch_i, batch_t)?;
    let (lat_i, _) = encode_batch(params.encoder(Domain::Inertia), &batch_i.x, &batch_i.lengths)?;
    let (lat_t, _) = encode_batch(params.encoder(Domain::Trajectory), &batch_t.x, &batch_t.lengths)?;
    let mut d_sum = 0.0;
    for _ in 0..n {
        let (scores_i, dcache_i) = disc_forward(&params.disc, &lat_i, batch_i.x.b)?;
        let (scores_t, dcache_t) = disc_forward(&params.disc, &lat_t, batch_t.x.b)?;
        let (d_loss, gs_i, gs_t) = lsgan_disc_grads(&scores_i, &scores_t);
        let _ = disc_backward(&mut params.disc, &dcache_i, &gs_i);
        let _ = disc_backward(&mut params.disc, &dcache_t, &gs_t);
        adam_step(params.disc.blocks_mut(), opt);
        d_sum += d_loss;
    }
    Ok(d_sum / n.max(1) as f64)
}

/// Per-iteration loss record.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LossReport {
    pub step: usize,
    pub l_rec: f64,
    pub l_cls: f64,
    pub l_gan_g: f64,
    pub l_gan_d: f64,
}

/// Accumulated per-iteration losses, one row per iteration. Disabled losses
/// are recorded as zero; `l_gan_d` is the mean over the iteration's
/// discriminator sub-steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub rows: Vec<LossReport>,
}

impl MetricsLog {
    /// Writes the log as tab-separated text with a header row
    /// (`step l_rec l_cls l_gan_g l_gan_d`).
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "step\tl_rec\tl_cls\tl_gan_g\tl_gan_d")?;
        for r in &self.rows {
            writeln!(
                w,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.step, r.l_rec, r.l_cls, r.l_gan_g, r.l_gan_d
            )?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs the full alternating schedule over preprocessed, standardized
/// datasets. Aborts with a numeric error on the first non-finite loss.
pub fn train(
    params: &mut ModelParams,
    ds_i: &Dataset,
    ds_t: &Dataset,
    cfg: &TrainConfig,
) -> Result<MetricsLog> {
    cfg.validate()?;
    if ds_i.domain != Domain::Inertia || ds_t.domain != Domain::Trajectory {
        return Err(Error::Data("datasets passed in the wrong domain order".into()));
    }
    let k = params.config.class_count;
    for ds in [ds_i, ds_t] {
        if ds.class_count() > k {
            return Err(Error::Data(format!(
                "dataset has {} classes, model supports {k}",
                ds.class_count()
            )));
        }
    }
    let opt = AdamConfig::with_lr(cfg.lr);
    let mut stream = BatchStream::new(ds_i, ds_t, cfg.batch_size, cfg.seed)?;
    let mut log = MetricsLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        for (batch_i, batch_t) in stream.epoch(epoch)? {
            let l_rec = rec_step(params, &batch_i, &batch_t, &opt)?;
            let l_cls = if cfg.enable_cls {
                cls_step(params, &batch_i, &batch_t, &opt)?
            } else {
                0.0
            };
            let (l_gan_g, l_gan_d) = if cfg.enable_gan {
                let g = gan_gen_step(params, &batch_i, &batch_t, &opt)?;
                let d = gan_disc_steps(params, &batch_i, &batch_t, &opt, cfg.disc_updates_per_iter)?;
                (g, d)
            } else {
                (0.0, 0.0)
            };
            let row = LossReport { step, l_rec, l_cls, l_gan_g, l_gan_d };
            if ![l_rec, l_cls, l_gan_g, l_gan_d].iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite loss at step {step}: {row:?}"
                )));
            }
            log.rows.push(row);
            step += 1;
        }
    }
    Ok(log)
}
