//! The translation model: one encoder/decoder pair per domain, a shared
//! latent classifier, and a latent discriminator.
//!
//! Both encoders map a variable-length sequence to a single latent vector:
//! three stride-2 "same" convolutions (kernel 7, 5, 3) with leaky-ReLU, each
//! halving the length with ceiling semantics, then a GRU whose hidden state
//! at the last *valid* feature step is the latent. Feature maps are masked
//! past each sample's valid length so the latent of a sample is identical
//! whether it is encoded alone or inside a zero-padded batch.
//!
//! Decoders mirror the encoders: the latent is repeated `t` times as GRU
//! input, then three kernel-4/stride-2/pad-1 transposed convolutions (each
//! exactly doubling length) map `t` steps to `8t` output steps, followed by a
//! length-preserving smoothing convolution. Classifier and discriminator
//! both read latents: a single affine layer to class logits, and a stack of
//! three leaky-ReLU affine layers with a 64-score linear head.

use crate::data::{
    self, apply_stats_seq, unapply_stats_seq, ChannelStats, Domain, Sample, Seq,
};
use crate::numerics::{
    affine, affine_backward, conv1d, conv1d_backward, conv1d_transpose,
    conv1d_transpose_backward, gru_backward, gru_forward, leaky_relu, leaky_relu_backward,
    Activation, AffineCache, AffineParams, ConvParams, ConvSpec, GruCache, GruParams, ParamBlock,
    Tensor3,
};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::{BufReader, BufWriter};
use std::path::Path;

/// Checkpoint format version.
const CHECKPOINT_FORMAT: u32 = 1;

/// Dimension of the shared latent space.
pub const LATENT_DIM: usize = 64;

/// Structural hyper-parameters. The defaults are the reference architecture;
/// tests shrink them for cheap finite-difference checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub class_count: usize,
    /// Widths of the three encoder convolutions (decoders mirror them).
    pub enc_widths: [usize; 3],
    pub latent_dim: usize,
    pub disc_hidden: usize,
    /// Width of the discriminator's score vector.
    pub disc_scores: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(class_count: usize, seed: u64) -> Self {
        ModelConfig {
            class_count,
            enc_widths: [32, 64, 64],
            latent_dim: LATENT_DIM,
            disc_hidden: 128,
            disc_scores: 64,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config("class_count must be at least 2".into()));
        }
        if self.latent_dim == 0 || self.disc_hidden == 0 || self.disc_scores == 0 {
            return Err(Error::Config("zero-width layer in model config".into()));
        }
        if self.enc_widths.contains(&0) {
            return Err(Error::Config("zero-width encoder stage".into()));
        }
        Ok(())
    }
}

/// Valid feature length after the three halving convolutions.
pub fn encoder_feature_len(l: usize) -> usize {
    l.div_ceil(2).div_ceil(2).div_ceil(2)
}

/// How translation picks the output duration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DurationPolicy {
    /// Scale the source length by the target/source rate ratio.
    RateScaled,
    /// Keep the source length unchanged.
    SourceLength,
}

/// One domain's encoder.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub conv1: ConvParams,
    pub conv2: ConvParams,
    pub conv3: ConvParams,
    pub gru: GruParams,
}

impl EncoderParams {
    fn init(name: &str, channels: usize, cfg: &ModelConfig, rng: &mut impl rand::Rng) -> Self {
        let [w0, w1, w2] = cfg.enc_widths;
        EncoderParams {
            conv1: ConvParams::init(
                &format!("{name}.conv1"),
                ConvSpec { c_in: channels, c_out: w0, kernel: 7, stride: 2, pad: 3 },
                rng,
            ),
            conv2: ConvParams::init(
                &format!("{name}.conv2"),
                ConvSpec { c_in: w0, c_out: w1, kernel: 5, stride: 2, pad: 2 },
                rng,
            ),
            conv3: ConvParams::init(
                &format!("{name}.conv3"),
                ConvSpec { c_in: w1, c_out: w2, kernel: 3, stride: 2, pad: 1 },
                rng,
            ),
            gru: GruParams::init(&format!("{name}.gru"), w2, cfg.latent_dim, rng),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        vec![
            &self.conv1.w, &self.conv1.b, &self.conv2.w, &self.conv2.b,
            &self.conv3.w, &self.conv3.b, &self.gru.wx, &self.gru.wh, &self.gru.b,
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![
            &mut self.conv1.w, &mut self.conv1.b, &mut self.conv2.w, &mut self.conv2.b,
            &mut self.conv3.w, &mut self.conv3.b, &mut self.gru.wx, &mut self.gru.wh,
            &mut self.gru.b,
        ]
    }
}

/// One domain's decoder.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub gru: GruParams,
    pub up1: ConvParams,
    pub up2: ConvParams,
    pub up3: ConvParams,
    pub smooth: ConvParams,
}

impl DecoderParams {
    fn init(name: &str, channels: usize, cfg: &ModelConfig, rng: &mut impl rand::Rng) -> Self {
        let [w0, w1, _] = cfg.enc_widths;
        let d = cfg.latent_dim;
        let up = |c_in, c_out| ConvSpec { c_in, c_out, kernel: 4, stride: 2, pad: 1 };
        DecoderParams {
            gru: GruParams::init(&format!("{name}.gru"), d, d, rng),
            up1: ConvParams::init_transpose(&format!("{name}.up1"), up(d, w1), rng),
            up2: ConvParams::init_transpose(&format!("{name}.up2"), up(w1, w0), rng),
            up3: ConvParams::init_transpose(&format!("{name}.up3"), up(w0, channels), rng),
            smooth: ConvParams::init(
                &format!("{name}.smooth"),
                ConvSpec { c_in: channels, c_out: channels, kernel: 5, stride: 1, pad: 2 },
                rng,
            ),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        vec![
            &self.gru.wx, &self.gru.wh, &self.gru.b, &self.up1.w, &self.up1.b,
            &self.up2.w, &self.up2.b, &self.up3.w, &self.up3.b, &self.smooth.w, &self.smooth.b,
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![
            &mut self.gru.wx, &mut self.gru.wh, &mut self.gru.b, &mut self.up1.w,
            &mut self.up1.b, &mut self.up2.w, &mut self.up2.b, &mut self.up3.w,
            &mut self.up3.b, &mut self.smooth.w, &mut self.smooth.b,
        ]
    }
}

/// Latent discriminator: three leaky-ReLU affine layers and a linear head
/// producing a vector of scores per latent.
#[derive(Debug, Clone)]
pub struct DiscParams {
    pub l1: AffineParams,
    pub l2: AffineParams,
    pub l3: AffineParams,
    pub head: AffineParams,
}

impl DiscParams {
    fn init(cfg: &ModelConfig, rng: &mut impl rand::Rng) -> Self {
        let (d, h, s) = (cfg.latent_dim, cfg.disc_hidden, cfg.disc_scores);
        DiscParams {
            l1: AffineParams::init("disc.l1", d, h, Activation::LeakyRelu, rng),
            l2: AffineParams::init("disc.l2", h, h, Activation::LeakyRelu, rng),
            l3: AffineParams::init("disc.l3", h, h, Activation::LeakyRelu, rng),
            head: AffineParams::init("disc.head", h, s, Activation::Linear, rng),
        }
    }

    pub fn blocks(&self) -> Vec<&ParamBlock> {
        vec![
            &self.l1.w, &self.l1.b, &self.l2.w, &self.l2.b,
            &self.l3.w, &self.l3.b, &self.head.w, &self.head.b,
        ]
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        vec![
            &mut self.l1.w, &mut self.l1.b, &mut self.l2.w, &mut self.l2.b,
            &mut self.l3.w, &mut self.l3.b, &mut self.head.w, &mut self.head.b,
        ]
    }
}

/// The complete parameter set plus the preprocessing statistics needed to map
/// between raw and standardized spaces.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub enc_i: EncoderParams,
    pub enc_t: EncoderParams,
    pub dec_i: DecoderParams,
    pub dec_t: DecoderParams,
    pub cls: AffineParams,
    pub disc: DiscParams,
    pub stats_i: ChannelStats,
    pub stats_t: ChannelStats,
    pub rate_i: f64,
    pub rate_t: f64,
}

fn identity_stats(c: usize) -> ChannelStats {
    ChannelStats {
        mean: vec![0.0; c],
        std: vec![1.0; c],
    }
}

impl ModelParams {
    /// Fresh parameters drawn from the config's seed. Initialization order
    /// is fixed, so equal configs give bit-identical parameters.
    pub fn init(config: ModelConfig) -> Result<ModelParams> {
        config.validate()?;
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(config.seed);
        let ci = Domain::Inertia.channels();
        let ct = Domain::Trajectory.channels();
        Ok(ModelParams {
            enc_i: EncoderParams::init("enc_i", ci, &config, &mut rng),
            enc_t: EncoderParams::init("enc_t", ct, &config, &mut rng),
            dec_i: DecoderParams::init("dec_i", ci, &config, &mut rng),
            dec_t: DecoderParams::init("dec_t", ct, &config, &mut rng),
            cls: AffineParams::init(
                "cls",
                config.latent_dim,
                config.class_count,
                Activation::Linear,
                &mut rng,
            ),
            disc: DiscParams::init(&config, &mut rng),
            stats_i: identity_stats(ci),
            stats_t: identity_stats(ct),
            rate_i: 60.0,
            rate_t: 200.0,
            config,
        })
    }

    pub fn encoder(&self, domain: Domain) -> &EncoderParams {
        match domain {
            Domain::Inertia => &self.enc_i,
            Domain::Trajectory => &self.enc_t,
        }
    }

    pub fn decoder(&self, domain: Domain) -> &DecoderParams {
        match domain {
            Domain::Inertia => &self.dec_i,
            Domain::Trajectory => &self.dec_t,
        }
    }

    pub fn encoder_mut(&mut self, domain: Domain) -> &mut EncoderParams {
        match domain {
            Domain::Inertia => &mut self.enc_i,
            Domain::Trajectory => &mut self.enc_t,
        }
    }

    pub fn decoder_mut(&mut self, domain: Domain) -> &mut DecoderParams {
        match domain {
            Domain::Inertia => &mut self.dec_i,
            Domain::Trajectory => &mut self.dec_t,
        }
    }

    pub fn stats(&self, domain: Domain) -> &ChannelStats {
        match domain {
            Domain::Inertia => &self.stats_i,
            Domain::Trajectory => &self.stats_t,
        }
    }

    pub fn rate(&self, domain: Domain) -> f64 {
        match domain {
            Domain::Inertia => self.rate_i,
            Domain::Trajectory => self.rate_t,
        }
    }

    /// Every parameter block in canonical (checkpoint) order.
    pub fn blocks(&self) -> Vec<&ParamBlock> {
        let mut v = self.enc_i.blocks();
        v.extend(self.enc_t.blocks());
        v.extend(self.dec_i.blocks());
        v.extend(self.dec_t.blocks());
        v.push(&self.cls.w);
        v.push(&self.cls.b);
        v.extend(self.disc.blocks());
        v
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut v = self.enc_i.blocks_mut();
        v.extend(self.enc_t.blocks_mut());
        v.extend(self.dec_i.blocks_mut());
        v.extend(self.dec_t.blocks_mut());
        v.push(&mut self.cls.w);
        v.push(&mut self.cls.b);
        v.extend(self.disc.blocks_mut());
        v
    }

    /// Blocks updated by the reconstruction step: both autoencoders.
    pub fn rec_scope_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut v = self.enc_i.blocks_mut();
        v.extend(self.enc_t.blocks_mut());
        v.extend(self.dec_i.blocks_mut());
        v.extend(self.dec_t.blocks_mut());
        v
    }

    /// Blocks updated by the classification step: encoders and classifier.
    pub fn cls_scope_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut v = self.enc_i.blocks_mut();
        v.extend(self.enc_t.blocks_mut());
        v.push(&mut self.cls.w);
        v.push(&mut self.cls.b);
        v
    }

    /// Blocks updated by the adversarial generator step: encoders only.
    pub fn gen_scope_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut v = self.enc_i.blocks_mut();
        v.extend(self.enc_t.blocks_mut());
        v
    }

    /// Encodes a standardized sequence to its latent vector.
    pub fn encode_seq(&self, seq: &Seq, domain: Domain) -> Result<Vec<f64>> {
        let x = Tensor3::from_vec(1, seq.c, seq.l, seq.values.clone());
        let (latents, _) = encode_batch(self.encoder(domain), &x, &[seq.l])?;
        Ok(latents)
    }

    /// Decodes a latent into `8t` standardized timesteps in the domain.
    pub fn decode_latent(&self, latent: &[f64], domain: Domain, t: usize) -> Result<Seq> {
        if latent.len() != self.config.latent_dim {
            return Err(Error::Shape(format!(
                "latent has {} dims, model uses {}",
                latent.len(),
                self.config.latent_dim
            )));
        }
        let (out, _) = decode_batch(self.decoder(domain), latent, 1, t)?;
        Ok(Seq::from_values(out.c, out.l, out.data))
    }

    /// Encode-then-decode within one domain, trimmed to the input length
    /// (standardized space).
    pub fn reconstruct_seq(&self, seq: &Seq, domain: Domain) -> Result<Seq> {
        let latent = self.encode_seq(seq, domain)?;
        let t = encoder_feature_len(seq.l);
        let mut out = self.decode_latent(&latent, domain, t)?;
        trim_seq(&mut out, seq.l);
        Ok(out)
    }

    /// Cross-domain translation in standardized space.
    pub fn translate_seq(
        &self,
        seq: &Seq,
        from: Domain,
        policy: DurationPolicy,
    ) -> Result<Seq> {
        let to = from.other();
        let latent = self.encode_seq(seq, from)?;
        let l_target = match policy {
            DurationPolicy::RateScaled => {
                let scaled = (seq.l as f64 * self.rate(to) / self.rate(from)).round() as usize;
                scaled.max(1)
            }
            DurationPolicy::SourceLength => seq.l,
        };
        let t = encoder_feature_len(l_target);
        let mut out = self.decode_latent(&latent, to, t)?;
        trim_seq(&mut out, l_target);
        Ok(out)
    }

    /// Full raw-space translation of one sample: preprocess, standardize with
    /// the stored source stats, translate, and map back through the stored
    /// target stats. The result carries the target domain, rate, and class.
    pub fn translate_sample(&self, s: &Sample, policy: DurationPolicy) -> Result<Sample> {
        if s.seq.c != s.domain.channels() {
            return Err(Error::Shape(format!(
                "sample {} has {} channels for domain {}",
                s.id,
                s.seq.c,
                s.domain.name()
            )));
        }
        let mut work = s.clone();
        match s.domain {
            Domain::Inertia => data::preprocess_inertial(&mut work),
            Domain::Trajectory => data::preprocess_trajectory(&mut work),
        }
        apply_stats_seq(&mut work.seq, self.stats(s.domain));
        let to = s.domain.other();
        let mut out = self.translate_seq(&work.seq, s.domain, policy)?;
        unapply_stats_seq(&mut out, self.stats(to));
        let tag = match s.domain {
            Domain::Inertia => "i2t",
            Domain::Trajectory => "t2i",
        };
        Ok(Sample {
            id: format!("{}.{}", s.id, tag),
            domain: to,
            label: s.label,
            class_name: s.class_name.clone(),
            rate_hz: self.rate(to),
            seq: out,
        })
    }

    /// Class probabilities for a latent.
    pub fn classify_latent(&self, latent: &[f64]) -> Result<Vec<f64>> {
        let (logits, _) = affine(latent, 1, &self.cls)?;
        Ok(crate::numerics::softmax_probs(
            &logits,
            1,
            self.config.class_count,
        ))
    }

    /// Discriminator scores for a latent.
    pub fn discriminate_latent(&self, latent: &[f64]) -> Result<Vec<f64>> {
        let (scores, _) = disc_forward(&self.disc, latent, 1)?;
        Ok(scores)
    }
}

fn trim_seq(seq: &mut Seq, l: usize) {
    if seq.l == l {
        return;
    }
    assert!(l <= seq.l, "cannot trim {} up to {l}", seq.l);
    let mut values = Vec::with_capacity(seq.c * l);
    for ci in 0..seq.c {
        values.extend_from_slice(&seq.channel(ci)[..l]);
    }
    seq.values = values;
    seq.l = l;
}

/// Forward caches for one encoder pass over a batch.
pub struct EncodeCache {
    x: Tensor3,
    a1: Tensor3,
    h1: Tensor3,
    a2: Tensor3,
    h2: Tensor3,
    a3: Tensor3,
    gru: GruCache,
    /// Valid lengths after 0, 1, 2, 3 halvings.
    lens: [Vec<usize>; 4],
}

impl EncodeCache {
    /// Valid feature length per sample at the GRU input.
    pub fn feature_lens(&self) -> &[usize] {
        &self.lens[3]
    }
}

/// Zeroes positions at or past each sample's valid length (both activations
/// in the forward pass and gradients in the backward pass, keeping padded
/// batches exactly equivalent to solo encoding).
fn mask_invalid(x: &mut Tensor3, lens: &[usize]) {
    for bi in 0..x.b {
        let n = lens[bi];
        if n >= x.l {
            continue;
        }
        for ci in 0..x.c {
            let base = (bi * x.c + ci) * x.l;
            x.data[base + n..base + x.l].iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

/// Runs an encoder over a zero-padded batch. `lengths[b]` is each sample's
/// true length; the returned latents are row-major `(B, latent_dim)`.
pub fn encode_batch(
    enc: &EncoderParams,
    x: &Tensor3,
    lengths: &[usize],
) -> Result<(Vec<f64>, EncodeCache)> {
    if lengths.len() != x.b {
        return Err(Error::Shape("one length per batch element required".into()));
    }
    if let Some(&bad) = lengths.iter().find(|&&n| n == 0 || n > x.l) {
        return Err(Error::Shape(format!(
            "sequence length {bad} invalid for padded length {}",
            x.l
        )));
    }
    let lens0 = lengths.to_vec();
    let lens1: Vec<usize> = lens0.iter().map(|&l| l.div_ceil(2)).collect();
    let lens2: Vec<usize> = lens1.iter().map(|&l| l.div_ceil(2)).collect();
    let lens3: Vec<usize> = lens2.iter().map(|&l| l.div_ceil(2)).collect();

    let a1 = conv1d(x, &enc.conv1)?;
    let mut h1 = leaky_relu(&a1);
    mask_invalid(&mut h1, &lens1);
    let a2 = conv1d(&h1, &enc.conv2)?;
    let mut h2 = leaky_relu(&a2);
    mask_invalid(&mut h2, &lens2);
    let a3 = conv1d(&h2, &enc.conv3)?;
    let mut h3 = leaky_relu(&a3);
    mask_invalid(&mut h3, &lens3);
    let (hseq, _, gru) = gru_forward(&h3, &enc.gru, None)?;

    let d = enc.gru.hidden;
    let mut latents = vec![0.0; x.b * d];
    for bi in 0..x.b {
        let last = lens3[bi] - 1;
        for j in 0..d {
            latents[bi * d + j] = hseq.at(bi, j, last);
        }
    }
    Ok((
        latents,
        EncodeCache {
            x: x.clone(),
            a1,
            h1,
            a2,
            h2,
            a3,
            gru,
            lens: [lens0, lens1, lens2, lens3],
        },
    ))
}

/// Backward of [`encode_batch`]: pushes `(B, latent_dim)` latent gradients
/// through the encoder, accumulating into its blocks.
pub fn encoder_backward(enc: &mut EncoderParams, cache: &EncodeCache, grad_latent: &[f64]) {
    let d = enc.gru.hidden;
    let bsz = cache.x.b;
    assert_eq!(grad_latent.len(), bsz * d);
    let tf = cache.a3.l;
    let mut grad_hseq = Tensor3::zeros(bsz, d, tf);
    for bi in 0..bsz {
        let last = cache.lens[3][bi] - 1;
        for j in 0..d {
            *grad_hseq.at_mut(bi, j, last) = grad_latent[bi * d + j];
        }
    }
    // h3 was rebuilt inside the GRU cache; recover its gradient and walk the
    // convolution stack down, masking at each stage (masked positions were
    // forced to zero in the forward pass, so no gradient flows through them).
    let mut g_h3 = gru_backward(&mut enc.gru, &cache.gru, &grad_hseq);
    mask_invalid(&mut g_h3, &cache.lens[3]);
    let g_a3 = leaky_relu_backward(&cache.a3, &g_h3);
    let mut g_h2 = conv1d_backward(&cache.h2, &mut enc.conv3, &g_a3);
    mask_invalid(&mut g_h2, &cache.lens[2]);
    let g_a2 = leaky_relu_backward(&cache.a2, &g_h2);
    let mut g_h1 = conv1d_backward(&cache.h1, &mut enc.conv2, &g_a2);
    mask_invalid(&mut g_h1, &cache.lens[1]);
    let g_a1 = leaky_relu_backward(&cache.a1, &g_h1);
    let _ = conv1d_backward(&cache.x, &mut enc.conv1, &g_a1);
}

/// Forward caches for one decoder pass.
pub struct DecodeCache {
    gru: GruCache,
    hseq: Tensor3,
    a1: Tensor3,
    h1: Tensor3,
    a2: Tensor3,
    h2: Tensor3,
    a3: Tensor3,
}

/// Decodes `(B, latent_dim)` latents over `t` GRU steps into `(B, C, 8t)`.
pub fn decode_batch(
    dec: &DecoderParams,
    latents: &[f64],
    bsz: usize,
    t: usize,
) -> Result<(Tensor3, DecodeCache)> {
    let d = dec.gru.hidden;
    if latents.len() != bsz * d {
        return Err(Error::Shape(format!(
            "expected {bsz}x{d} latents, got {} values",
            latents.len()
        )));
    }
    if t == 0 {
        return Err(Error::Shape("decoder needs at least one step".into()));
    }
    // The latent is repeated as the input at every step.
    let mut xin = Tensor3::zeros(bsz, d, t);
    for bi in 0..bsz {
        for j in 0..d {
            let v = latents[bi * d + j];
            for tt in 0..t {
                *xin.at_mut(bi, j, tt) = v;
            }
        }
    }
    let (hseq, _, gru) = gru_forward(&xin, &dec.gru, None)?;
    let a1 = conv1d_transpose(&hseq, &dec.up1)?;
    let h1 = leaky_relu(&a1);
    let a2 = conv1d_transpose(&h1, &dec.up2)?;
    let h2 = leaky_relu(&a2);
    let a3 = conv1d_transpose(&h2, &dec.up3)?;
    let out = conv1d(&a3, &dec.smooth)?;
    Ok((
        out,
        DecodeCache {
            gru,
            hseq,
            a1,
            h1,
            a2,
            h2,
            a3,
        },
    ))
}

/// Backward of [`decode_batch`]; returns `(B, latent_dim)` latent gradients.
pub fn decoder_backward(
    dec: &mut DecoderParams,
    cache: &DecodeCache,
    grad_out: &Tensor3,
) -> Vec<f64> {
    let g_a3 = conv1d_backward(&cache.a3, &mut dec.smooth, grad_out);
    let g_h2 = conv1d_transpose_backward(&cache.h2, &mut dec.up3, &g_a3);
    let g_a2 = leaky_relu_backward(&cache.a2, &g_h2);
    let g_h1 = conv1d_transpose_backward(&cache.h1, &mut dec.up2, &g_a2);
    let g_a1 = leaky_relu_backward(&cache.a1, &g_h1);
    let g_hseq = conv1d_transpose_backward(&cache.hseq, &mut dec.up1, &g_a1);
    let g_xin = gru_backward(&mut dec.gru, &cache.gru, &g_hseq);
    // The repeated latent collects gradient from every step.
    let (bsz, d, t) = (g_xin.b, g_xin.c, g_xin.l);
    let mut grad_latent = vec![0.0; bsz * d];
    for bi in 0..bsz {
        for j in 0..d {
            let mut acc = 0.0;
            for tt in 0..t {
                acc += g_xin.at(bi, j, tt);
            }
            grad_latent[bi * d + j] = acc;
        }
    }
    grad_latent
}

/// Discriminator forward over `(B, latent_dim)` latents; returns
/// `(B, disc_scores)` scores.
pub fn disc_forward(
    disc: &DiscParams,
    latents: &[f64],
    bsz: usize,
) -> Result<(Vec<f64>, DiscCache)> {
    let (h1, c1) = affine(latents, bsz, &disc.l1)?;
    let (h2, c2) = affine(&h1, bsz, &disc.l2)?;
    let (h3, c3) = affine(&h2, bsz, &disc.l3)?;
    let (scores, c4) = affine(&h3, bsz, &disc.head)?;
    Ok((scores, DiscCache { c1, c2, c3, c4 }))
}

pub struct DiscCache {
    c1: AffineCache,
    c2: AffineCache,
    c3: AffineCache,
    c4: AffineCache,
}

/// Backward of [`disc_forward`]; returns latent gradients.
pub fn disc_backward(disc: &mut DiscParams, cache: &DiscCache, grad_scores: &[f64]) -> Vec<f64> {
    let g3 = affine_backward(&mut disc.head, &cache.c4, grad_scores);
    let g2 = affine_backward(&mut disc.l3, &cache.c3, &g3);
    let g1 = affine_backward(&mut disc.l2, &cache.c2, &g2);
    affine_backward(&mut disc.l1, &cache.c1, &g1)
}

/// On-disk checkpoint: config, rates, preprocessing statistics, and every
/// parameter block in canonical order.
#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: u32,
    config: ModelConfig,
    rate_i: f64,
    rate_t: f64,
    stats_i: ChannelStats,
    stats_t: ChannelStats,
    blocks: Vec<ParamBlock>,
}

/// Serializes the model as JSON. Equal parameters produce byte-identical
/// files (fixed block order, exact shortest-round-trip floats).
pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let ckpt = Checkpoint {
        format: CHECKPOINT_FORMAT,
        config: params.config.clone(),
        rate_i: params.rate_i,
        rate_t: params.rate_t,
        stats_i: params.stats_i.clone(),
        stats_t: params.stats_t.clone(),
        blocks: params.blocks().into_iter().cloned().collect(),
    };
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer(&mut w, &ckpt)?;
    use std::io::Write;
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint, validating format, block names, and shapes.
pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let ckpt: Checkpoint = serde_json::from_reader(BufReader::new(file))?;
    if ckpt.format != CHECKPOINT_FORMAT {
        return Err(Error::Data(format!(
            "unsupported checkpoint format {} (expected {CHECKPOINT_FORMAT})",
            ckpt.format
        )));
    }
    let mut params = ModelParams::init(ckpt.config)?;
    params.rate_i = ckpt.rate_i;
    params.rate_t = ckpt.rate_t;
    params.stats_i = ckpt.stats_i;
    params.stats_t = ckpt.stats_t;
    let mut stored = ckpt.blocks;
    {
        let targets = params.blocks_mut();
        if stored.len() != targets.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} blocks, model needs {}",
                stored.len(),
                targets.len()
            )));
        }
        for (target, source) in targets.into_iter().zip(stored.iter_mut()) {
            if source.name != target.name {
                return Err(Error::Data(format!(
                    "checkpoint block {:?} where {:?} expected",
                    source.name, target.name
                )));
            }
            source.validate()?;
            if source.shape != target.shape {
                return Err(Error::Data(format!(
                    "block {}: shape {:?} does not match model shape {:?}",
                    source.name, source.shape, target.shape
                )));
            }
            target.w = std::mem::take(&mut source.w);
            target.reset_state();
        }
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            class_count: 3,
            enc_widths: [4, 5, 6],
            latent_dim: 5,
            disc_hidden: 7,
            disc_scores: 4,
            seed: 21,
        }
    }

    fn rand_seq(rng: &mut ChaCha8Rng, c: usize, l: usize) -> Seq {
        Seq::from_values(c, l, (0..c * l).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn feature_length_arithmetic() {
        assert_eq!(encoder_feature_len(120), 15);
        assert_eq!(encoder_feature_len(16), 2);
        assert_eq!(encoder_feature_len(121), 16);
        assert_eq!(encoder_feature_len(1), 1);
        assert_eq!(encoder_feature_len(400), 50);
    }

    #[test]
    fn encode_produces_latent_dim() {
        let params = ModelParams::init(ModelConfig::new(5, 1)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seq = rand_seq(&mut rng, 6, 120);
        let latent = params.encode_seq(&seq, Domain::Inertia).unwrap();
        assert_eq!(latent.len(), LATENT_DIM);
        assert!(latent.iter().all(|v| v.is_finite()));
    }

    /// A sample encoded alone and inside a zero-padded batch yields the same
    /// latent — the mask-aware encoder makes padding immaterial.
    #[test]
    fn latent_ignores_padding() {
        let params = ModelParams::init(ModelConfig::new(4, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let seq = rand_seq(&mut rng, 3, 40);

        let solo = params.encode_seq(&seq, Domain::Trajectory).unwrap();

        // Same data zero-padded to 64 inside a batch of two.
        let other = rand_seq(&mut rng, 3, 64);
        let mut x = Tensor3::zeros(2, 3, 64);
        for ci in 0..3 {
            for t in 0..40 {
                *x.at_mut(0, ci, t) = seq.at(ci, t);
            }
            for t in 0..64 {
                *x.at_mut(1, ci, t) = other.at(ci, t);
            }
        }
        let (latents, _) = encode_batch(&params.enc_t, &x, &[40, 64]).unwrap();
        for j in 0..LATENT_DIM {
            let diff = (latents[j] - solo[j]).abs();
            assert!(diff < 1e-12, "dim {j}: {} vs {}", latents[j], solo[j]);
        }
    }

    #[test]
    fn reconstruct_keeps_length_and_translate_scales_rate() {
        let params = ModelParams::init(ModelConfig::new(4, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let seq = rand_seq(&mut rng, 6, 120);
        let rec = params.reconstruct_seq(&seq, Domain::Inertia).unwrap();
        assert_eq!((rec.c, rec.l), (6, 120));

        // 120 steps at 60 Hz map to exactly 400 steps at 200 Hz.
        let tr = params
            .translate_seq(&seq, Domain::Inertia, DurationPolicy::RateScaled)
            .unwrap();
        assert_eq!((tr.c, tr.l), (3, 400));
        let same = params
            .translate_seq(&seq, Domain::Inertia, DurationPolicy::SourceLength)
            .unwrap();
        assert_eq!(same.l, 120);
    }

    #[test]
    fn translate_sample_round_trips_metadata() {
        let mut params = ModelParams::init(ModelConfig::new(4, 5)).unwrap();
        params.rate_i = 60.0;
        params.rate_t = 200.0;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = Sample {
            id: "abc".into(),
            domain: Domain::Trajectory,
            label: 2,
            class_name: "g2".into(),
            rate_hz: 200.0,
            seq: rand_seq(&mut rng, 3, 100),
        };
        let out = params
            .translate_sample(&s, DurationPolicy::RateScaled)
            .unwrap();
        assert_eq!(out.domain, Domain::Inertia);
        assert_eq!(out.seq.c, 6);
        assert_eq!(out.seq.l, 30); // round(100 * 60/200)
        assert_eq!(out.label, 2);
        assert_eq!(out.rate_hz, 60.0);
        assert!(out.id.contains("t2i"));
    }

    #[test]
    fn classify_latent_is_a_distribution() {
        let params = ModelParams::init(ModelConfig::new(5, 9)).unwrap();
        let latent = vec![0.1; LATENT_DIM];
        let probs = params.classify_latent(&latent).unwrap();
        assert_eq!(probs.len(), 5);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn discriminator_returns_score_vector() {
        let params = ModelParams::init(ModelConfig::new(5, 9)).unwrap();
        let scores = params.discriminate_latent(&vec![0.2; LATENT_DIM]).unwrap();
        assert_eq!(scores.len(), 64);
    }

    /// Encoder backward against finite differences through a quadratic
    /// latent readout, on a shrunken architecture.
    #[test]
    fn encoder_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut params = ModelParams::init(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = Tensor3::from_vec(
            2,
            6,
            19,
            (0..2 * 6 * 19).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        let lengths = [19usize, 13];

        let loss_of = |enc: &EncoderParams| -> f64 {
            let (lat, _) = encode_batch(enc, &x, &lengths).unwrap();
            0.5 * lat.iter().map(|v| v * v).sum::<f64>()
        };
        let (lat, cache) = encode_batch(&params.enc_i, &x, &lengths).unwrap();
        encoder_backward(&mut params.enc_i, &cache, &lat);

        let delta = 1e-6;
        let analytic: Vec<Vec<f64>> = params.enc_i.blocks().iter().map(|b| b.g.clone()).collect();
        for (bi, grads) in analytic.iter().enumerate() {
            // Spot-check a handful of coordinates per block.
            let n = grads.len();
            for i in (0..n).step_by((n / 7).max(1)) {
                let orig = params.enc_i.blocks_mut()[bi].w[i];
                params.enc_i.blocks_mut()[bi].w[i] = orig + delta;
                let fp = loss_of(&params.enc_i);
                params.enc_i.blocks_mut()[bi].w[i] = orig - delta;
                let fm = loss_of(&params.enc_i);
                params.enc_i.blocks_mut()[bi].w[i] = orig;
                let num = (fp - fm) / (2.0 * delta);
                assert!(
                    (grads[i] - num).abs() < 1e-6,
                    "block {bi} coord {i}: {} vs {num}",
                    grads[i]
                );
            }
        }
    }

    /// Decoder backward against finite differences from latent to output.
    #[test]
    fn decoder_gradients_match_finite_differences() {
        let cfg = tiny_config();
        let mut params = ModelParams::init(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let latents: Vec<f64> = (0..2 * 5).map(|_| rng.random_range(-1.0..1.0)).collect();

        let loss_of = |dec: &DecoderParams, lat: &[f64]| -> f64 {
            let (out, _) = decode_batch(dec, lat, 2, 3).unwrap();
            0.5 * out.data.iter().map(|v| v * v).sum::<f64>()
        };
        let (out, cache) = decode_batch(&params.dec_t, &latents, 2, 3).unwrap();
        assert_eq!((out.c, out.l), (3, 24));
        let g_lat = decoder_backward(&mut params.dec_t, &cache, &out);

        let delta = 1e-6;
        // Latent gradient.
        for i in 0..latents.len() {
            let mut lp = latents.clone();
            lp[i] += delta;
            let mut lm = latents.clone();
            lm[i] -= delta;
            let num = (loss_of(&params.dec_t, &lp) - loss_of(&params.dec_t, &lm)) / (2.0 * delta);
            assert!((g_lat[i] - num).abs() < 1e-6, "latent {i}");
        }
        // Parameter spot checks.
        let analytic: Vec<Vec<f64>> = params.dec_t.blocks().iter().map(|b| b.g.clone()).collect();
        for (bi, grads) in analytic.iter().enumerate() {
            let n = grads.len();
            for i in (0..n).step_by((n / 5).max(1)) {
                let orig = params.dec_t.blocks_mut()[bi].w[i];
                params.dec_t.blocks_mut()[bi].w[i] = orig + delta;
                let fp = loss_of(&params.dec_t, &latents);
                params.dec_t.blocks_mut()[bi].w[i] = orig - delta;
                let fm = loss_of(&params.dec_t, &latents);
                params.dec_t.blocks_mut()[bi].w[i] = orig;
                let num = (fp - fm) / (2.0 * delta);
                assert!(
                    (grads[i] - num).abs() < 1e-6,
                    "block {bi} coord {i}: {} vs {num}",
                    grads[i]
                );
            }
        }
    }

    #[test]
    fn same_seed_same_parameters_different_seed_different() {
        let a = ModelParams::init(ModelConfig::new(5, 77)).unwrap();
        let b = ModelParams::init(ModelConfig::new(5, 77)).unwrap();
        let c = ModelParams::init(ModelConfig::new(5, 78)).unwrap();
        for (x, y) in a.blocks().iter().zip(b.blocks().iter()) {
            assert_eq!(x.w, y.w);
        }
        assert_ne!(a.enc_i.conv1.w.w, c.enc_i.conv1.w.w);
    }

    #[test]
    fn checkpoint_round_trip_is_exact_and_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.json");
        let p2 = dir.path().join("b.json");
        let mut params = ModelParams::init(ModelConfig::new(4, 31)).unwrap();
        params.rate_i = 60.0;
        params.rate_t = 200.0;
        params.stats_i = ChannelStats {
            mean: vec![0.5; 6],
            std: vec![2.0; 6],
        };
        save_checkpoint(&params, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        for (x, y) in params.blocks().iter().zip(loaded.blocks().iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.w, y.w);
        }
        assert_eq!(loaded.stats_i.mean, params.stats_i.mean);
        // Re-saving the loaded model reproduces the file byte for byte.
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_tampered_shapes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.json");
        let params = ModelParams::init(ModelConfig::new(4, 31)).unwrap();
        save_checkpoint(&params, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        // Claim a different class count than the classifier blocks provide.
        let bad = text.replacen("\"class_count\":4", "\"class_count\":5", 1);
        std::fs::write(&p, bad).unwrap();
        assert!(load_checkpoint(&p).is_err());
    }
}
