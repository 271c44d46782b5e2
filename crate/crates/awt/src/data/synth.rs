//! Synthetic paired corpus: per-class glyph templates traced as pen
//! trajectories, plus a kinematic oracle that derives the inertial signal a
//! sensor on the pen would have produced. Every trajectory therefore has a
//! ground-truth inertial counterpart; the pairing is recorded in a manifest
//! for evaluation only and never used by training.

use super::{
    resample, Dataset, Domain, PairEntry, PairingManifest, Sample, Seq, MIN_SEQ_LEN,
};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Generator settings. Lengths are in trajectory-domain timesteps; the
/// inertial counterpart is shorter by the rate ratio.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub class_count: usize,
    /// Samples per class in each domain.
    pub samples_per_class: usize,
    /// Inclusive trajectory length range; the lower end is raised if needed
    /// so that the derived inertial sequence stays at least `MIN_SEQ_LEN`.
    pub len_range: (usize, usize),
    pub trajectory_rate_hz: f64,
    pub inertia_rate_hz: f64,
    /// Std of additive Gaussian sensor noise on every inertial channel; also
    /// scales the correlated wobble on the x/y angular-rate channels.
    pub noise_std: f64,
    /// Std of the constant per-sample bias on every inertial channel.
    pub bias_std: f64,
    /// Relative scale jitter (e.g. 0.15 for +-15%).
    pub scale_jitter: f64,
    pub rotation_jitter_deg: f64,
    pub translation_jitter: f64,
    /// Strength of the monotone time warp (must stay below 1).
    pub warp_strength: f64,
    /// Amplitude of the out-of-plane (z) undulation.
    pub z_amplitude: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            class_count: 5,
            samples_per_class: 200,
            len_range: (48, 160),
            trajectory_rate_hz: 200.0,
            inertia_rate_hz: 60.0,
            noise_std: 0.02,
            bias_std: 0.01,
            scale_jitter: 0.15,
            rotation_jitter_deg: 10.0,
            translation_jitter: 0.2,
            warp_strength: 0.25,
            z_amplitude: 0.05,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::Config("samples_per_class must be positive".into()));
        }
        if self.len_range.0 > self.len_range.1 {
            return Err(Error::Config(format!(
                "empty length range {:?}",
                self.len_range
            )));
        }
        if self.trajectory_rate_hz <= 0.0 || self.inertia_rate_hz <= 0.0 {
            return Err(Error::Config("rates must be positive".into()));
        }
        if self.inertia_rate_hz > self.trajectory_rate_hz {
            return Err(Error::Config(
                "inertial rate above trajectory rate is not supported".into(),
            ));
        }
        if self.noise_std < 0.0 || self.bias_std < 0.0 {
            return Err(Error::Config("noise/bias std must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.scale_jitter) || !(0.0..1.0).contains(&self.warp_strength) {
            return Err(Error::Config(
                "scale_jitter and warp_strength must lie in [0, 1)".into(),
            ));
        }
        // The shortest admissible trajectory still yields MIN_SEQ_LEN
        // inertial steps after rate conversion.
        if self.effective_min_len() > self.len_range.1 {
            return Err(Error::Config(format!(
                "length range {:?} cannot yield {MIN_SEQ_LEN} inertial steps at rate ratio {}",
                self.len_range,
                self.inertia_rate_hz / self.trajectory_rate_hz
            )));
        }
        Ok(())
    }

    /// Lower trajectory-length bound after enforcing the inertial minimum.
    fn effective_min_len(&self) -> usize {
        let ratio = self.trajectory_rate_hz / self.inertia_rate_hz;
        let floor = (MIN_SEQ_LEN as f64 * ratio).ceil() as usize;
        self.len_range.0.max(floor).max(MIN_SEQ_LEN)
    }
}

/// Closed or open stroke defined by Catmull-Rom control points.
#[derive(Debug, Clone)]
pub(crate) struct Glyph {
    points: Vec<(f64, f64)>,
    closed: bool,
}

impl Glyph {
    /// Position at curve parameter `u` in [0, 1].
    pub(crate) fn eval(&self, u: f64) -> (f64, f64) {
        let n = self.points.len();
        let segments = if self.closed { n } else { n - 1 };
        let s = (u.clamp(0.0, 1.0) * segments as f64).min(segments as f64 - 1e-9);
        let seg = s.floor() as usize;
        let tau = s - seg as f64;
        let pt = |i: isize| -> (f64, f64) {
            let idx = if self.closed {
                i.rem_euclid(n as isize) as usize
            } else {
                i.clamp(0, n as isize - 1) as usize
            };
            self.points[idx]
        };
        let (p0, p1, p2, p3) = (
            pt(seg as isize - 1),
            pt(seg as isize),
            pt(seg as isize + 1),
            pt(seg as isize + 2),
        );
        let cr = |a: f64, b: f64, c: f64, d: f64| -> f64 {
            0.5 * ((2.0 * b)
                + (-a + c) * tau
                + (2.0 * a - 5.0 * b + 4.0 * c - d) * tau * tau
                + (-a + 3.0 * b - 3.0 * c + d) * tau * tau * tau)
        };
        (cr(p0.0, p1.0, p2.0, p3.0), cr(p0.1, p1.1, p2.1, p3.1))
    }

    /// Curve sampled at `n` parameters, centered and scaled to unit RMS
    /// radius — the shape signature used for template separation.
    fn signature(&self, n: usize) -> Vec<f64> {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|j| self.eval(j as f64 / (n - 1) as f64))
            .collect();
        let (mx, my) = pts
            .iter()
            .fold((0.0, 0.0), |(x, y), p| (x + p.0, y + p.1));
        let (mx, my) = (mx / n as f64, my / n as f64);
        let mut rms = 0.0;
        for p in &pts {
            rms += (p.0 - mx) * (p.0 - mx) + (p.1 - my) * (p.1 - my);
        }
        let rms = (rms / n as f64).sqrt().max(1e-9);
        let mut sig = Vec::with_capacity(2 * n);
        for p in &pts {
            sig.push((p.0 - mx) / rms);
            sig.push((p.1 - my) / rms);
        }
        sig
    }
}

fn signature_distance(a: &[f64], b: &[f64]) -> f64 {
    (a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / (a.len() as f64 / 2.0))
        .sqrt()
}

/// Minimum RMS distance between any two class signatures.
const TEMPLATE_SEPARATION: f64 = 0.55;

fn random_glyph(class: usize, rng: &mut ChaCha8Rng) -> Glyph {
    let n = rng.random_range(5..=8);
    let harmonics = rng.random_range(2..=3) as f64;
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let amp = rng.random_range(0.3..0.6);
    let theta0: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let direction = if rng.random_range(0..2) == 0 { 1.0 } else { -1.0 };
    let squash = rng.random_range(0.55..1.1);
    let mut points = Vec::with_capacity(n);
    for j in 0..n {
        let theta = theta0
            + direction
                * (std::f64::consts::TAU * j as f64 / n as f64 + rng.random_range(-0.25..0.25));
        let radius = 1.0 + amp * (harmonics * theta + phase).sin() + rng.random_range(-0.25..0.25);
        points.push((radius * theta.cos(), squash * radius * theta.sin()));
    }
    Glyph {
        points,
        closed: class.is_multiple_of(2),
    }
}

/// Draws one template per class, re-drawing any class whose shape lands too
/// close to an earlier one (deterministic: the retries consume the same
/// stream).
pub(crate) fn class_templates(cfg: &SynthConfig) -> Result<Vec<Glyph>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let mut glyphs: Vec<Glyph> = Vec::with_capacity(cfg.class_count);
    let mut sigs: Vec<Vec<f64>> = Vec::with_capacity(cfg.class_count);
    for class in 0..cfg.class_count {
        let mut accepted = None;
        for _attempt in 0..200 {
            let g = random_glyph(class, &mut rng);
            let sig = g.signature(64);
            if sigs
                .iter()
                .all(|s| signature_distance(s, &sig) >= TEMPLATE_SEPARATION)
            {
                accepted = Some((g, sig));
                break;
            }
        }
        let (g, sig) = accepted.ok_or_else(|| {
            Error::Numeric(format!(
                "could not separate template for class {class} after 200 draws"
            ))
        })?;
        glyphs.push(g);
        sigs.push(sig);
    }
    Ok(glyphs)
}

/// Strictly monotone time warp on [0, 1]: a sinusoidal phase wobble followed
/// by a power-law stretch. Fixes 0 and 1.
fn warp(t: f64, alpha: f64, gamma: f64) -> f64 {
    let u = t + alpha / std::f64::consts::TAU * (std::f64::consts::TAU * t).sin();
    u.clamp(0.0, 1.0).powf(gamma)
}

/// Derives the 6-channel inertial recording of a pen trajectory.
///
/// The trajectory is first resampled to the inertial rate. Acceleration is
/// the central second difference of position over `dt^2` (end values
/// replicate their neighbor); the z angular rate is the finite-difference
/// rate of the planar heading `atan2(vy, vx)`, carrying the previous heading
/// wherever the speed is too small to define one; the x/y angular rates are
/// small AR(1)-correlated wobble scaled by `noise_std`. Gaussian sensor
/// noise (`noise_std`) and a constant per-sample bias (`bias_std`) are added
/// to every channel. With `noise_std == bias_std == 0` the output is a
/// deterministic function of the trajectory.
pub fn kinematic_oracle(
    traj: &Seq,
    trajectory_rate_hz: f64,
    inertia_rate_hz: f64,
    noise_std: f64,
    bias_std: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Seq> {
    if traj.c != 3 {
        return Err(Error::Shape(format!(
            "kinematic oracle expects 3 trajectory channels, got {}",
            traj.c
        )));
    }
    let l_i = ((traj.l as f64) * inertia_rate_hz / trajectory_rate_hz).round() as usize;
    if l_i < 4 {
        return Err(Error::Data(format!(
            "trajectory of {} steps leaves only {l_i} inertial steps",
            traj.l
        )));
    }
    let p = resample(traj, l_i);
    let dt = 1.0 / inertia_rate_hz;
    let mut out = Seq::zeros(6, l_i);

    // Channels 0..3: linear acceleration per axis.
    for axis in 0..3 {
        let pos = p.channel(axis);
        let acc = out.channel_mut(axis);
        for t in 1..l_i - 1 {
            acc[t] = (pos[t + 1] - 2.0 * pos[t] + pos[t - 1]) / (dt * dt);
        }
        acc[0] = acc[1];
        acc[l_i - 1] = acc[l_i - 2];
    }

    // Channel 5: angular rate about z from the planar heading.
    {
        let px = p.channel(0);
        let py = p.channel(1);
        let mut vx = vec![0.0; l_i];
        let mut vy = vec![0.0; l_i];
        for t in 1..l_i - 1 {
            vx[t] = (px[t + 1] - px[t - 1]) / (2.0 * dt);
            vy[t] = (py[t + 1] - py[t - 1]) / (2.0 * dt);
        }
        vx[0] = (px[1] - px[0]) / dt;
        vy[0] = (py[1] - py[0]) / dt;
        vx[l_i - 1] = (px[l_i - 1] - px[l_i - 2]) / dt;
        vy[l_i - 1] = (py[l_i - 1] - py[l_i - 2]) / dt;

        let mut heading = vec![0.0; l_i];
        let mut prev = 0.0;
        for t in 0..l_i {
            let speed2 = vx[t] * vx[t] + vy[t] * vy[t];
            // Below this squared speed the direction is numerically
            // meaningless; keep the previous heading.
            if speed2 > 1e-12 {
                prev = vy[t].atan2(vx[t]);
            }
            heading[t] = prev;
        }
        let gz = out.channel_mut(5);
        for t in 1..l_i {
            let mut dth = heading[t] - heading[t - 1];
            // Unwrap across the atan2 branch cut.
            while dth > std::f64::consts::PI {
                dth -= std::f64::consts::TAU;
            }
            while dth < -std::f64::consts::PI {
                dth += std::f64::consts::TAU;
            }
            gz[t] = dth / dt;
        }
        gz[0] = gz[1];
    }

    // Channels 3..5: small correlated wobble around x/y (AR(1), rho = 0.9),
    // scaled by the sensor noise level.
    let wobble = Normal::new(0.0, noise_std).map_err(|e| Error::Numeric(e.to_string()))?;
    for axis in [3usize, 4] {
        let mut state = 0.0;
        let ch = out.channel_mut(axis);
        for v in ch.iter_mut() {
            state = 0.9 * state + wobble.sample(rng);
            *v = state;
        }
    }

    // Per-sample constant bias, then white sensor noise, on every channel.
    let bias_dist = Normal::new(0.0, bias_std).map_err(|e| Error::Numeric(e.to_string()))?;
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::Numeric(e.to_string()))?;
    for ci in 0..6 {
        let b = bias_dist.sample(rng);
        let ch = out.channel_mut(ci);
        for v in ch.iter_mut() {
            *v += b + noise.sample(rng);
        }
    }
    Ok(out)
}

/// Generates the paired synthetic corpus: a trajectory dataset, its derived
/// inertial dataset, and the ground-truth pairing manifest.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Dataset, PairingManifest)> {
    cfg.validate()?;
    let glyphs = class_templates(cfg)?;
    let l_min = cfg.effective_min_len();
    let l_max = cfg.len_range.1.max(l_min);
    let rot = cfg.rotation_jitter_deg.to_radians();

    let mut traj_samples = Vec::new();
    let mut inert_samples = Vec::new();
    let mut pairs = Vec::new();
    for (class, glyph) in glyphs.iter().enumerate() {
        for i in 0..cfg.samples_per_class {
            // One private stream per (class, sample): insensitive to
            // generation order and reproducible in isolation.
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(1 + (class * cfg.samples_per_class + i) as u64);

            let l_t = rng.random_range(l_min..=l_max);
            let alpha = rng.random_range(-cfg.warp_strength..=cfg.warp_strength);
            let gamma = {
                let g: f64 = rng.random_range(-1.0..=1.0);
                1.25f64.powf(g)
            };
            let scale = 1.0 + rng.random_range(-cfg.scale_jitter..=cfg.scale_jitter);
            let phi = rng.random_range(-rot..=rot);
            let (tx, ty) = (
                rng.random_range(-cfg.translation_jitter..=cfg.translation_jitter),
                rng.random_range(-cfg.translation_jitter..=cfg.translation_jitter),
            );
            let (zf1, zp1) = (rng.random_range(0.5..1.5), rng.random_range(0.0..1.0));
            let (zf2, zp2) = (rng.random_range(1.0..2.5), rng.random_range(0.0..1.0));
            let (za1, za2) = (rng.random_range(0.4..1.0), rng.random_range(0.2..0.6));

            let (cos_p, sin_p) = (phi.cos(), phi.sin());
            let mut seq = Seq::zeros(3, l_t);
            for t in 0..l_t {
                let tt = t as f64 / (l_t - 1) as f64;
                let u = warp(tt, alpha, gamma);
                let (gx, gy) = glyph.eval(u);
                let x = scale * (cos_p * gx - sin_p * gy) + tx;
                let y = scale * (sin_p * gx + cos_p * gy) + ty;
                let z = cfg.z_amplitude
                    * scale
                    * (za1 * (std::f64::consts::TAU * (zf1 * tt + zp1)).sin()
                        + za2 * (std::f64::consts::TAU * (zf2 * tt + zp2)).sin());
                *seq.at_mut(0, t) = x;
                *seq.at_mut(1, t) = y;
                *seq.at_mut(2, t) = z;
            }

            let inert_seq = kinematic_oracle(
                &seq,
                cfg.trajectory_rate_hz,
                cfg.inertia_rate_hz,
                cfg.noise_std,
                cfg.bias_std,
                &mut rng,
            )?;

            let traj_id = format!("trj-{class:02}-{i:04}");
            let inert_id = format!("imu-{class:02}-{i:04}");
            traj_samples.push(Sample {
                id: traj_id.clone(),
                domain: Domain::Trajectory,
                label: class,
                class_name: format!("g{class:02}"),
                rate_hz: cfg.trajectory_rate_hz,
                seq,
            });
            inert_samples.push(Sample {
                id: inert_id.clone(),
                domain: Domain::Inertia,
                label: class,
                class_name: format!("g{class:02}"),
                rate_hz: cfg.inertia_rate_hz,
                seq: inert_seq,
            });
            pairs.push(PairEntry {
                trajectory_id: traj_id,
                inertia_id: inert_id,
            });
        }
    }
    Ok((
        Dataset::from_samples(traj_samples)?,
        Dataset::from_samples(inert_samples)?,
        PairingManifest { pairs },
    ))
}
