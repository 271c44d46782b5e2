//! Sample/dataset types, the JSON-lines interchange format, preprocessing,
//! and the synthetic paired corpus generator.
//!
//! A dataset file is UTF-8 JSON lines, one record per sequence:
//!
//! ```json
//! {"id":"t-003-17","domain":"trajectory","label":3,"class_name":"g3",
//!  "rate_hz":200.0,"data":[[x,y,z],[x,y,z],...]}
//! ```
//!
//! `data` holds one row per timestep; row width is the domain's channel
//! count (6 inertial: 3 accelerometer + 3 gyroscope axes, or 3 trajectory:
//! x/y/z position). In memory sequences are stored channel-major.

pub mod synth;

use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// Minimum usable sequence length; shorter records are rejected on load.
pub const MIN_SEQ_LEN: usize = 16;

/// Which side of the translation a sequence lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Inertia,
    Trajectory,
}

impl Domain {
    pub fn channels(self) -> usize {
        match self {
            Domain::Inertia => 6,
            Domain::Trajectory => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Domain::Inertia => "inertia",
            Domain::Trajectory => "trajectory",
        }
    }

    pub fn other(self) -> Domain {
        match self {
            Domain::Inertia => Domain::Trajectory,
            Domain::Trajectory => Domain::Inertia,
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inertia" => Ok(Domain::Inertia),
            "trajectory" => Ok(Domain::Trajectory),
            other => Err(Error::Data(format!(
                "unknown domain {other:?} (expected \"inertia\" or \"trajectory\")"
            ))),
        }
    }
}

/// A channel-major `(C, L)` sequence: `values[c * l + t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Seq {
    pub c: usize,
    pub l: usize,
    pub values: Vec<f64>,
}

impl Seq {
    pub fn zeros(c: usize, l: usize) -> Self {
        Seq {
            c,
            l,
            values: vec![0.0; c * l],
        }
    }

    pub fn from_values(c: usize, l: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), c * l, "sequence data length mismatch");
        Seq { c, l, values }
    }

    #[inline(always)]
    pub fn at(&self, ci: usize, t: usize) -> f64 {
        self.values[ci * self.l + t]
    }

    #[inline(always)]
    pub fn at_mut(&mut self, ci: usize, t: usize) -> &mut f64 {
        &mut self.values[ci * self.l + t]
    }

    pub fn channel(&self, ci: usize) -> &[f64] {
        &self.values[ci * self.l..(ci + 1) * self.l]
    }

    pub fn channel_mut(&mut self, ci: usize) -> &mut [f64] {
        &mut self.values[ci * self.l..(ci + 1) * self.l]
    }
}

/// One recorded sequence with its identity and class.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub domain: Domain,
    pub label: usize,
    pub class_name: String,
    pub rate_hz: f64,
    pub seq: Seq,
}

/// A homogeneous collection of samples from one domain at one rate.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub domain: Domain,
    pub rate_hz: f64,
    /// Class names indexed by label; labels are dense `0..K`.
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Dataset {
    /// Validating constructor: checks domain/rate homogeneity, channel
    /// counts, minimum lengths, id uniqueness, and dense labels.
    pub fn from_samples(samples: Vec<Sample>) -> Result<Dataset> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Data("dataset contains no samples".into()))?;
        let (domain, rate_hz) = (first.domain, first.rate_hz);
        let mut by_label: BTreeMap<usize, String> = BTreeMap::new();
        let mut ids = HashSet::new();
        for s in &samples {
            if s.domain != domain {
                return Err(Error::Data(format!(
                    "sample {}: domain {} in a {} dataset",
                    s.id,
                    s.domain.name(),
                    domain.name()
                )));
            }
            if s.rate_hz != rate_hz {
                return Err(Error::Data(format!(
                    "sample {}: rate {} Hz differs from dataset rate {} Hz",
                    s.id, s.rate_hz, rate_hz
                )));
            }
            if s.seq.c != domain.channels() {
                return Err(Error::Data(format!(
                    "sample {}: {} channels, {} domain requires {}",
                    s.id,
                    s.seq.c,
                    domain.name(),
                    domain.channels()
                )));
            }
            if s.seq.l < MIN_SEQ_LEN {
                return Err(Error::Data(format!(
                    "sample {}: length {} below minimum {MIN_SEQ_LEN}",
                    s.id, s.seq.l
                )));
            }
            if !s.seq.values.iter().all(|v| v.is_finite()) {
                return Err(Error::Data(format!("sample {}: non-finite value", s.id)));
            }
            if !ids.insert(s.id.clone()) {
                return Err(Error::Data(format!("duplicate sample id {}", s.id)));
            }
            match by_label.get(&s.label) {
                Some(name) if name != &s.class_name => {
                    return Err(Error::Data(format!(
                        "label {} maps to both {:?} and {:?}",
                        s.label, name, s.class_name
                    )));
                }
                None => {
                    by_label.insert(s.label, s.class_name.clone());
                }
                _ => {}
            }
        }
        let k = by_label.keys().max().unwrap() + 1;
        if by_label.len() != k {
            let missing: Vec<usize> = (0..k).filter(|l| !by_label.contains_key(l)).collect();
            return Err(Error::Data(format!(
                "labels are not dense: no samples for {missing:?}"
            )));
        }
        let class_names = by_label.into_values().collect();
        Ok(Dataset {
            domain,
            rate_hz,
            class_names,
            samples,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    domain: String,
    label: usize,
    class_name: String,
    rate_hz: f64,
    data: Vec<Vec<f64>>,
}

/// Loads a JSON-lines dataset, reporting malformed lines by number.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let reader = std::io::BufReader::new(file);
    let mut samples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let domain: Domain = rec.domain.parse().map_err(|e| {
            Error::Data(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        let c = domain.channels();
        let l = rec.data.len();
        let mut values = vec![0.0; c * l];
        for (t, row) in rec.data.iter().enumerate() {
            if row.len() != c {
                return Err(Error::Data(format!(
                    "{}:{}: timestep {t} has {} values, {} domain requires {c}",
                    path.display(),
                    lineno + 1,
                    row.len(),
                    domain.name()
                )));
            }
            for (ci, &v) in row.iter().enumerate() {
                values[ci * l + t] = v;
            }
        }
        samples.push(Sample {
            id: rec.id,
            domain,
            label: rec.label,
            class_name: rec.class_name,
            rate_hz: rec.rate_hz,
            seq: Seq::from_values(c, l, values),
        });
    }
    Dataset::from_samples(samples)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes a dataset in the JSON-lines format read by [`load_dataset`].
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    for s in &ds.samples {
        let data: Vec<Vec<f64>> = (0..s.seq.l)
            .map(|t| (0..s.seq.c).map(|ci| s.seq.at(ci, t)).collect())
            .collect();
        let rec = RawRecord {
            id: s.id.clone(),
            domain: s.domain.name().to_string(),
            label: s.label,
            class_name: s.class_name.clone(),
            rate_hz: s.rate_hz,
            data,
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Ground-truth correspondence between the two synthetic domains, written by
/// the generator and consumed only by evaluation.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PairingManifest {
    pub pairs: Vec<PairEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairEntry {
    pub trajectory_id: String,
    pub inertia_id: String,
}

impl PairingManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<PairingManifest> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }

    /// Counterpart id of a trajectory sample, if paired.
    pub fn inertia_for(&self, trajectory_id: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|p| p.trajectory_id == trajectory_id)
            .map(|p| p.inertia_id.as_str())
    }

    pub fn trajectory_for(&self, inertia_id: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|p| p.inertia_id == inertia_id)
            .map(|p| p.trajectory_id.as_str())
    }
}

/// Smooths one channel with a 5-point moving average; windows are clipped to
/// the sequence bounds near the ends ([t-2, t+2] intersected with [0, L)).
pub fn moving_average_5(x: &[f64]) -> Vec<f64> {
    let l = x.len();
    let mut out = vec![0.0; l];
    for (t, o) in out.iter_mut().enumerate() {
        let lo = t.saturating_sub(2);
        let hi = (t + 2).min(l - 1);
        let w = &x[lo..=hi];
        *o = w.iter().sum::<f64>() / w.len() as f64;
    }
    out
}

/// Denoises an inertial sample in place (moving average per channel).
pub fn preprocess_inertial(s: &mut Sample) {
    debug_assert_eq!(s.domain, Domain::Inertia);
    for ci in 0..s.seq.c {
        let sm = moving_average_5(s.seq.channel(ci));
        s.seq.channel_mut(ci).copy_from_slice(&sm);
    }
}

/// Re-origins a trajectory sample in place: every channel has its first
/// timestep subtracted, so all trajectories start at the origin.
pub fn preprocess_trajectory(s: &mut Sample) {
    debug_assert_eq!(s.domain, Domain::Trajectory);
    for ci in 0..s.seq.c {
        let ch = s.seq.channel_mut(ci);
        let origin = ch[0];
        ch.iter_mut().for_each(|v| *v -= origin);
    }
}

/// Runs the domain's preprocessing over every sample.
pub fn preprocess_dataset(ds: &mut Dataset) {
    match ds.domain {
        Domain::Inertia => ds.samples.iter_mut().for_each(preprocess_inertial),
        Domain::Trajectory => ds.samples.iter_mut().for_each(preprocess_trajectory),
    }
}

/// Per-channel standardization statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Computes per-channel mean/std over every timestep of every sample and
/// standardizes the dataset in place. A zero-variance channel gets std
/// clamped to 1, so it standardizes to zeros instead of dividing by zero.
pub fn standardize(ds: &mut Dataset) -> ChannelStats {
    let c = ds.domain.channels();
    let mut mean = vec![0.0; c];
    let mut count = 0usize;
    for s in &ds.samples {
        for ci in 0..c {
            mean[ci] += s.seq.channel(ci).iter().sum::<f64>();
        }
        count += s.seq.l;
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    let mut var = vec![0.0; c];
    for s in &ds.samples {
        for ci in 0..c {
            var[ci] += s
                .seq
                .channel(ci)
                .iter()
                .map(|&v| (v - mean[ci]) * (v - mean[ci]))
                .sum::<f64>();
        }
    }
    let std: Vec<f64> = var
        .iter()
        .map(|&v| {
            let sd = (v / count as f64).sqrt();
            if sd < 1e-12 {
                1.0
            } else {
                sd
            }
        })
        .collect();
    let stats = ChannelStats { mean, std };
    apply_stats(ds, &stats);
    stats
}

/// Standardizes a dataset with existing statistics (the evaluation path,
/// which must reuse the stats stored in a checkpoint).
pub fn apply_stats(ds: &mut Dataset, stats: &ChannelStats) {
    for s in ds.samples.iter_mut() {
        apply_stats_seq(&mut s.seq, stats);
    }
}

pub fn apply_stats_seq(seq: &mut Seq, stats: &ChannelStats) {
    for ci in 0..seq.c {
        let (m, sd) = (stats.mean[ci], stats.std[ci]);
        seq.channel_mut(ci).iter_mut().for_each(|v| *v = (*v - m) / sd);
    }
}

/// Maps a standardized sequence back to raw units.
pub fn unapply_stats_seq(seq: &mut Seq, stats: &ChannelStats) {
    for ci in 0..seq.c {
        let (m, sd) = (stats.mean[ci], stats.std[ci]);
        seq.channel_mut(ci).iter_mut().for_each(|v| *v = *v * sd + m);
    }
}

/// Class-stratified split. Each class's samples are shuffled with the seed
/// and divided `train_frac` / `1 - train_frac`; classes with at least two
/// samples keep at least one on each side.
pub fn split(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(0.0..=1.0).contains(&train_frac) {
        return Err(Error::Config(format!(
            "train fraction {train_frac} outside [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in 0..ds.class_count() {
        let mut idx: Vec<usize> = (0..ds.len())
            .filter(|&i| ds.samples[i].label == label)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let n_train = ((train_frac * n as f64).round() as usize).clamp(
            usize::from(n >= 2),
            n - usize::from(n >= 2),
        );
        for (pos, &i) in idx.iter().enumerate() {
            if pos < n_train {
                train.push(ds.samples[i].clone());
            } else {
                test.push(ds.samples[i].clone());
            }
        }
    }
    Ok((Dataset::from_samples(train)?, Dataset::from_samples(test)?))
}

/// Linear resampling of a sequence to a new length on normalized time. The
/// endpoints always map to the endpoints; `target == l` returns a bit-exact
/// copy.
pub fn resample(seq: &Seq, target: usize) -> Seq {
    assert!(target > 0, "cannot resample to length 0");
    if target == seq.l {
        return seq.clone();
    }
    let mut out = Seq::zeros(seq.c, target);
    for ci in 0..seq.c {
        let src = seq.channel(ci);
        let dst = out.channel_mut(ci);
        if target == 1 {
            dst[0] = src[0];
            continue;
        }
        let scale = (seq.l - 1) as f64 / (target - 1) as f64;
        for (j, d) in dst.iter_mut().enumerate() {
            let x = j as f64 * scale;
            let i0 = (x.floor() as usize).min(seq.l - 1);
            let i1 = (i0 + 1).min(seq.l - 1);
            let frac = x - i0 as f64;
            *d = src[i0] * (1.0 - frac) + src[i1] * frac;
        }
    }
    out
}
