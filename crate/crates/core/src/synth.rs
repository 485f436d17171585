//! Seeded synthetic 12-lead ECG generator.
//!
//! Beats are sums of five Gaussian bumps (P, Q, R, S, T) tiled at jittered
//! RR intervals and projected onto the 12 leads through a fixed gain table.
//! The culprit-artery class is encoded as an ST-segment offset on the
//! clinically associated lead group, with reciprocal depression on the
//! opposing group. Ground truth (R times and the clean per-lead signal) is
//! returned alongside every record, which is what makes the downstream
//! detection and classification claims testable.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ecg::{CaoClass, EcgRecord, NUM_LEADS};
use crate::{Error, Result};

/// Per-lead projection gains for the base beat, in `LEAD_NAMES` order:
/// I, II, III, aVR, aVL, aVF, V1..V6. Lead II carries the largest positive
/// R wave, which is why peak detection runs there. aVR is inverted.
pub const LEAD_GAINS: [f64; NUM_LEADS] = [
    0.70, 1.00, 0.55, -0.85, 0.35, 0.75, 0.45, 0.60, 0.80, 0.90, 0.85, 0.70,
];

/// One Gaussian component of the beat template. Center is relative to the
/// R peak, in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bump {
    pub amplitude_mv: f64,
    pub center_s: f64,
    pub sigma_s: f64,
}

impl Bump {
    fn eval(&self, t: f64) -> f64 {
        let d = t - self.center_s;
        self.amplitude_mv * (-d * d / (2.0 * self.sigma_s * self.sigma_s)).exp()
    }
}

/// P, Q, R, S, T bumps of one cardiac cycle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BeatModel {
    pub bumps: [Bump; 5],
}

impl Default for BeatModel {
    fn default() -> Self {
        BeatModel {
            bumps: [
                Bump { amplitude_mv: 0.15, center_s: -0.20, sigma_s: 0.025 }, // P
                Bump { amplitude_mv: -0.10, center_s: -0.03, sigma_s: 0.010 }, // Q
                Bump { amplitude_mv: 1.00, center_s: 0.00, sigma_s: 0.012 },  // R
                Bump { amplitude_mv: -0.20, center_s: 0.03, sigma_s: 0.010 }, // S
                Bump { amplitude_mv: 0.30, center_s: 0.25, sigma_s: 0.050 },  // T
            ],
        }
    }
}

impl BeatModel {
    /// Analytic beat value at time `t` relative to the R peak.
    pub fn eval(&self, t: f64) -> f64 {
        self.bumps.iter().map(|b| b.eval(t)).sum()
    }
}

/// Time span of one sampled cycle relative to R: [-0.35 s, +0.45 s).
pub const TEMPLATE_PRE_S: f64 = 0.35;
pub const TEMPLATE_POST_S: f64 = 0.45;

/// Samples one cardiac cycle of `model` at `fs`. The R peak lands at
/// sample `round(0.35 * fs)`.
pub fn generate_beat_template_with(model: &BeatModel, fs: f64) -> Result<Vec<f64>> {
    if !fs.is_finite() || fs < 100.0 {
        return Err(Error::Config(format!("template sample rate {fs} below 100 Hz")));
    }
    let n = ((TEMPLATE_PRE_S + TEMPLATE_POST_S) * fs).round() as usize;
    Ok((0..n)
        .map(|i| model.eval(i as f64 / fs - TEMPLATE_PRE_S))
        .collect())
}

pub fn generate_beat_template(fs: f64) -> Result<Vec<f64>> {
    generate_beat_template_with(&BeatModel::default(), fs)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub baseline_wander_amp_mv: f64,
    pub baseline_wander_freq_hz: f64,
    pub powerline_amp_mv: f64,
    pub powerline_freq_hz: f64,
    pub white_noise_std_mv: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            baseline_wander_amp_mv: 0.3,
            baseline_wander_freq_hz: 0.2,
            powerline_amp_mv: 0.15,
            powerline_freq_hz: 60.0,
            white_noise_std_mv: 0.05,
        }
    }
}

impl NoiseConfig {
    /// All noise sources off; record equals its clean reference exactly.
    pub fn none() -> Self {
        NoiseConfig {
            baseline_wander_amp_mv: 0.0,
            baseline_wander_freq_hz: 0.2,
            powerline_amp_mv: 0.0,
            powerline_freq_hz: 60.0,
            white_noise_std_mv: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub fs_hz: f64,
    pub duration_s: f64,
    pub heart_rate_bpm: (f64, f64),
    pub class: CaoClass,
    pub st_elevation_mv: f64,
    pub noise: NoiseConfig,
    pub rng_seed: u64,
}

impl SynthConfig {
    pub fn new(class: CaoClass, rng_seed: u64) -> Self {
        SynthConfig {
            fs_hz: 500.0,
            duration_s: 12.0,
            heart_rate_bpm: (60.0, 80.0),
            class,
            st_elevation_mv: 0.2,
            noise: NoiseConfig::default(),
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.fs_hz.is_finite() || self.fs_hz < 100.0 {
            return Err(Error::Config(format!("fs {} below 100 Hz", self.fs_hz)));
        }
        if !self.duration_s.is_finite() || self.duration_s < 4.0 {
            return Err(Error::Config("duration must be >= 4 s".into()));
        }
        let (lo, hi) = self.heart_rate_bpm;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("bad heart rate range ({lo}, {hi})")));
        }
        if self.fs_hz <= 2.0 * self.noise.powerline_freq_hz {
            return Err(Error::Config(
                "fs must exceed twice the powerline frequency".into(),
            ));
        }
        let n = &self.noise;
        if n.baseline_wander_amp_mv < 0.0
            || n.powerline_amp_mv < 0.0
            || n.white_noise_std_mv < 0.0
            || self.st_elevation_mv < 0.0
        {
            return Err(Error::Config("amplitudes must be non-negative".into()));
        }
        Ok(())
    }
}

/// What the generator knows that the pipeline has to rediscover.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub record_id: String,
    pub r_peak_times_s: Vec<f64>,
    pub class: CaoClass,
    /// Clean per-lead signal before any noise was added.
    pub clean_leads: Vec<Vec<f64>>,
}

/// Raised-cosine-edged ST window: 0 before R+0.04 s, ramps over 0.02 s,
/// flat 1 over [R+0.06, R+0.14], back to 0 by R+0.16.
pub fn st_window(t_rel_r: f64) -> f64 {
    const START: f64 = 0.04;
    const END: f64 = 0.16;
    const RAMP: f64 = 0.02;
    if t_rel_r <= START || t_rel_r >= END {
        0.0
    } else if t_rel_r < START + RAMP {
        0.5 * (1.0 - (PI * (t_rel_r - START) / RAMP).cos())
    } else if t_rel_r > END - RAMP {
        0.5 * (1.0 - (PI * (END - t_rel_r) / RAMP).cos())
    } else {
        1.0
    }
}

/// Signed per-lead ST multiplier for a class: +1 on the elevated group,
/// -0.5 reciprocal depression on the opposing group, 0 elsewhere.
/// Groups: LAD anterior {V1-V4} vs {II,III,aVF}; LCX lateral {I,aVL,V5,V6}
/// vs {V1,V2}; RCA inferior {II,III,aVF} vs {I,aVL}.
pub fn st_pattern(class: CaoClass) -> [f64; NUM_LEADS] {
    let mut p = [0.0; NUM_LEADS];
    let (up, down): (&[usize], &[usize]) = match class {
        CaoClass::Lad => (&[6, 7, 8, 9], &[1, 2, 5]),
        CaoClass::Lcx => (&[0, 4, 10, 11], &[6, 7]),
        CaoClass::Rca => (&[1, 2, 5], &[0, 4]),
    };
    for &i in up {
        p[i] = 1.0;
    }
    for &i in down {
        p[i] = -0.5;
    }
    p
}

/// Generates one record plus its ground truth. Deterministic in the seed.
pub fn generate_record(record_id: &str, config: &SynthConfig) -> Result<(EcgRecord, GroundTruth)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let fs = config.fs_hz;
    let n = (config.duration_s * fs).round() as usize;
    let model = BeatModel::default();

    // Beat grid: base rate drawn once per record, +-3% jitter per interval.
    let bpm = if config.heart_rate_bpm.0 == config.heart_rate_bpm.1 {
        config.heart_rate_bpm.0
    } else {
        rng.gen_range(config.heart_rate_bpm.0..config.heart_rate_bpm.1)
    };
    let rr = 60.0 / bpm;
    let mut r_times = Vec::new();
    let mut t = TEMPLATE_PRE_S;
    while t < config.duration_s - 0.30 {
        r_times.push(t);
        t += rr * (1.0 + rng.gen_range(-0.03..0.03));
    }

    let pattern = st_pattern(config.class);
    let mut clean = vec![vec![0.0; n]; NUM_LEADS];
    for &r in &r_times {
        let lo = (((r - TEMPLATE_PRE_S - 0.10) * fs).floor().max(0.0)) as usize;
        let hi = ((((r + TEMPLATE_POST_S + 0.10) * fs).ceil()) as usize).min(n);
        for i in lo..hi {
            let trel = i as f64 / fs - r;
            let base = model.eval(trel);
            let st = st_window(trel) * config.st_elevation_mv;
            for (lead, row) in clean.iter_mut().enumerate() {
                row[i] += LEAD_GAINS[lead] * base + pattern[lead] * st;
            }
        }
    }

    // Noise on top of the clean reference. Baseline wander models
    // electrode motion, so each lead gets its own phase and an amplitude
    // factor in [0.5, 1.5]; powerline pickup is common-mode, so its phase
    // is shared across leads. White noise is independent per lead.
    let powerline_phase = rng.gen_range(0.0..2.0 * PI);
    let white = Normal::new(0.0, 1.0).expect("unit normal");
    let mut leads = clean.clone();
    let nz = &config.noise;
    for row in leads.iter_mut() {
        let baseline_phase = rng.gen_range(0.0..2.0 * PI);
        let baseline_amp = nz.baseline_wander_amp_mv * rng.gen_range(0.5..1.5);
        for (i, v) in row.iter_mut().enumerate() {
            let t = i as f64 / fs;
            if nz.baseline_wander_amp_mv > 0.0 {
                *v += baseline_amp
                    * (2.0 * PI * nz.baseline_wander_freq_hz * t + baseline_phase).sin();
            }
            if nz.powerline_amp_mv > 0.0 {
                *v += nz.powerline_amp_mv
                    * (2.0 * PI * nz.powerline_freq_hz * t + powerline_phase).sin();
            }
            if nz.white_noise_std_mv > 0.0 {
                *v += nz.white_noise_std_mv * white.sample(&mut rng);
            }
        }
    }

    let record = EcgRecord::new(record_id, leads, fs, config.class)?;
    let truth = GroundTruth {
        record_id: record_id.to_string(),
        r_peak_times_s: r_times,
        class: config.class,
        clean_leads: clean,
    };
    Ok((record, truth))
}

/// Splitmix64 step, used to derive independent per-record seeds.
pub fn derive_seed(base: u64, salt: u64) -> u64 {
    let mut z = base
        .wrapping_add(salt.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Generates `(n_lad, n_lcx, n_rca)` records with derived per-record seeds.
/// The default desk-scale counts (120, 20, 80) keep the roughly 6:1:4 class
/// imbalance of the clinical dataset this stands in for.
pub fn generate_dataset(
    n_per_class: (usize, usize, usize),
    base_config: &SynthConfig,
    seed: u64,
) -> Result<Vec<(EcgRecord, GroundTruth)>> {
    let counts = [n_per_class.0, n_per_class.1, n_per_class.2];
    let mut out = Vec::new();
    let mut index = 0u64;
    for (class, &count) in CaoClass::ALL.iter().zip(&counts) {
        for i in 0..count {
            let mut config = base_config.clone();
            config.class = *class;
            config.rng_seed = derive_seed(seed, index);
            let record_id = format!("{}-{:04}", class.as_str().to_lowercase(), i);
            out.push(generate_record(&record_id, &config)?);
            index += 1;
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct GroundTruthEntry {
    record_id: String,
    r_peak_times_s: Vec<f64>,
    class: String,
}

/// Writes `ground_truth.jsonl` next to the record dataset.
pub fn write_ground_truth(dir: &Path, truths: &[GroundTruth]) -> Result<()> {
    let path = dir.join("ground_truth.jsonl");
    let file = File::create(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for t in truths {
        let entry = GroundTruthEntry {
            record_id: t.record_id.clone(),
            r_peak_times_s: t.r_peak_times_s.clone(),
            class: t.class.as_str().to_string(),
        };
        serde_json::to_writer(&mut w, &entry)?;
        w.write_all(b"\n")
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(())
}

/// Reads `ground_truth.jsonl`; clean references are not persisted.
pub fn read_ground_truth(dir: &Path) -> Result<Vec<GroundTruth>> {
    let path = dir.join("ground_truth.jsonl");
    let file = File::open(&path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: GroundTruthEntry = serde_json::from_str(&line)?;
        out.push(GroundTruth {
            record_id: entry.record_id,
            r_peak_times_s: entry.r_peak_times_s,
            class: CaoClass::from_str_name(&entry.class)?,
            clean_leads: Vec::new(),
        });
    }
    Ok(out)
}
