//! R-peak detection and segmentation of denoised records into fixed-length
//! multi-lead pulses, plus the binary pulse-dataset format.
//!
//! Detection is a Pan-Tompkins-style chain: 5-15 Hz band-pass, five-point
//! derivative, squaring, 150 ms moving-window integration and an adaptive
//! dual threshold with a 200 ms refractory period. Detected peaks are
//! refined to the local maximum of the original signal within +-25 ms.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use crate::ecg::{CaoClass, EcgRecord, LEAD_II, NUM_LEADS};
use crate::filters::{
    apply_filter, design_highpass_butterworth, design_lowpass_butterworth, FilterSpec,
};
use crate::{Error, Result};

/// One fixed-length, R-aligned (or raw-windowed) 12-lead beat segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Pulse {
    pub source_record_id: String,
    /// 12 rows of exactly `L` samples, normalized (median-centered per
    /// lead, one shared max-abs scale across all leads).
    pub leads: Vec<Vec<f64>>,
    pub r_peak_index: usize,
    pub label: CaoClass,
}

impl Pulse {
    pub fn len(&self) -> usize {
        self.leads[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.leads[0].is_empty()
    }
}

/// Mirrors the raw-records vs preprocessed-pulses dataset split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Raw,
    Preprocessed,
}

impl Provenance {
    fn to_u8(self) -> u8 {
        match self {
            Provenance::Raw => 0,
            Provenance::Preprocessed => 1,
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(Provenance::Raw),
            1 => Ok(Provenance::Preprocessed),
            other => Err(Error::format("pulses.bin", format!("bad provenance byte {other}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PulseDataset {
    pub pulses: Vec<Pulse>,
    pub window_pre_s: f64,
    pub window_post_s: f64,
    pub sample_rate_hz: f64,
    pub provenance: Provenance,
}

impl PulseDataset {
    pub fn pulse_len(&self) -> usize {
        self.pulses.first().map_or(0, Pulse::len)
    }

    pub fn class_counts(&self) -> BTreeMap<CaoClass, usize> {
        let mut counts = BTreeMap::new();
        for class in CaoClass::ALL {
            counts.insert(class, 0);
        }
        for p in &self.pulses {
            *counts.get_mut(&p.label).unwrap() += 1;
        }
        counts
    }
}

fn moving_window_integral_centered(x: &[f64], window: usize) -> Vec<f64> {
    let n = x.len();
    let half = window / 2;
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + window - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Detects R peaks on one lead. Returns strictly increasing sample indices;
/// an empty result is valid. Signals shorter than 2 s are rejected because
/// the thresholds need that much material to initialize.
pub fn detect_r_peaks(signal: &[f64], fs: f64) -> Result<Vec<usize>> {
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::Signal(format!("invalid sample rate {fs}")));
    }
    if (signal.len() as f64) < 2.0 * fs {
        return Err(Error::Signal(format!(
            "need at least 2 s of signal for threshold adaptation, got {} samples at {fs} Hz",
            signal.len()
        )));
    }
    if !signal.iter().all(|v| v.is_finite()) {
        return Err(Error::Signal("non-finite sample".into()));
    }

    // 5-15 Hz QRS band-pass.
    let lowpass = design_lowpass_butterworth(15.0, 2, fs)?;
    let highpass = design_highpass_butterworth(5.0, 2, fs)?;
    let bp = apply_filter(&apply_filter(signal, &lowpass, true)?, &highpass, true)?;

    // Five-point derivative, squared.
    let n = bp.len();
    let mut sq = vec![0.0; n];
    for i in 4..n {
        let d = (2.0 * bp[i] + bp[i - 1] - bp[i - 3] - 2.0 * bp[i - 4]) / 8.0;
        sq[i] = d * d;
    }

    // Centered 150 ms integration keeps the energy peak aligned with the
    // QRS so the +-25 ms refinement window below suffices.
    let window = ((0.150 * fs).round() as usize).max(1);
    let mwi = moving_window_integral_centered(&sq, window);

    // Threshold initialization from the first 2 s.
    let init = &mwi[..(2.0 * fs) as usize];
    let init_max = init.iter().cloned().fold(0.0, f64::max);
    let init_mean = init.iter().sum::<f64>() / init.len() as f64;
    let mut spki = 0.25 * init_max;
    let mut npki = 0.5 * init_mean;

    let refractory = (0.200 * fs).round() as usize;
    let refine = (0.025 * fs).round() as usize;

    // Candidate = strict local max of the integrated signal that also
    // dominates its +-200 ms neighborhood; the integration plateau around
    // a QRS otherwise yields several early local maxima whose acceptance
    // would let the refractory period mask the true beat.
    let mut candidates = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(mwi[i] > mwi[i - 1] && mwi[i] >= mwi[i + 1]) {
            continue;
        }
        let lo = i.saturating_sub(refractory);
        let hi = (i + refractory + 1).min(n);
        let neighborhood_max = mwi[lo..hi].iter().cloned().fold(f64::MIN, f64::max);
        if mwi[i] >= neighborhood_max {
            candidates.push(i);
        }
    }

    let mut peaks: Vec<usize> = Vec::new();
    let mut last_accept: Option<usize> = None;
    for i in candidates {
        let threshold = npki + 0.25 * (spki - npki);
        let in_refractory = last_accept.is_some_and(|p| i - p < refractory);
        if mwi[i] > threshold && threshold > 0.0 && !in_refractory {
            spki = 0.125 * mwi[i] + 0.875 * spki;
            last_accept = Some(i);
            // refine to the local max of the original signal
            let lo = i.saturating_sub(refine);
            let hi = (i + refine + 1).min(signal.len());
            let best = (lo..hi)
                .max_by(|&a, &b| signal[a].partial_cmp(&signal[b]).unwrap())
                .unwrap();
            peaks.push(best);
        } else if !in_refractory {
            npki = 0.125 * mwi[i] + 0.875 * npki;
        }
    }

    // Refinement can only move a peak by +-25 ms, but make the strict
    // ordering an explicit guarantee.
    peaks.dedup();
    debug_assert!(peaks.windows(2).all(|w| w[0] < w[1]));
    Ok(peaks)
}

fn median_of(window: &[f64]) -> f64 {
    let mut sorted = window.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Centers each lead on its window median, then divides all 12 leads by one
/// shared scale (max absolute amplitude over the whole window, floored at
/// 1e-6) so inter-lead amplitude ratios survive.
fn normalize_window(leads: &mut [Vec<f64>]) {
    let mut max_abs: f64 = 0.0;
    for lead in leads.iter_mut() {
        let m = median_of(lead);
        for v in lead.iter_mut() {
            *v -= m;
            max_abs = max_abs.max(v.abs());
        }
    }
    let scale = max_abs.max(1e-6);
    for lead in leads.iter_mut() {
        for v in lead.iter_mut() {
            *v /= scale;
        }
    }
}

/// Cuts one pulse per peak whose full window fits inside the record; edge
/// peaks are silently skipped.
pub fn extract_pulses(
    record: &EcgRecord,
    peaks: &[usize],
    window_pre_s: f64,
    window_post_s: f64,
) -> Result<Vec<Pulse>> {
    let n = record.num_samples();
    if !peaks.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::Signal("peaks must be strictly increasing".into()));
    }
    if peaks.iter().any(|&p| p >= n) {
        return Err(Error::Signal("peak index outside record".into()));
    }
    let fs = record.sample_rate_hz;
    let pre = (window_pre_s * fs).round() as usize;
    let post = (window_post_s * fs).round() as usize;
    if pre + post == 0 {
        return Err(Error::Config("empty pulse window".into()));
    }
    let mut pulses = Vec::new();
    for &p in peaks {
        if p < pre || p + post > n {
            continue;
        }
        let mut leads: Vec<Vec<f64>> = record
            .leads
            .iter()
            .map(|lead| lead[p - pre..p + post].to_vec())
            .collect();
        normalize_window(&mut leads);
        pulses.push(Pulse {
            source_record_id: record.record_id.clone(),
            leads,
            r_peak_index: pre,
            label: record.label,
        });
    }
    Ok(pulses)
}

/// Builds either dataset arm over a uniform-rate record set.
///
/// Preprocessed arm: denoise, detect R peaks on lead II, extract aligned
/// pulses. Raw arm: cut non-overlapping fixed windows of the same length
/// with no alignment or filtering, so both arms feed the classifier
/// identically shaped inputs. Output ordering is record id, then offset.
pub fn build_dataset(
    records: &[EcgRecord],
    preprocess: bool,
    spec: &FilterSpec,
    window: (f64, f64),
) -> Result<PulseDataset> {
    if records.is_empty() {
        return Err(Error::Dataset("no records".into()));
    }
    let fs = records[0].sample_rate_hz;
    if records.iter().any(|r| r.sample_rate_hz != fs) {
        return Err(Error::Dataset("mixed sample rates".into()));
    }
    let (pre_s, post_s) = window;
    let pulse_len = ((pre_s + post_s) * fs).round() as usize;
    if pulse_len == 0 {
        return Err(Error::Config("empty pulse window".into()));
    }

    let mut order: Vec<&EcgRecord> = records.iter().collect();
    order.sort_by(|a, b| a.record_id.cmp(&b.record_id));

    let mut pulses = Vec::new();
    for record in order {
        if preprocess {
            let denoised = crate::filters::denoise_record(record, spec)?;
            let peaks = detect_r_peaks(&denoised.leads[LEAD_II], fs)?;
            pulses.extend(extract_pulses(&denoised, &peaks, pre_s, post_s)?);
        } else {
            let n = record.num_samples();
            let mut start = 0;
            while start + pulse_len <= n {
                let mut leads: Vec<Vec<f64>> = record
                    .leads
                    .iter()
                    .map(|lead| lead[start..start + pulse_len].to_vec())
                    .collect();
                normalize_window(&mut leads);
                pulses.push(Pulse {
                    source_record_id: record.record_id.clone(),
                    leads,
                    r_peak_index: 0,
                    label: record.label,
                });
                start += pulse_len;
            }
        }
    }
    Ok(PulseDataset {
        pulses,
        window_pre_s: pre_s,
        window_post_s: post_s,
        sample_rate_hz: fs,
        provenance: if preprocess {
            Provenance::Preprocessed
        } else {
            Provenance::Raw
        },
    })
}

const PULSES_MAGIC: &[u8; 4] = b"CAOP";
const PULSES_VERSION: u32 = 1;
const MAX_RECORD_ID_LEN: usize = 1024;
const MAX_PULSE_LEN: u32 = 1_000_000;

/// Summary sidecar written next to `pulses.bin`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PulseMeta {
    pub provenance: Provenance,
    pub window_pre_s: f64,
    pub window_post_s: f64,
    pub sample_rate_hz: f64,
    pub pulse_len: usize,
    pub counts: BTreeMap<String, usize>,
}

/// Encodes the dataset into the `pulses.bin` wire format.
pub fn encode_pulses_bin(dataset: &PulseDataset) -> Result<Vec<u8>> {
    let pulse_len = dataset.pulse_len();
    let mut out = Vec::new();
    out.extend_from_slice(PULSES_MAGIC);
    out.extend_from_slice(&PULSES_VERSION.to_le_bytes());
    out.extend_from_slice(&(pulse_len as u32).to_le_bytes());
    out.extend_from_slice(&(dataset.pulses.len() as u64).to_le_bytes());
    out.extend_from_slice(&dataset.sample_rate_hz.to_le_bytes());
    out.push(dataset.provenance.to_u8());
    for pulse in &dataset.pulses {
        if pulse.len() != pulse_len {
            return Err(Error::Dataset("pulses of mixed lengths".into()));
        }
        let id = pulse.source_record_id.as_bytes();
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.push(pulse.label.to_u8());
        out.extend_from_slice(&(pulse.r_peak_index as u32).to_le_bytes());
        for lead in &pulse.leads {
            for &v in lead {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format("pulses.bin", "truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(LittleEndian::read_u32(self.take(4)?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(LittleEndian::read_u64(self.take(8)?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(LittleEndian::read_f64(self.take(8)?))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

/// Decodes `pulses.bin` bytes. Window parameters live in the JSON sidecar,
/// so they come back as zero here; [`read_pulse_dataset`] merges them.
pub fn decode_pulses_bin(bytes: &[u8]) -> Result<PulseDataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != PULSES_MAGIC {
        return Err(Error::format("pulses.bin", "bad magic"));
    }
    let version = c.u32()?;
    if version != PULSES_VERSION {
        return Err(Error::format("pulses.bin", format!("unsupported version {version}")));
    }
    let pulse_len = c.u32()?;
    if pulse_len == 0 || pulse_len > MAX_PULSE_LEN {
        return Err(Error::format("pulses.bin", format!("bad pulse length {pulse_len}")));
    }
    let count = c.u64()?;
    let fs = c.f64()?;
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(Error::format("pulses.bin", "bad sample rate"));
    }
    let provenance = Provenance::from_u8(c.u8()?)?;
    // each pulse needs at least this many bytes; bounds the claimed count
    let min_pulse_bytes = 4 + 1 + 4 + NUM_LEADS as u64 * pulse_len as u64 * 4;
    if count > (bytes.len() as u64) / min_pulse_bytes + 1 {
        return Err(Error::format("pulses.bin", "pulse count exceeds payload"));
    }
    let mut pulses = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id_len = c.u32()? as usize;
        if id_len > MAX_RECORD_ID_LEN {
            return Err(Error::format("pulses.bin", "record id too long"));
        }
        let id = std::str::from_utf8(c.take(id_len)?)
            .map_err(|_| Error::format("pulses.bin", "record id not UTF-8"))?
            .to_string();
        let label = CaoClass::from_u8(c.u8()?)
            .map_err(|_| Error::format("pulses.bin", "bad label byte"))?;
        let r_peak_index = c.u32()?;
        if r_peak_index >= pulse_len {
            return Err(Error::format("pulses.bin", "r_peak_index outside pulse"));
        }
        let mut leads = Vec::with_capacity(NUM_LEADS);
        for _ in 0..NUM_LEADS {
            let raw = c.take(pulse_len as usize * 4)?;
            let mut lead = Vec::with_capacity(pulse_len as usize);
            for chunk in raw.chunks_exact(4) {
                let v = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
                if !v.is_finite() {
                    return Err(Error::format("pulses.bin", "non-finite sample"));
                }
                lead.push(v);
            }
            leads.push(lead);
        }
        pulses.push(Pulse {
            source_record_id: id,
            leads,
            r_peak_index: r_peak_index as usize,
            label,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::format("pulses.bin", "trailing bytes"));
    }
    Ok(PulseDataset {
        pulses,
        window_pre_s: 0.0,
        window_post_s: 0.0,
        sample_rate_hz: fs,
        provenance,
    })
}

/// Writes `pulses.bin` and `pulses.meta.json` into `dir`.
pub fn write_pulse_dataset(dir: &Path, dataset: &PulseDataset) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let bin_path = dir.join("pulses.bin");
    let bytes = encode_pulses_bin(dataset)?;
    std::fs::File::create(&bin_path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    let meta = PulseMeta {
        provenance: dataset.provenance,
        window_pre_s: dataset.window_pre_s,
        window_post_s: dataset.window_post_s,
        sample_rate_hz: dataset.sample_rate_hz,
        pulse_len: dataset.pulse_len(),
        counts: dataset
            .class_counts()
            .into_iter()
            .map(|(k, v)| (k.as_str().to_string(), v))
            .collect(),
    };
    let meta_path = dir.join("pulses.meta.json");
    std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(meta_path.display().to_string(), e))?;
    Ok(())
}

/// Reads `pulses.bin` plus its sidecar back into a dataset.
pub fn read_pulse_dataset(dir: &Path) -> Result<PulseDataset> {
    let bin_path = dir.join("pulses.bin");
    let bytes =
        std::fs::read(&bin_path).map_err(|e| Error::io(bin_path.display().to_string(), e))?;
    let mut dataset = decode_pulses_bin(&bytes)?;
    let meta_path = dir.join("pulses.meta.json");
    let meta: PulseMeta = serde_json::from_str(
        &std::fs::read_to_string(&meta_path)
            .map_err(|e| Error::io(meta_path.display().to_string(), e))?,
    )?;
    dataset.window_pre_s = meta.window_pre_s;
    dataset.window_post_s = meta.window_post_s;
    Ok(dataset)
}
