//! IIR noise reduction: powerline notch and Butterworth high-pass, with
//! optional zero-phase (forward-backward) application.
//!
//! All arithmetic is double precision; low cutoff-to-rate ratios make the
//! recursions numerically delicate.

use serde::{Deserialize, Serialize};

use crate::ecg::EcgRecord;
use crate::{Error, Result};

/// One second-order IIR section, normalized so a0 = 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Effective order of the section (2, or 1 when the z^-2 taps are zero).
    fn order(&self) -> usize {
        if self.b2 == 0.0 && self.a2 == 0.0 {
            1
        } else {
            2
        }
    }

    /// Complex frequency response at `freq_hz` for sample rate `fs`.
    pub fn response_at(&self, freq_hz: f64, fs: f64) -> (f64, f64) {
        let w = 2.0 * std::f64::consts::PI * freq_hz / fs;
        // H(z) evaluated at z = e^{jw}; z^-1 = e^{-jw}.
        let (c1, s1) = (w.cos(), -w.sin());
        let (c2, s2) = ((2.0 * w).cos(), -(2.0 * w).sin());
        let num_re = self.b0 + self.b1 * c1 + self.b2 * c2;
        let num_im = self.b1 * s1 + self.b2 * s2;
        let den_re = 1.0 + self.a1 * c1 + self.a2 * c2;
        let den_im = self.a1 * s1 + self.a2 * s2;
        let d = den_re * den_re + den_im * den_im;
        (
            (num_re * den_re + num_im * den_im) / d,
            (num_im * den_re - num_re * den_im) / d,
        )
    }
}

/// A cascade of biquad sections applied in series.
#[derive(Debug, Clone, PartialEq)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
}

impl BiquadCascade {
    pub fn single(section: Biquad) -> Self {
        BiquadCascade {
            sections: vec![section],
        }
    }

    pub fn order(&self) -> usize {
        self.sections.iter().map(Biquad::order).sum()
    }

    /// Magnitude response |H(f)| of the whole cascade.
    pub fn magnitude_at(&self, freq_hz: f64, fs: f64) -> f64 {
        self.sections
            .iter()
            .map(|s| {
                let (re, im) = s.response_at(freq_hz, fs);
                re.hypot(im)
            })
            .product()
    }
}

/// Unit-DC-gain notch centered at `f0` with bandwidth `f0 / q`.
pub fn design_notch(f0: f64, q: f64, fs: f64) -> Result<Biquad> {
    if !(f0 > 0.0 && f0 < fs / 2.0) || !f0.is_finite() {
        return Err(Error::FilterDesign(format!(
            "notch frequency {f0} Hz outside (0, {})",
            fs / 2.0
        )));
    }
    if !(q > 0.0 && q.is_finite()) {
        return Err(Error::FilterDesign(format!("notch Q must be positive, got {q}")));
    }
    let w0 = 2.0 * std::f64::consts::PI * f0 / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    Ok(Biquad {
        b0: 1.0 / a0,
        b1: -2.0 * w0.cos() / a0,
        b2: 1.0 / a0,
        a1: -2.0 * w0.cos() / a0,
        a2: (1.0 - alpha) / a0,
    })
}

/// Butterworth high-pass of the given order, realized as a biquad cascade
/// via the bilinear transform with cutoff pre-warping. |H(cutoff)| = 1/sqrt(2).
pub fn design_highpass_butterworth(cutoff: f64, order: usize, fs: f64) -> Result<BiquadCascade> {
    design_butterworth(cutoff, order, fs, false)
}

/// Butterworth low-pass counterpart, used by the QRS detection band-pass.
pub fn design_lowpass_butterworth(cutoff: f64, order: usize, fs: f64) -> Result<BiquadCascade> {
    design_butterworth(cutoff, order, fs, true)
}

fn design_butterworth(cutoff: f64, order: usize, fs: f64, lowpass: bool) -> Result<BiquadCascade> {
    if !(cutoff > 0.0 && cutoff < fs / 2.0) || !cutoff.is_finite() {
        return Err(Error::FilterDesign(format!(
            "cutoff {cutoff} Hz outside (0, {})",
            fs / 2.0
        )));
    }
    if order < 1 {
        return Err(Error::FilterDesign("filter order must be >= 1".into()));
    }
    let k = 2.0 * fs;
    let wc = k * (std::f64::consts::PI * cutoff / fs).tan();
    let mut sections = Vec::new();
    let pairs = order / 2;
    for i in 0..pairs {
        // Analog prototype pole pair: s^2 + 2 sin(theta) s + 1,
        // theta = pi (2i+1) / (2 order).
        let two_cos = 2.0 * (std::f64::consts::PI * (2 * i + 1) as f64 / (2 * order) as f64).sin();
        let (b, a) = if lowpass {
            // H(s) = wc^2 / (s^2 + 2cos*wc*s + wc^2), s -> k(z-1)/(z+1)
            (
                [wc * wc, 2.0 * wc * wc, wc * wc],
                [
                    k * k + two_cos * wc * k + wc * wc,
                    -2.0 * k * k + 2.0 * wc * wc,
                    k * k - two_cos * wc * k + wc * wc,
                ],
            )
        } else {
            // H(s) = s^2 / (s^2 + 2cos*wc*s + wc^2)
            (
                [k * k, -2.0 * k * k, k * k],
                [
                    k * k + two_cos * wc * k + wc * wc,
                    -2.0 * k * k + 2.0 * wc * wc,
                    k * k - two_cos * wc * k + wc * wc,
                ],
            )
        };
        sections.push(Biquad {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: b[2] / a[0],
            a1: a[1] / a[0],
            a2: a[2] / a[0],
        });
    }
    if order % 2 == 1 {
        // Real pole at -wc: first-order section stored with zero z^-2 taps.
        let (b, a) = if lowpass {
            ([wc, wc], [k + wc, wc - k])
        } else {
            ([k, -k], [k + wc, wc - k])
        };
        sections.push(Biquad {
            b0: b[0] / a[0],
            b1: b[1] / a[0],
            b2: 0.0,
            a1: a[1] / a[0],
            a2: 0.0,
        });
    }
    Ok(BiquadCascade { sections })
}

fn run_cascade(cascade: &BiquadCascade, signal: &mut [f64], steady_state_init: bool) {
    // Direct form II transposed, per section.
    for s in &cascade.sections {
        let (mut z1, mut z2) = if steady_state_init {
            // State matching a constant input equal to the first sample, so
            // a DC offset produces no startup transient.
            let dc_gain = (s.b0 + s.b1 + s.b2) / (1.0 + s.a1 + s.a2);
            let x0 = signal[0];
            ((dc_gain - s.b0) * x0, (s.b2 - s.a2 * dc_gain) * x0)
        } else {
            (0.0, 0.0)
        };
        for x in signal.iter_mut() {
            let y = s.b0 * *x + z1;
            z1 = s.b1 * *x - s.a1 * y + z2;
            z2 = s.b2 * *x - s.a2 * y;
            *x = y;
        }
    }
}

/// Applies the cascade to `signal`. Output length equals input length.
///
/// With `zero_phase`, the signal is edge-reflection padded by 3x the filter
/// order and filtered forward then backward, so net phase is zero and
/// attenuation doubles in dB.
pub fn apply_filter(signal: &[f64], cascade: &BiquadCascade, zero_phase: bool) -> Result<Vec<f64>> {
    if signal.is_empty() {
        return Err(Error::Signal("empty signal".into()));
    }
    if !signal.iter().all(|v| v.is_finite()) {
        return Err(Error::Signal("non-finite sample".into()));
    }
    if !zero_phase {
        let mut out = signal.to_vec();
        run_cascade(cascade, &mut out, false);
        return Ok(out);
    }
    let n = signal.len();
    let pad = (3 * cascade.order()).min(n.saturating_sub(1));
    let mut padded = Vec::with_capacity(n + 2 * pad);
    for i in (1..=pad).rev() {
        padded.push(signal[i]);
    }
    padded.extend_from_slice(signal);
    for i in 1..=pad {
        padded.push(signal[n - 1 - i]);
    }
    run_cascade(cascade, &mut padded, true);
    padded.reverse();
    run_cascade(cascade, &mut padded, true);
    padded.reverse();
    Ok(padded[pad..pad + n].to_vec())
}

/// Noise-reduction parameters. Defaults: 60 Hz notch (Q 30) for powerline
/// interference and a 0.5 Hz 2nd-order Butterworth high-pass for baseline
/// wander, applied zero-phase.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FilterSpec {
    pub notch_freq_hz: f64,
    pub notch_q: f64,
    pub highpass_cutoff_hz: f64,
    pub highpass_order: usize,
    pub zero_phase: bool,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            notch_freq_hz: 60.0,
            notch_q: 30.0,
            highpass_cutoff_hz: 0.5,
            highpass_order: 2,
            zero_phase: true,
        }
    }
}

impl FilterSpec {
    pub fn validate_for(&self, fs: f64) -> Result<()> {
        if !(self.notch_freq_hz > 0.0 && self.notch_freq_hz < fs / 2.0) {
            return Err(Error::FilterDesign(format!(
                "notch {} Hz invalid for fs {fs}",
                self.notch_freq_hz
            )));
        }
        if !(self.highpass_cutoff_hz > 0.0 && self.highpass_cutoff_hz < fs / 2.0) {
            return Err(Error::FilterDesign(format!(
                "high-pass cutoff {} Hz invalid for fs {fs}",
                self.highpass_cutoff_hz
            )));
        }
        if self.notch_q <= 0.0 {
            return Err(Error::FilterDesign("notch Q must be positive".into()));
        }
        if self.highpass_order < 1 {
            return Err(Error::FilterDesign("high-pass order must be >= 1".into()));
        }
        Ok(())
    }
}

/// Runs notch then high-pass over every lead independently. Metadata and
/// label are preserved; the output is flagged as denoised and a record that
/// already carries the flag is refused.
pub fn denoise_record(record: &EcgRecord, spec: &FilterSpec) -> Result<EcgRecord> {
    if record.denoised {
        return Err(Error::Record {
            record_id: record.record_id.clone(),
            reason: "record is already denoised".into(),
        });
    }
    spec.validate_for(record.sample_rate_hz)?;
    let notch = BiquadCascade::single(design_notch(
        spec.notch_freq_hz,
        spec.notch_q,
        record.sample_rate_hz,
    )?);
    let highpass = design_highpass_butterworth(
        spec.highpass_cutoff_hz,
        spec.highpass_order,
        record.sample_rate_hz,
    )?;
    let mut leads = Vec::with_capacity(record.leads.len());
    for lead in &record.leads {
        let after_notch = apply_filter(lead, &notch, spec.zero_phase)?;
        leads.push(apply_filter(&after_notch, &highpass, spec.zero_phase)?);
    }
    Ok(EcgRecord {
        record_id: record.record_id.clone(),
        leads,
        sample_rate_hz: record.sample_rate_hz,
        label: record.label,
        denoised: true,
    })
}
