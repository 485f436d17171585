//! End-to-end acceptance gate. Each test checks one release criterion and
//! prints a single pass/fail line (run with `--nocapture` to see them all).

use std::time::Instant;

use cao_locate::cascade::{derive_stage_dataset, train_cascade, Cascade, StageTask};
use cao_locate::ecg::{CaoClass, LEAD_II, NUM_LEADS};
use cao_locate::eval::{compute_auroc, run_experiment, ExperimentOptions};
use cao_locate::filters::{
    apply_filter, design_highpass_butterworth, design_notch, BiquadCascade,
};
use cao_locate::nn::layers::{BatchNorm, Conv, Linear, ResidualBlock};
use cao_locate::nn::tensor::Tensor;
use cao_locate::nn::{softmax_cross_entropy, Model, ModelConfig, TrainConfig, Variant};
use cao_locate::pulses::{detect_r_peaks, Provenance, Pulse, PulseDataset};
use cao_locate::synth::{generate_dataset, generate_record, NoiseConfig, SynthConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn check(name: &str, result: std::result::Result<String, String>) {
    match result {
        Ok(detail) => println!("[PASS] {name} — {detail}"),
        Err(detail) => {
            println!("[FAIL] {name} — {detail}");
            panic!("{name}: {detail}");
        }
    }
}

fn fail_if(condition: bool, message: String) -> std::result::Result<(), String> {
    if condition {
        Err(message)
    } else {
        Ok(())
    }
}

// --- criterion 1: preprocessing improves AUROC on the default dataset ----

#[test]
fn criterion_1_preprocessing_improves_auroc() {
    let started = Instant::now();
    let result = (|| {
        let base = SynthConfig::new(CaoClass::Lad, 0);
        let records: Vec<_> = generate_dataset((120, 20, 80), &base, 7)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(r, _)| r)
            .collect();
        let options = ExperimentOptions::default();
        let pre = run_experiment(&records, true, Variant::Conv1d, 10, 7, &options)
            .map_err(|e| e.to_string())?;
        let raw = run_experiment(&records, false, Variant::Conv1d, 10, 7, &options)
            .map_err(|e| e.to_string())?;
        let d1 = pre.stage1.auroc.mean - raw.stage1.auroc.mean;
        let d2 = pre.stage2.auroc.mean - raw.stage2.auroc.mean;
        fail_if(d1 < 0.05, format!("stage-1 AUROC delta {d1:.3} < 0.05"))?;
        fail_if(d2 < 0.03, format!("stage-2 AUROC delta {d2:.3} < 0.03"))?;
        let elapsed = started.elapsed();
        fail_if(
            elapsed.as_secs() > 900,
            format!("runtime {elapsed:.0?} exceeds 15 min"),
        )?;
        Ok(format!(
            "stage-1 delta {d1:.3} (>= 0.05), stage-2 delta {d2:.3} (>= 0.03), {elapsed:.0?}"
        ))
    })();
    check("criterion 1: preprocessed arm beats raw arm", result);
}

// --- criterion 2: filter suite ------------------------------------------

/// Independent oracle: expand the cascade into one numerator/denominator
/// polynomial pair and evaluate |B(z)/A(z)| at z = e^{jw} by Horner.
fn magnitude_by_polynomial(cascade: &BiquadCascade, freq_hz: f64, fs: f64) -> f64 {
    let mut num = vec![1.0];
    let mut den = vec![1.0];
    let mul = |p: &[f64], q: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; p.len() + q.len() - 1];
        for (i, &a) in p.iter().enumerate() {
            for (j, &b) in q.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        out
    };
    for s in &cascade.sections {
        num = mul(&num, &[s.b0, s.b1, s.b2]);
        den = mul(&den, &[1.0, s.a1, s.a2]);
    }
    let w = 2.0 * std::f64::consts::PI * freq_hz / fs;
    let eval = |p: &[f64]| -> (f64, f64) {
        // Horner in z^{-1}: p(z) = p0 + p1 z^-1 + ...
        let (mut re, mut im) = (0.0, 0.0);
        for &c in p.iter().rev() {
            // multiply accumulator by z^{-1} = e^{-jw}, then add c
            let (zr, zi) = ((-w).cos(), (-w).sin());
            let (nr, ni) = (re * zr - im * zi, re * zi + im * zr);
            re = nr + c;
            im = ni;
        }
        (re, im)
    };
    let (nr, ni) = eval(&num);
    let (dr, di) = eval(&den);
    ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
}

#[test]
fn criterion_2_filter_suite() {
    let started = Instant::now();
    let result = (|| {
        let fs = 500.0;
        let notch = BiquadCascade::single(design_notch(60.0, 30.0, fs).map_err(|e| e.to_string())?);
        let highpass = design_highpass_butterworth(0.5, 2, fs).map_err(|e| e.to_string())?;

        // 60 Hz tone: steady-state RMS attenuation >= 40 dB
        let n = 5000;
        let tone: Vec<f64> = (0..n)
            .map(|i| (2.0 * std::f64::consts::PI * 60.0 * i as f64 / fs).sin())
            .collect();
        let filtered = apply_filter(&tone, &notch, true).map_err(|e| e.to_string())?;
        let rms = |x: &[f64]| (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
        let mid = n / 4..3 * n / 4;
        let attenuation_db = 20.0 * (rms(&filtered[mid.clone()]) / rms(&tone[mid])).log10();
        fail_if(
            attenuation_db > -40.0,
            format!("notch attenuation {attenuation_db:.1} dB, need <= -40"),
        )?;

        // high-pass nulls DC below 1e-3 relative
        let dc = vec![2.5; 4000];
        let hp = apply_filter(&dc, &highpass, true).map_err(|e| e.to_string())?;
        let dc_residual = hp.iter().fold(0.0f64, |m, v| m.max(v.abs())) / 2.5;
        fail_if(
            dc_residual >= 1e-3,
            format!("DC residual {dc_residual:.2e} >= 1e-3"),
        )?;

        // linearity within 1e-9
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..2000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let combo: Vec<f64> = x.iter().zip(&y).map(|(&xv, &yv)| a * xv + b * yv).collect();
        let fx = apply_filter(&x, &highpass, true).map_err(|e| e.to_string())?;
        let fy = apply_filter(&y, &highpass, true).map_err(|e| e.to_string())?;
        let fc = apply_filter(&combo, &highpass, true).map_err(|e| e.to_string())?;
        let max_dev = fc
            .iter()
            .zip(fx.iter().zip(&fy))
            .fold(0.0f64, |m, (&c, (&xv, &yv))| {
                m.max((c - (a * xv + b * yv)).abs())
            });
        fail_if(max_dev >= 1e-9, format!("linearity deviation {max_dev:.2e}"))?;

        // frequency-response spot checks vs polynomial oracle
        let mut worst = 0.0f64;
        for cascade in [&notch, &highpass] {
            for freq in [0.1, 0.5, 1.0, 5.0, 30.0, 59.5, 60.0, 60.5, 120.0, 200.0] {
                let dev = (cascade.magnitude_at(freq, fs)
                    - magnitude_by_polynomial(cascade, freq, fs))
                .abs();
                worst = worst.max(dev);
            }
        }
        fail_if(worst >= 1e-6, format!("response deviation {worst:.2e}"))?;

        let elapsed = started.elapsed();
        fail_if(elapsed.as_secs() > 5, format!("runtime {elapsed:?} > 5 s"))?;
        Ok(format!(
            "notch {attenuation_db:.0} dB, DC residual {dc_residual:.1e}, linearity {max_dev:.1e}, response {worst:.1e}, {elapsed:.1?}"
        ))
    })();
    check("criterion 2: filter suite", result);
}

// --- criterion 3: R-peak detection F1 -----------------------------------

fn detection_f1(truth: &[usize], detected: &[usize], fs: f64) -> f64 {
    let tol = (0.05 * fs).round() as isize;
    let mut used = vec![false; detected.len()];
    let mut tp = 0;
    for &t in truth {
        if let Some(i) = detected
            .iter()
            .enumerate()
            .position(|(i, &d)| !used[i] && (d as isize - t as isize).abs() <= tol)
        {
            used[i] = true;
            tp += 1;
        }
    }
    2.0 * tp as f64 / (truth.len() + detected.len()) as f64
}

#[test]
fn criterion_3_r_peak_detection() {
    let started = Instant::now();
    let result = (|| {
        let n_seeds = 20u64;
        let mut clean_total = 0.0;
        let mut noisy_total = 0.0;
        for seed in 0..n_seeds {
            let mut config = SynthConfig::new(CaoClass::ALL[(seed % 3) as usize], seed);
            config.noise = NoiseConfig::none();
            let (record, truth) = generate_record("r", &config).map_err(|e| e.to_string())?;
            let fs = config.fs_hz;
            let truth_idx: Vec<usize> = truth
                .r_peak_times_s
                .iter()
                .map(|t| (t * fs).round() as usize)
                .collect();
            let clean = &record.leads[LEAD_II];
            let peaks = detect_r_peaks(clean, fs).map_err(|e| e.to_string())?;
            clean_total += detection_f1(&truth_idx, &peaks, fs);

            // SNR 10 dB white noise relative to the clean lead power
            let power = clean.iter().map(|v| v * v).sum::<f64>() / clean.len() as f64;
            let std = (power / 10.0).sqrt();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xACCE);
            let noisy: Vec<f64> = clean
                .iter()
                .map(|v| v + std * rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            let peaks = detect_r_peaks(&noisy, fs).map_err(|e| e.to_string())?;
            noisy_total += detection_f1(&truth_idx, &peaks, fs);
        }
        let clean_f1 = clean_total / n_seeds as f64;
        let noisy_f1 = noisy_total / n_seeds as f64;
        fail_if(clean_f1 < 0.99, format!("clean F1 {clean_f1:.4} < 0.99"))?;
        fail_if(noisy_f1 < 0.95, format!("SNR-10dB F1 {noisy_f1:.4} < 0.95"))?;
        let elapsed = started.elapsed();
        fail_if(elapsed.as_secs() > 30, format!("runtime {elapsed:?} > 30 s"))?;
        Ok(format!(
            "clean F1 {clean_f1:.3}, SNR-10dB F1 {noisy_f1:.3} over {n_seeds} seeds, {elapsed:.1?}"
        ))
    })();
    check("criterion 3: R-peak detection F1", result);
}

// --- criterion 4: gradient checks ---------------------------------------

fn relative_error(numeric: f64, analytic: f64) -> f64 {
    (numeric - analytic).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Central difference with a kink guard: if the h=1e-5 probe disagrees,
/// retry at h=1e-7. A ReLU kink inside the wider stencil then falls
/// outside the narrower one, while a genuinely wrong gradient stays wrong.
fn fd_error(loss: &mut dyn FnMut(f64) -> f64, analytic: f64) -> f64 {
    let mut best = f64::INFINITY;
    for h in [1e-5, 1e-7] {
        let numeric = (loss(h) - loss(-h)) / (2.0 * h);
        best = best.min(relative_error(numeric, analytic));
        if best < 1e-4 {
            break;
        }
    }
    best
}

/// Worst input-gradient relative error for one randomly seeded layer stack,
/// with loss = sum of outputs.
fn layer_gradient_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;

    let x = Tensor::from_vec(
        &[2, 2, 1, 6],
        (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    // conv
    let mut conv = Conv::new(2, 3, 1, 3, (1, 1), &mut rng);
    let y = conv.forward(&x).unwrap();
    let ones = Tensor::from_vec(&y.shape, vec![1.0; y.numel()]).unwrap();
    conv.weight.zero_grad();
    conv.bias.zero_grad();
    let gx = conv.backward(&ones).unwrap();
    for i in 0..x.numel() {
        let mut xp = x.clone();
        let orig = xp.data[i];
        let mut loss = |d: f64| {
            xp.data[i] = orig + d;
            conv.forward(&xp).unwrap().data.iter().sum()
        };
        worst = worst.max(fd_error(&mut loss, gx.data[i]));
    }

    // batch norm (training mode)
    let mut bn = BatchNorm::new(2);
    let y = bn.forward(&x, true).unwrap();
    let ones = Tensor::from_vec(&y.shape, vec![1.0; y.numel()]).unwrap();
    bn.gamma.zero_grad();
    bn.beta.zero_grad();
    let gx = bn.backward(&ones).unwrap();
    for i in 0..x.numel() {
        let mut xp = x.clone();
        let orig = xp.data[i];
        let mut loss = |d: f64| {
            xp.data[i] = orig + d;
            bn.forward(&xp, true).unwrap().data.iter().sum()
        };
        worst = worst.max(fd_error(&mut loss, gx.data[i]));
    }

    // linear
    let xl = Tensor::from_vec(&[3, 4], (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let mut lin = Linear::new(4, 2, &mut rng);
    let y = lin.forward(&xl).unwrap();
    let ones = Tensor::from_vec(&y.shape, vec![1.0; y.numel()]).unwrap();
    lin.weight.zero_grad();
    lin.bias.zero_grad();
    let gx = lin.backward(&ones).unwrap();
    for i in 0..xl.numel() {
        let mut xp = xl.clone();
        let orig = xp.data[i];
        let mut loss = |d: f64| {
            xp.data[i] = orig + d;
            lin.forward(&xp).unwrap().data.iter().sum()
        };
        worst = worst.max(fd_error(&mut loss, gx.data[i]));
    }

    // residual block with projection
    let mut block = ResidualBlock::new(2, 3, (1, 3), 2, &mut rng);
    let y = block.forward(&x, true).unwrap();
    let ones = Tensor::from_vec(&y.shape, vec![1.0; y.numel()]).unwrap();
    block.visit_params("b", &mut |_, p| p.zero_grad());
    let gx = block.backward(&ones).unwrap();
    for i in 0..x.numel() {
        let mut xp = x.clone();
        let orig = xp.data[i];
        let mut loss = |d: f64| {
            xp.data[i] = orig + d;
            block.forward(&xp, true).unwrap().data.iter().sum()
        };
        worst = worst.max(fd_error(&mut loss, gx.data[i]));
    }

    worst
}

/// Worst parameter-gradient relative error of the full reduced model under
/// the training loss, probing a few entries of every parameter tensor.
fn model_gradient_worst_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = ModelConfig {
        variant: if seed.is_multiple_of(2) { Variant::Conv1d } else { Variant::Conv2d },
        stem_channels: 3,
        block_channels: vec![3, 4],
        kernel_time: 5,
        kernel_lead: 3,
        fc_hidden: 6,
    };
    let mut model = Model::new(config, seed).unwrap();
    model.train_mode = true;
    let pulses: Vec<Pulse> = (0..2)
        .map(|k| Pulse {
            source_record_id: "p".into(),
            leads: (0..NUM_LEADS)
                .map(|l| {
                    (0..32)
                        .map(|i| ((l + i) as f64 * 0.31 + k as f64).sin() * 0.5)
                        .collect()
                })
                .collect(),
            r_peak_index: 8,
            label: CaoClass::Lad,
        })
        .collect();
    let labels = [0usize, 1];
    let weights = [1.0, 1.0];
    let refs: Vec<&Pulse> = pulses.iter().collect();
    let input = model.pulses_to_input(&refs).unwrap();
    let logits = model.forward(&input).unwrap();
    let (_, grad_logits) = softmax_cross_entropy(&logits, &labels, &weights).unwrap();
    model.zero_grads();
    model.backward(&grad_logits).unwrap();

    let mut names = Vec::new();
    model.visit_params(&mut |name, p| names.push((name, p.value.numel())));
    let mut worst = 0.0f64;
    for (name, numel) in names {
        for _ in 0..2 {
            let idx = rng.gen_range(0..numel);
            let mut analytic = 0.0;
            model.visit_params(&mut |n, p| {
                if n == name {
                    analytic = p.grad.data[idx];
                }
            });
            let mut loss_at = |delta: f64| -> f64 {
                let mut m = model.clone();
                m.visit_params(&mut |n, p| {
                    if n == name {
                        p.value.data[idx] += delta;
                    }
                });
                m.train_mode = true;
                let out = m.forward(&input).unwrap();
                softmax_cross_entropy(&out, &labels, &weights).unwrap().0
            };
            worst = worst.max(fd_error(&mut loss_at, analytic));
        }
    }
    worst
}

#[test]
fn criterion_4_gradient_checks() {
    let started = Instant::now();
    let result = (|| {
        let mut worst = 0.0f64;
        for seed in 0..44 {
            worst = worst.max(layer_gradient_worst_error(seed));
        }
        for seed in 0..6 {
            worst = worst.max(model_gradient_worst_error(seed));
        }
        fail_if(worst >= 1e-4, format!("worst relative error {worst:.2e}"))?;
        let elapsed = started.elapsed();
        fail_if(elapsed.as_secs() > 60, format!("runtime {elapsed:?} > 60 s"))?;
        Ok(format!(
            "worst relative error {worst:.1e} over 50 seeds, {elapsed:.1?}"
        ))
    })();
    check("criterion 4: finite-difference gradient checks", result);
}

// --- criterion 5: AUROC oracle ------------------------------------------

#[test]
fn criterion_5_auroc_oracle() {
    let result = (|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5A);
        let mut worst = 0.0f64;
        for _ in 0..200 {
            let n = rng.gen_range(2..100);
            let levels = rng.gen_range(2..12);
            let scores: Vec<f64> = (0..n)
                .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
                .collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 1;
            labels[n - 1] = 0;
            let fast = compute_auroc(&scores, &labels).map_err(|e| e.to_string())?;
            // all-pairs brute force
            let mut total = 0.0;
            let mut pairs = 0.0;
            for i in 0..n {
                for j in 0..n {
                    if labels[i] == 1 && labels[j] == 0 {
                        pairs += 1.0;
                        total += if scores[i] > scores[j] {
                            1.0
                        } else if scores[i] == scores[j] {
                            0.5
                        } else {
                            0.0
                        };
                    }
                }
            }
            worst = worst.max((fast - total / pairs).abs());

            // monotone transform and complement symmetry
            let squashed: Vec<f64> = scores.iter().map(|&s| (3.0 * s - 1.0).tanh()).collect();
            worst = worst
                .max((compute_auroc(&squashed, &labels).map_err(|e| e.to_string())? - fast).abs());
            let negated: Vec<f64> = scores.iter().map(|&s| -s).collect();
            let flipped: Vec<usize> = labels.iter().map(|&l| 1 - l).collect();
            worst = worst
                .max((compute_auroc(&negated, &flipped).map_err(|e| e.to_string())? - fast).abs());
        }
        fail_if(worst >= 1e-12, format!("worst deviation {worst:.2e}"))?;
        Ok(format!("worst deviation {worst:.1e} over 200 instances"))
    })();
    check("criterion 5: AUROC equals brute-force oracle", result);
}

// --- criterion 6: cascade contract --------------------------------------

fn toy_pulse_dataset(counts: (usize, usize, usize)) -> PulseDataset {
    let mut pulses = Vec::new();
    for (class, count, level) in [
        (CaoClass::Lad, counts.0, 0.6),
        (CaoClass::Lcx, counts.1, 0.0),
        (CaoClass::Rca, counts.2, -0.6),
    ] {
        for k in 0..count {
            pulses.push(Pulse {
                source_record_id: format!("{class}-{k}"),
                leads: (0..NUM_LEADS)
                    .map(|l| {
                        (0..48)
                            .map(|i| {
                                ((l * 5 + i + k) as f64 * 0.23).sin() * 0.2
                                    + if l >= 6 { level } else { 0.0 }
                            })
                            .collect()
                    })
                    .collect(),
                r_peak_index: 12,
                label: class,
            });
        }
    }
    PulseDataset {
        pulses,
        window_pre_s: 0.024,
        window_post_s: 0.072,
        sample_rate_hz: 500.0,
        provenance: Provenance::Preprocessed,
    }
}

#[test]
fn criterion_6_cascade_contract() {
    let result = (|| {
        // exact stage derivation counts on (10, 3, 7)
        let dataset = toy_pulse_dataset((10, 3, 7));
        let (p1, l1) =
            derive_stage_dataset(&dataset, StageTask::Stage1).map_err(|e| e.to_string())?;
        let (p2, l2) =
            derive_stage_dataset(&dataset, StageTask::Stage2).map_err(|e| e.to_string())?;
        fail_if(
            p1.len() != 20 || l1.iter().sum::<usize>() != 10,
            format!("stage-1 {} pulses / {} positives", p1.len(), l1.iter().sum::<usize>()),
        )?;
        fail_if(
            p2.len() != 10 || l2.iter().sum::<usize>() != 3,
            format!("stage-2 {} pulses / {} positives", p2.len(), l2.iter().sum::<usize>()),
        )?;

        // routing and partition on randomized inputs
        let model = ModelConfig {
            variant: Variant::Conv1d,
            stem_channels: 3,
            block_channels: vec![3, 4],
            kernel_time: 5,
            kernel_lead: 3,
            fc_hidden: 6,
        };
        let train = TrainConfig {
            epochs: 3,
            batch_size: 8,
            rng_seed: 6,
            ..TrainConfig::default()
        };
        let big = toy_pulse_dataset((8, 6, 6));
        let cascade = train_cascade(&big, &model, &train).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(0xC6);
        let probes: Vec<Pulse> = (0..40)
            .map(|k| {
                let mut p = big.pulses[k % big.pulses.len()].clone();
                for lead in &mut p.leads {
                    for v in lead.iter_mut() {
                        *v += rng.gen_range(-0.2..0.2);
                    }
                }
                p
            })
            .collect();
        let mut lad_counts = Vec::new();
        for threshold in [0.2, 0.35, 0.5, 0.65, 0.8] {
            let mut c = Cascade {
                threshold1: threshold,
                ..cascade.clone()
            };
            let results = c.predict_batch(&probes).map_err(|e| e.to_string())?;
            for (class, scores) in &results {
                let gated_out = scores.p_lad >= threshold;
                fail_if(
                    gated_out != scores.p_lcx.is_none(),
                    "stage-2 evaluated despite the stage-1 gate".into(),
                )?;
                fail_if(
                    gated_out != (*class == CaoClass::Lad),
                    "prediction disagrees with the routing".into(),
                )?;
            }
            lad_counts.push(
                results
                    .iter()
                    .filter(|(class, _)| *class == CaoClass::Lad)
                    .count(),
            );
        }
        fail_if(
            !lad_counts.windows(2).all(|w| w[0] >= w[1]),
            format!("LAD counts not monotone in threshold: {lad_counts:?}"),
        )?;
        Ok(format!(
            "counts exact, routing holds on 40 probes, LAD counts {lad_counts:?} monotone"
        ))
    })();
    check("criterion 6: cascade contract", result);
}

// --- criterion 7: end-to-end determinism --------------------------------

#[test]
fn criterion_7_pipeline_determinism() {
    let result = (|| {
        let bin = env!("CARGO_BIN_EXE_cao");
        let root = tempfile::tempdir().map_err(|e| e.to_string())?;
        let run_pipeline = |tag: &str| -> std::result::Result<std::path::PathBuf, String> {
            let data = root.path().join(format!("data-{tag}"));
            let report = root.path().join(format!("report-{tag}"));
            let run = |args: &[&str]| -> std::result::Result<(), String> {
                let out = std::process::Command::new(bin)
                    .args(args)
                    .output()
                    .map_err(|e| e.to_string())?;
                if !out.status.success() {
                    return Err(format!(
                        "{args:?}: {}",
                        String::from_utf8_lossy(&out.stderr)
                    ));
                }
                Ok(())
            };
            let data_s = data.display().to_string();
            let report_s = report.display().to_string();
            run(&[
                "synth", "--n-lad", "8", "--n-lcx", "4", "--n-rca", "6", "--seed", "11", "--out",
                &data_s,
            ])?;
            run(&[
                "preprocess",
                "--dataset",
                &data_s,
                "--out",
                &report.join("pulses").display().to_string(),
                "--arm",
                "preprocessed",
            ])?;
            run(&[
                "train-eval",
                "--dataset",
                &data_s,
                "--out",
                &report_s,
                "--runs",
                "2",
                "--seed",
                "11",
                "--variant",
                "1d",
                "--epochs",
                "2",
                "--force",
            ])?;
            Ok(report)
        };
        let a = run_pipeline("a")?;
        let b = run_pipeline("b")?;
        let mut compared = 0;
        for rel in [
            "report.json",
            "report.csv",
            "report.txt",
            "pulses/pulses.bin",
            "cascade-1d-preprocessed/stage1/model.bin",
            "cascade-1d-preprocessed/stage2/model.bin",
            "cascade-1d-preprocessed/cascade.json",
            "cascade-1d-raw/stage1/model.bin",
        ] {
            let x = std::fs::read(a.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
            let y = std::fs::read(b.join(rel)).map_err(|e| format!("{rel}: {e}"))?;
            fail_if(x != y, format!("{rel} differs between identical runs"))?;
            compared += 1;
        }
        Ok(format!("{compared} artifacts byte-identical across two runs"))
    })();
    check("criterion 7: seeded pipeline is byte-identical", result);
}

// --- criterion 8: clean-signal sanity -----------------------------------

#[test]
fn criterion_8_clean_signal_sanity() {
    let result = (|| {
        let mut base = SynthConfig::new(CaoClass::Lad, 0);
        base.noise = NoiseConfig::none();
        let records: Vec<_> = generate_dataset((30, 10, 20), &base, 13)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|(r, _)| r)
            .collect();
        let options = ExperimentOptions::default();
        let report = run_experiment(&records, true, Variant::Conv1d, 2, 13, &options)
            .map_err(|e| e.to_string())?;
        let (s1, s2) = (report.stage1.auroc.mean, report.stage2.auroc.mean);
        fail_if(s1 < 0.95, format!("stage-1 AUROC {s1:.3} < 0.95"))?;
        fail_if(s2 < 0.95, format!("stage-2 AUROC {s2:.3} < 0.95"))?;
        Ok(format!("stage-1 AUROC {s1:.3}, stage-2 AUROC {s2:.3} on noise-free records"))
    })();
    check("criterion 8: clean-signal sanity", result);
}
