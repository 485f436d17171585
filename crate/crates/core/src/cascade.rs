//! Two-stage cascade: stage-1 separates LAD from non-LAD; stage-2
//! separates LCX from RCA among the non-LAD pulses. Stages are trained
//! independently on ground-truth routing; per-stage evaluation matches
//! that, and end-to-end 3-class prediction composes the thresholds.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ecg::CaoClass;
use crate::nn::{load_model, predict_proba, save_model, train, Model, ModelConfig, TrainConfig};
use crate::pulses::{Pulse, PulseDataset};
use crate::synth::derive_seed;
use crate::{Error, Result};

/// Binary task derivations. Stage-2 sees only non-LAD pulses and treats
/// the minority class (LCX) as positive, so its sensitivity measures
/// minority detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageTask {
    /// positive = LAD, negative = LCX or RCA
    Stage1,
    /// positive = LCX, negative = RCA, LAD excluded
    Stage2,
}

/// Maps a pulse dataset onto one stage's binary problem. Ordering follows
/// the dataset's (already deterministic) pulse order.
pub fn derive_stage_dataset(
    dataset: &PulseDataset,
    task: StageTask,
) -> Result<(Vec<Pulse>, Vec<usize>)> {
    if dataset.pulses.is_empty() {
        return Err(Error::Dataset("empty pulse dataset".into()));
    }
    match task {
        StageTask::Stage1 => {
            let labels = dataset
                .pulses
                .iter()
                .map(|p| usize::from(p.label == CaoClass::Lad))
                .collect();
            Ok((dataset.pulses.clone(), labels))
        }
        StageTask::Stage2 => {
            let mut pulses = Vec::new();
            let mut labels = Vec::new();
            for p in &dataset.pulses {
                match p.label {
                    CaoClass::Lcx => {
                        pulses.push(p.clone());
                        labels.push(1);
                    }
                    CaoClass::Rca => {
                        pulses.push(p.clone());
                        labels.push(0);
                    }
                    CaoClass::Lad => {}
                }
            }
            if !labels.contains(&1) || !labels.contains(&0) {
                return Err(Error::Dataset(
                    "stage-2 needs both LCX and RCA pulses".into(),
                ));
            }
            Ok((pulses, labels))
        }
    }
}

/// Per-pulse score trail: stage-1 probability, and stage-2's when it was
/// consulted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub p_lad: f64,
    pub p_lcx: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Cascade {
    pub stage1: Model,
    pub stage2: Model,
    pub threshold1: f64,
    pub threshold2: f64,
}

impl Cascade {
    fn check_trained(&self) -> Result<()> {
        if !self.stage1.trained || !self.stage2.trained {
            return Err(Error::Train("cascade stages are not trained".into()));
        }
        Ok(())
    }

    /// Routes one pulse: LAD when p1 >= threshold1 (stage-2 never runs),
    /// otherwise LCX vs RCA by stage-2.
    pub fn predict(&mut self, pulse: &Pulse) -> Result<(CaoClass, ScoreBreakdown)> {
        Ok(self.predict_batch(std::slice::from_ref(pulse))?.remove(0))
    }

    /// Batch routing; stage-2 is evaluated only on the pulses stage-1 let
    /// through.
    pub fn predict_batch(&mut self, pulses: &[Pulse]) -> Result<Vec<(CaoClass, ScoreBreakdown)>> {
        self.check_trained()?;
        let p1 = predict_proba(&mut self.stage1, pulses)?;
        let survivors: Vec<usize> = (0..pulses.len())
            .filter(|&i| p1[i] < self.threshold1)
            .collect();
        let survivor_pulses: Vec<Pulse> =
            survivors.iter().map(|&i| pulses[i].clone()).collect();
        let p2 = if survivor_pulses.is_empty() {
            Vec::new()
        } else {
            predict_proba(&mut self.stage2, &survivor_pulses)?
        };
        let mut p2_by_index = vec![None; pulses.len()];
        for (k, &i) in survivors.iter().enumerate() {
            p2_by_index[i] = Some(p2[k]);
        }
        Ok((0..pulses.len())
            .map(|i| {
                let breakdown = ScoreBreakdown {
                    p_lad: p1[i],
                    p_lcx: p2_by_index[i],
                };
                let class = match p2_by_index[i] {
                    None => CaoClass::Lad,
                    Some(p) if p >= self.threshold2 => CaoClass::Lcx,
                    Some(_) => CaoClass::Rca,
                };
                (class, breakdown)
            })
            .collect())
    }
}

/// Trains both stages independently with seeds derived from the training
/// config's seed (ground-truth routing: stage-2 sees true non-LAD pulses).
pub fn train_cascade(
    dataset: &PulseDataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
) -> Result<Cascade> {
    let counts = dataset.class_counts();
    for class in CaoClass::ALL {
        if counts[&class] == 0 {
            return Err(Error::Dataset(format!(
                "training set has no {class} pulses"
            )));
        }
    }
    let (pulses1, labels1) = derive_stage_dataset(dataset, StageTask::Stage1)?;
    let (pulses2, labels2) = derive_stage_dataset(dataset, StageTask::Stage2)?;

    let mut stage1 = Model::new(model_config.clone(), derive_seed(train_config.rng_seed, 0x51))?;
    let mut config1 = train_config.clone();
    config1.rng_seed = derive_seed(train_config.rng_seed, 0x151);
    train(&mut stage1, &pulses1, &labels1, &config1)?;

    let mut stage2 = Model::new(model_config.clone(), derive_seed(train_config.rng_seed, 0x52))?;
    let mut config2 = train_config.clone();
    config2.rng_seed = derive_seed(train_config.rng_seed, 0x152);
    train(&mut stage2, &pulses2, &labels2, &config2)?;

    Ok(Cascade {
        stage1,
        stage2,
        threshold1: 0.5,
        threshold2: 0.5,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct CascadeMeta {
    threshold1: f64,
    threshold2: f64,
    variant: String,
}

/// Checkpoint directory: `stage1/model.bin`, `stage2/model.bin`,
/// `cascade.json`.
pub fn save_cascade(dir: &Path, cascade: &mut Cascade) -> Result<()> {
    save_model(&dir.join("stage1").join("model.bin"), &mut cascade.stage1)?;
    save_model(&dir.join("stage2").join("model.bin"), &mut cascade.stage2)?;
    let meta = CascadeMeta {
        threshold1: cascade.threshold1,
        threshold2: cascade.threshold2,
        variant: cascade.stage1.config.variant.as_str().to_string(),
    };
    let path = dir.join("cascade.json");
    std::fs::write(&path, serde_json::to_string_pretty(&meta)?)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_cascade(dir: &Path) -> Result<Cascade> {
    let path = dir.join("cascade.json");
    let meta: CascadeMeta = parse_cascade_json(
        &std::fs::read_to_string(&path).map_err(|e| Error::io(path.display().to_string(), e))?,
    )?;
    let stage1 = load_model(&dir.join("stage1").join("model.bin"))?;
    let stage2 = load_model(&dir.join("stage2").join("model.bin"))?;
    if stage1.config.variant != stage2.config.variant {
        return Err(Error::format("cascade.json", "stage variants disagree"));
    }
    if stage1.config.variant.as_str() != meta.variant {
        return Err(Error::format("cascade.json", "variant does not match stage models"));
    }
    Ok(Cascade {
        stage1,
        stage2,
        threshold1: meta.threshold1,
        threshold2: meta.threshold2,
    })
}

fn parse_cascade_json(text: &str) -> Result<CascadeMeta> {
    let meta: CascadeMeta = serde_json::from_str(text)?;
    if !(meta.threshold1 > 0.0 && meta.threshold1 < 1.0)
        || !(meta.threshold2 > 0.0 && meta.threshold2 < 1.0)
    {
        return Err(Error::format("cascade.json", "thresholds must lie in (0, 1)"));
    }
    if meta.variant != "1d" && meta.variant != "2d" {
        return Err(Error::format("cascade.json", "variant must be \"1d\" or \"2d\""));
    }
    Ok(meta)
}

/// Validates untrusted `cascade.json` text; used by the fuzz harness.
pub fn validate_cascade_json(text: &str) -> Result<()> {
    parse_cascade_json(text).map(|_| ())
}
