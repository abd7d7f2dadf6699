//! Self-describing JSON envelope for trained models, and per-sample predictions.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{fit_with, DecisionRule, DiscriminantModel, FitOptions, JointPosteriorTable, LabelingMode};
use crate::dataset::{CropLabel, Dataset, JointLabel};
use crate::error::{Error, Result};
use crate::eval::Algorithm;
use crate::mlp::{self, MlpModel};
use crate::scalar::Scalar;

pub const MODEL_FORMAT: &str = "cropspec-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", bound = "T: Scalar")]
pub enum TrainedModel<T> {
    Discriminant { rule: DecisionRule, model: DiscriminantModel<T> },
    Mlp { model: MlpModel<T> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ModelFile<T> {
    pub format: String,
    pub version: u32,
    pub algorithm: String,
    pub descriptor: String,
    pub wavelengths_nm: Vec<T>,
    pub model: TrainedModel<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Prediction<T> {
    pub record_index: usize,
    /// Known crop of the record, when the input carried labels.
    pub truth: Option<CropLabel>,
    pub predicted: CropLabel,
    /// Most probable joint class (joint-label models only).
    pub joint: Option<JointLabel>,
    /// Crop probabilities indexed by [`CropLabel::index`] (marginals for joint models).
    pub crop_probabilities: [T; CropLabel::COUNT],
    pub joint_table: Option<JointPosteriorTable<T>>,
}

/// Fits `algorithm` on the whole dataset.
pub fn train_model<T: Scalar>(ds: &Dataset<T>, algorithm: &Algorithm, options: FitOptions) -> Result<ModelFile<T>> {
    let model = match algorithm {
        Algorithm::Discriminant(s) => TrainedModel::Discriminant {
            rule: s.rule,
            model: fit_with(
                ds,
                s.mode(),
                s.kind,
                s.lambda,
                FitOptions {
                    priors: s.priors,
                    ..options
                },
            )?,
        },
        Algorithm::Mlp(cfg) => TrainedModel::Mlp {
            model: mlp::train(ds, cfg)?,
        },
    };
    Ok(ModelFile {
        format: MODEL_FORMAT.into(),
        version: MODEL_VERSION,
        algorithm: algorithm.label(),
        descriptor: algorithm.id(),
        wavelengths_nm: ds.grid().wavelengths().to_vec(),
        model,
    })
}

impl<T: Scalar> ModelFile<T> {
    pub fn band_count(&self) -> usize {
        match &self.model {
            TrainedModel::Discriminant { model, .. } => model.band_count(),
            TrainedModel::Mlp { model } => model.band_count(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != MODEL_FORMAT {
            return Err(Error::Data(format!("not a model file (format {:?})", self.format)));
        }
        if self.version != MODEL_VERSION {
            return Err(Error::Data(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                self.version
            )));
        }
        match &self.model {
            TrainedModel::Discriminant { rule, model } => {
                model.validate()?;
                if *rule != DecisionRule::Direct && model.mode() != LabelingMode::JointCropStage {
                    return Err(Error::Data(format!("rule {rule:?} needs a joint-label model")));
                }
            }
            TrainedModel::Mlp { model } => model.validate()?,
        }
        if self.wavelengths_nm.len() != self.band_count() {
            return Err(Error::Dimension {
                expected: self.band_count(),
                got: self.wavelengths_nm.len(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Checks that `ds` was sampled on the same wavelengths as the training data.
    pub fn check_compatible(&self, ds: &Dataset<T>) -> Result<()> {
        let got = ds.grid().wavelengths();
        if got.len() != self.wavelengths_nm.len() {
            return Err(Error::Dimension {
                expected: self.wavelengths_nm.len(),
                got: got.len(),
            });
        }
        let tol = T::lit(1e-6);
        if let Some(i) = (0..got.len()).find(|&i| (got[i] - self.wavelengths_nm[i]).abs() > tol) {
            return Err(Error::Data(format!(
                "band {} is at {} nm, model expects {} nm",
                i + 1,
                got[i],
                self.wavelengths_nm[i]
            )));
        }
        Ok(())
    }

    pub fn predict_one(&self, index: usize, x: &[T], truth: Option<CropLabel>) -> Result<Prediction<T>> {
        let mut p = Prediction {
            record_index: index,
            truth,
            predicted: CropLabel::Corn,
            joint: None,
            crop_probabilities: [T::zero(); CropLabel::COUNT],
            joint_table: None,
        };
        match &self.model {
            TrainedModel::Discriminant { rule, model } => match model.mode() {
                LabelingMode::CropOnly => {
                    let logp = model.class_log_posteriors(x)?;
                    let mut probs = [T::zero(); CropLabel::COUNT];
                    for (c, lp) in model.classes().iter().zip(logp) {
                        probs[c.crop().index()] = lp.exp();
                    }
                    p.predicted = model.predict_direct(x)?;
                    p.crop_probabilities = probs;
                }
                LabelingMode::JointCropStage => {
                    let (mmp, marginals) = model.predict_mmp(x)?;
                    let (mjp, joint) = model.predict_mjp(x)?;
                    p.predicted = if *rule == DecisionRule::Mmp { mmp } else { mjp };
                    p.joint = Some(joint);
                    p.crop_probabilities = marginals;
                    p.joint_table = Some(model.joint_posterior_table(x)?);
                }
            },
            TrainedModel::Mlp { model } => {
                let (c, probs) = model.predict(x)?;
                p.predicted = c;
                p.crop_probabilities = probs;
            }
        }
        Ok(p)
    }

    pub fn predict_dataset(&self, ds: &Dataset<T>) -> Result<Vec<Prediction<T>>> {
        self.check_compatible(ds)?;
        ds.records()
            .iter()
            .enumerate()
            .map(|(i, r)| self.predict_one(i, &r.spectrum, Some(r.crop)))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classify::{DiscriminantKind, PriorMode, SparseClassPolicy};
    use crate::dataset::{synthesize, StageLabel, SyntheticClass, SyntheticSpec};
    use crate::mlp::MlpConfig;

    fn library() -> Dataset<f64> {
        let class = |crop, stage, m: f64| SyntheticClass {
            crop,
            stage,
            count: 30,
            mean: vec![m, 2.0 * m, 10.0],
            covariance: vec![vec![1.0, 0.2, 0.0], vec![0.2, 1.0, 0.0], vec![0.0, 0.0, 1.0]],
        };
        synthesize(
            &SyntheticSpec {
                wavelengths_nm: vec![500.0, 600.0, 700.0],
                classes: vec![
                    class(CropLabel::Corn, StageLabel::Late, 10.0),
                    class(CropLabel::Corn, StageLabel::Critical, 14.0),
                    class(CropLabel::Rice, StageLabel::Late, 30.0),
                ],
            },
            5,
        )
        .unwrap()
    }

    const OPTS: FitOptions = FitOptions {
        priors: PriorMode::Uniform,
        sparse_classes: SparseClassPolicy::Error,
    };

    #[test]
    fn discriminant_round_trip_preserves_predictions() {
        let ds = library();
        let alg = Algorithm::discriminant(DiscriminantKind::Qda, DecisionRule::Mmp, 0.1).unwrap();
        let m = train_model(&ds, &alg, OPTS).unwrap();
        let back = ModelFile::<f64>::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.predict_dataset(&ds).unwrap(), m.predict_dataset(&ds).unwrap());
        let p = &back.predict_dataset(&ds).unwrap()[0];
        assert!(p.joint_table.is_some() && p.joint.is_some());
    }

    #[test]
    fn mlp_round_trip() {
        let ds = library();
        let cfg = MlpConfig {
            epochs: 5,
            ..MlpConfig::one_hidden()
        };
        let m = train_model(&ds, &Algorithm::Mlp(cfg), OPTS).unwrap();
        let back = ModelFile::<f64>::from_json(&m.to_json()).unwrap();
        assert_eq!(back.predict_dataset(&ds).unwrap(), m.predict_dataset(&ds).unwrap());
    }

    #[test]
    fn rejects_foreign_or_future_files() {
        let ds = library();
        let alg = Algorithm::discriminant(DiscriminantKind::Lda, DecisionRule::Direct, 0.0).unwrap();
        let m = train_model(&ds, &alg, OPTS).unwrap();
        let mut bad = m.clone();
        bad.version = 99;
        assert!(ModelFile::<f64>::from_json(&bad.to_json()).is_err());
        bad = m.clone();
        bad.format = "other".into();
        assert!(ModelFile::<f64>::from_json(&bad.to_json()).is_err());
        bad = m;
        bad.wavelengths_nm.pop();
        assert!(ModelFile::<f64>::from_json(&bad.to_json()).is_err());
        assert!(ModelFile::<f64>::from_json("{}").is_err());
    }

    #[test]
    fn crop_only_probabilities_sum_to_one() {
        let ds = library();
        let alg = Algorithm::discriminant(DiscriminantKind::Lda, DecisionRule::Direct, 0.0).unwrap();
        let m = train_model(&ds, &alg, OPTS).unwrap();
        for p in m.predict_dataset(&ds).unwrap() {
            let s: f64 = p.crop_probabilities.iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(p.joint.is_none());
        }
    }
}
