//! LDA / QDA discriminant classifiers over crop labels or joint
//! crop × growth-stage labels, and the two crop decision rules for joint
//! models: maximal marginal probability (sum over stages) and maximal joint
//! probability (crop of the best single cell).
//!
//! Class lists are always kept in canonical order (crop alphabetical, then
//! stage enumeration order) so every argmax tie resolves to the earliest
//! class in that order.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{CropLabel, Dataset, JointLabel, StageLabel};
use crate::error::{Error, Result};
use crate::gaussian::{
    estimate_mean_cov, factorize, log_density, log_sum_exp, shrink_covariance, CholeskyFactor,
    ShrinkageParam,
};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelingMode {
    CropOnly,
    JointCropStage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiscriminantKind {
    Lda,
    Qda,
}

impl fmt::Display for DiscriminantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DiscriminantKind::Lda => "LDA",
            DiscriminantKind::Qda => "QDA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// 1/K over the realized classes.
    #[default]
    Uniform,
    /// Training class frequencies.
    Empirical,
}

/// What to do with a class that has fewer than two training samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SparseClassPolicy {
    #[default]
    Error,
    /// Leave the class out of the model, as if unseen.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassId {
    Crop(CropLabel),
    Joint(JointLabel),
}

impl ClassId {
    pub fn crop(self) -> CropLabel {
        match self {
            ClassId::Crop(c) => c,
            ClassId::Joint(j) => j.crop,
        }
    }

    pub fn joint(self) -> Option<JointLabel> {
        match self {
            ClassId::Crop(_) => None,
            ClassId::Joint(j) => Some(j),
        }
    }

    fn mode(self) -> LabelingMode {
        match self {
            ClassId::Crop(_) => LabelingMode::CropOnly,
            ClassId::Joint(_) => LabelingMode::JointCropStage,
        }
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClassId::Crop(c) => c.fmt(f),
            ClassId::Joint(j) => j.fmt(f),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FitOptions {
    pub priors: PriorMode,
    pub sparse_classes: SparseClassPolicy,
}

/// A fitted Gaussian discriminant model.
///
/// LDA holds a single shared covariance factor, QDA one per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DiscriminantModel<T> {
    mode: LabelingMode,
    kind: DiscriminantKind,
    lambda: ShrinkageParam,
    classes: Vec<ClassId>,
    means: Vec<Vec<T>>,
    priors: Vec<T>,
    sample_counts: Vec<usize>,
    factors: Vec<CholeskyFactor<T>>,
}

/// Class parameters for [`DiscriminantModel::from_parts`].
#[derive(Debug, Clone)]
pub struct ClassParams<T> {
    pub class: ClassId,
    pub mean: Vec<T>,
    pub prior: T,
    pub sample_count: usize,
    /// Per-class covariance for QDA; ignored for LDA.
    pub covariance: Option<Matrix<T>>,
}

fn class_of(mode: LabelingMode, crop: CropLabel, stage: StageLabel) -> ClassId {
    match mode {
        LabelingMode::CropOnly => ClassId::Crop(crop),
        LabelingMode::JointCropStage => ClassId::Joint(JointLabel::new(crop, stage)),
    }
}

/// Fits with uniform priors and strict sparse-class handling.
pub fn fit<T: Scalar>(
    ds: &Dataset<T>,
    mode: LabelingMode,
    kind: DiscriminantKind,
    lambda: ShrinkageParam,
    priors: PriorMode,
) -> Result<DiscriminantModel<T>> {
    fit_with(
        ds,
        mode,
        kind,
        lambda,
        FitOptions {
            priors,
            ..FitOptions::default()
        },
    )
}

pub fn fit_with<T: Scalar>(
    ds: &Dataset<T>,
    mode: LabelingMode,
    kind: DiscriminantKind,
    lambda: ShrinkageParam,
    options: FitOptions,
) -> Result<DiscriminantModel<T>> {
    let b = ds.band_count();
    let mut groups: std::collections::BTreeMap<ClassId, Vec<&[T]>> = Default::default();
    for r in ds.records() {
        groups
            .entry(class_of(mode, r.crop, r.stage))
            .or_default()
            .push(&r.spectrum);
    }
    let mut kept = Vec::new();
    for (class, samples) in groups {
        if samples.len() < 2 {
            match options.sparse_classes {
                SparseClassPolicy::Error => {
                    return Err(Error::SparseClass {
                        class: class.to_string(),
                        count: samples.len(),
                        required: 2,
                    })
                }
                SparseClassPolicy::Drop => continue,
            }
        }
        kept.push((class, samples));
    }
    if kept.is_empty() {
        return Err(Error::Data("no class has at least 2 training samples".into()));
    }

    let total: usize = kept.iter().map(|(_, s)| s.len()).sum();
    let k = kept.len();
    let mut classes = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut sample_counts = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for (class, samples) in &kept {
        let (mean, cov) = estimate_mean_cov(samples)?;
        classes.push(*class);
        means.push(mean);
        sample_counts.push(samples.len());
        covs.push(cov);
    }
    let priors = match options.priors {
        PriorMode::Uniform => vec![T::one() / T::from_count(k); k],
        PriorMode::Empirical => sample_counts
            .iter()
            .map(|&n| T::from_count(n) / T::from_count(total))
            .collect(),
    };
    let factorize_shrunk = |cov: &Matrix<T>, label: &str| -> Result<CholeskyFactor<T>> {
        factorize(&shrink_covariance(cov, lambda)?).map_err(|e| match e {
            Error::NotPositiveDefinite { index, pivot } => Error::Numerical(format!(
                "{label} covariance is not positive definite at λ={} (pivot {pivot} at band {index}); use a larger shrinkage parameter",
                lambda.value()
            )),
            other => other,
        })
    };
    let factors = match kind {
        DiscriminantKind::Qda => classes
            .iter()
            .zip(&covs)
            .map(|(c, cov)| factorize_shrunk(cov, &format!("class {c}")))
            .collect::<Result<Vec<_>>>()?,
        DiscriminantKind::Lda => {
            let mut pooled = Matrix::zeros(b, b);
            for (cov, &n) in covs.iter().zip(&sample_counts) {
                let w = T::from_count(n) / T::from_count(total);
                for (p, &c) in pooled.as_mut_slice().iter_mut().zip(cov.as_slice()) {
                    *p += w * c;
                }
            }
            vec![factorize_shrunk(&pooled, "pooled")?]
        }
    };
    Ok(DiscriminantModel {
        mode,
        kind,
        lambda,
        classes,
        means,
        priors,
        sample_counts,
        factors,
    })
}

impl<T: Scalar> DiscriminantModel<T> {
    /// Assembles a model from explicit parameters. Classes are reordered
    /// canonically; priors are normalized to sum to 1.
    pub fn from_parts(
        kind: DiscriminantKind,
        lambda: ShrinkageParam,
        mut params: Vec<ClassParams<T>>,
        shared_covariance: Option<Matrix<T>>,
    ) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidArgument("model needs at least one class".into()));
        }
        params.sort_by_key(|p| p.class);
        if params.windows(2).any(|w| w[0].class == w[1].class) {
            return Err(Error::InvalidArgument("duplicate class".into()));
        }
        let mode = params[0].class.mode();
        if params.iter().any(|p| p.class.mode() != mode) {
            return Err(Error::InvalidArgument("mixed crop and joint classes".into()));
        }
        let b = params[0].mean.len();
        if let Some(p) = params.iter().find(|p| p.mean.len() != b) {
            return Err(Error::Dimension {
                expected: b,
                got: p.mean.len(),
            });
        }
        let prior_sum: T = params.iter().map(|p| p.prior).sum();
        if params.iter().any(|p| !(p.prior >= T::zero())) || !(prior_sum > T::zero()) {
            return Err(Error::InvalidArgument("priors must be nonnegative with positive sum".into()));
        }
        let factors = match kind {
            DiscriminantKind::Lda => {
                let cov = shared_covariance
                    .ok_or_else(|| Error::InvalidArgument("LDA needs a shared covariance".into()))?;
                vec![factorize(&shrink_covariance(&cov, lambda)?)?]
            }
            DiscriminantKind::Qda => params
                .iter()
                .map(|p| {
                    let cov = p.covariance.as_ref().ok_or_else(|| {
                        Error::InvalidArgument(format!("QDA class {} has no covariance", p.class))
                    })?;
                    factorize(&shrink_covariance(cov, lambda)?)
                })
                .collect::<Result<_>>()?,
        };
        let model = Self {
            mode,
            kind,
            lambda,
            classes: params.iter().map(|p| p.class).collect(),
            means: params.iter().map(|p| p.mean.clone()).collect(),
            priors: params.iter().map(|p| p.prior / prior_sum).collect(),
            sample_counts: params.iter().map(|p| p.sample_count).collect(),
            factors,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks structural invariants; used after deserialization.
    pub fn validate(&self) -> Result<()> {
        let k = self.classes.len();
        if k == 0 {
            return Err(Error::Data("model has no classes".into()));
        }
        if self.means.len() != k || self.priors.len() != k || self.sample_counts.len() != k {
            return Err(Error::Data("per-class arrays disagree in length".into()));
        }
        if self.classes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Data("class list not in canonical order or has duplicates".into()));
        }
        if self.classes.iter().any(|c| c.mode() != self.mode) {
            return Err(Error::Data("class identifiers do not match labeling mode".into()));
        }
        let expected_factors = match self.kind {
            DiscriminantKind::Lda => 1,
            DiscriminantKind::Qda => k,
        };
        if self.factors.len() != expected_factors {
            return Err(Error::Data(format!(
                "{} model needs {expected_factors} covariance factors, has {}",
                self.kind,
                self.factors.len()
            )));
        }
        let b = self.means[0].len();
        if self.means.iter().any(|m| m.len() != b) || self.factors.iter().any(|f| f.dim() != b) {
            return Err(Error::Data("inconsistent band counts in model".into()));
        }
        let sum: T = self.priors.iter().copied().sum();
        if self.priors.iter().any(|p| !(*p >= T::zero())) || (sum - T::one()).abs() > T::lit(1e-12).max(T::epsilon() * T::from_count(4 * k)) {
            return Err(Error::Data("priors must be nonnegative and sum to 1".into()));
        }
        for f in &self.factors {
            CholeskyFactor::from_lower(f.lower().clone())?;
        }
        Ok(())
    }

    pub fn mode(&self) -> LabelingMode {
        self.mode
    }

    pub fn kind(&self) -> DiscriminantKind {
        self.kind
    }

    pub fn lambda(&self) -> ShrinkageParam {
        self.lambda
    }

    pub fn classes(&self) -> &[ClassId] {
        &self.classes
    }

    pub fn priors(&self) -> &[T] {
        &self.priors
    }

    pub fn means(&self) -> &[Vec<T>] {
        &self.means
    }

    pub fn sample_counts(&self) -> &[usize] {
        &self.sample_counts
    }

    pub fn factors(&self) -> &[CholeskyFactor<T>] {
        &self.factors
    }

    pub fn band_count(&self) -> usize {
        self.means[0].len()
    }

    fn factor(&self, class: usize) -> &CholeskyFactor<T> {
        match self.kind {
            DiscriminantKind::Lda => &self.factors[0],
            DiscriminantKind::Qda => &self.factors[class],
        }
    }

    fn require_mode(&self, mode: LabelingMode) -> Result<()> {
        if self.mode == mode {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "operation needs a {mode:?} model, got {:?}",
                self.mode
            )))
        }
    }

    /// Unnormalized `log π_c + log N(x; μ_c, Σ_c)` per class.
    pub fn log_joint_scores(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.band_count() {
            return Err(Error::Dimension {
                expected: self.band_count(),
                got: x.len(),
            });
        }
        (0..self.classes.len())
            .map(|c| Ok(self.priors[c].ln() + log_density(&self.means[c], self.factor(c), x)?))
            .collect()
    }

    /// Normalized log posteriors aligned with [`Self::classes`].
    pub fn class_log_posteriors(&self, x: &[T]) -> Result<Vec<T>> {
        let scores = self.log_joint_scores(x)?;
        let norm = log_sum_exp(&scores)?;
        Ok(scores.into_iter().map(|s| s - norm).collect())
    }

    pub fn joint_posterior_table(&self, x: &[T]) -> Result<JointPosteriorTable<T>> {
        self.require_mode(LabelingMode::JointCropStage)?;
        let logp = self.class_log_posteriors(x)?;
        let mut table = JointPosteriorTable::empty();
        for (class, lp) in self.classes.iter().zip(logp) {
            let j = class.joint().expect("joint mode");
            table.set(j, lp.exp());
        }
        Ok(table)
    }

    /// Argmax crop of a crop-only model.
    pub fn predict_direct(&self, x: &[T]) -> Result<CropLabel> {
        self.require_mode(LabelingMode::CropOnly)?;
        let scores = self.log_joint_scores(x)?;
        Ok(self.classes[first_argmax(&scores)].crop())
    }

    /// Crop with the largest marginal (stage-summed) posterior, and the
    /// marginal vector indexed by [`CropLabel::index`].
    pub fn predict_mmp(&self, x: &[T]) -> Result<(CropLabel, [T; CropLabel::COUNT])> {
        self.require_mode(LabelingMode::JointCropStage)?;
        let logp = self.class_log_posteriors(x)?;
        let mut log_marginal = [T::neg_infinity(); CropLabel::COUNT];
        for crop in CropLabel::ALL {
            let cells: Vec<T> = self
                .classes
                .iter()
                .zip(&logp)
                .filter(|(c, _)| c.crop() == crop)
                .map(|(_, &lp)| lp)
                .collect();
            if !cells.is_empty() {
                log_marginal[crop.index()] = log_sum_exp(&cells)?;
            }
        }
        let best = CropLabel::from_index(first_argmax(&log_marginal)).expect("crop index");
        Ok((best, log_marginal.map(|v| v.exp())))
    }

    /// Crop of the single most probable joint class, and that class.
    pub fn predict_mjp(&self, x: &[T]) -> Result<(CropLabel, JointLabel)> {
        self.require_mode(LabelingMode::JointCropStage)?;
        let scores = self.log_joint_scores(x)?;
        let j = self.classes[first_argmax(&scores)].joint().expect("joint mode");
        Ok((j.crop, j))
    }

    /// Crop prediction under `rule`; `Direct` on a joint model takes the MJP crop.
    pub fn predict_crop(&self, x: &[T], rule: DecisionRule) -> Result<CropLabel> {
        match (rule, self.mode) {
            (DecisionRule::Direct, LabelingMode::CropOnly) => self.predict_direct(x),
            (DecisionRule::Mmp, _) => self.predict_mmp(x).map(|(c, _)| c),
            (DecisionRule::Mjp, _) | (DecisionRule::Direct, LabelingMode::JointCropStage) => {
                self.predict_mjp(x).map(|(c, _)| c)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DecisionRule {
    Direct,
    Mmp,
    Mjp,
}

/// Index of the first maximal entry; NaN never wins.
fn first_argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Stage × crop posterior grid for one spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct JointPosteriorTable<T> {
    /// `probabilities[stage][crop]`.
    probabilities: [[T; CropLabel::COUNT]; StageLabel::COUNT],
    support: [[bool; CropLabel::COUNT]; StageLabel::COUNT],
}

impl<T: Scalar> JointPosteriorTable<T> {
    fn empty() -> Self {
        Self {
            probabilities: [[T::zero(); CropLabel::COUNT]; StageLabel::COUNT],
            support: [[false; CropLabel::COUNT]; StageLabel::COUNT],
        }
    }

    fn set(&mut self, j: JointLabel, p: T) {
        self.probabilities[j.stage.index()][j.crop.index()] = p;
        self.support[j.stage.index()][j.crop.index()] = true;
    }

    /// Builds a table from explicit cells; every listed cell is supported.
    pub fn from_cells(cells: &[(JointLabel, T)]) -> Result<Self> {
        let mut t = Self::empty();
        for &(j, p) in cells {
            if !(p >= T::zero() && p <= T::one()) {
                return Err(Error::InvalidArgument(format!("probability {p} for {j} outside [0, 1]")));
            }
            t.set(j, p);
        }
        Ok(t)
    }

    pub fn get(&self, crop: CropLabel, stage: StageLabel) -> T {
        self.probabilities[stage.index()][crop.index()]
    }

    pub fn is_supported(&self, crop: CropLabel, stage: StageLabel) -> bool {
        self.support[stage.index()][crop.index()]
    }

    pub fn rows(&self) -> &[[T; CropLabel::COUNT]; StageLabel::COUNT] {
        &self.probabilities
    }

    pub fn total(&self) -> T {
        self.probabilities.iter().flatten().copied().sum()
    }

    /// Column sums, indexed by crop.
    pub fn marginals(&self) -> [T; CropLabel::COUNT] {
        let mut m = [T::zero(); CropLabel::COUNT];
        for row in &self.probabilities {
            for (acc, &p) in m.iter_mut().zip(row) {
                *acc += p;
            }
        }
        m
    }

    fn crop_supported(&self, crop: CropLabel) -> bool {
        self.support.iter().any(|row| row[crop.index()])
    }

    /// Max-marginal crop; ties go to the alphabetically first supported crop.
    pub fn decide_mmp(&self) -> CropLabel {
        let m = self.marginals();
        let mut best: Option<CropLabel> = None;
        for crop in CropLabel::ALL.into_iter().filter(|&c| self.crop_supported(c)) {
            if best.is_none_or(|b| m[crop.index()] > m[b.index()]) {
                best = Some(crop);
            }
        }
        best.unwrap_or(CropLabel::ALL[0])
    }

    /// Max-joint cell; ties by crop then stage order.
    pub fn decide_mjp(&self) -> JointLabel {
        let mut best: Option<(JointLabel, T)> = None;
        for j in JointLabel::all().filter(|j| self.is_supported(j.crop, j.stage)) {
            let p = self.get(j.crop, j.stage);
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((j, p));
            }
        }
        best.map(|(j, _)| j)
            .unwrap_or(JointLabel::new(CropLabel::ALL[0], StageLabel::ALL[0]))
    }
}

impl<T: Scalar> fmt::Display for JointPosteriorTable<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<14}", "Stage")?;
        for c in CropLabel::ALL {
            write!(f, "{:>12}", c.name())?;
        }
        writeln!(f)?;
        for s in StageLabel::ALL {
            write!(f, "{:<14}", s.name())?;
            for c in CropLabel::ALL {
                write!(f, "{:>12.4}", self.get(c, s).as_f64())?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SampleRecord, SyntheticClass, SyntheticSpec, WavelengthGrid};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use CropLabel::*;
    use StageLabel::*;

    fn jl(c: CropLabel, s: StageLabel) -> JointLabel {
        JointLabel::new(c, s)
    }

    fn corn_leads_grid() -> JointPosteriorTable<f64> {
        JointPosteriorTable::from_cells(&[
            (jl(Corn, Critical), 0.58),
            (jl(Soybeans, Critical), 0.42),
        ])
        .unwrap()
    }

    fn near_tie_grid() -> JointPosteriorTable<f64> {
        JointPosteriorTable::from_cells(&[(jl(Corn, Critical), 0.48), (jl(Corn, MatureSenesc), 0.52)]).unwrap()
    }

    fn split_stage_grid() -> JointPosteriorTable<f64> {
        JointPosteriorTable::from_cells(&[
            (jl(Corn, Critical), 0.23),
            (jl(Soybeans, Critical), 0.44),
            (jl(WinterWheat, MatureSenesc), 0.33),
            (jl(Corn, Late), 0.0),
        ])
        .unwrap()
    }

    #[test]
    fn worked_posterior_grids_decide_as_expected() {
        assert_eq!(corn_leads_grid().decide_mmp(), Corn);
        assert_eq!(corn_leads_grid().decide_mjp(), jl(Corn, Critical));

        let t2 = near_tie_grid();
        assert_relative_eq!(t2.marginals()[Corn.index()], 1.0);
        assert_eq!(t2.decide_mmp(), Corn);
        assert_eq!(t2.decide_mjp(), jl(Corn, MatureSenesc));

        let t3 = split_stage_grid();
        let m = t3.marginals();
        assert_relative_eq!(m[Corn.index()], 0.23);
        assert_relative_eq!(m[Soybeans.index()], 0.44);
        assert_relative_eq!(m[WinterWheat.index()], 0.33);
        assert_eq!(t3.decide_mmp(), Soybeans);
        assert_eq!(t3.decide_mjp(), jl(Soybeans, Critical));
    }

    #[test]
    fn uniform_table_breaks_ties_alphabetically() {
        let t = JointPosteriorTable::from_cells(&[
            (jl(Rice, Late), 0.25),
            (jl(Cotton, Harvest), 0.25),
            (jl(Cotton, EmergeVEarly), 0.25),
            (jl(WinterWheat, Late), 0.25),
        ])
        .unwrap();
        assert_eq!(t.decide_mjp(), jl(Cotton, EmergeVEarly));
        let t = JointPosteriorTable::from_cells(&[(jl(Rice, Late), 0.5), (jl(Cotton, Harvest), 0.5)]).unwrap();
        assert_eq!(t.decide_mmp(), Cotton);
    }

    /// Two 2-band classes per joint label spec, sampled deterministically.
    fn joint_fixture(seed: u64) -> Dataset<f64> {
        let mk = |crop, stage, mean: [f64; 2], cov: [[f64; 2]; 2]| SyntheticClass {
            crop,
            stage,
            count: 60,
            mean: mean.to_vec(),
            covariance: vec![cov[0].to_vec(), cov[1].to_vec()],
        };
        let spec = SyntheticSpec {
            wavelengths_nm: vec![550.0, 800.0],
            classes: vec![
                mk(Corn, Critical, [10.0, 40.0], [[2.0, 0.5], [0.5, 1.0]]),
                mk(Corn, MatureSenesc, [20.0, 25.0], [[1.0, 0.0], [0.0, 3.0]]),
                mk(Soybeans, Critical, [12.0, 38.0], [[1.5, -0.3], [-0.3, 1.2]]),
            ],
        };
        synthesize(&spec, seed).unwrap()
    }

    #[test]
    fn fit_counts_classes_and_factors() {
        let ds = joint_fixture(1);
        let qda = fit(&ds, LabelingMode::JointCropStage, DiscriminantKind::Qda, ShrinkageParam::ZERO, PriorMode::Uniform).unwrap();
        assert_eq!(qda.classes().len(), 3);
        assert_eq!(qda.factors().len(), 3);
        assert!(qda.priors().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let lda = fit(&ds, LabelingMode::CropOnly, DiscriminantKind::Lda, ShrinkageParam::ZERO, PriorMode::Empirical).unwrap();
        assert_eq!(lda.classes(), &[ClassId::Crop(Corn), ClassId::Crop(Soybeans)]);
        assert_eq!(lda.factors().len(), 1);
        assert_relative_eq!(lda.priors()[0], 120.0 / 180.0);
        lda.validate().unwrap();
    }

    #[test]
    fn joint_table_support_and_normalization() {
        let ds = joint_fixture(2);
        let m = fit(&ds, LabelingMode::JointCropStage, DiscriminantKind::Qda, ShrinkageParam::new(0.1).unwrap(), PriorMode::Uniform).unwrap();
        let t = m.joint_posterior_table(&[11.0, 39.0]).unwrap();
        assert!((t.total() - 1.0).abs() < 1e-9);
        assert!(!t.is_supported(Rice, Late));
        assert_eq!(t.get(Rice, Late), 0.0);
        assert!(t.is_supported(Corn, MatureSenesc));
        let (mmp, marg) = m.predict_mmp(&[11.0, 39.0]).unwrap();
        assert_eq!(mmp, t.decide_mmp());
        for c in CropLabel::ALL {
            assert!((marg[c.index()] - t.marginals()[c.index()]).abs() < 1e-12);
        }
        assert_eq!(m.predict_mjp(&[11.0, 39.0]).unwrap().1, t.decide_mjp());
    }

    #[test]
    fn sparse_class_is_reported_or_dropped() {
        let grid = WavelengthGrid::new(vec![1.0, 2.0]).unwrap();
        let mut records: Vec<_> = (0..5)
            .map(|i| SampleRecord::new(vec![i as f64, (i * i) as f64], Corn, Late))
            .collect();
        records.push(SampleRecord::new(vec![9.0, 1.0], Rice, Harvest));
        let ds = Dataset::new(grid, records).unwrap();
        let err = fit(&ds, LabelingMode::JointCropStage, DiscriminantKind::Qda, ShrinkageParam::ZERO, PriorMode::Uniform).unwrap_err();
        assert!(matches!(err, Error::SparseClass { ref class, count: 1, .. } if class == "Rice/Harvest"));
        let opts = FitOptions {
            sparse_classes: SparseClassPolicy::Drop,
            ..Default::default()
        };
        let m = fit_with(&ds, LabelingMode::JointCropStage, DiscriminantKind::Qda, ShrinkageParam::ZERO, opts).unwrap();
        assert_eq!(m.classes(), &[ClassId::Joint(jl(Corn, Late))]);
        let t = m.joint_posterior_table(&[9.0, 1.0]).unwrap();
        assert_eq!(t.get(Corn, Late), 1.0);
        assert_eq!(m.predict_mjp(&[9.0, 1.0]).unwrap().0, Corn);
    }

    #[test]
    fn singular_class_needs_shrinkage() {
        let grid = WavelengthGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        // collinear samples: rank-1 covariance
        let records: Vec<_> = (0..4)
            .map(|i| SampleRecord::new(vec![i as f64, 2.0 * i as f64, 1.0], Corn, Late))
            .chain((0..4).map(|i| SampleRecord::new(vec![5.0, i as f64, (i % 2) as f64], Rice, Late)))
            .collect();
        let ds = Dataset::new(grid, records).unwrap();
        let err = fit(&ds, LabelingMode::CropOnly, DiscriminantKind::Qda, ShrinkageParam::ZERO, PriorMode::Uniform).unwrap_err();
        assert!(matches!(err, Error::Numerical(ref m) if m.contains("larger shrinkage")));
        assert!(fit(&ds, LabelingMode::CropOnly, DiscriminantKind::Qda, ShrinkageParam::new(0.05).unwrap(), PriorMode::Uniform).is_ok());
    }

    #[test]
    fn wrong_mode_is_rejected() {
        let ds = joint_fixture(3);
        let crop = fit(&ds, LabelingMode::CropOnly, DiscriminantKind::Lda, ShrinkageParam::ZERO, PriorMode::Uniform).unwrap();
        assert!(crop.predict_mmp(&[1.0, 1.0]).is_err());
        assert!(crop.predict_mjp(&[1.0, 1.0]).is_err());
        assert!(crop.joint_posterior_table(&[1.0, 1.0]).is_err());
        let joint = fit(&ds, LabelingMode::JointCropStage, DiscriminantKind::Lda, ShrinkageParam::ZERO, PriorMode::Uniform).unwrap();
        assert!(joint.predict_direct(&[1.0, 1.0]).is_err());
        assert!(matches!(joint.class_log_posteriors(&[1.0]), Err(Error::Dimension { .. })));
    }

    fn identity_model(means: &[(CropLabel, [f64; 2])], kind: DiscriminantKind) -> DiscriminantModel<f64> {
        let params = means
            .iter()
            .map(|&(c, m)| ClassParams {
                class: ClassId::Crop(c),
                mean: m.to_vec(),
                prior: 1.0,
                sample_count: 10,
                covariance: Some(Matrix::identity(2)),
            })
            .collect();
        DiscriminantModel::from_parts(kind, ShrinkageParam::ZERO, params, Some(Matrix::identity(2))).unwrap()
    }

    #[test]
    fn identical_classes_split_evenly_and_tie_alphabetically() {
        let m = identity_model(&[(Rice, [0.0, 0.0]), (Cotton, [0.0, 0.0])], DiscriminantKind::Qda);
        let lp = m.class_log_posteriors(&[3.0, -1.0]).unwrap();
        for v in lp {
            assert_relative_eq!(v, 0.5f64.ln(), epsilon = 1e-15);
        }
        let m = identity_model(&[(Rice, [1.0, 0.0]), (Cotton, [-1.0, 0.0])], DiscriminantKind::Lda);
        assert_eq!(m.predict_direct(&[0.0, 5.0]).unwrap(), Cotton);
    }

    #[test]
    fn far_point_is_confidently_assigned() {
        let m = identity_model(&[(Corn, [0.0, 0.0]), (Rice, [20.0, 0.0])], DiscriminantKind::Qda);
        let lp = m.class_log_posteriors(&[0.5, 0.0]).unwrap();
        assert!(lp[0].exp() > 0.999);
    }

    /// Gaussian density via explicit 2×2 inverse.
    fn density_2d(mean: &[f64], cov: &Matrix<f64>, x: &[f64]) -> f64 {
        let (a, b, c, d) = (cov[(0, 0)], cov[(0, 1)], cov[(1, 0)], cov[(1, 1)]);
        let det = a * d - b * c;
        let (i00, i01, i10, i11) = (d / det, -b / det, -c / det, a / det);
        let (u, v) = (x[0] - mean[0], x[1] - mean[1]);
        let q = u * (i00 * u + i01 * v) + v * (i10 * u + i11 * v);
        (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * det.sqrt())
    }

    #[test]
    fn three_class_posteriors_match_density_ratios() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let covs: Vec<Matrix<f64>> = (0..3)
            .map(|_| {
                let a = rng.gen_range(0.5..3.0);
                let d = rng.gen_range(0.5..3.0);
                let b = rng.gen_range(-0.5..0.5) * f64::sqrt(a * d);
                Matrix::from_rows(&[vec![a, b], vec![b, d]]).unwrap()
            })
            .collect();
        let means = [[0.0, 0.0], [2.0, 1.0], [-1.0, 2.5]];
        let priors = [0.2, 0.5, 0.3];
        let crops = [Corn, Rice, WinterWheat];
        let params = (0..3)
            .map(|i| ClassParams {
                class: ClassId::Crop(crops[i]),
                mean: means[i].to_vec(),
                prior: priors[i],
                sample_count: 5,
                covariance: Some(covs[i].clone()),
            })
            .collect();
        let m = DiscriminantModel::from_parts(DiscriminantKind::Qda, ShrinkageParam::ZERO, params, None).unwrap();
        for _ in 0..200 {
            let x = [rng.gen_range(-4.0..5.0), rng.gen_range(-3.0..5.0)];
            let w: Vec<f64> = (0..3).map(|i| priors[i] * density_2d(&means[i], &covs[i], &x)).collect();
            let z: f64 = w.iter().sum();
            let lp = m.class_log_posteriors(&x).unwrap();
            for i in 0..3 {
                assert!((lp[i].exp() - w[i] / z).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn lda_and_qda_agree_when_class_covariances_coincide() {
        // class B is class A shifted, so sample covariances are identical
        let spec = SyntheticSpec {
            wavelengths_nm: vec![1.0, 2.0],
            classes: vec![SyntheticClass {
                crop: Corn,
                stage: Late,
                count: 200,
                mean: vec![0.0, 0.0],
                covariance: vec![vec![1.0, 0.3], vec![0.3, 0.5]],
            }],
        };
        let a = synthesize(&spec, 4).unwrap();
        let shift = [3.0, -1.0];
        let mut records = a.records().to_vec();
        records.extend(a.records().iter().map(|r| {
            SampleRecord::new(r.spectrum.iter().zip(shift).map(|(v, s)| v + s).collect(), Rice, Late)
        }));
        let ds = Dataset::new(a.grid().clone(), records).unwrap();
        let lam = ShrinkageParam::ZERO;
        let lda = fit(&ds, LabelingMode::CropOnly, DiscriminantKind::Lda, lam, PriorMode::Uniform).unwrap();
        let qda = fit(&ds, LabelingMode::CropOnly, DiscriminantKind::Qda, lam, PriorMode::Uniform).unwrap();
        let mut compared = 0;
        for i in 0..41 {
            for j in 0..41 {
                let x = [-3.0 + 0.225 * i as f64, -4.0 + 0.2 * j as f64];
                let pl = lda.class_log_posteriors(&x).unwrap();
                let pq = qda.class_log_posteriors(&x).unwrap();
                if (pl[0] - pl[1]).abs() < 1e-9 {
                    continue;
                }
                compared += 1;
                assert_eq!(lda.predict_direct(&x).unwrap(), qda.predict_direct(&x).unwrap());
                assert!((pl[0] - pq[0]).abs() < 1e-9);
            }
        }
        assert!(compared > 1600);
    }

    #[test]
    fn model_json_round_trip() {
        let ds = joint_fixture(5);
        let m = fit(&ds, LabelingMode::JointCropStage, DiscriminantKind::Qda, ShrinkageParam::new(0.5).unwrap(), PriorMode::Uniform).unwrap();
        let back: DiscriminantModel<f64> = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        back.validate().unwrap();
        assert_eq!(back, m);
    }

    proptest! {
        #[test]
        fn posteriors_normalize(seed in any::<u64>(), k in 1usize..6, b in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let params = JointLabel::all().take(k).map(|j| {
                let a = Matrix::from_fn(b, b, |_, _| rng.gen_range(-1.0..1.0));
                let mut cov = a.gram();
                for i in 0..b { cov[(i, i)] += 0.05; }
                ClassParams {
                    class: ClassId::Joint(j),
                    mean: (0..b).map(|_| rng.gen_range(-10.0..10.0)).collect(),
                    prior: rng.gen_range(0.1..1.0),
                    sample_count: 3,
                    covariance: Some(cov),
                }
            }).collect();
            let m = DiscriminantModel::from_parts(DiscriminantKind::Qda, ShrinkageParam::new(0.01).unwrap(), params, None).unwrap();
            let x: Vec<f64> = (0..b).map(|_| rng.gen_range(-30.0..30.0)).collect();
            let s: f64 = m.class_log_posteriors(&x).unwrap().iter().map(|v| v.exp()).sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            let t = m.joint_posterior_table(&x).unwrap();
            prop_assert!((t.total() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn single_dominant_stage_makes_rules_agree(cells in proptest::collection::vec((0usize..6, 0.01f64..1.0), 5)) {
            // one stage cell per crop: all of a crop's mass sits in one cell
            let z: f64 = cells.iter().map(|c| c.1).sum();
            let t = JointPosteriorTable::from_cells(
                &cells.iter().enumerate()
                    .map(|(ci, &(si, p))| (jl(CropLabel::ALL[ci], StageLabel::ALL[si]), p / z))
                    .collect::<Vec<_>>(),
            ).unwrap();
            prop_assert_eq!(t.decide_mmp(), t.decide_mjp().crop);
        }

        #[test]
        fn argmax_invariant_to_score_shift(seed in any::<u64>(), shift in -500.0f64..500.0) {
            let ds = joint_fixture(seed % 16);
            let m = fit(&ds, LabelingMode::JointCropStage, DiscriminantKind::Qda, ShrinkageParam::new(0.2).unwrap(), PriorMode::Uniform).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = [rng.gen_range(0.0..30.0), rng.gen_range(15.0..45.0)];
            let scores = m.log_joint_scores(&x).unwrap();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            prop_assert_eq!(first_argmax(&scores), first_argmax(&shifted));
            let norm = log_sum_exp(&shifted).unwrap();
            let lp = m.class_log_posteriors(&x).unwrap();
            for (a, b) in shifted.iter().zip(&lp) {
                prop_assert!(((a - norm) - b).abs() < 1e-9);
            }
        }

        #[test]
        fn class_order_does_not_matter(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params: Vec<_> = [Corn, Cotton, Rice, Soybeans].iter().map(|&c| ClassParams {
                class: ClassId::Crop(c),
                mean: vec![rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0)],
                prior: 1.0,
                sample_count: 4,
                covariance: Some(Matrix::from_diagonal(&[rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)])),
            }).collect();
            let a = DiscriminantModel::from_parts(DiscriminantKind::Qda, ShrinkageParam::ZERO, params.clone(), None).unwrap();
            params.reverse();
            params.swap(0, 2);
            let b = DiscriminantModel::from_parts(DiscriminantKind::Qda, ShrinkageParam::ZERO, params, None).unwrap();
            let x = [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)];
            prop_assert_eq!(a.predict_direct(&x).unwrap(), b.predict_direct(&x).unwrap());
            prop_assert_eq!(a.class_log_posteriors(&x).unwrap(), b.class_log_posteriors(&x).unwrap());
        }
    }
}
