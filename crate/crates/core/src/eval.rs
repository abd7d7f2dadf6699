//! Stratified k-fold cross-validation, accuracy summaries and the
//! shrinkage grid search.
//!
//! Conventions: folds are stratified on crop only; the fold standard
//! deviation is the population (divide-by-k) value; the reported interval is
//! `mean ± 2·std`. Grid search reuses one fold assignment for every λ and
//! selects on the same folds (no nested CV), so the selected score is
//! optimistically biased.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{
    fit_with, DecisionRule, DiscriminantKind, FitOptions, LabelingMode, PriorMode, SparseClassPolicy,
};
use crate::dataset::{CropLabel, Dataset};
use crate::error::{Error, Result};
use crate::gaussian::ShrinkageParam;
use crate::mlp::{self, MlpConfig};
use crate::scalar::Scalar;

pub const DEFAULT_SEED: u64 = 2024;
pub const DEFAULT_FOLDS: usize = 10;

pub fn default_grid() -> Vec<f64> {
    vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0]
}

/// One Gaussian discriminant configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscriminantSpec {
    pub kind: DiscriminantKind,
    pub rule: DecisionRule,
    pub lambda: ShrinkageParam,
    #[serde(default)]
    pub priors: PriorMode,
}

impl DiscriminantSpec {
    pub fn mode(&self) -> LabelingMode {
        match self.rule {
            DecisionRule::Direct => LabelingMode::CropOnly,
            DecisionRule::Mmp | DecisionRule::Mjp => LabelingMode::JointCropStage,
        }
    }

    pub fn with_lambda(self, lambda: ShrinkageParam) -> Self {
        Self { lambda, ..self }
    }
}

/// A classifier the harness can evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Discriminant(DiscriminantSpec),
    Mlp(MlpConfig),
}

impl Algorithm {
    pub fn discriminant(kind: DiscriminantKind, rule: DecisionRule, lambda: f64) -> Result<Self> {
        Ok(Algorithm::Discriminant(DiscriminantSpec {
            kind,
            rule,
            lambda: ShrinkageParam::new(lambda)?,
            priors: PriorMode::Uniform,
        }))
    }

    /// The standard eight-model comparison.
    pub fn comparison_suite() -> Vec<Algorithm> {
        use DecisionRule::*;
        use DiscriminantKind::*;
        let d = |k, r, l| Algorithm::discriminant(k, r, l).expect("valid λ");
        vec![
            d(Lda, Direct, 0.0),
            d(Lda, Mmp, 0.0),
            d(Lda, Mjp, 0.0),
            d(Qda, Direct, 0.01),
            d(Qda, Mmp, 0.5),
            d(Qda, Mjp, 0.5),
            Algorithm::Mlp(MlpConfig::one_hidden()),
            Algorithm::Mlp(MlpConfig::two_hidden()),
        ]
    }

    /// Human-readable row label, e.g. `QDA Bayes (MMP, RP=0.5)`.
    pub fn label(&self) -> String {
        match self {
            Algorithm::Discriminant(s) => spec_label(s, true),
            Algorithm::Mlp(cfg) => format!("Neural Network ({}HL)", cfg.hidden_layers.len()),
        }
    }

    /// Stable descriptor, parseable by [`Algorithm::from_str`].
    pub fn id(&self) -> String {
        match self {
            Algorithm::Discriminant(s) => {
                let base = match s.kind {
                    DiscriminantKind::Lda => "lda",
                    DiscriminantKind::Qda => "qda",
                };
                let rule = match s.rule {
                    DecisionRule::Direct => "",
                    DecisionRule::Mmp => "-bayes-mmp",
                    DecisionRule::Mjp => "-bayes-mjp",
                };
                let lam = s.lambda.value();
                if s.kind == DiscriminantKind::Lda && lam == 0.0 {
                    format!("{base}{rule}")
                } else {
                    format!("{base}{rule}:{lam}")
                }
            }
            Algorithm::Mlp(cfg) => format!("mlp-{}hl", cfg.hidden_layers.len()),
        }
    }

    /// Fits on `train` and predicts the crop of every record in `test`.
    pub fn fit_predict<T: Scalar>(&self, train: &Dataset<T>, test: &Dataset<T>) -> Result<Vec<CropLabel>> {
        match self {
            Algorithm::Discriminant(s) => {
                let model = fit_with(
                    train,
                    s.mode(),
                    s.kind,
                    s.lambda,
                    FitOptions {
                        priors: s.priors,
                        sparse_classes: SparseClassPolicy::Drop,
                    },
                )?;
                test.records()
                    .iter()
                    .map(|r| model.predict_crop(&r.spectrum, s.rule))
                    .collect()
            }
            Algorithm::Mlp(cfg) => {
                let model = mlp::train(train, cfg)?;
                test.records()
                    .iter()
                    .map(|r| model.predict(&r.spectrum).map(|(c, _)| c))
                    .collect()
            }
        }
    }
}

fn spec_label(s: &DiscriminantSpec, with_lambda: bool) -> String {
    let lam = s.lambda.value();
    let rp = match (s.kind, lam == 0.0) {
        _ if !with_lambda => None,
        (DiscriminantKind::Lda, true) => None,
        _ => Some(format!("RP={lam}")),
    };
    let rule = match s.rule {
        DecisionRule::Direct => None,
        DecisionRule::Mmp => Some("MMP"),
        DecisionRule::Mjp => Some("MJP"),
    };
    let parts: Vec<String> = rule.map(str::to_string).into_iter().chain(rp).collect();
    let bayes = if rule.is_some() { " Bayes" } else { "" };
    if parts.is_empty() {
        format!("{}{bayes}", s.kind)
    } else {
        format!("{}{bayes} ({})", s.kind, parts.join(", "))
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    /// `lda`, `lda-bayes-mmp`, `qda:0.01`, `qda-bayes-mjp:0.5`, `mlp-1hl`, `mlp-2hl`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let (name, lambda) = match s.split_once(':') {
            Some((n, l)) => (
                n,
                Some(
                    l.parse::<f64>()
                        .map_err(|_| Error::InvalidArgument(format!("bad λ in {s:?}")))?,
                ),
            ),
            None => (s.as_str(), None),
        };
        let (kind, rule) = match name {
            "mlp-1hl" | "mlp1" | "mlp" if lambda.is_none() => return Ok(Algorithm::Mlp(MlpConfig::one_hidden())),
            "mlp-2hl" | "mlp2" if lambda.is_none() => return Ok(Algorithm::Mlp(MlpConfig::two_hidden())),
            "lda" => (DiscriminantKind::Lda, DecisionRule::Direct),
            "lda-bayes-mmp" => (DiscriminantKind::Lda, DecisionRule::Mmp),
            "lda-bayes-mjp" => (DiscriminantKind::Lda, DecisionRule::Mjp),
            "qda" => (DiscriminantKind::Qda, DecisionRule::Direct),
            "qda-bayes-mmp" => (DiscriminantKind::Qda, DecisionRule::Mmp),
            "qda-bayes-mjp" => (DiscriminantKind::Qda, DecisionRule::Mjp),
            _ => return Err(Error::InvalidArgument(format!("unknown algorithm {s:?}"))),
        };
        let lambda = match (kind, lambda) {
            (_, Some(l)) => l,
            (DiscriminantKind::Lda, None) => 0.0,
            (DiscriminantKind::Qda, None) => {
                return Err(Error::InvalidArgument(format!(
                    "{name} needs a shrinkage parameter, e.g. {name}:0.5"
                )))
            }
        };
        Algorithm::discriminant(kind, rule, lambda)
    }
}

/// Fold index per record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    k: usize,
    seed: u64,
    folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn folds(&self) -> &[usize] {
        &self.folds
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }
}

/// Shuffles each crop's records by `seed` and deals them round-robin.
///
/// Dealing continues from fold to fold across crops, so overall fold sizes
/// also differ by at most one.
pub fn stratified_kfold<T: Scalar>(ds: &Dataset<T>, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k must be at least 2, got {k}")));
    }
    let mut by_crop: [Vec<usize>; CropLabel::COUNT] = Default::default();
    for (i, r) in ds.records().iter().enumerate() {
        by_crop[r.crop.index()].push(i);
    }
    for crop in CropLabel::ALL {
        let n = by_crop[crop.index()].len();
        if n > 0 && n < k {
            return Err(Error::Data(format!(
                "crop {crop} has {n} samples, fewer than k = {k}"
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![usize::MAX; ds.len()];
    let mut next = 0;
    for members in &mut by_crop {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            folds[i] = next;
            next = (next + 1) % k;
        }
    }
    Ok(FoldAssignment { k, seed, folds })
}

/// Counts with rows = true crop, columns = predicted crop.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[usize; CropLabel::COUNT]; CropLabel::COUNT],
}

impl ConfusionMatrix {
    pub fn record(&mut self, truth: CropLabel, predicted: CropLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> [usize; CropLabel::COUNT] {
        self.counts.map(|row| row.iter().sum())
    }

    pub fn column_sums(&self) -> [usize; CropLabel::COUNT] {
        let mut out = [0; CropLabel::COUNT];
        for row in &self.counts {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    pub fn correct(&self) -> usize {
        (0..CropLabel::COUNT).map(|i| self.counts[i][i]).sum()
    }

    /// `None` for crops without true samples.
    pub fn recall(&self) -> [Option<f64>; CropLabel::COUNT] {
        let rows = self.row_sums();
        std::array::from_fn(|i| (rows[i] > 0).then(|| self.counts[i][i] as f64 / rows[i] as f64))
    }

    /// `None` for crops never predicted.
    pub fn precision(&self) -> [Option<f64>; CropLabel::COUNT] {
        let cols = self.column_sums();
        std::array::from_fn(|i| (cols[i] > 0).then(|| self.counts[i][i] as f64 / cols[i] as f64))
    }
}

/// Renders counts plus per-crop recall and precision.
pub fn confusion(report: &CvReport) -> String {
    report.confusion.to_string()
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let pct = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v));
        write!(f, "{:<12}", "true\\pred")?;
        for c in CropLabel::ALL {
            write!(f, "{:>12}", c.name())?;
        }
        writeln!(f, "{:>10}", "recall%")?;
        let recall = self.recall();
        for (i, c) in CropLabel::ALL.iter().enumerate() {
            write!(f, "{:<12}", c.name())?;
            for v in self.counts[i] {
                write!(f, "{v:>12}")?;
            }
            writeln!(f, "{:>10}", pct(recall[i]))?;
        }
        write!(f, "{:<12}", "precision%")?;
        for p in self.precision() {
            write!(f, "{:>12}", pct(p))?;
        }
        writeln!(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub algorithm: String,
    pub descriptor: String,
    pub k: usize,
    pub seed: u64,
    pub fold_sizes: Vec<usize>,
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation of the fold accuracies.
    pub std: f64,
    /// `[mean − 2·std, mean + 2·std]`.
    pub interval: [f64; 2],
    pub confusion: ConfusionMatrix,
}

impl CvReport {
    fn assemble(algorithm: &Algorithm, folds: &FoldAssignment, per_fold: Vec<(usize, usize, ConfusionMatrix)>) -> Self {
        let fold_accuracies: Vec<f64> = per_fold
            .iter()
            .map(|&(correct, n, _)| correct as f64 / n as f64)
            .collect();
        let (mean, std) = mean_and_population_std(&fold_accuracies);
        let mut confusion = ConfusionMatrix::default();
        for (_, _, cm) in &per_fold {
            for i in 0..CropLabel::COUNT {
                for j in 0..CropLabel::COUNT {
                    confusion.counts[i][j] += cm.counts[i][j];
                }
            }
        }
        Self {
            algorithm: algorithm.label(),
            descriptor: algorithm.id(),
            k: folds.k(),
            seed: folds.seed(),
            fold_sizes: per_fold.iter().map(|&(_, n, _)| n).collect(),
            fold_accuracies,
            mean,
            std,
            interval: [mean - 2.0 * std, mean + 2.0 * std],
            confusion,
        }
    }

    pub fn half_width(&self) -> f64 {
        2.0 * self.std
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn mean_and_population_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn run_fold<T: Scalar>(
    ds: &Dataset<T>,
    algorithm: &Algorithm,
    folds: &FoldAssignment,
    fold: usize,
) -> Result<(usize, usize, ConfusionMatrix)> {
    let test_idx = folds.test_indices(fold);
    if test_idx.is_empty() {
        return Err(Error::Data("fold has no records".into()));
    }
    let train = ds.subset(&folds.train_indices(fold))?;
    let test = ds.subset(&test_idx)?;
    let predictions = algorithm.fit_predict(&train, &test)?;
    let mut cm = ConfusionMatrix::default();
    for (r, &p) in test.records().iter().zip(&predictions) {
        cm.record(r.crop, p);
    }
    Ok((cm.correct(), test.len(), cm))
}

/// Cross-validates `algorithm` on crop labels. Folds run in parallel; the
/// report does not depend on scheduling.
pub fn run_cv<T: Scalar>(ds: &Dataset<T>, algorithm: &Algorithm, folds: &FoldAssignment) -> Result<CvReport> {
    if folds.folds().len() != ds.len() {
        return Err(Error::Dimension {
            expected: ds.len(),
            got: folds.folds().len(),
        });
    }
    let per_fold = (0..folds.k())
        .into_par_iter()
        .map(|f| {
            run_fold(ds, algorithm, folds, f).map_err(|e| Error::Fold {
                fold: f,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvReport::assemble(algorithm, folds, per_fold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchReport {
    pub family: String,
    pub grid: Vec<f64>,
    pub reports: Vec<CvReport>,
    pub selected_lambda: f64,
    pub selected_index: usize,
}

impl GridSearchReport {
    pub fn selected(&self) -> &CvReport {
        &self.reports[self.selected_index]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

pub fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("λ grid is empty".into()));
    }
    if grid.iter().any(|l| !(0.0..=1.0).contains(l)) {
        return Err(Error::InvalidArgument("λ grid values must lie in [0, 1]".into()));
    }
    if grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidArgument("λ grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Cross-validates `family` at every λ on the same folds and keeps the best
/// mean accuracy, smallest λ on ties.
pub fn grid_search_reg<T: Scalar>(
    ds: &Dataset<T>,
    family: DiscriminantSpec,
    grid: &[f64],
    folds: &FoldAssignment,
) -> Result<GridSearchReport> {
    validate_grid(grid)?;
    let reports = grid
        .par_iter()
        .map(|&l| {
            let alg = Algorithm::Discriminant(family.with_lambda(ShrinkageParam::new(l)?));
            run_cv(ds, &alg, folds)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = 0;
    for (i, r) in reports.iter().enumerate() {
        if r.mean > reports[best].mean {
            best = i;
        }
    }
    let family_label = spec_label(&family, false);
    Ok(GridSearchReport {
        family: family_label,
        grid: grid.to_vec(),
        selected_lambda: grid[best],
        selected_index: best,
        reports,
    })
}

/// Text table with one row per report: algorithm, mean accuracy, ±2σ (percent).
pub fn render_table(reports: &[CvReport]) -> String {
    let width = reports.iter().map(|r| r.algorithm.len()).max().unwrap_or(9).max(9);
    let mut out = format!("{:<width$}  {:>8}  {:>6}\n", "Algorithm", "Accuracy", "±2σ");
    for r in reports {
        out.push_str(&format!(
            "{:<width$}  {:>8.1}  {:>6.1}\n",
            r.algorithm,
            100.0 * r.mean,
            100.0 * r.half_width()
        ));
    }
    out
}
