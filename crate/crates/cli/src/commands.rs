use std::path::{Path, PathBuf};

use cropspec::analysis::{emit_scatter, fit_pca, project, GroupBy, ScatterOptions};
use cropspec::classify::{FitOptions, SparseClassPolicy};
use cropspec::dataset::{load_library, summarize as summarize_ds, synthesize, write_library_file, SyntheticSpec};
use cropspec::eval::{default_grid, grid_search_reg, render_table, run_cv, stratified_kfold, Algorithm};
use cropspec::persist::{train_model, Prediction};
use cropspec::{CropLabel, Dataset, ModelFile};
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

fn load(cfg: &RunConfig) -> Result<Dataset, CliError> {
    Ok(load_library(cfg.dataset()?, &cfg.ingest()?)?)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cfg.output_dir();
    std::fs::create_dir_all(&dir).map_err(|e| cropspec::Error::Io {
        path: dir.clone(),
        source: e,
    })?;
    Ok(dir)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| {
        CliError::Core(cropspec::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn file_stem(id: &str) -> String {
    id.replace(':', "_")
}

pub fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load(cfg)?;
    print!("{}", summarize_ds(&ds));
    Ok(())
}

pub fn summarize(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load(cfg)?;
    let summary = summarize_ds(&ds);
    let dir = out_dir(cfg)?;
    write(&dir.join("summary.json"), json(&summary))?;
    print!("{summary}");
    Ok(())
}

pub fn cv(cfg: &RunConfig) -> Result<(), CliError> {
    let algorithms = cfg.algorithms(&["suite"])?;
    let ds = load(cfg)?;
    let folds = stratified_kfold(&ds, cfg.k()?, cfg.seed())?;
    let dir = out_dir(cfg)?;
    let mut reports = Vec::new();
    for alg in &algorithms {
        let report = run_cv(&ds, alg, &folds)?;
        write(&dir.join(format!("cv_{}.json", file_stem(&report.descriptor))), json(&report))?;
        reports.push(report);
    }
    let table = render_table(&reports);
    write(&dir.join("cv_table.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn grid(cfg: &RunConfig) -> Result<(), CliError> {
    let ids = cfg.algorithms.clone().unwrap_or_else(|| vec!["qda-bayes-mmp".into()]);
    let grid = cfg.grid.clone().unwrap_or_else(default_grid);
    let ds = load(cfg)?;
    let folds = stratified_kfold(&ds, cfg.k()?, cfg.seed())?;
    let dir = out_dir(cfg)?;
    let mut summary = String::new();
    for id in ids {
        let base = id.split(':').next().unwrap_or_default();
        let family = match format!("{base}:0").parse::<Algorithm>() {
            Ok(Algorithm::Discriminant(mut s)) => {
                if let Some(p) = cfg.priors {
                    s.priors = p;
                }
                s
            }
            _ => return Err(CliError::Usage(format!("grid search needs a Gaussian family, got {id:?}"))),
        };
        let report = grid_search_reg(&ds, family, &grid, &folds)?;
        write(&dir.join(format!("grid_{base}.json")), json(&report))?;
        summary.push_str(&format!("{}: selected λ = {}\n", report.family, report.selected_lambda));
        summary.push_str(&render_table(&report.reports));
        summary.push('\n');
    }
    write(&dir.join("grid_table.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

#[derive(Serialize)]
struct RatioRow {
    component: usize,
    explained_variance: f64,
    ratio: f64,
}

pub fn pca(cfg: &RunConfig) -> Result<(), CliError> {
    let ds = load(cfg)?;
    let n = cfg.components.unwrap_or(4);
    let [ax, ay] = cfg.axes.unwrap_or([1, 2]);
    if ax == 0 || ay == 0 {
        return Err(CliError::Usage("axes are numbered from 1".into()));
    }
    let model = fit_pca(&ds, n)?;
    let scores = project(&model, &ds)?;
    let dir = out_dir(cfg)?;
    write(&dir.join("pca_model.json"), json(&model))?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut text = String::from("component  ratio\n");
    for (k, (&v, &r)) in model.explained_variance.iter().zip(&model.explained_variance_ratio).enumerate() {
        wtr.serialize(RatioRow {
            component: k + 1,
            explained_variance: v,
            ratio: r,
        })
        .map_err(cropspec::Error::from)?;
        text.push_str(&format!("PC{:<8} {:>6.2}%\n", k + 1, 100.0 * r));
    }
    write(&dir.join("pca_ratios.csv"), wtr.into_inner().expect("in-memory writer"))?;
    let options = ScatterOptions {
        group_by: cfg.group_by.unwrap_or(GroupBy::Crop),
        axes: (ax - 1, ay - 1),
    };
    let files = emit_scatter(&scores, options, &dir)?;
    print!("{text}");
    println!("wrote {} files to {}", files.len() + 2, dir.display());
    Ok(())
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let mut algorithms = cfg.algorithms(&[])?;
    if algorithms.len() != 1 {
        return Err(CliError::Usage(format!(
            "train needs exactly one algorithm, got {}",
            algorithms.len()
        )));
    }
    let alg = algorithms.remove(0);
    let alg = match alg {
        Algorithm::Mlp(mut m) => {
            if let Some(s) = cfg.seed {
                m.seed = s;
            }
            Algorithm::Mlp(m)
        }
        a => a,
    };
    let ds = load(cfg)?;
    let options = FitOptions {
        priors: Default::default(),
        sparse_classes: cfg.sparse_classes.unwrap_or(SparseClassPolicy::Error),
    };
    let model = train_model(&ds, &alg, options)?;
    let dir = out_dir(cfg)?;
    let path = dir.join("model.json");
    model.save(&path)?;
    println!("trained {} on {} records; wrote {}", model.algorithm, ds.len(), path.display());
    Ok(())
}

#[derive(Serialize)]
struct PredictionReport<'a> {
    model: &'a str,
    descriptor: &'a str,
    records: usize,
    accuracy: f64,
    predictions: &'a [Prediction<f64>],
}

pub fn predict(cfg: &RunConfig) -> Result<(), CliError> {
    let model_path = cfg
        .model
        .as_deref()
        .ok_or_else(|| CliError::Usage("no model given (use --model)".into()))?;
    let model = ModelFile::load(model_path)?;
    let ds = load(cfg)?;
    let predictions = model.predict_dataset(&ds)?;
    let correct = predictions.iter().filter(|p| p.truth == Some(p.predicted)).count();
    let accuracy = correct as f64 / predictions.len() as f64;
    let dir = out_dir(cfg)?;
    write(
        &dir.join("predictions.json"),
        json(&PredictionReport {
            model: &model.algorithm,
            descriptor: &model.descriptor,
            records: predictions.len(),
            accuracy,
            predictions: &predictions,
        }),
    )?;
    let mut wtr = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["record_index".to_string(), "truth".into(), "predicted".into(), "joint".into()];
    header.extend(CropLabel::ALL.iter().map(|c| format!("p_{}", c.name())));
    wtr.write_record(&header).map_err(cropspec::Error::from)?;
    for p in &predictions {
        let mut row = vec![
            p.record_index.to_string(),
            p.truth.map(|c| c.name().to_string()).unwrap_or_default(),
            p.predicted.name().to_string(),
            p.joint.map(|j| j.to_string()).unwrap_or_default(),
        ];
        row.extend(p.crop_probabilities.iter().map(|v| v.to_string()));
        wtr.write_record(&row).map_err(cropspec::Error::from)?;
    }
    write(&dir.join("predictions.csv"), wtr.into_inner().expect("in-memory writer"))?;
    println!(
        "{}: {} records, accuracy {:.4}; wrote {}",
        model.algorithm,
        predictions.len(),
        accuracy,
        dir.display()
    );
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let spec_path = cfg
        .spec
        .as_deref()
        .ok_or_else(|| CliError::Usage("no synthetic spec given (use --spec)".into()))?;
    let text = std::fs::read_to_string(spec_path).map_err(|e| cropspec::Error::Io {
        path: spec_path.to_path_buf(),
        source: e,
    })?;
    let spec = SyntheticSpec::<f64>::from_toml_str(&text)?;
    let ds = synthesize(&spec, cfg.seed())?;
    let dir = out_dir(cfg)?;
    let path = dir.join("synthetic.csv");
    write_library_file(&ds, &path)?;
    println!("wrote {} records × {} bands to {}", ds.len(), ds.band_count(), path.display());
    Ok(())
}
