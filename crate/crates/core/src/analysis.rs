//! Principal component analysis of a spectral library and scatter export.
//!
//! PCA is covariance based: bands are centered but not scaled, and the
//! components are the leading eigenvectors of the biased sample covariance.
//! Each component is signed so that its largest-magnitude entry is positive.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{CropLabel, Dataset, StageLabel};
use crate::error::{Error, Result};
use crate::gaussian::estimate_mean_cov;
use crate::linalg::{symmetric_eigen, Matrix};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PcaModel<T> {
    pub means: Vec<T>,
    /// One component per row.
    pub components: Matrix<T>,
    pub explained_variance: Vec<T>,
    pub explained_variance_ratio: Vec<T>,
    pub total_variance: T,
}

impl<T: Scalar> PcaModel<T> {
    pub fn n_components(&self) -> usize {
        self.components.rows()
    }

    pub fn transform(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.means.len() {
            return Err(Error::Dimension {
                expected: self.means.len(),
                got: x.len(),
            });
        }
        let centered: Vec<T> = x.iter().zip(&self.means).map(|(&v, &m)| v - m).collect();
        self.components.mat_vec(&centered)
    }

    /// `means + Σ scoreᵢ·componentᵢ`.
    pub fn reconstruct(&self, scores: &[T]) -> Result<Vec<T>> {
        if scores.len() != self.n_components() {
            return Err(Error::Dimension {
                expected: self.n_components(),
                got: scores.len(),
            });
        }
        let mut out = self.means.clone();
        for (k, &s) in scores.iter().enumerate() {
            for (o, &c) in out.iter_mut().zip(self.components.row(k)) {
                *o += s * c;
            }
        }
        Ok(out)
    }
}

pub fn fit_pca<T: Scalar>(ds: &Dataset<T>, n_components: usize) -> Result<PcaModel<T>> {
    let b = ds.band_count();
    let limit = b.min(ds.len());
    if n_components == 0 || n_components > limit {
        return Err(Error::InvalidArgument(format!(
            "n_components must be in 1..={limit}, got {n_components}"
        )));
    }
    let samples: Vec<&[T]> = ds.records().iter().map(|r| &*r.spectrum).collect();
    let (means, cov) = estimate_mean_cov(&samples)?;
    let total_variance = cov.trace();
    let eig = symmetric_eigen(&cov)?;
    let mut components = Matrix::zeros(n_components, b);
    for k in 0..n_components {
        let v = eig.vectors.row(k);
        let mut pivot = 0;
        for (i, x) in v.iter().enumerate() {
            if x.abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < T::zero() { -T::one() } else { T::one() };
        for (dst, &x) in components.row_mut(k).iter_mut().zip(v) {
            *dst = sign * x;
        }
    }
    let explained_variance: Vec<T> = eig.values[..n_components]
        .iter()
        .map(|&v| v.max(T::zero()))
        .collect();
    let explained_variance_ratio = explained_variance
        .iter()
        .map(|&v| {
            if total_variance > T::zero() {
                (v / total_variance).min(T::one())
            } else {
                T::zero()
            }
        })
        .collect();
    Ok(PcaModel {
        means,
        components,
        explained_variance,
        explained_variance_ratio,
        total_variance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScoreRow<T> {
    pub record_index: usize,
    pub scores: Vec<T>,
    pub crop: CropLabel,
    pub stage: StageLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ScoreTable<T> {
    /// Explained-variance ratio per component, for axis labels.
    pub ratios: Vec<T>,
    pub rows: Vec<ScoreRow<T>>,
}

/// Scores every record of `ds` on the model's components.
pub fn project<T: Scalar>(m: &PcaModel<T>, ds: &Dataset<T>) -> Result<ScoreTable<T>> {
    let rows = ds
        .records()
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(ScoreRow {
                record_index: i,
                scores: m.transform(&r.spectrum)?,
                crop: r.crop,
                stage: r.stage,
            })
        })
        .collect::<Result<_>>()?;
    Ok(ScoreTable {
        ratios: m.explained_variance_ratio.clone(),
        rows,
    })
}

/// Header `record_index,pc1..pcN,crop,stage`, comma separated.
pub fn write_scores<T: Scalar, W: std::io::Write>(scores: &ScoreTable<T>, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let n = scores.ratios.len();
    let mut header = vec!["record_index".to_string()];
    header.extend((1..=n).map(|k| format!("pc{k}")));
    header.push("crop".into());
    header.push("stage".into());
    wtr.write_record(&header)?;
    for row in &scores.rows {
        let mut rec = vec![row.record_index.to_string()];
        rec.extend(row.scores.iter().map(|s| s.to_string()));
        rec.push(row.crop.name().into());
        rec.push(row.stage.name().into());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<scores>", e))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroupBy {
    /// One graphic per crop, points colored by stage.
    Crop,
    /// One graphic per stage, points colored by crop.
    Stage,
    /// A single graphic of everything, colored by crop.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScatterOptions {
    pub group_by: GroupBy,
    /// Zero-based component indices for the x and y axes.
    pub axes: (usize, usize),
}

impl Default for ScatterOptions {
    fn default() -> Self {
        Self {
            group_by: GroupBy::Crop,
            axes: (0, 1),
        }
    }
}

const STAGE_COLORS: [&str; StageLabel::COUNT] = ["#1b9e77", "#66a61e", "#e6ab02", "#d95f02", "#7570b3", "#a6761d"];
const CROP_COLORS: [&str; CropLabel::COUNT] = ["#e41a1c", "#377eb8", "#4daf4a", "#984ea3", "#ff7f00"];

pub fn stage_color(s: StageLabel) -> &'static str {
    STAGE_COLORS[s.index()]
}

pub fn crop_color(c: CropLabel) -> &'static str {
    CROP_COLORS[c.index()]
}

struct Point {
    x: f64,
    y: f64,
    color: &'static str,
}

fn axis_label<T: Scalar>(ratios: &[T], k: usize) -> String {
    match ratios.get(k) {
        Some(r) => format!("PC{} ({:.1}%)", k + 1, 100.0 * r.as_f64()),
        None => format!("PC{}", k + 1),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Minimal standalone SVG scatter with axes, end ticks and a legend.
fn render_svg(title: &str, x_label: &str, y_label: &str, points: &[Point], legend: &[(&str, &'static str)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const LEFT: f64 = 70.0;
    const RIGHT: f64 = 150.0;
    const TOP: f64 = 40.0;
    const BOTTOM: f64 = 60.0;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let pad = |lo: f64, hi: f64| {
        let span = hi - lo;
        if span > 0.0 {
            (lo - 0.05 * span, hi + 0.05 * span)
        } else {
            (lo - 1.0, hi + 1.0)
        }
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{}" text-anchor="start">{x0:.3}</text>"#, TOP + ph + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x1:.3}</text>"#, LEFT + pw, TOP + ph + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y0:.3}</text>"#, LEFT - 4.0, TOP + ph);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, LEFT - 4.0, TOP + 10.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 20.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="20" y="{cy}" text-anchor="middle" transform="rotate(-90 20 {cy})">{}</text>"#,
        escape(y_label),
        cy = TOP + ph / 2.0
    );
    let _ = writeln!(s, r#"<g class="points">"#);
    for p in points {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            sx(p.x),
            sy(p.y),
            p.color
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, (name, color)) in legend.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{y}" r="5" fill="{color}"/>"#, W - RIGHT + 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 30.0, y + 4.0, escape(name));
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

/// Writes `scores.csv` plus one SVG per group into `dir`; returns the paths written.
pub fn emit_scatter<T: Scalar>(scores: &ScoreTable<T>, options: ScatterOptions, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if scores.rows.is_empty() {
        return Err(Error::InvalidArgument("no scores to plot".into()));
    }
    let n = scores.ratios.len();
    let (ax, ay) = options.axes;
    if ax >= n || (ay >= n && n > 1) {
        return Err(Error::InvalidArgument(format!("axes {:?} exceed {n} components", options.axes)));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let csv_path = dir.join("scores.csv");
    let file = std::fs::File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_scores(scores, std::io::BufWriter::new(file))?;
    written.push(csv_path);

    let coord = |row: &ScoreRow<T>| {
        let x = row.scores[ax].as_f64();
        let y = row.scores.get(ay).map_or(0.0, |v| v.as_f64());
        (x, y)
    };
    let x_label = axis_label(&scores.ratios, ax);
    let y_label = axis_label(&scores.ratios, ay);
    let mut write_svg = |name: String, title: String, points: Vec<Point>, legend: Vec<(&str, &'static str)>| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, render_svg(&title, &x_label, &y_label, &points, &legend)).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };

    match options.group_by {
        GroupBy::Crop => {
            for crop in CropLabel::ALL {
                let rows: Vec<_> = scores.rows.iter().filter(|r| r.crop == crop).collect();
                if rows.is_empty() {
                    continue;
                }
                let points = rows
                    .iter()
                    .map(|r| {
                        let (x, y) = coord(r);
                        Point { x, y, color: stage_color(r.stage) }
                    })
                    .collect();
                let legend = StageLabel::ALL
                    .iter()
                    .filter(|s| rows.iter().any(|r| r.stage == **s))
                    .map(|s| (s.name(), stage_color(*s)))
                    .collect();
                write_svg(format!("pca_{}.svg", crop.name().to_lowercase()), format!("{crop} by growth stage"), points, legend)?;
            }
        }
        GroupBy::Stage => {
            for stage in StageLabel::ALL {
                let rows: Vec<_> = scores.rows.iter().filter(|r| r.stage == stage).collect();
                if rows.is_empty() {
                    continue;
                }
                let points = rows
                    .iter()
                    .map(|r| {
                        let (x, y) = coord(r);
                        Point { x, y, color: crop_color(r.crop) }
                    })
                    .collect();
                let legend = CropLabel::ALL
                    .iter()
                    .filter(|c| rows.iter().any(|r| r.crop == **c))
                    .map(|c| (c.name(), crop_color(*c)))
                    .collect();
                write_svg(format!("pca_{}.svg", stage.name().to_lowercase()), format!("{stage} by crop"), points, legend)?;
            }
        }
        GroupBy::All => {
            let points = scores
                .rows
                .iter()
                .map(|r| {
                    let (x, y) = coord(r);
                    Point { x, y, color: crop_color(r.crop) }
                })
                .collect();
            let legend = CropLabel::ALL
                .iter()
                .filter(|c| scores.rows.iter().any(|r| r.crop == **c))
                .map(|c| (c.name(), crop_color(*c)))
                .collect();
            write_svg("pca_all.svg".into(), "All spectra by crop".into(), points, legend)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SampleRecord, SyntheticClass, SyntheticSpec, WavelengthGrid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn isotropic(b: usize, n: usize) -> Dataset<f64> {
        let spec = SyntheticSpec {
            wavelengths_nm: (0..b).map(|i| 400.0 + 10.0 * i as f64).collect(),
            classes: vec![SyntheticClass {
                crop: CropLabel::Corn,
                stage: StageLabel::Late,
                count: n,
                mean: vec![20.0; b],
                covariance: Matrix::<f64>::identity(b).to_rows(),
            }],
        };
        synthesize(&spec, 17).unwrap()
    }

    #[test]
    fn isotropic_ratios_near_uniform() {
        let m = fit_pca(&isotropic(4, 20_000), 4).unwrap();
        for r in &m.explained_variance_ratio {
            assert!((r - 0.25).abs() < 0.02, "{r}");
        }
        let s: f64 = m.explained_variance_ratio.iter().sum();
        assert!((s - 1.0).abs() < 1e-10);
    }

    #[test]
    fn rank_one_data() {
        let grid = WavelengthGrid::new(vec![1.0, 2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dir = [1.0, -2.0, 0.5];
        let records = (0..500)
            .map(|_| {
                let t: f64 = rng.gen_range(-10.0..10.0);
                let x = dir.iter().map(|d| d * t + rng.gen_range(-1e-3..1e-3)).collect();
                SampleRecord::new(x, CropLabel::Rice, StageLabel::Late)
            })
            .collect();
        let ds = Dataset::new(grid, records).unwrap();
        let m = fit_pca(&ds, 2).unwrap();
        assert!(m.explained_variance_ratio[0] > 0.999);
        // sign convention: largest-magnitude entry positive (-2 → +)
        let c = m.components.row(0);
        assert!(c[1] > 0.0 && c[0] < 0.0);
    }

    #[test]
    fn invalid_component_counts() {
        let ds = isotropic(3, 10);
        assert!(fit_pca(&ds, 0).is_err());
        assert!(fit_pca(&ds, 4).is_err());
        assert!(fit_pca(&isotropic(5, 2), 3).is_err());
    }

    #[test]
    fn mean_projects_to_origin() {
        let ds = isotropic(3, 50);
        let m = fit_pca(&ds, 3).unwrap();
        let z = m.transform(&m.means.clone()).unwrap();
        assert!(z.iter().all(|v| v.abs() < 1e-12));
        assert!(m.transform(&[1.0]).is_err());
    }

    #[test]
    fn scatter_files_per_group() {
        let spec = SyntheticSpec {
            wavelengths_nm: vec![500.0, 600.0, 700.0],
            classes: [
                (CropLabel::Corn, StageLabel::Late),
                (CropLabel::Corn, StageLabel::Harvest),
                (CropLabel::Rice, StageLabel::Late),
            ]
            .into_iter()
            .map(|(crop, stage)| SyntheticClass {
                crop,
                stage,
                count: 10,
                mean: vec![10.0 + crop.index() as f64, 20.0, 30.0 + stage.index() as f64],
                covariance: Matrix::<f64>::identity(3).to_rows(),
            })
            .collect(),
        };
        let ds = synthesize(&spec, 4).unwrap();
        let m = fit_pca(&ds, 2).unwrap();
        let scores = project(&m, &ds).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let names = |files: Vec<PathBuf>| -> Vec<String> {
            files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect()
        };
        let by_crop = emit_scatter(&scores, ScatterOptions::default(), dir.path()).unwrap();
        assert_eq!(names(by_crop), ["scores.csv", "pca_corn.svg", "pca_rice.svg"]);
        let svg = std::fs::read_to_string(dir.path().join("pca_corn.svg")).unwrap();
        assert_eq!(svg.matches("<circle cx").count(), 20 + 2);
        assert!(svg.contains(stage_color(StageLabel::Harvest)) && !svg.contains(">Critical<"));
        let by_stage = emit_scatter(&scores, ScatterOptions { group_by: GroupBy::Stage, axes: (1, 0) }, dir.path()).unwrap();
        assert_eq!(names(by_stage), ["scores.csv", "pca_late.svg", "pca_harvest.svg"]);
        let all = emit_scatter(&scores, ScatterOptions { group_by: GroupBy::All, axes: (0, 1) }, dir.path()).unwrap();
        assert_eq!(all.len(), 2);
        assert!(emit_scatter(&scores, ScatterOptions { group_by: GroupBy::All, axes: (0, 5) }, dir.path()).is_err());
    }
}
