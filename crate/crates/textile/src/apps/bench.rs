//! Batch evaluation of scorers over directories of images — typically one
//! directory per synthesis method — with summary statistics per directory
//! and agreement statistics between scorers.

use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{AppError, Scorer};
use crate::img::load_texture;

/// Mean and standard deviation of one scorer over one directory.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScorerStats {
    pub mean: f64,
    pub std: f64,
}

/// Per-directory summary: one [`ScorerStats`] per scorer, in scorer order.
#[derive(Debug, Clone, Serialize)]
pub struct DirStats {
    pub dir: String,
    pub images: usize,
    pub per_scorer: Vec<ScorerStats>,
}

/// Everything a benchmark run produces: per-directory stats, the pooled
/// per-image score rows, the scorer-vs-scorer Pearson correlation matrix,
/// and the directories that contributed nothing.
#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub scorer_names: Vec<String>,
    pub methods: Vec<DirStats>,
    /// `(directory, file name, score per scorer)` for every scored image.
    pub rows: Vec<(String, String, Vec<f64>)>,
    /// `correlation[i][j]` between scorers `i` and `j` over all rows.
    pub correlation: Vec<Vec<f64>>,
    /// Directories that exist but contained no readable image.
    pub empty_dirs: Vec<String>,
    /// `(directory, file name, error)` for images that failed to load or
    /// score; they are excluded from every statistic.
    pub failures: Vec<(String, String, String)>,
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
}

fn dir_label(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

/// Pearson correlation between two equal-length samples. Degenerate inputs
/// (fewer than two points, or zero variance on either side) carry no linear
/// relationship to measure, so they report 0 — except a column against
/// itself, which callers special-case to 1.
fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let ma = a.iter().sum::<f64>() / nf;
    let mb = b.iter().sum::<f64>() / nf;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return 0.0;
    }
    cov / (va.sqrt() * vb.sqrt())
}

/// Scores every image in every directory with every scorer. Images are
/// visited in file-name order, directories in the given order; unreadable
/// images are recorded and skipped rather than failing the run.
pub fn bench_directories(
    dirs: &[PathBuf],
    scorers: &[&dyn Scorer],
) -> Result<BenchReport, AppError> {
    if scorers.is_empty() {
        return Err(AppError::BadQuery("at least one scorer is required".into()));
    }
    let scorer_names: Vec<String> = scorers.iter().map(|s| s.name().to_string()).collect();
    let mut methods = Vec::new();
    let mut rows: Vec<(String, String, Vec<f64>)> = Vec::new();
    let mut empty_dirs = Vec::new();
    let mut failures = Vec::new();

    for dir in dirs {
        let label = dir_label(dir);
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        files.sort();

        let mut dir_scores: Vec<Vec<f64>> = vec![Vec::new(); scorers.len()];
        for file in &files {
            let name = file
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let img = match load_texture(file) {
                Ok(img) => img,
                Err(err) => {
                    log::warn!("skipping {}: {err}", file.display());
                    failures.push((label.clone(), name, err.to_string()));
                    continue;
                }
            };
            let mut scores = Vec::with_capacity(scorers.len());
            let mut failed = None;
            for scorer in scorers {
                match scorer.score(&img) {
                    Ok(s) => scores.push(s),
                    Err(err) => {
                        failed = Some(err.to_string());
                        break;
                    }
                }
            }
            match failed {
                Some(err) => {
                    log::warn!("skipping {}: {err}", file.display());
                    failures.push((label.clone(), name, err));
                }
                None => {
                    for (col, &s) in dir_scores.iter_mut().zip(&scores) {
                        col.push(s);
                    }
                    rows.push((label.clone(), name, scores));
                }
            }
        }

        let images = dir_scores[0].len();
        if images == 0 {
            empty_dirs.push(label);
            continue;
        }
        let per_scorer = dir_scores
            .iter()
            .map(|col| {
                let mean = col.iter().sum::<f64>() / images as f64;
                let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / images as f64;
                ScorerStats {
                    mean,
                    std: var.sqrt(),
                }
            })
            .collect();
        methods.push(DirStats {
            dir: label,
            images,
            per_scorer,
        });
    }

    let columns: Vec<Vec<f64>> = (0..scorers.len())
        .map(|i| rows.iter().map(|(_, _, s)| s[i]).collect())
        .collect();
    let correlation = (0..scorers.len())
        .map(|i| {
            (0..scorers.len())
                .map(|j| {
                    if i == j {
                        1.0
                    } else {
                        pearson(&columns[i], &columns[j])
                    }
                })
                .collect()
        })
        .collect();

    Ok(BenchReport {
        scorer_names,
        methods,
        rows,
        correlation,
        empty_dirs,
        failures,
    })
}

impl BenchReport {
    /// Per-image scores as CSV: `dir,file` then one column per scorer.
    pub fn write_scores_csv(&self, path: impl AsRef<Path>) -> Result<(), AppError> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(io_from_csv)?;
        let mut header = vec!["dir".to_string(), "file".to_string()];
        header.extend(self.scorer_names.iter().cloned());
        w.write_record(&header).map_err(io_from_csv)?;
        for (dir, file, scores) in &self.rows {
            let mut rec = vec![dir.clone(), file.clone()];
            rec.extend(scores.iter().map(|s| s.to_string()));
            w.write_record(&rec).map_err(io_from_csv)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-directory summary as CSV: `dir,images` then `mean`/`std` column
    /// pairs per scorer.
    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<(), AppError> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(io_from_csv)?;
        let mut header = vec!["dir".to_string(), "images".to_string()];
        for name in &self.scorer_names {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_std"));
        }
        w.write_record(&header).map_err(io_from_csv)?;
        for m in &self.methods {
            let mut rec = vec![m.dir.clone(), m.images.to_string()];
            for s in &m.per_scorer {
                rec.push(s.mean.to_string());
                rec.push(s.std.to_string());
            }
            w.write_record(&rec).map_err(io_from_csv)?;
        }
        w.flush()?;
        Ok(())
    }

    /// The correlation matrix as CSV with scorer names on both axes.
    pub fn write_correlation_csv(&self, path: impl AsRef<Path>) -> Result<(), AppError> {
        let mut w = csv::Writer::from_path(path.as_ref()).map_err(io_from_csv)?;
        let mut header = vec![String::new()];
        header.extend(self.scorer_names.iter().cloned());
        w.write_record(&header).map_err(io_from_csv)?;
        for (name, row) in self.scorer_names.iter().zip(&self.correlation) {
            let mut rec = vec![name.clone()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec).map_err(io_from_csv)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn io_from_csv(err: csv::Error) -> AppError {
    AppError::Io(std::io::Error::other(err))
}
