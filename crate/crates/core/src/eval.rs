//! Error metrics, parameter selection, hold-out and cross-validated
//! evaluation, and the new-item experiment.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{make_variant, VariantKind};
use crate::coldstart::{genre_mean, ColdStartConfig, ColdStartPredictor};
use crate::data::{hold_out_items, kfold, ItemProfiles, SparseRatings, SplitAssignment};
use crate::error::{Error, Result};
use crate::trainer::{TrainConfig, TrainedModel};

pub fn mae(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("MAE of no predictions".into()));
    }
    Ok(pairs.iter().map(|(p, a)| (p - a).abs()).sum::<f64>() / pairs.len() as f64)
}

pub fn rmse(pairs: &[(f64, f64)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput("RMSE of no predictions".into()));
    }
    let mse = pairs.iter().map(|(p, a)| (p - a) * (p - a)).sum::<f64>() / pairs.len() as f64;
    Ok(mse.sqrt())
}

/// `(predicted, actual)` for every rating in `ratings`.
pub fn score(model: &TrainedModel, ratings: &SparseRatings) -> Result<Vec<(f64, f64)>> {
    ratings
        .triples()
        .iter()
        .map(|t| Ok((model.predict(t.item as usize, t.user as usize)?, t.value)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricRow {
    pub variant: String,
    pub split: String,
    pub mae: f64,
    pub rmse: f64,
    pub count: usize,
    pub seconds: f64,
    pub config: TrainConfig,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
    /// Conditions that could not be scored, with the reason.
    pub failures: Vec<String>,
}

impl MetricReport {
    pub fn extend(&mut self, other: MetricReport) {
        self.rows.extend(other.rows);
        self.failures.extend(other.failures);
    }

    pub fn row(&self, variant: &str, split: &str) -> Option<&MetricRow> {
        self.rows.iter().find(|r| r.variant == variant && r.split == split)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// MAE pivoted to one row per split and one column per variant, then
    /// training seconds in the same layout.
    pub fn to_table(&self) -> String {
        let mut splits: Vec<&str> = Vec::new();
        let mut variants: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !splits.contains(&r.split.as_str()) {
                splits.push(&r.split);
            }
            if !variants.contains(&r.variant.as_str()) {
                variants.push(&r.variant);
            }
        }
        let mut out = String::new();
        for (title, pick) in [
            (
                "MAE",
                (|r: &MetricRow| format!("{:.4}", r.mae)) as fn(&MetricRow) -> String,
            ),
            ("seconds", |r: &MetricRow| format!("{:.1}", r.seconds)),
        ] {
            let _ = write!(out, "{title:<10}");
            for v in &variants {
                let _ = write!(out, " | {v:>8}");
            }
            out.push('\n');
            let _ = writeln!(out, "{}", "-".repeat(10 + 11 * variants.len()));
            for s in &splits {
                let _ = write!(out, "{s:<10}");
                for v in &variants {
                    let cell = self.row(v, s).map(pick).unwrap_or_else(|| "-".into());
                    let _ = write!(out, " | {cell:>8}");
                }
                out.push('\n');
            }
            out.push('\n');
        }
        for f in &self.failures {
            let _ = writeln!(out, "failed: {f}");
        }
        out
    }
}

/// Values tried during parameter selection. A hidden size of 0 means no hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridSpec {
    pub latent: Vec<usize>,
    pub lambda: Vec<f64>,
    pub hidden: Vec<usize>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            latent: vec![2, 4, 8, 16, 32],
            lambda: vec![0.001, 0.01, 0.1],
            hidden: vec![0, 8, 16, 32],
        }
    }
}

impl GridSpec {
    pub fn single(config: &TrainConfig) -> Self {
        GridSpec {
            latent: vec![config.latent],
            lambda: vec![config.lambda],
            hidden: vec![config.hidden.first().copied().unwrap_or(0)],
        }
    }

    /// Every valid configuration for `kind`, layered over `base`.
    pub fn points(&self, kind: VariantKind, base: &TrainConfig) -> Vec<TrainConfig> {
        let hidden: Vec<usize> = if kind.allows_hidden() {
            self.hidden.clone()
        } else {
            self.hidden.iter().copied().filter(|&h| h == 0).collect()
        };
        let mut points = Vec::new();
        for &t in &self.latent {
            for &h in &hidden {
                for &lambda in &self.lambda {
                    points.push(TrainConfig {
                        latent: t,
                        lambda,
                        hidden: if h == 0 { Vec::new() } else { vec![h] },
                        ..base.clone()
                    });
                }
            }
        }
        points
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridEntry {
    pub config: TrainConfig,
    pub validation_mae: Option<f64>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridOutcome {
    pub variant: String,
    pub best: TrainConfig,
    pub best_mae: f64,
    pub entries: Vec<GridEntry>,
}

impl GridOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("grid outcome serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<8} {:>6} {:>10} {:>8} {:>10} {:>8}\n",
            "variant", "latent", "hidden", "lambda", "val MAE", "seconds"
        );
        for e in &self.entries {
            let mae = e
                .validation_mae
                .map_or_else(|| "failed".to_string(), |m| format!("{m:.4}"));
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>10} {:>8} {:>10} {:>8.1}",
                self.variant,
                e.config.latent,
                format!("{:?}", e.config.hidden),
                e.config.lambda,
                mae,
                e.seconds
            );
        }
        let _ = writeln!(
            out,
            "best: latent={} hidden={:?} lambda={} validation MAE={:.4}",
            self.best.latent, self.best.hidden, self.best.lambda, self.best_mae
        );
        out
    }
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

fn fit_and_score(
    kind: VariantKind,
    config: &TrainConfig,
    train: &SparseRatings,
    profiles: &ItemProfiles,
    scored: &SparseRatings,
) -> Result<(f64, f64, f64)> {
    let start = Instant::now();
    let variant = make_variant(kind, config)?;
    let model = variant.train(train, profiles)?;
    let pairs = score(&model, scored)?;
    Ok((mae(&pairs)?, rmse(&pairs)?, start.elapsed().as_secs_f64()))
}

fn parameter_count(c: &TrainConfig) -> (usize, usize) {
    (c.latent, c.hidden.iter().sum())
}

/// Train one model per grid point on the training partition and keep the one
/// with the lowest validation MAE. Ties prefer smaller `t`, then fewer hidden
/// units, then larger `lambda`.
pub fn grid_search(
    kind: VariantKind,
    grid: &GridSpec,
    base: &TrainConfig,
    ratings: &SparseRatings,
    profiles: &ItemProfiles,
    split: &SplitAssignment,
    workers: usize,
) -> Result<GridOutcome> {
    let validation = ratings.subset(&split.validation_indices());
    if validation.is_empty() {
        return Err(Error::EmptyInput("split has no validation ratings".into()));
    }
    let train = ratings.subset(&split.training_indices());
    let points = grid.points(kind, base);
    if points.is_empty() {
        return Err(Error::Config(format!("grid has no valid points for {kind}")));
    }
    let entries: Vec<GridEntry> = pool(workers)?.install(|| {
        points
            .par_iter()
            .map(
                |config| match fit_and_score(kind, config, &train, profiles, &validation) {
                    Ok((m, _, seconds)) => GridEntry {
                        config: config.clone(),
                        validation_mae: Some(m),
                        error: None,
                        seconds,
                    },
                    Err(e) => GridEntry {
                        config: config.clone(),
                        validation_mae: None,
                        error: Some(e.to_string()),
                        seconds: 0.0,
                    },
                },
            )
            .collect()
    });
    let best = entries
        .iter()
        .filter_map(|e| e.validation_mae.map(|m| (m, e)))
        .min_by(|(ma, a), (mb, b)| {
            ma.total_cmp(mb)
                .then(parameter_count(&a.config).cmp(&parameter_count(&b.config)))
                .then(b.config.lambda.total_cmp(&a.config.lambda))
        });
    match best {
        Some((best_mae, entry)) => Ok(GridOutcome {
            variant: kind.name().to_string(),
            best: entry.config.clone(),
            best_mae,
            entries: entries.clone(),
        }),
        None => Err(Error::AllDiverged(
            entries
                .iter()
                .filter_map(|e| e.error.clone())
                .collect::<Vec<_>>()
                .join("; "),
        )),
    }
}

/// Train on training plus validation, score the test partition.
pub fn evaluate_holdout(
    kind: VariantKind,
    config: &TrainConfig,
    ratings: &SparseRatings,
    profiles: &ItemProfiles,
    split: &SplitAssignment,
) -> Result<MetricReport> {
    let test = ratings.subset(&split.test_indices());
    if test.is_empty() {
        return Err(Error::EmptyInput("split has no test ratings".into()));
    }
    let train = ratings.subset(&split.non_test_indices());
    let (m, r, seconds) = fit_and_score(kind, config, &train, profiles, &test)?;
    Ok(MetricReport {
        rows: vec![MetricRow {
            variant: kind.name().into(),
            split: "test".into(),
            mae: m,
            rmse: r,
            count: test.len(),
            seconds,
            config: config.clone(),
            seed: config.seed,
        }],
        failures: Vec::new(),
    })
}

/// k-fold cross-validation: one row per fold plus a `{k}cv` row of means.
pub fn evaluate_cv(
    kind: VariantKind,
    config: &TrainConfig,
    ratings: &SparseRatings,
    profiles: &ItemProfiles,
    k: usize,
    seed: u64,
    workers: usize,
) -> Result<MetricReport> {
    let folds = kfold(ratings, k, seed)?;
    let results: Vec<Result<MetricRow>> = pool(workers)?.install(|| {
        (0..k)
            .into_par_iter()
            .map(|fold| {
                let train = ratings.subset(&folds.outside_fold(fold));
                let held = ratings.subset(&folds.fold_indices(fold));
                let (m, r, seconds) = fit_and_score(kind, config, &train, profiles, &held)?;
                Ok(MetricRow {
                    variant: kind.name().into(),
                    split: format!("fold{fold}"),
                    mae: m,
                    rmse: r,
                    count: held.len(),
                    seconds,
                    config: config.clone(),
                    seed: config.seed,
                })
            })
            .collect()
    });
    let mut report = MetricReport::default();
    for (fold, result) in results.into_iter().enumerate() {
        match result {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push(format!("{kind} fold {fold}: {e}")),
        }
    }
    if report.rows.is_empty() {
        return Err(Error::AllDiverged(report.failures.join("; ")));
    }
    let n = report.rows.len() as f64;
    let summary = MetricRow {
        variant: kind.name().into(),
        split: format!("{k}cv"),
        mae: report.rows.iter().map(|r| r.mae).sum::<f64>() / n,
        rmse: report.rows.iter().map(|r| r.rmse).sum::<f64>() / n,
        count: report.rows.iter().map(|r| r.count).sum(),
        seconds: report.rows.iter().map(|r| r.seconds).sum::<f64>() / n,
        config: config.clone(),
        seed,
    };
    report.rows.push(summary);
    Ok(report)
}

/// One hold-out condition of the new-item experiment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColdStartCondition {
    pub label: String,
    pub items: Vec<usize>,
    pub held: usize,
    /// MAE of new-item predictions; `None` when nothing was held out.
    pub mae: Option<f64>,
    /// MAE of the mean rating of description-identical items.
    pub baseline_mae: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColdStartReport {
    pub variant: String,
    pub conditions: Vec<ColdStartCondition>,
}

impl ColdStartReport {
    pub fn condition(&self, label: &str) -> Option<&ColdStartCondition> {
        self.conditions.iter().find(|c| c.label == label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cold-start report serializes")
    }

    /// One column per condition, rows for the model and the description-mean baseline.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |m| format!("{m:.3}"));
        let mut out = format!("{:<10}", "alg");
        for c in &self.conditions {
            let _ = write!(out, " | {:>6}", c.label);
        }
        out.push('\n');
        for (name, pick) in [
            (
                self.variant.as_str(),
                (|c: &ColdStartCondition| c.mae) as fn(&ColdStartCondition) -> Option<f64>,
            ),
            ("genre-mean", |c: &ColdStartCondition| c.baseline_mae),
        ] {
            let _ = write!(out, "{name:<10}");
            for c in &self.conditions {
                let _ = write!(out, " | {:>6}", cell(pick(c)));
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<10}", "held");
        for c in &self.conditions {
            let _ = write!(out, " | {:>6}", c.held);
        }
        out.push('\n');
        out
    }
}

/// Hold out the ratings of each item separately and of all items together,
/// retrain on the rest, and predict the held ratings as new items.
///
/// `labels[i]` names `items[i]`; the combined condition is `combined_label`.
#[allow(clippy::too_many_arguments)]
pub fn coldstart_experiment(
    kind: VariantKind,
    config: &TrainConfig,
    ratings: &SparseRatings,
    profiles: &ItemProfiles,
    items: &[usize],
    labels: &[String],
    combined_label: Option<&str>,
    coldstart: &ColdStartConfig,
    workers: usize,
) -> Result<ColdStartReport> {
    if !kind.uses_attributes() {
        return Err(Error::Config(format!(
            "{kind} has no item descriptions and cannot predict new items"
        )));
    }
    if labels.len() != items.len() {
        return Err(Error::Config("one label per held-out item is required".into()));
    }
    let mut conditions: Vec<(String, Vec<usize>)> =
        items.iter().zip(labels).map(|(&i, l)| (l.clone(), vec![i])).collect();
    if let Some(label) = combined_label {
        conditions.push((label.to_string(), items.to_vec()));
    }
    let variant = make_variant(kind, config)?;
    let results: Vec<Result<ColdStartCondition>> = pool(workers)?.install(|| {
        conditions
            .par_iter()
            .map(|(label, held_items)| {
                let start = Instant::now();
                let (train, held) = hold_out_items(ratings, held_items);
                let mut condition = ColdStartCondition {
                    label: label.clone(),
                    items: held_items.clone(),
                    held: held.len(),
                    mae: None,
                    baseline_mae: None,
                    seconds: 0.0,
                };
                if held.is_empty() {
                    return Ok(condition);
                }
                let model = variant.train(&train, profiles)?;
                let predictor = ColdStartPredictor::new(&model, &train, coldstart.clone())?;
                let mut pairs = Vec::with_capacity(held.len());
                let mut baseline = Vec::with_capacity(held.len());
                let mut fallback_cache: Vec<Option<f64>> = vec![None; ratings.num_items()];
                for t in held.triples() {
                    let item = t.item as usize;
                    let profile = profiles.row(item);
                    pairs.push((predictor.predict(profile, t.user as usize)?, t.value));
                    let mean = *fallback_cache[item].get_or_insert_with(|| {
                        genre_mean(profile, profiles, &train).unwrap_or_else(|| ratings.scale().midpoint())
                    });
                    baseline.push((mean, t.value));
                }
                condition.mae = Some(mae(&pairs)?);
                condition.baseline_mae = Some(mae(&baseline)?);
                condition.seconds = start.elapsed().as_secs_f64();
                Ok(condition)
            })
            .collect()
    });
    Ok(ColdStartReport {
        variant: kind.name().into(),
        conditions: results.into_iter().collect::<Result<Vec<_>>>()?,
    })
}

/// Items whose ratings appear in both partitions; used to check that a
/// training subset never contains scored ratings.
pub fn overlapping_pairs(a: &SparseRatings, b: &SparseRatings) -> usize {
    let keys: BTreeSet<(u32, u32)> = a.triples().iter().map(|t| (t.item, t.user)).collect();
    b.triples().iter().filter(|t| keys.contains(&(t.item, t.user))).count()
}
