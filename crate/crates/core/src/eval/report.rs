//! Aggregation of fold results and table emission.

use super::metrics::{FoldResult, Metrics};
use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

/// Mean and standard deviation of the three metrics over a sweep, with the
/// spread reported both across folds and across test subjects (the two
/// validation variants of a subject averaged first).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub n_folds: usize,
    pub mean: Metrics,
    pub std_across_folds: Metrics,
    pub std_across_subjects: Metrics,
}

fn mean_std<I: Iterator<Item = f64> + Clone>(values: I) -> (f64, f64) {
    let n = values.clone().count();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt())
}

/// Pure aggregation; recomputable from the stored per-fold values.
pub fn aggregate_from(folds: &[FoldResult]) -> Aggregate {
    let pick = |f: fn(&Metrics) -> f64| -> (f64, f64) {
        mean_std(folds.iter().map(move |r| f(&r.metrics)))
    };
    let (acc_m, acc_s) = pick(|m| m.acc);
    let (fw_m, fw_s) = pick(|m| m.f_w);
    let (fm_m, fm_s) = pick(|m| m.f_m);

    // Per-subject averages over the validation variants.
    let mut per_subject: BTreeMap<usize, Vec<&Metrics>> = BTreeMap::new();
    for r in folds {
        per_subject.entry(r.fold.test_subject).or_default().push(&r.metrics);
    }
    let subject_means = |f: fn(&Metrics) -> f64| -> Vec<f64> {
        per_subject
            .values()
            .map(|ms| ms.iter().map(|m| f(m)).sum::<f64>() / ms.len() as f64)
            .collect()
    };
    let (_, acc_ss) = mean_std(subject_means(|m| m.acc).into_iter());
    let (_, fw_ss) = mean_std(subject_means(|m| m.f_w).into_iter());
    let (_, fm_ss) = mean_std(subject_means(|m| m.f_m).into_iter());

    Aggregate {
        n_folds: folds.len(),
        mean: Metrics {
            acc: acc_m,
            f_w: fw_m,
            f_m: fm_m,
        },
        std_across_folds: Metrics {
            acc: acc_s,
            f_w: fw_s,
            f_m: fm_s,
        },
        std_across_subjects: Metrics {
            acc: acc_ss,
            f_w: fw_ss,
            f_m: fm_ss,
        },
    }
}

fn join_ids(ids: &[usize]) -> String {
    ids.iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("+")
}

/// Per-fold metric rows.
pub fn results_csv(folds: &[FoldResult]) -> String {
    let mut out = String::from("fold,test_subject,variant,test_subjects,val_subjects,acc,f_w,f_m,best_val_f_m\n");
    for (i, r) in folds.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i},{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
            r.fold.test_subject,
            r.fold.variant,
            join_ids(&r.test_subjects),
            join_ids(&r.val_subjects),
            r.metrics.acc,
            r.metrics.f_w,
            r.metrics.f_m,
            r.best_val_macro_f1,
        );
    }
    out
}

/// `metric,mean,std_across_folds,std_across_subjects` rows.
pub fn aggregate_csv(agg: &Aggregate) -> String {
    let mut out = String::from("metric,mean,std_across_folds,std_across_subjects\n");
    for (name, m, sf, ss) in [
        ("acc", agg.mean.acc, agg.std_across_folds.acc, agg.std_across_subjects.acc),
        ("f_w", agg.mean.f_w, agg.std_across_folds.f_w, agg.std_across_subjects.f_w),
        ("f_m", agg.mean.f_m, agg.std_across_folds.f_m, agg.std_across_subjects.f_m),
    ] {
        let _ = writeln!(out, "{name},{m:.6},{sf:.6},{ss:.6}");
    }
    out
}

/// Human-readable `mean ± std` table (percentages, std across folds).
pub fn aggregate_table(label: &str, agg: &Aggregate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<24} {:>16} {:>16} {:>16}", "method", "acc", "F_w", "F_m");
    let _ = writeln!(
        out,
        "{:<24} {:>7.2} ± {:>5.2} {:>7.2} ± {:>5.2} {:>7.2} ± {:>5.2}",
        label,
        100.0 * agg.mean.acc,
        100.0 * agg.std_across_folds.acc,
        100.0 * agg.mean.f_w,
        100.0 * agg.std_across_folds.f_w,
        100.0 * agg.mean.f_m,
        100.0 * agg.std_across_folds.f_m,
    );
    out
}

/// Write the standard result files into `dir`.
pub fn write_report(dir: &Path, label: &str, folds: &[FoldResult], failures: &[(crate::data::FoldSpec, String)]) -> Result<Aggregate> {
    std::fs::create_dir_all(dir)?;
    let agg = aggregate_from(folds);
    std::fs::write(dir.join("results.csv"), results_csv(folds))?;
    std::fs::write(dir.join("aggregate.csv"), aggregate_csv(&agg))?;
    std::fs::write(dir.join("report.txt"), aggregate_table(label, &agg))?;
    std::fs::write(dir.join("folds.json"), serde_json::to_string_pretty(folds)?)?;
    if !failures.is_empty() {
        let lines: Vec<String> = failures
            .iter()
            .map(|(f, e)| format!("fold test_subject={} variant={}: {e}", f.test_subject, f.variant))
            .collect();
        std::fs::write(dir.join("failures.txt"), lines.join("\n"))?;
    }
    Ok(agg)
}
