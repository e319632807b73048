//! Plot-data emission: intra/inter cosine histograms per method and the
//! margin-vs-metric sweep table, all as deterministic CSV files.

use std::path::{Path, PathBuf};

use pxkd_core::eval::{EvalReport, HIST_BINS};

use crate::error::Result;
use crate::runner::{MetricsDocument, SeedResult};

/// The histogram source for a method: the cross-model (multiple-mode) report
/// when present, otherwise the single-mode report.
fn hist_report(result: &crate::runner::MethodResult) -> Option<&EvalReport> {
    result.eval_multiple.as_ref().or(result.eval_single.as_ref())
}

/// True when the document contains a margin sweep (two or more distinct
/// margins among the method results).
fn has_sweep(per_seed: &[SeedResult]) -> bool {
    let mut margins: Vec<u64> = per_seed
        .iter()
        .flat_map(|s| s.methods.values())
        .filter_map(|m| m.margin)
        .map(f64::to_bits)
        .collect();
    margins.sort_unstable();
    margins.dedup();
    margins.len() >= 2
}

/// Relative names of every plot file a document implies.
pub fn plot_file_names(per_seed: &[SeedResult]) -> Vec<String> {
    let mut names = Vec::new();
    for seed_result in per_seed {
        for (key, result) in &seed_result.methods {
            if hist_report(result).is_some() {
                names.push(format!("plots/hist_{key}_seed{}_intra.csv", seed_result.seed));
                names.push(format!("plots/hist_{key}_seed{}_inter.csv", seed_result.seed));
            }
        }
    }
    if has_sweep(per_seed) {
        names.push("plots/margin_sweep.csv".to_string());
    }
    names
}

fn hist_csv(hist: &[u64]) -> String {
    let mut out = String::from("bin_left,bin_right,count\n");
    for (i, count) in hist.iter().enumerate() {
        let left = -1.0 + i as f64 * (2.0 / HIST_BINS as f64);
        let right = -1.0 + (i + 1) as f64 * (2.0 / HIST_BINS as f64);
        out.push_str(&format!("{left},{right},{count}\n"));
    }
    out
}

fn opt_num(x: Option<f64>) -> String {
    match x {
        Some(v) => format!("{v}"),
        None => String::new(),
    }
}

/// Writes all plot CSVs for a document into `out_dir` and returns the paths.
/// Rerunning over the same document produces byte-identical files.
pub fn emit_plot_data(doc: &MetricsDocument, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir.join("plots"))?;
    let mut files = Vec::new();
    let mut sweep_rows: Vec<String> = Vec::new();
    for seed_result in &doc.per_seed {
        for (key, result) in &seed_result.methods {
            if let Some(report) = hist_report(result) {
                let intra = out_dir.join(format!(
                    "plots/hist_{key}_seed{}_intra.csv",
                    seed_result.seed
                ));
                std::fs::write(&intra, hist_csv(&report.intra_hist))?;
                files.push(intra);
                let inter = out_dir.join(format!(
                    "plots/hist_{key}_seed{}_inter.csv",
                    seed_result.seed
                ));
                std::fs::write(&inter, hist_csv(&report.inter_hist))?;
                files.push(inter);
            }
            if let Some(margin) = result.margin {
                sweep_rows.push(format!(
                    "{margin},{seed},{vs},{vm},{rs},{rm}",
                    seed = seed_result.seed,
                    vs = opt_num(result.eval_single.as_ref().map(|r| r.verification_accuracy_pct)),
                    vm = opt_num(result.eval_multiple.as_ref().map(|r| r.verification_accuracy_pct)),
                    rs = opt_num(result.eval_single.as_ref().map(|r| r.rank1_pct)),
                    rm = opt_num(result.eval_multiple.as_ref().map(|r| r.rank1_pct)),
                ));
            }
        }
    }
    if has_sweep(&doc.per_seed) {
        let mut csv = String::from(
            "margin,seed,verification_single_pct,verification_multiple_pct,rank1_single_pct,rank1_multiple_pct\n",
        );
        for row in &sweep_rows {
            csv.push_str(row);
            csv.push('\n');
        }
        let path = out_dir.join("plots/margin_sweep.csv");
        std::fs::write(&path, csv)?;
        files.push(path);
    }
    Ok(files)
}
