use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{require, write_file, Layout};

type Record = BTreeMap<String, String>;

fn read_records(path: &Path) -> CliResult<Vec<Record>> {
    require(path)?;
    let mut r = csv::Reader::from_path(path).map_err(tremorkit::Error::from)?;
    r.deserialize::<Record>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| tremorkit::Error::from(e).into())
}

fn cell<'a>(r: &'a Record, k: &str) -> &'a str {
    r.get(k).map(String::as_str).unwrap_or("")
}

fn round(s: &str, digits: usize) -> String {
    s.parse::<f64>().map(|v| format!("{v:.digits$}")).unwrap_or_else(|_| s.to_string())
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(tremorkit::Error::from)?;
    for r in rows {
        w.write_record(r).map_err(tremorkit::Error::from)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

fn copy(from: &Path, to: &Path) -> CliResult<()> {
    let bytes = std::fs::read(from).map_err(|e| CliError::missing(from, e))?;
    write_file(to, &bytes)
}

/// Models as rows; per fold the kappa and the count of non-failing assessments, fold size in the header.
fn fold_table(folds: &[Record]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut sizes: BTreeMap<usize, String> = BTreeMap::new();
    let mut by_model: BTreeMap<String, BTreeMap<usize, (String, String)>> = BTreeMap::new();
    for r in folds {
        let fold: usize = cell(r, "fold").parse().unwrap_or(0);
        sizes.insert(fold, cell(r, "n").to_string());
        by_model
            .entry(cell(r, "model").to_string())
            .or_default()
            .insert(fold, (cell(r, "kappa").to_string(), cell(r, "n_ok").to_string()));
    }
    let mut header = vec!["model".to_string()];
    for (f, n) in &sizes {
        header.push(format!("fold{f} K (n={n})"));
        header.push(format!("fold{f} n'"));
    }
    let rows = by_model
        .into_iter()
        .map(|(model, cells)| {
            let mut row = vec![model];
            for f in sizes.keys() {
                let (k, n) = cells.get(f).cloned().unwrap_or_default();
                row.push(k);
                row.push(n);
            }
            row
        })
        .collect();
    (header, rows)
}

fn treatment_table(tests: &[Record]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = ["rater", "comparison", "test", "statistic", "p_value", "corrected_p", "significance"].map(String::from).to_vec();
    let rows = tests
        .iter()
        .map(|r| {
            let (x, y) = (cell(r, "treatment_x"), cell(r, "treatment_y"));
            let comparison = if x == y { x.to_string() } else { format!("{x} vs {y}") };
            vec![
                cell(r, "rater").to_string(),
                comparison,
                cell(r, "test").to_string(),
                cell(r, "statistic").to_string(),
                round(cell(r, "p_value"), 6),
                round(cell(r, "corrected_p"), 6),
                cell(r, "significance").to_string(),
            ]
        })
        .collect();
    (header, rows)
}

fn md_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let eval = layout.eval_dir();
    let dir = layout.report_dir();
    let folds = read_records(&eval.join("fold_metrics.csv"))?;
    let summary = read_records(&eval.join("summary_metrics.csv"))?;
    let mut md = String::new();
    let _ = writeln!(md, "# Tremor scoring report\n\nSeed {}, {} folds.\n", cfg.seed, cfg.folds);

    let (header, rows) = fold_table(&folds);
    write_file(&dir.join("fold_table.csv"), &csv_bytes(&header, &rows)?)?;
    md.push_str("## Kappa per fold\n\n");
    let rounded: Vec<Vec<String>> = rows
        .iter()
        .map(|r| r.iter().enumerate().map(|(i, c)| if i % 2 == 1 { round(c, 3) } else { c.clone() }).collect())
        .collect();
    md_table(&mut md, &header, &rounded);

    md.push_str("## Pooled test metrics\n\n");
    let cols = ["model", "n", "failures", "kappa", "kappa_5class", "balanced_accuracy", "auc_0", "auc_1", "auc_2", "sens95_0", "asymmetry_kappa"];
    let header: Vec<String> = cols.iter().map(|c| c.to_string()).collect();
    let rows: Vec<Vec<String>> = summary.iter().map(|r| cols.iter().map(|c| round(cell(r, c), 3)).collect()).collect();
    md_table(&mut md, &header, &rows);

    for r in &summary {
        let model = cell(r, "model");
        for name in [format!("confusion_{model}.csv"), format!("confusion5_{model}.csv"), format!("asymmetry_{model}.csv")] {
            if eval.join(&name).exists() {
                copy(&eval.join(&name), &dir.join(&name))?;
            }
        }
    }
    copy(&eval.join("roc.csv"), &dir.join("roc_points.csv"))?;

    let cmp = eval.join("model_comparison.csv");
    if cmp.exists() {
        let rows = read_records(&cmp)?;
        let better = rows.iter().filter(|r| cell(r, "net_better") == "1").count();
        let p = tremorkit::stats::binomial_test_one_sided(better as u64, rows.len() as u64, 0.5)?;
        let _ = writeln!(
            md,
            "## Model comparison\n\nThe network beats the forest on {better} of {} folds (one-sided binomial p = {:.5}).\n",
            rows.len(),
            p.p_value
        );
    }

    let tests = eval.join("treatment_tests.csv");
    if tests.exists() {
        let (header, rows) = treatment_table(&read_records(&tests)?);
        write_file(&dir.join("treatment_table.csv"), &csv_bytes(&header, &rows)?)?;
        md.push_str("## Treatment comparisons\n\n");
        md_table(&mut md, &header, &rows);
        let effects = read_records(&eval.join("treatment_effects.csv"))?;
        let header: Vec<String> = ["rater", "treatment", "n", "mean_improvement"].map(String::from).to_vec();
        let rows: Vec<Vec<String>> = effects
            .iter()
            .map(|r| vec![cell(r, "rater").into(), cell(r, "treatment").into(), cell(r, "n").into(), round(cell(r, "mean_improvement"), 3)])
            .collect();
        md.push_str("## Mean improvement from baseline\n\n");
        md_table(&mut md, &header, &rows);
    }

    let embed = layout.embed_dir();
    if embed.exists() {
        let mut names: Vec<_> = std::fs::read_dir(&embed)
            .map_err(|e| CliError::missing(&embed, e))?
            .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
            .filter(|n| n.starts_with("summary_fold") && n.ends_with(".json"))
            .collect();
        names.sort();
        if !names.is_empty() {
            md.push_str("## Embedding\n\n");
        }
        for n in names {
            let text = std::fs::read_to_string(embed.join(&n)).map_err(|e| CliError::missing(&embed.join(&n), e))?;
            let v: serde_json::Value = serde_json::from_str(&text).map_err(tremorkit::Error::from)?;
            let _ = writeln!(
                md,
                "Fold {}: linear probe accuracy {:.3}; {} of {} class-0 points are envelope outliers; camera-shake enrichment {}.\n",
                v["fold"],
                v["probe_accuracy"].as_f64().unwrap_or(f64::NAN),
                v["class0_outliers"],
                v["class0_points"],
                v["camera_shake_enrichment"].as_f64().map(|e| format!("{e:.2}")).unwrap_or_else(|| "undefined".into())
            );
        }
    }
    write_file(&dir.join("summary.md"), md.as_bytes())
}
