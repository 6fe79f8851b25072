//! Acceptance suite. Each criterion prints one `criterion N: PASS|FAIL` line;
//! the test fails if any criterion does.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use tremorkit::dataset::merge_labels;
use tremorkit::deepnet::model::gradient_check;
use tremorkit::deepnet::{ArchConfig, ConvLstm, Graph};
use tremorkit::features::dft_power;
use tremorkit::poseproc::{preprocess, ClipTensor, Laterality, BOX_SIDE_PER_SPINE};
use tremorkit::stats::{self, Alternative, ConfusionMatrix, TestResult};
use tremorkit::synth::{gen_assessment, ClassBalance, SynthSpec};
use tremorkit_cli::config::ConfoundShare;
use tremorkit_cli::{run, Command, ModelChoice, RunConfig};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rng(seed: u64) -> tremorkit::rng::Rng {
    tremorkit::rng::Rng::seed_from_u64(seed)
}

fn config(dir: &Path, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        data_dir: dir.join("data"),
        output_dir: dir.join("out"),
        ..RunConfig::default()
    }
}

fn stages(cfg: &RunConfig, cmds: &[Command]) -> Result<(), String> {
    for &c in cmds {
        run(c, cfg).map_err(|e| format!("{c:?}: {e}"))?;
    }
    Ok(())
}

fn report_json(cfg: &RunConfig) -> Result<serde_json::Value, String> {
    let text = fs::read_to_string(cfg.output_dir.join("eval/report.json")).map_err(err)?;
    serde_json::from_str(&text).map_err(err)
}

fn summary_of<'a>(report: &'a serde_json::Value, model: &str) -> Result<&'a serde_json::Value, String> {
    report["summary"]
        .as_array()
        .and_then(|s| s.iter().find(|r| r["model"] == model))
        .ok_or_else(|| format!("no {model} summary"))
}

fn fold_kappas(report: &serde_json::Value, model: &str) -> Vec<f64> {
    report["folds"]
        .as_array()
        .map(|f| {
            f.iter()
                .filter(|r| r["model"] == model)
                .map(|r| r["metrics"]["kappa"].as_f64().unwrap_or(f64::NAN))
                .collect()
        })
        .unwrap_or_default()
}

fn shape_fidelity() -> Check {
    let arch = ArchConfig::default();
    let chain = arch.shape_chain([3, 32, 32, 32]).map_err(err)?;
    let spatial: Vec<usize> = chain.iter().map(|d| d[2]).collect();
    ensure(spatial == [32, 30, 15, 13, 6, 4, 2], || format!("spatial chain {spatial:?}"))?;
    let model = ConvLstm::<f32>::new(arch, 1).map_err(err)?;
    let mut r = rng(1);
    let data = (0..3 * 32 * 32 * 32).map(|_| r.random::<f32>()).collect();
    let clip = ClipTensor::new(data, [3, 32, 32, 32], 30.0).map_err(err)?;
    let mut g = Graph::new(false);
    let out = model.forward(&mut g, &clip, None).map_err(err)?;
    let logits = g.value(out.logits).shape.clone();
    let embedding = g.value(out.embedding).shape.clone();
    ensure(logits == [4] && embedding == [16], || format!("logits {logits:?}, lstm features {embedding:?}"))?;
    Ok(format!("spatial {spatial:?}, lstm features 16, logits 4"))
}

fn gradients() -> Check {
    let model = ConvLstm::<f64>::new(ArchConfig::tiny(2, 3, 2), 7).map_err(err)?;
    let a = gen_assessment(&SynthSpec::for_score(3, Laterality::Right, 21)).map_err(err)?;
    let clip = preprocess::<f64>(&a.pose, &a.video, a.roi).map_err(err)?.time_slice(0, 8).map_err(err)?;
    let errors = gradient_check(&model, &clip, 3, 1e-5).map_err(err)?;
    let (name, worst) = errors.iter().fold((String::new(), 0.0f64), |acc, (n, e)| if *e > acc.1 { (n.clone(), *e) } else { acc });
    ensure(worst < 1e-2, || format!("{name}: relative error {worst:.2e}"))?;
    Ok(format!("{} parameter groups, max relative error {worst:.2e} ({name})", errors.len()))
}

fn naive_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t) as f64 / n as f64;
                re += (v - mean) * a.cos();
                im += (v - mean) * a.sin();
            }
            let p = (re * re + im * im) / n as f64;
            if k == 0 || (n % 2 == 0 && k == n / 2) {
                p
            } else {
                2.0 * p
            }
        })
        .collect()
}

fn dsp_oracle() -> Check {
    let mut r = rng(3);
    let (mut worst, mut worst_parseval) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let n = r.random_range(8..=200);
        let x: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let spec = dft_power(&x, 30.0).map_err(err)?;
        let oracle = naive_power(&x);
        let scale = oracle.iter().cloned().fold(0.0, f64::max);
        for (a, b) in spec.power.iter().zip(&oracle) {
            worst = worst.max((a - b).abs() / scale);
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let energy: f64 = x.iter().map(|v| (v - mean) * (v - mean)).sum();
        worst_parseval = worst_parseval.max((spec.total_power() - energy).abs() / energy);
    }
    ensure(worst < 1e-9, || format!("DFT relative error {worst:.2e}"))?;
    ensure(worst_parseval < 1e-6, || format!("Parseval relative error {worst_parseval:.2e}"))?;
    Ok(format!("max DFT error {worst:.1e}, Parseval error {worst_parseval:.1e}"))
}

fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &li) in labels.iter().enumerate() {
        for (j, &lj) in labels.iter().enumerate() {
            if li && !lj {
                pairs += 1.0;
                wins += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

/// Exact p-value by enumerating all `2^n` sign assignments of the observed ranks.
fn enumerated_wilcoxon(x: &[f64], y: &[f64], alt: Alternative) -> f64 {
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).filter(|v| *v != 0.0).collect();
    let n = d.len();
    let mut ranks = vec![0.0; n];
    for i in 0..n {
        let below = d.iter().filter(|v| v.abs() < d[i].abs()).count();
        let tied = d.iter().filter(|v| v.abs() == d[i].abs()).count();
        ranks[i] = below as f64 + (tied as f64 + 1.0) / 2.0;
    }
    let observed: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum();
    let (mut ge, mut le) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let w: f64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        ge += u64::from(w >= observed - 1e-9);
        le += u64::from(w <= observed + 1e-9);
    }
    let total = (1u64 << n) as f64;
    match alt {
        Alternative::Greater => ge as f64 / total,
        Alternative::TwoSided => (2.0 * (ge.min(le) as f64) / total).min(1.0),
    }
}

fn direct_kappa(cm: &[Vec<u64>]) -> f64 {
    let k = cm.len();
    let n: f64 = cm.iter().flatten().sum::<u64>() as f64;
    let w = |i: usize, j: usize| 1.0 - i.abs_diff(j) as f64 / (k - 1) as f64;
    let rows: Vec<f64> = cm.iter().map(|r| r.iter().sum::<u64>() as f64 / n).collect();
    let cols: Vec<f64> = (0..k).map(|j| cm.iter().map(|r| r[j]).sum::<u64>() as f64 / n).collect();
    let (mut po, mut pe) = (0.0, 0.0);
    for i in 0..k {
        for j in 0..k {
            po += w(i, j) * cm[i][j] as f64 / n;
            pe += w(i, j) * rows[i] * cols[j];
        }
    }
    (po - pe) / (1.0 - pe)
}

fn metric_oracles() -> Check {
    let mut r = rng(4);
    let mut auc_err = 0.0f64;
    for _ in 0..50 {
        let n = r.random_range(4..60);
        let mut labels: Vec<bool> = (0..n).map(|_| r.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        // coarse scores so ties occur
        let scores: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 10.0).round() / 10.0).collect();
        let auc = stats::roc_auc(&scores, &labels).map_err(err)?.auc;
        auc_err = auc_err.max((auc - pairwise_auc(&scores, &labels)).abs());
    }
    ensure(auc_err < 1e-12, || format!("AUC error {auc_err:.2e}"))?;

    let mut wil_err = 0.0f64;
    let mut tried = 0;
    for n in 1..=12 {
        for i in 0..50 {
            let x: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 4.0).round()).collect();
            let y: Vec<f64> = (0..n).map(|_| (r.random::<f64>() * 4.0).round()).collect();
            let alt = if i % 2 == 0 { Alternative::Greater } else { Alternative::TwoSided };
            let Ok(got) = stats::wilcoxon_signed_rank(&x, &y, alt) else {
                ensure(x == y, || format!("wilcoxon rejected {x:?} {y:?}"))?;
                continue;
            };
            wil_err = wil_err.max((got.p_value - enumerated_wilcoxon(&x, &y, alt)).abs());
            tried += 1;
        }
    }
    ensure(wil_err < 1e-12, || format!("Wilcoxon error {wil_err:.2e}"))?;

    let (mut kappa_err, mut ba_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = r.random_range(10..200);
        let truth: Vec<u8> = (0..n).map(|_| r.random_range(0..4)).collect();
        let pred: Vec<u8> = truth.iter().map(|&t| if r.random_bool(0.6) { t } else { r.random_range(0..4) }).collect();
        let cm = ConfusionMatrix::from_labels(&truth, &pred, 4).map_err(err)?;
        let kappa = stats::weighted_kappa(&cm).map_err(err)?.value;
        kappa_err = kappa_err.max((kappa - direct_kappa(&cm.counts)).abs());
        let recalls: Vec<f64> = (0..4u8)
            .filter(|c| truth.contains(c))
            .map(|c| {
                let of_c = truth.iter().filter(|&&t| t == c).count() as f64;
                truth.iter().zip(&pred).filter(|(&t, &p)| t == c && p == c).count() as f64 / of_c
            })
            .collect();
        let ba = recalls.iter().sum::<f64>() / recalls.len() as f64;
        ba_err = ba_err.max((stats::balanced_accuracy(&cm) - ba).abs());
    }
    ensure(kappa_err < 1e-12 && ba_err < 1e-12, || format!("kappa error {kappa_err:.2e}, balanced accuracy error {ba_err:.2e}"))?;
    Ok(format!(
        "AUC {auc_err:.1e}, Wilcoxon {wil_err:.1e} over {tried} cases, kappa {kappa_err:.1e}, balanced accuracy {ba_err:.1e}"
    ))
}

fn constants() -> Check {
    ensure(BOX_SIDE_PER_SPINE == 0.593, || format!("box ratio {BOX_SIDE_PER_SPINE}"))?;
    let corrected = stats::bonferroni(&[TestResult::new(0.0, 0.348379)], 9)[0].corrected_p;
    ensure((corrected - 3.135411).abs() < 1e-9, || format!("Bonferroni gave {corrected}"))?;
    let b = stats::binomial_test_one_sided(5, 5, 0.5).map_err(err)?.p_value;
    ensure(b == 0.03125, || format!("binomial 5/5 gave {b}"))?;
    let merged: Vec<u8> = (0..=4).map(merge_labels).collect::<Result<_, _>>().map_err(err)?;
    ensure(merged == [0, 1, 2, 3, 3], || format!("merge map {merged:?}"))?;
    Ok("0.593, 3.135411, 0.03125, 4->3".into())
}

fn end_to_end() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut cfg = config(tmp.path(), 11);
    cfg.synth.balance = ClassBalance::ClinicalSkew { total: 500 };
    let t = cfg.train.crop_frames.unwrap_or(usize::MAX).max(cfg.train.eval_frames.unwrap_or(usize::MAX));
    ensure(t <= 64, || format!("clips of {t} frames"))?;
    stages(&cfg, &[Command::Synth, Command::Preprocess, Command::Features])?;
    cfg.model = ModelChoice::Rfc;
    stages(&cfg, &[Command::Train])?;
    cfg.model = ModelChoice::Net;
    let t0 = Instant::now();
    stages(&cfg, &[Command::Train])?;
    let net_time = t0.elapsed();
    cfg.model = ModelChoice::Both;
    stages(&cfg, &[Command::Eval, Command::Report])?;
    let report = report_json(&cfg)?;
    let k_net = summary_of(&report, "net")?["metrics"]["kappa"].as_f64().unwrap_or(f64::NAN);
    let k_rfc = summary_of(&report, "rfc")?["metrics"]["kappa"].as_f64().unwrap_or(f64::NAN);
    let detail = format!(
        "pooled test kappa net {k_net:.3} rfc {k_rfc:.3}; per fold net {:.3?} rfc {:.3?}; net training {:.0} s at T={t}",
        fold_kappas(&report, "net"),
        fold_kappas(&report, "rfc"),
        net_time.as_secs_f64()
    );
    ensure(k_net >= 0.7 && k_rfc >= 0.7 && net_time <= Duration::from_secs(900), || detail.clone())?;
    Ok(detail)
}

fn robustness() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut cfg = config(tmp.path(), 12);
    cfg.synth.balance = ClassBalance::ClinicalSkew { total: 500 };
    cfg.synth.keypoint_dropout = Some(0.3);
    stages(&cfg, &[Command::Synth, Command::Preprocess, Command::Features, Command::Train, Command::Eval])?;
    let report = report_json(&cfg)?;
    let failures = |m| summary_of(&report, m).map(|s| s["failures"].as_u64().unwrap_or(0));
    let (f_rfc, f_net) = (failures("rfc")?, failures("net")?);
    let cmp = &report["comparison"];
    let better = cmp["successes"].as_u64().unwrap_or(0);
    let detail = format!(
        "failures rfc {f_rfc} net {f_net}; net better on {better}/{} folds (binomial p {:.5}); survivor kappa net {:.3?} rfc {:.3?}",
        cmp["trials"],
        cmp["binomial"]["p_value"].as_f64().unwrap_or(f64::NAN),
        fold_kappas(&report, "net"),
        fold_kappas(&report, "rfc")
    );
    ensure(f_rfc > f_net && better >= 4, || detail.clone())?;
    Ok(detail)
}

fn treatment_recovery() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut cfg = config(tmp.path(), 13);
    cfg.synth.balance = ClassBalance::Balanced { n_per_class: 8 };
    cfg.synth.cohort_patients = 20;
    cfg.model = ModelChoice::Rfc;
    stages(&cfg, &[Command::Synth, Command::Features, Command::Train, Command::Eval])?;
    let read = |name: &str| -> Result<Vec<BTreeMap<String, String>>, String> {
        let mut r = csv::Reader::from_path(cfg.output_dir.join("eval").join(name)).map_err(err)?;
        r.deserialize().collect::<Result<Vec<_>, _>>().map_err(err)
    };
    let effects = read("treatment_effects.csv")?;
    let dbs = effects
        .iter()
        .find(|r| r["rater"] == "Amplitude" && r["treatment"] == "DBS")
        .and_then(|r| r["mean_improvement"].parse::<f64>().ok())
        .ok_or("no amplitude DBS effect")?;
    let tests = read("treatment_tests.csv")?;
    let p = tests
        .iter()
        .find(|r| r["rater"] == "Amplitude" && r["treatment_x"] == "L-Dopa" && r["treatment_y"] == "DBS")
        .and_then(|r| r["corrected_p"].parse::<f64>().ok())
        .ok_or("no amplitude L-Dopa vs DBS test")?;
    let detail = format!("mean DBS improvement {dbs:.3}, corrected one-sided p {p:.2e} (L-Dopa vs DBS)");
    ensure((dbs - 0.7).abs() <= 0.1 && p < 0.05, || detail.clone())?;
    Ok(detail)
}

fn embedding() -> Check {
    let tmp = tempfile::tempdir().map_err(err)?;
    let mut cfg = config(tmp.path(), 14);
    cfg.synth.balance = ClassBalance::ClinicalSkew { total: 500 };
    cfg.synth.confound_mix = vec![
        ConfoundShare { confound: "none".into(), share: 0.8 },
        ConfoundShare { confound: "camera_shake".into(), share: 0.2 },
    ];
    cfg.model = ModelChoice::Net;
    cfg.fold = Some(0);
    stages(&cfg, &[Command::Synth, Command::Preprocess, Command::Train, Command::Embed])?;
    let text = fs::read_to_string(cfg.output_dir.join("embed/summary_fold0.json")).map_err(err)?;
    let s: serde_json::Value = serde_json::from_str(&text).map_err(err)?;
    let probe = s["probe_accuracy"].as_f64().unwrap_or(0.0);
    let enrichment = s["camera_shake_enrichment"].as_f64();
    let detail = format!(
        "probe accuracy {probe:.3}; {} of {} class-0 points are outliers; camera-shake enrichment {enrichment:?}",
        s["class0_outliers"], s["class0_points"]
    );
    ensure(probe >= 0.8 && enrichment.is_some_and(|e| e >= 2.0), || detail.clone())?;
    Ok(detail)
}

fn csv_bytes(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut out = BTreeMap::new();
    for e in fs::read_dir(dir).map_err(err)? {
        let p = e.map_err(err)?.path();
        if p.extension().is_some_and(|x| x == "csv") {
            out.insert(p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).map_err(err)?);
        }
    }
    Ok(out)
}

fn determinism() -> Check {
    let mut outputs = Vec::new();
    let mut overhead = Duration::ZERO;
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(err)?;
        let mut cfg = config(tmp.path(), 15);
        cfg.synth.balance = ClassBalance::Balanced { n_per_class: 8 };
        cfg.synth.cohort_patients = 2;
        cfg.train.max_epochs = 2;
        cfg.train.samples_per_epoch = Some(16);
        cfg.forest.n_trees = 20;
        cfg.embed.tsne.n_iter = 300;
        cfg.embed.tsne.perplexity = 10.0;
        let t0 = Instant::now();
        stages(&cfg, &[Command::Run])?;
        overhead += t0.elapsed();
        let mut files = csv_bytes(&cfg.output_dir.join("eval"))?;
        files.extend(csv_bytes(&cfg.output_dir.join("report"))?.into_iter().map(|(k, v)| (format!("report/{k}"), v)));
        outputs.push((files, tmp));
    }
    let (a, b) = (&outputs[0].0, &outputs[1].0);
    let differing: Vec<&String> = a.keys().filter(|k| b.get(*k) != a.get(*k)).collect();
    ensure(!a.is_empty() && a.len() == b.len() && differing.is_empty(), || format!("differing files {differing:?}"))?;
    ensure(overhead <= Duration::from_secs(60), || format!("two runs took {:.0} s", overhead.as_secs_f64()))?;
    Ok(format!("{} metric CSVs byte-identical across two runs ({:.0} s)", a.len(), overhead.as_secs_f64()))
}

#[test]
fn acceptance_criteria() {
    let criteria: [(u8, &str, Duration, fn() -> Check); 10] = [
        (1, "shape fidelity", Duration::from_secs(1), shape_fidelity),
        (2, "gradient correctness", Duration::from_secs(60), gradients),
        (3, "DSP oracle", Duration::from_secs(10), dsp_oracle),
        (4, "metric oracles", Duration::from_secs(30), metric_oracles),
        (5, "constants", Duration::from_secs(1), constants),
        (6, "end-to-end learning", Duration::from_secs(3600), end_to_end),
        (7, "robustness direction", Duration::from_secs(1200), robustness),
        (8, "treatment effect recovery", Duration::from_secs(300), treatment_recovery),
        (9, "embedding behaviour", Duration::from_secs(300), embedding),
        (10, "determinism", Duration::from_secs(3600), determinism),
    ];
    let mut failed = Vec::new();
    for (id, name, limit, check) in criteria {
        let t0 = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = t0.elapsed();
        let outcome = match outcome {
            Ok(d) if elapsed > limit => Err(format!("{d}; took {:.1} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs())),
            o => o,
        };
        match &outcome {
            Ok(d) => println!("criterion {id}: PASS {name} ({:.1} s): {d}", elapsed.as_secs_f64()),
            Err(d) => {
                println!("criterion {id}: FAIL {name} ({:.1} s): {d}", elapsed.as_secs_f64());
                failed.push(id);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria {failed:?}");
}
