//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use relaxmatch::cli::{ablate_command, load_corpus};
use relaxmatch::config::{load_spec, RunConfig};
use relaxmatch::corpus::{
    combination_count, generate_synthetic_corpus, sample_sentences, SamplerConfig, SourceSection, StructuredReport,
};
use relaxmatch::metrics::{auroc, bootstrap_ci, BootstrapConfig};
use relaxmatch::relaxed_loss::{info_nce_loss, relaxed_sim, relaxed_sim_derivative, BatchEmbeddings, SimConfig};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($fmt)+));
        }
    };
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

fn gaussian_vec<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    (0..d)
        .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
        .collect()
}

/// Piecewise relaxed similarity written from scratch, sigmoid via `tanh`.
fn oracle_sim(c: f64, t: f64, alpha: f64) -> f64 {
    if c >= t {
        0.5 * (1.0 + (alpha * (c - t) / 2.0).tanh())
    } else if c >= 0.0 {
        c / (2.0 * t)
    } else {
        c
    }
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let c = rng.random_range(-1.0..=1.0);
        let t = rng.random_range(0.01..0.99);
        let alpha = rng.random_range(0.1..50.0);
        let cfg = SimConfig {
            t,
            alpha,
            enabled: true,
        };
        worst = worst.max((relaxed_sim(c, true, &cfg) - oracle_sim(c, t, alpha)).abs());
        ensure!(relaxed_sim(c, false, &cfg) == c, "negative pair altered at c={c}");
    }
    ensure!(worst <= 1e-10, "max deviation from oracle {worst:e}");
    let mut jump = 0.0f64;
    for t in [0.1, 0.3, 0.5, 0.7, 0.9] {
        let cfg = SimConfig {
            t,
            alpha: 10.0,
            enabled: true,
        };
        let eps = 1e-9;
        for knot in [t, 0.0] {
            jump = jump.max((relaxed_sim(knot - eps, true, &cfg) - relaxed_sim(knot + eps, true, &cfg)).abs());
        }
    }
    ensure!(jump < 1e-6, "discontinuity {jump:e} at a knot");
    Ok(format!("oracle max |err| {worst:.1e}, knot jump {jump:.1e}"))
}

fn near_knot(c: f64, cfg: &SimConfig) -> bool {
    (c - cfg.t).abs() < 1e-3 || c.abs() < 1e-3
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn criterion_2() -> Outcome {
    let (n, d, h) = (8, 16, 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    let mut skipped = 0usize;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);
    for _ in 0..50 {
        let cfg = SimConfig {
            t: rng.random_range(0.2..0.8),
            alpha: rng.random_range(1.0..20.0),
            enabled: true,
        };
        let tau = rng.random_range(0.1..1.0);
        let u: Vec<Vec<f64>> = (0..n).map(|_| unit(gaussian_vec(&mut rng, d))).collect();
        // Positives span every branch: mix each image with increasing noise.
        // Some noise is always added so no cosine sits on the clamp at 1.
        let v: Vec<Vec<f64>> = u
            .iter()
            .enumerate()
            .map(|(i, ui)| {
                let w = (i + 1) as f64 / n as f64 * 3.0;
                let noise = gaussian_vec(&mut rng, d);
                unit(
                    ui.iter()
                        .zip(&noise)
                        .map(|(a, b)| a + w * b / (d as f64).sqrt())
                        .collect(),
                )
            })
            .collect();
        let out = info_nce_loss(&BatchEmbeddings::new(u.clone(), v.clone()).unwrap(), tau, &cfg).unwrap();
        let loss = |u: Vec<Vec<f64>>, v: Vec<Vec<f64>>, tau: f64| {
            info_nce_loss(&BatchEmbeddings::from_raw(u, v).unwrap(), tau, &cfg)
                .unwrap()
                .loss
        };
        for i in 0..n {
            if near_knot(dot(&u[i], &v[i]), &cfg) {
                skipped += 2 * d;
                continue;
            }
            for k in 0..d {
                let (mut up, mut um) = (u.clone(), u.clone());
                up[i][k] += h;
                um[i][k] -= h;
                let fd = (loss(up, v.clone(), tau) - loss(um, v.clone(), tau)) / (2.0 * h);
                worst = worst.max(rel(out.grad_u[i][k], fd));
                let (mut vp, mut vm) = (v.clone(), v.clone());
                vp[i][k] += h;
                vm[i][k] -= h;
                let fd = (loss(u.clone(), vp, tau) - loss(u.clone(), vm, tau)) / (2.0 * h);
                worst = worst.max(rel(out.grad_v[i][k], fd));
                checked += 2;
            }
        }
        let fd = (loss(u.clone(), v.clone(), tau + h) - loss(u.clone(), v.clone(), tau - h)) / (2.0 * h);
        worst = worst.max(rel(out.grad_tau, fd));
        checked += 1;
    }
    ensure!(worst < 1e-4, "max relative error {worst:e}");
    Ok(format!(
        "{checked} partials, {skipped} near knots skipped, max rel err {worst:.1e}"
    ))
}

fn reference_info_nce(u: &[Vec<f64>], v: &[Vec<f64>], tau: f64) -> f64 {
    let n = u.len();
    let s = |i: usize, j: usize| (dot(&u[i], &v[j]) / tau).exp();
    let mut total = 0.0;
    for i in 0..n {
        let row: f64 = (0..n).map(|j| s(i, j)).sum();
        let col: f64 = (0..n).map(|j| s(j, i)).sum();
        total -= (s(i, i) / row).ln() + (s(i, i) / col).ln();
    }
    total / (2.0 * n as f64)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=16);
        let d = rng.random_range(2..=32);
        let tau = rng.random_range(0.05..1.0);
        let u: Vec<Vec<f64>> = (0..n).map(|_| unit(gaussian_vec(&mut rng, d))).collect();
        let v: Vec<Vec<f64>> = (0..n).map(|_| unit(gaussian_vec(&mut rng, d))).collect();
        let lib = info_nce_loss(
            &BatchEmbeddings::new(u.clone(), v.clone()).unwrap(),
            tau,
            &SimConfig::disabled(),
        )
        .unwrap()
        .loss;
        worst = worst.max((lib - reference_info_nce(&u, &v, tau)).abs());
    }
    ensure!(worst <= 1e-12, "max |diff| {worst:e}");
    Ok(format!("100 batches, max |diff| {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let on = SimConfig::default();
    let relaxed = relaxed_sim_derivative(1.0, true, &on).map_err(|e| e.to_string())?;
    let plain = relaxed_sim_derivative(1.0, true, &SimConfig::disabled()).map_err(|e| e.to_string())?;
    ensure!(relaxed.abs() < 0.07, "relaxed slope {relaxed}");
    ensure!(plain.abs() >= 0.9, "plain slope {plain}");

    // The same ratio appears in the loss gradient w.r.t. a saturated positive.
    let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let batch = BatchEmbeddings::new(e.clone(), e).unwrap();
    let g_on = info_nce_loss(&batch, 1.0, &on).unwrap().grad_cosine[0];
    let g_off = info_nce_loss(&batch, 1.0, &SimConfig::disabled()).unwrap().grad_cosine[0];
    ensure!(g_on.abs() < g_off.abs(), "loss gradient not damped: {g_on} vs {g_off}");
    Ok(format!(
        "slope {relaxed:.5} vs {plain:.1}; dL/dc11 {g_on:.2e} vs {g_off:.2e}"
    ))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut done = 0;
    while done < 200 {
        let n = rng.random_range(2..=50);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
            continue;
        }
        // Coarse scores guarantee ties.
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..8) as f64 / 4.0).collect();
        let (mut twice_wins, mut pairs) = (0u64, 0u64);
        for i in (0..n).filter(|&i| labels[i]) {
            for j in (0..n).filter(|&j| !labels[j]) {
                pairs += 1;
                twice_wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
        let oracle = twice_wins as f64 / (2 * pairs) as f64;
        let lib = auroc(&scores, &labels).map_err(|e| e.to_string())?;
        ensure!(lib == oracle, "instance {done}: {lib} != {oracle}");
        done += 1;
    }
    Ok("200 tied instances, exact equality".into())
}

fn criterion_6() -> Outcome {
    let c = combination_count(7, 3).map_err(|e| e.to_string())?;
    ensure!(c == 35, "C(7,3) = {c}");
    let reports: Vec<StructuredReport> = (0..1000)
        .map(|r| {
            let sentences = (0..7).map(|k| format!("Report {r} finding {k}.")).collect();
            StructuredReport::from_sentences(format!("r{r}"), sentences, SourceSection::FindingsImpression).unwrap()
        })
        .collect();
    let cfg = SamplerConfig::new(3, 6).map_err(|e| e.to_string())?;
    let mut rng = cfg.rng();
    let mut seen = vec![[false; 7]; reports.len()];
    for _epoch in 0..50 {
        for (report, seen) in reports.iter().zip(seen.iter_mut()) {
            for s in sample_sentences(report, &cfg, &mut rng) {
                let k = report.sentences().iter().position(|x| x == s).unwrap();
                seen[k] = true;
            }
        }
    }
    let covered = seen.iter().flatten().filter(|&&b| b).count();
    ensure!(covered == 7000, "{covered} of 7000 sentences seen");
    Ok("C(7,3) = 35, coverage 7000/7000".into())
}

/// (sampling, relaxation) -> per-seed (macro AUROC, sentence, report).
type CellRuns = BTreeMap<(bool, bool), Vec<(f64, f64, f64)>>;

struct AblationResult {
    runs: CellRuns,
    elapsed: Duration,
}

fn run_ablation() -> Result<AblationResult, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let spec = load_spec(&repo_root().join("configs/spec.json")).map_err(|e| e.to_string())?;
    let cfg = RunConfig::load(&repo_root().join("configs/run.json")).map_err(|e| e.to_string())?;
    let corpus_path = dir.path().join("corpus.jsonl");
    generate_synthetic_corpus(&spec)
        .and_then(|c| c.write_jsonl(fs::File::create(&corpus_path)?))
        .map_err(|e| e.to_string())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    pool.install(|| -> Result<(), String> {
        let corpus = load_corpus(&corpus_path).map_err(|e| e.to_string())?;
        ablate_command(&cfg, &corpus, 3, &dir.path().join("ablation")).map_err(|e| e.to_string())?;
        Ok(())
    })?;
    let elapsed = start.elapsed();
    let mut runs: CellRuns = BTreeMap::new();
    let mut reader =
        csv::Reader::from_path(dir.path().join("ablation/ablation_runs.csv")).map_err(|e| e.to_string())?;
    for row in reader.deserialize::<BTreeMap<String, String>>() {
        let row = row.map_err(|e| e.to_string())?;
        let f = |k: &str| row[k].parse::<f64>().unwrap();
        runs.entry((row["sampling"] == "true", row["relaxation"] == "true"))
            .or_default()
            .push((f("macro_auroc"), f("sentence_alignment"), f("report_alignment")));
    }
    Ok(AblationResult { runs, elapsed })
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn criterion_7(ab: &AblationResult) -> Outcome {
    let on = &ab.runs[&(true, true)];
    let off = &ab.runs[&(false, false)];
    let (m_on, m_off) = (mean(on.iter().map(|r| r.0)), mean(off.iter().map(|r| r.0)));
    let wins = on.iter().zip(off).filter(|(a, b)| a.0 >= b.0).count();
    let minutes = ab.elapsed.as_secs_f64() / 60.0;
    let detail = format!(
        "macro AUROC (on,on) {m_on:.4} vs (off,off) {m_off:.4}, {wins}/3 seeds, grid {:.1} s on 1 thread",
        ab.elapsed.as_secs_f64()
    );
    ensure!(m_on >= m_off, "{detail}");
    ensure!(wins >= 2, "{detail}");
    ensure!(minutes < 30.0, "{detail}");
    Ok(detail)
}

fn criterion_8(ab: &AblationResult) -> Outcome {
    let on = &ab.runs[&(true, true)];
    let off = &ab.runs[&(false, false)];
    let (s_on, s_off) = (mean(on.iter().map(|r| r.1)), mean(off.iter().map(|r| r.1)));
    let (r_on, r_off) = (mean(on.iter().map(|r| r.2)), mean(off.iter().map(|r| r.2)));
    let (gap_on, gap_off) = ((r_on - s_on).abs(), (r_off - s_off).abs());
    let detail =
        format!("sentence {s_on:.3} vs {s_off:.3}, report {r_on:.3} vs {r_off:.3}, gap {gap_on:.3} vs {gap_off:.3}");
    ensure!(s_on > s_off && r_on > r_off, "{detail}");
    ensure!(gap_on <= gap_off, "{detail}");
    Ok(detail)
}

fn without_meta(mut v: Value) -> Value {
    if let Some(obj) = v.as_object_mut() {
        obj.remove("meta");
    }
    v
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |name: &str| dir.path().join(name).display().to_string();
    let bin = env!("CARGO_BIN_EXE_relaxmatch");
    let spec = repo_root().join("configs/spec.json").display().to_string();
    let config = repo_root().join("configs/run.json").display().to_string();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(bin).args(args).output().map_err(|e| e.to_string())?;
        ensure!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        Ok(())
    };
    run(&["gen-corpus", "--spec", &spec, "--out", &p("corpus.jsonl")])?;
    for out in ["a", "b"] {
        run(&[
            "train",
            "--config",
            &config,
            "--corpus",
            &p("corpus.jsonl"),
            "--seed",
            "7",
            "--out",
            &p(out),
        ])?;
    }
    let read = |path: String| fs::read_to_string(path).map_err(|e| e.to_string());
    ensure!(
        read(p("a/history.csv"))? == read(p("b/history.csv"))?,
        "history.csv differs"
    );
    let best = |run: &str| -> Result<Value, String> {
        serde_json::from_str(&read(p(&format!("{run}/best.json")))?).map_err(|e| e.to_string())
    };
    ensure!(
        without_meta(best("a")?) == without_meta(best("b")?),
        "best.json differs"
    );
    Ok("history.csv and best.json identical across two runs".into())
}

fn noisy_scores(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.35)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            let scores = labels
                .iter()
                .map(|&l| f64::from(u8::from(l)) * 0.8 + rng.sample::<f64, _>(rand_distr::StandardNormal))
                .collect();
            return (scores, labels);
        }
    }
}

fn criterion_10() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (s, l) = noisy_scores(&mut rng, 300);
    let cfg = BootstrapConfig {
        seed: 99,
        ..Default::default()
    };
    let a = bootstrap_ci(auroc, &s, &l, &cfg).map_err(|e| e.to_string())?;
    let b = bootstrap_ci(auroc, &s, &l, &cfg).map_err(|e| e.to_string())?;
    ensure!(a == b, "same seed gave {a:?} and {b:?}");

    for trial in 0..100 {
        let n = rng.random_range(60..=400);
        let (s, l) = noisy_scores(&mut rng, n);
        let point = auroc(&s, &l).map_err(|e| e.to_string())?;
        let ci = bootstrap_ci(
            auroc,
            &s,
            &l,
            &BootstrapConfig {
                seed: trial,
                ..Default::default()
            },
        )
        .map_err(|e| e.to_string())?;
        ensure!(
            ci.low <= point && point <= ci.high,
            "trial {trial}: {point} outside [{}, {}]",
            ci.low,
            ci.high
        );
    }

    let (s, l) = noisy_scores(&mut rng, 500);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let start = Instant::now();
    pool.install(|| bootstrap_ci(auroc, &s, &l, &BootstrapConfig::default()))
        .map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "n=500 CI took {secs:.2} s");
    Ok(format!(
        "deterministic, 100/100 bracket the point, n=500 in {secs:.2} s on 1 thread"
    ))
}

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    let (tag, detail, ok) = match outcome {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("[{tag}] criterion {id:>2} {name}: {detail} ({secs:.2} s)");
    ok
}

fn main() {
    let mut results = vec![
        report(1, "relaxed similarity oracle", criterion_1),
        report(2, "gradient fidelity", criterion_2),
        report(3, "baseline equivalence", criterion_3),
        report(4, "saturation", criterion_4),
        report(5, "AUROC oracle", criterion_5),
        report(6, "sampling combinatorics", criterion_6),
    ];
    let ablation = run_ablation();
    match &ablation {
        Ok(ab) => {
            results.push(report(7, "ablation macro AUROC", || criterion_7(ab)));
            results.push(report(8, "ablation alignment", || criterion_8(ab)));
        }
        Err(e) => {
            for (id, name) in [(7, "ablation macro AUROC"), (8, "ablation alignment")] {
                results.push(report(id, name, || Err(format!("ablation failed: {e}"))));
            }
        }
    }
    results.push(report(9, "reproducibility", criterion_9));
    results.push(report(10, "bootstrap", criterion_10));
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
