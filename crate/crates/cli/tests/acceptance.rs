//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.
//!
//! Criteria 2 to 7 share one run of the default synthetic benchmark, which
//! trains six models from scratch and takes about an hour on one core.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use depth_ood::data::{LABEL_ID, LABEL_OOD};
use depth_ood::experiment::{run_experiment, ExperimentConfig, ExperimentOutput};
use depth_ood::metrics::{auroc, aupr, depth_metrics, fpr_at_tpr, LabeledScores, Positive};
use depth_ood::model::{DepthMap, Image};
use depth_ood::nn::Tensor;
use depth_ood::scoring::{classify, error_map, Method};
use depth_ood::train::{
    depth_loss_grad, l1_mean, l1_mean_grad, laplace_nll, laplace_nll_grad, reconstruction_loss_grad, DepthLoss,
};

type Check = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------------------
// Independent oracles

/// Fraction of (ID, OOD) pairs where the OOD sample scores higher, ties half.
fn pairwise_auroc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != LABEL_ID {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != LABEL_OOD {
                continue;
            }
            pairs += 1.0;
            if sj > si {
                wins += 1.0;
            } else if sj == si {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn distinct_sorted(scores: &[f64]) -> Vec<f64> {
    let mut t = scores.to_vec();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

/// Average precision from a sweep over every distinct threshold: precision
/// at each operating point weighted by the recall gained there.
fn sweep_ap(scores: &[f64], labels: &[u8], positive: u8) -> f64 {
    let mut thresholds = distinct_sorted(scores);
    // ID is predicted by low scores, OOD by high scores.
    let predicted = |s: f64, t: f64| if positive == LABEL_ID { s <= t } else { s >= t };
    if positive == LABEL_OOD {
        thresholds.reverse();
    }
    let n_pos = labels.iter().filter(|&&l| l == positive).count() as f64;
    let (mut ap, mut last_recall) = (0.0, 0.0);
    for t in thresholds {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (&s, &l) in scores.iter().zip(labels) {
            if predicted(s, t) {
                if l == positive {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        let recall = tp / n_pos;
        if tp + fp > 0.0 {
            ap += (recall - last_recall) * tp / (tp + fp);
        }
        last_recall = recall;
    }
    ap
}

/// FPR at the lowest threshold whose ID recall reaches `target`.
fn sweep_fpr(scores: &[f64], labels: &[u8], target: f64) -> f64 {
    let n_id = labels.iter().filter(|&&l| l == LABEL_ID).count() as f64;
    let n_ood = labels.len() as f64 - n_id;
    for t in distinct_sorted(scores) {
        let below = |label| scores.iter().zip(labels).filter(|(&s, &l)| l == label && s <= t).count() as f64;
        if below(LABEL_ID) / n_id >= target {
            return below(LABEL_OOD) / n_ood;
        }
    }
    unreachable!("the highest threshold reaches full recall")
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<u8>) {
    let n = rng.gen_range(2..=200);
    let mut labels: Vec<u8> = (0..n).map(|_| if rng.gen_bool(0.5) { LABEL_ID } else { LABEL_OOD }).collect();
    labels[0] = LABEL_ID;
    labels[1] = LABEL_OOD;
    let levels = rng.gen_range(1..=12);
    let mut scores: Vec<f64> = labels
        .iter()
        .map(|&l| {
            let shift = if l == LABEL_OOD { rng.gen_range(0.0..1.0) } else { 0.0 };
            rng.gen::<f64>() + shift
        })
        .collect();
    match rng.gen_range(0..3) {
        // Quantised scores: heavy ties across both classes.
        0 => scores.iter_mut().for_each(|s| *s = (*s * levels as f64).round() / levels as f64),
        // A few copied values.
        1 => {
            for _ in 0..rng.gen_range(1..=n) {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                scores[a] = scores[b];
            }
        }
        _ => {}
    }
    (scores, labels)
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20240601);
    let mut worst = 0.0f64;
    for k in 0..500 {
        let (scores, labels) = random_instance(&mut rng);
        let ls = LabeledScores::new(scores.clone(), labels.clone()).map_err(|e| e.to_string())?;
        let target = if k % 2 == 0 { 0.95 } else { rng.gen_range(0.01..=1.0) };
        let pairs = [
            ("auroc", auroc(&ls).unwrap(), pairwise_auroc(&scores, &labels)),
            ("auprs", aupr(&ls, Positive::Id).unwrap(), sweep_ap(&scores, &labels, LABEL_ID)),
            ("aupre", aupr(&ls, Positive::Ood).unwrap(), sweep_ap(&scores, &labels, LABEL_OOD)),
            ("fpr", fpr_at_tpr(&ls, target).unwrap(), sweep_fpr(&scores, &labels, target)),
        ];
        for (name, got, want) in pairs {
            let err = (got - want).abs();
            worst = worst.max(err);
            if err > 1e-9 {
                return Err(format!("instance {k} (n={}): {name} {got} vs oracle {want}", scores.len()));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        secs < 10.0,
        format!("500 instances, max |diff| {worst:.1e}, {secs:.2} s (limit 10 s)"),
    )
}

// ---------------------------------------------------------------------------
// Gradient checks

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-12 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
    let (mut up, mut down) = (x.to_vec(), x.to_vec());
    up[i] += h;
    down[i] -= h;
    (f(&up) - f(&down)) / (2.0 * h)
}

fn criterion_8() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut track = |name: &str, k: usize, analytic: &[f64], numeric: Vec<f64>| -> Result<(), String> {
        for (a, n) in analytic.iter().zip(&numeric) {
            let e = rel_err(*a, *n);
            worst = worst.max(e);
            if e > 1e-4 {
                return Err(format!("{name} instance {k}: analytic {a} vs numeric {n}"));
            }
        }
        Ok(())
    };
    // Inputs are drawn as f32 so the tensor-level losses see exactly the
    // values the f64 kernels are checked on.
    let draw = |rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32| -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(lo..hi)).collect()
    };
    let wide = |v: &[f32]| -> Vec<f64> { v.iter().map(|&x| x as f64).collect() };
    let same = |name: &str, k: usize, tensor: &Tensor, kernel: &[f64]| -> Result<(), String> {
        if tensor.data.iter().zip(kernel).any(|(a, b)| rel_err(*a as f64, *b) > 1e-6) {
            return Err(format!("{name} instance {k}: tensor gradient differs from the f64 kernel"));
        }
        Ok(())
    };
    for k in 0..20 {
        // Reconstruction: 3 x 4 x 4 image against a reconstruction.
        let (x32, r32) = (draw(&mut rng, 48, 0.0, 1.0), draw(&mut rng, 48, -0.5, 1.5));
        let (x, r) = (wide(&x32), wide(&r32));
        let analytic = l1_mean_grad(&r, &x);
        let numeric = (0..48).map(|i| central_difference(|p| l1_mean(p, &x), &r, i, h)).collect();
        track("reconstruction", k, &analytic, numeric)?;
        let img = Image::new(Tensor::from_vec(3, 4, 4, x32)).unwrap();
        let (_, g) = reconstruction_loss_grad(&Tensor::from_vec(3, 4, 4, r32), &img).map_err(|e| e.to_string())?;
        same("reconstruction", k, &g, &analytic)?;

        // Plain depth loss on a 4 x 4 map.
        let (t32, p32) = (draw(&mut rng, 16, 0.5, 10.0), draw(&mut rng, 16, 0.5, 10.0));
        let (t, p) = (wide(&t32), wide(&p32));
        let analytic = l1_mean_grad(&p, &t);
        let numeric = (0..16).map(|i| central_difference(|q| l1_mean(q, &t), &p, i, h)).collect();
        track("plain depth", k, &analytic, numeric)?;
        let target = DepthMap::from_values(4, 4, t32).unwrap();
        let pt = Tensor::from_vec(1, 4, 4, p32);
        let g = depth_loss_grad(&pt, &target, DepthLoss::L1).map_err(|e| e.to_string())?;
        same("plain depth", k, &g.pred, &analytic)?;

        // Laplace NLL: gradients in both the prediction and the scale.
        let b32 = draw(&mut rng, 16, 0.05, 3.0);
        let b = wide(&b32);
        let (gp, gb) = laplace_nll_grad(&p, &t, &b);
        let numeric = (0..16).map(|i| central_difference(|q| laplace_nll(q, &t, &b), &p, i, h)).collect();
        track("laplace (prediction)", k, &gp, numeric)?;
        let numeric = (0..16).map(|i| central_difference(|s| laplace_nll(&p, &t, s), &b, i, h)).collect();
        track("laplace (scale)", k, &gb, numeric)?;
        let scale = Tensor::from_vec(1, 4, 4, b32);
        let g = depth_loss_grad(&pt, &target, DepthLoss::Laplace { scale: &scale }).map_err(|e| e.to_string())?;
        same("laplace (prediction)", k, &g.pred, &gp)?;
        same("laplace (scale)", k, g.scale.as_ref().ok_or("no scale gradient")?, &gb)?;
    }
    Ok(format!(
        "20 instances x 3 losses, max relative error {worst:.1e} (limit 1e-4); tensor losses match the kernels"
    ))
}

// ---------------------------------------------------------------------------
// Identities

fn criterion_10() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let d = DepthMap::from_values(4, 4, (0..16).map(|_| rng.gen_range(0.1..10.0)).collect()).unwrap();
    let m = depth_metrics(&d, &d).map_err(|e| e.to_string())?;
    if (m.abs_rel, m.rmse, m.delta1) != (0.0, 0.0, 1.0) {
        return Err(format!("depth_metrics(d, d) = {m:?}"));
    }
    let x = Image::from_fn(4, 4, |_, _| [rng.gen(), rng.gen(), rng.gen()]);
    let e = error_map(&x, x.tensor()).map_err(|e| e.to_string())?;
    if e.values().iter().any(|&v| v != 0.0) {
        return Err("error_map(x, x) is not all zero".into());
    }
    for tau in [0.0, 0.37, 5.0] {
        if classify(tau, tau) != LABEL_ID {
            return Err(format!("classify({tau}, {tau}) != 1"));
        }
    }
    Ok("depth_metrics(d,d)=(0,0,1), error_map(x,x)=0, classify(tau,tau)=1".into())
}

// ---------------------------------------------------------------------------
// Determinism through the binary

const DETERMINISM_CONFIG: &str = "\
seed = 7
dataset.train_size = 48
dataset.test_size = 16
dataset.ood_size = 12
model.height = 32
model.width = 32
train.epochs = 2
train.batch_size = 8
train.lr = 0.001
eval.ood_cap = 10
eval.dropout_passes = 4
eval.samples = 1
";

fn strip_timestamp(json: &str) -> String {
    json.lines()
        .filter(|l| !l.trim_start().starts_with("\"timestamp\""))
        .collect::<Vec<_>>()
        .join("\n")
}

fn evaluate_once(root: &Path, config: &Path, name: &str) -> Result<String, String> {
    let out = root.join(name);
    let status = Command::new(env!("CARGO_BIN_EXE_depth-ood"))
        .env("DEPTH_OOD_OUTPUT", &out)
        .args(["evaluate", "--config"])
        .arg(config)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    std::fs::read_to_string(out.join("report.json")).map_err(|e| e.to_string())
}

fn criterion_9() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("determinism.cfg");
    std::fs::write(&config, DETERMINISM_CONFIG).map_err(|e| e.to_string())?;
    let a = evaluate_once(dir.path(), &config, "a")?;
    let b = evaluate_once(dir.path(), &config, "b")?;
    let cells: usize = serde_json::from_str::<serde_json::Value>(&a)
        .map_err(|e| e.to_string())?["ood"]
        .as_object()
        .map(|m| m.values().map(|v| v.as_object().map_or(0, |s| s.len())).sum())
        .unwrap_or(0);
    ensure(
        strip_timestamp(&a) == strip_timestamp(&b),
        format!("two `evaluate` runs, all 6 methods, {cells} method x set cells, report.json identical apart from timestamp"),
    )
}

// ---------------------------------------------------------------------------
// Default benchmark

fn benchmark_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-benchmark")
}

fn run_benchmark() -> Result<(ExperimentOutput, f64), String> {
    let dir = benchmark_dir();
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| e.to_string())?;
    }
    let start = Instant::now();
    let cfg = ExperimentConfig::default();
    let out = run_experiment(&cfg, Some(&dir)).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed().as_secs_f64() / 60.0))
}

const VARIANTS: [&str; 3] = ["palette-shift", "texture-noise", "shape-family"];

fn auroc_of(out: &ExperimentOutput, m: Method, set: &str) -> Result<f64, String> {
    out.report
        .metrics(m, set)
        .map(|x| x.auroc)
        .ok_or_else(|| format!("report has no {m} / {set} cell"))
}

fn mean_auroc(out: &ExperimentOutput, m: Method) -> Result<f64, String> {
    let mut total = 0.0;
    for v in VARIANTS {
        total += auroc_of(out, m, v)?;
    }
    Ok(total / VARIANTS.len() as f64)
}

fn criterion_2(out: &ExperimentOutput) -> Check {
    let before = out.models.logs.get("depth").ok_or("no depth training log")?;
    let after = out.models.logs.get("decoder").ok_or("no decoder training log")?;
    let depth = out.models.depth().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for (key, now) in [("encoder", depth.encoder_digest()), ("depth_decoder", depth.decoder_digest())] {
        let pre = &before.digests[key];
        let post = &after.digests[key];
        if pre != post || *pre != now {
            return Err(format!("{key} digest changed: {pre} -> {post}"));
        }
        lines.push(format!("{key} {}", &pre.to_string()[..12]));
    }
    Ok(format!("digests unchanged by decoder training ({})", lines.join(", ")))
}

fn criterion_3(out: &ExperimentOutput, minutes: f64) -> Check {
    let ps = out.report.metrics(Method::Ours, "palette-shift").ok_or("missing palette-shift")?;
    let tn = auroc_of(out, Method::Ours, "texture-noise")?;
    let sf = auroc_of(out, Method::Ours, "shape-family")?;
    ensure(
        ps.auroc >= 0.90 && tn >= 0.90 && sf >= 0.75 && ps.fpr95 <= 0.40,
        format!(
            "AUROC palette-shift {:.4} (>=0.90), texture-noise {tn:.4} (>=0.90), shape-family {sf:.4} (>=0.75); \
             FPR95 palette-shift {:.4} (<=0.40); benchmark wall time {minutes:.1} min",
            ps.auroc, ps.fpr95
        ),
    )
}

fn criterion_4(out: &ExperimentOutput) -> Check {
    let ours = mean_auroc(out, Method::Ours)?;
    let mut parts = vec![format!("ours {ours:.4}")];
    let mut ok = true;
    for m in [Method::Post, Method::Log, Method::Drop] {
        let b = mean_auroc(out, m)?;
        ok &= ours > b;
        parts.push(format!("{m} {b:.4}"));
    }
    ensure(ok, format!("mean AUROC {}", parts.join(", ")))
}

fn criterion_5(out: &ExperimentOutput) -> Check {
    let ours = mean_auroc(out, Method::Ours)?;
    let ae = mean_auroc(out, Method::Ae)?;
    ensure(
        ours - ae >= 0.10,
        format!("mean AUROC ours {ours:.4}, ae {ae:.4}, gap {:.4} (>=0.10)", ours - ae),
    )
}

fn criterion_6(out: &ExperimentOutput) -> Check {
    let plain = out.report.depth.get("id").ok_or("no ID depth metrics")?.abs_rel;
    let sim = out.report.depth.get("sim/id").ok_or("no joint-model depth metrics")?.abs_rel;
    ensure(sim > plain, format!("ID AbsRel plain {plain:.5}, joint {sim:.5} (joint must be worse)"))
}

fn criterion_7(out: &ExperimentOutput) -> Check {
    let id = out.report.depth.get("id").ok_or("no ID depth metrics")?.abs_rel;
    let ps = out.report.depth.get("palette-shift").ok_or("no palette-shift depth metrics")?.abs_rel;
    ensure(
        ps >= 1.5 * id,
        format!("AbsRel ID {id:.4}, palette-shift {ps:.4}, ratio {:.2} (>=1.5)", ps / id),
    )
}

// Further properties of the same benchmark run, reported after the criteria.

fn check_id_abs_rel(out: &ExperimentOutput) -> Check {
    let id = out.report.depth.get("id").ok_or("no ID depth metrics")?.abs_rel;
    ensure(id < 0.15, format!("plain model ID AbsRel {id:.4} (<0.15)"))
}

fn check_loss_descent(out: &ExperimentOutput) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for (harness, log) in &out.models.logs {
        ok &= log.final_loss() < log.first_loss();
        parts.push(format!("{harness} {:.4}->{:.4}", log.first_loss(), log.final_loss()));
    }
    ensure(ok && out.models.logs.len() == 6, parts.join(", "))
}

fn check_palette_best(out: &ExperimentOutput) -> Check {
    let ours = auroc_of(out, Method::Ours, "palette-shift")?;
    let mut parts = vec![format!("ours {ours:.4}")];
    let mut ok = true;
    for m in [Method::Post, Method::Log, Method::Drop] {
        let b = auroc_of(out, m, "palette-shift")?;
        ok &= ours > b;
        parts.push(format!("{m} {b:.4}"));
    }
    ensure(ok, format!("palette-shift AUROC {}", parts.join(", ")))
}

fn check_mean_scores(out: &ExperimentOutput) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    for v in VARIANTS {
        let recs = out.records.get(v).ok_or_else(|| format!("no records for {v}"))?;
        let mean = |label| {
            let s: Vec<f64> = recs
                .iter()
                .filter(|r| r.method == Method::Ours && r.label == label)
                .map(|r| r.score)
                .collect();
            s.iter().sum::<f64>() / s.len() as f64
        };
        let (id, ood) = (mean(LABEL_ID), mean(LABEL_OOD));
        ok &= id < ood;
        parts.push(format!("{v} {id:.4}<{ood:.4}"));
    }
    ensure(ok, format!("mean reconstruction score ID < OOD: {}", parts.join(", ")))
}

// ---------------------------------------------------------------------------

fn run_check(id: u32, name: &str, f: impl FnOnce() -> Check) -> bool {
    run_labeled(&format!("criterion {id:>2}"), name, f)
}

fn run_labeled(label: &str, name: &str, f: impl FnOnce() -> Check) -> bool {
    let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail, ok) = match result {
        Ok(d) => ("PASS", d, true),
        Err(d) => ("FAIL", d, false),
    };
    println!("{tag} {label} [{name}]: {detail}");
    ok
}

fn main() {
    // `cargo test -- <filter>` passes arguments; a filter that names no
    // acceptance criterion skips the suite.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return;
    }
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }

    let mut ok = true;
    ok &= run_check(1, "metric oracles", criterion_1);
    ok &= run_check(8, "gradient checks", criterion_8);
    ok &= run_check(10, "metric identities", criterion_10);
    ok &= run_check(9, "determinism", criterion_9);

    println!("running the default synthetic benchmark (trains six models)...");
    match catch_unwind(run_benchmark) {
        Ok(Ok((out, minutes))) => {
            ok &= run_check(2, "frozen encoder", || criterion_2(&out));
            ok &= run_check(3, "separation", || criterion_3(&out, minutes));
            ok &= run_check(4, "baseline ordering", || criterion_4(&out));
            ok &= run_check(5, "autoencoder ablation", || criterion_5(&out));
            ok &= run_check(6, "joint training degrades depth", || criterion_6(&out));
            ok &= run_check(7, "depth degrades on OOD", || criterion_7(&out));
            ok &= run_labeled("check", "ID depth quality", || check_id_abs_rel(&out));
            ok &= run_labeled("check", "training loss descends", || check_loss_descent(&out));
            ok &= run_labeled("check", "ours best on palette-shift", || check_palette_best(&out));
            ok &= run_labeled("check", "ID scores below OOD scores", || check_mean_scores(&out));
            println!("benchmark artifacts: {}", benchmark_dir().display());
        }
        failure => {
            let msg = match failure {
                Ok(Err(e)) => e,
                _ => "benchmark panicked".into(),
            };
            for (id, name) in [
                (2, "frozen encoder"),
                (3, "separation"),
                (4, "baseline ordering"),
                (5, "autoencoder ablation"),
                (6, "joint training degrades depth"),
                (7, "depth degrades on OOD"),
            ] {
                ok &= run_check(id, name, || Err(format!("benchmark failed: {msg}")));
            }
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
