//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test
//! fails if any criterion does. Run with `--nocapture` to see the report.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use modelfuse::files::{load_checkpoint, save_checkpoint};
use modelfuse_core::checkpoint::l2_distance;
use modelfuse_core::model::{evaluate, loss_and_grad, mean_loss};
use modelfuse_core::tasks::{make_family, materialize};
use modelfuse_core::train::{finetune, pretrain, TrainConfig};
use modelfuse_core::{
    classify_cell, fuse, fuse_deltas, CellClass, Checkpoint, DType, FusionWeights, ModelConfig,
    Tensor,
};

type Verdict = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)*) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($arg)*));
        }
    };
}

struct Report {
    lines: Vec<String>,
    failed: usize,
}

impl Report {
    fn run(&mut self, id: u32, name: &str, limit: Option<Duration>, f: impl FnOnce() -> Verdict) {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = start.elapsed();
        let verdict = match (verdict, limit) {
            (Ok(_), Some(l)) if took > l => Err(format!("took {took:.1?}, limit {l:?}")),
            (v, _) => v,
        };
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if verdict.is_err() {
            self.failed += 1;
        }
        let line = format!(
            "[{tag}] {id:>2} {name} ({:.1} s): {detail}",
            took.as_secs_f64()
        );
        println!("{line}");
        self.lines.push(line);
    }
}

fn cli(args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_modelfuse"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`modelfuse {}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out)
}

fn read_csv(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| {
            headers
                .iter()
                .zip(rec.unwrap().iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

fn num(row: &BTreeMap<String, String>, key: &str) -> f64 {
    row[key].parse().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// ---------------------------------------------------------------- fixtures

fn random_layout(rng: &mut ChaCha8Rng, f64_only: bool) -> Vec<(String, DType, Vec<usize>)> {
    let n = rng.random_range(1..=4);
    (0..n)
        .map(|i| {
            let rank = rng.random_range(1..=3);
            let shape = (0..rank).map(|_| rng.random_range(1..=4)).collect();
            let dtype = if f64_only || rng.random_bool(0.5) {
                DType::F64
            } else {
                DType::F32
            };
            (format!("t{i}.{}", rng.random_range(0..100)), dtype, shape)
        })
        .collect()
}

fn random_checkpoint(rng: &mut ChaCha8Rng, layout: &[(String, DType, Vec<usize>)]) -> Checkpoint {
    let mut c = Checkpoint::new();
    for (name, dtype, shape) in layout {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        c.insert(
            name.clone(),
            Tensor::new(*dtype, shape.clone(), data).unwrap(),
        )
        .unwrap();
    }
    c
}

fn max_abs_diff(a: &Checkpoint, b: &Checkpoint) -> f64 {
    a.flatten()
        .iter()
        .zip(b.flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------- criteria

fn fusion_algebra() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for set_idx in 0..200 {
        let layout = random_layout(&mut rng, set_idx % 2 == 0);
        let n = rng.random_range(2..=6);
        let models: Vec<Checkpoint> = (0..n)
            .map(|_| random_checkpoint(&mut rng, &layout))
            .collect();
        let refs: Vec<&Checkpoint> = models.iter().collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..3.0)).collect();
        let explicit = FusionWeights::Explicit(weights.clone());

        // n = 1 degenerates to the model itself; copies fuse to themselves.
        let one = fuse(&refs[..1], &FusionWeights::Uniform).map_err(|e| e.to_string())?;
        ensure!(
            one.flatten() == models[0].flatten(),
            "set {set_idx}: n=1 fusion changed the model"
        );
        let copies = vec![&models[0]; n];
        let same = fuse(&copies, &explicit).unwrap();
        ensure!(
            same.flatten() == models[0].flatten(),
            "set {set_idx}: fusion of copies is not idempotent"
        );

        // Convexity bounds.
        let fused = fuse(&refs, &explicit).unwrap();
        let flat: Vec<Vec<f64>> = models.iter().map(Checkpoint::flatten).collect();
        for (i, v) in fused.flatten().iter().enumerate() {
            let lo = flat.iter().map(|m| m[i]).fold(f64::INFINITY, f64::min);
            let hi = flat.iter().map(|m| m[i]).fold(f64::NEG_INFINITY, f64::max);
            ensure!(
                lo <= *v && *v <= hi,
                "set {set_idx}: element {i} outside [{lo}, {hi}]"
            );
        }

        // Permutation invariance (reversal plus a rotation).
        let mut perm: Vec<usize> = (0..n).rev().collect();
        perm.rotate_left(set_idx % n);
        let p_refs: Vec<&Checkpoint> = perm.iter().map(|&i| &models[i]).collect();
        let p_w = FusionWeights::Explicit(perm.iter().map(|&i| weights[i]).collect());
        let permuted = fuse(&p_refs, &p_w).unwrap();
        ensure!(
            max_abs_diff(&fused, &permuted) <= 1e-12,
            "set {set_idx}: not permutation invariant"
        );

        // Base-independence of the delta form.
        let base = random_checkpoint(&mut rng, &layout);
        let via = fuse_deltas(&base, &refs, &explicit).unwrap();
        let d = max_abs_diff(&fused, &via);
        ensure!(d <= 1e-12, "set {set_idx}: fuse_deltas differs by {d:e}");

        // Barycenter minimality of the uniform fusion.
        let center = fuse(&refs, &FusionWeights::Uniform).unwrap();
        let c = center.flatten();
        let cost = |p: &[f64]| -> f64 {
            flat.iter()
                .map(|m| m.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
                .sum()
        };
        let at_center = cost(&c);
        for _ in 0..100 {
            let u: Vec<f64> = (0..c.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let norm = u.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let moved: Vec<f64> = c.iter().zip(&u).map(|(a, b)| a + 1e-3 * b / norm).collect();
            ensure!(
                at_center <= cost(&moved),
                "set {set_idx}: perturbation lowered the summed squared distance"
            );
        }
        for j in 0..n {
            let member: f64 = (0..n)
                .map(|i| l2_distance(&models[j], &models[i]).unwrap().powi(2))
                .sum();
            ensure!(
                at_center <= member * (1.0 + 1e-12),
                "set {set_idx}: member {j} closer than the mean"
            );
        }
    }
    Ok("200 randomized sets".into())
}

fn gradient_oracle() -> Verdict {
    let cases = [
        (
            ModelConfig {
                input_dim: 16,
                hidden_dim: 32,
                num_classes: 4,
            },
            1u64,
            8usize,
        ),
        (
            ModelConfig {
                input_dim: 6,
                hidden_dim: 9,
                num_classes: 3,
            },
            2,
            5,
        ),
        (
            ModelConfig {
                input_dim: 4,
                hidden_dim: 3,
                num_classes: 2,
            },
            3,
            1,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (cfg, seed, batch_size) in cases {
        let mut spec = make_family(modelfuse_core::FamilyKind::General, 2, &[64, 32], seed)
            .unwrap()[0]
            .clone();
        spec.input_dim = cfg.input_dim;
        spec.num_classes = cfg.num_classes;
        let data = materialize(&spec).unwrap();
        let batch = data.train[..batch_size].to_vec();
        let ckpt = cfg.init(seed).scale(3.0).unwrap();
        let (_, grad) = loss_and_grad(&ckpt, &batch).unwrap();
        for (name, t) in ckpt.tensors() {
            for i in 0..t.len() {
                let at = |delta: f64| {
                    let c = ckpt
                        .map_tensors(|n, tt| {
                            let mut v = tt.data().to_vec();
                            if n == name {
                                v[i] += delta;
                            }
                            Ok(v)
                        })
                        .unwrap();
                    loss_and_grad(&c, &batch).unwrap().0
                };
                let numeric = (at(1e-5) - at(-1e-5)) / 2e-5;
                let analytic = grad.get(name).unwrap().data()[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-7);
                worst = worst.max(rel);
            }
        }
    }
    ensure!(worst < 1e-4, "max relative error {worst:e}");
    Ok(format!("3 instances, max relative error {worst:.2e}"))
}

fn format_round_trip(dir: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..100 {
        let layout = random_layout(&mut rng, false);
        let mut c = random_checkpoint(&mut rng, &layout);
        c.set_meta("task_id", format!("task-{i}"));
        let path = dir.join(format!("r{i}.fck"));
        save_checkpoint(&c, &path).map_err(|e| e.to_string())?;
        let back = load_checkpoint(&path).map_err(|e| e.to_string())?;
        ensure!(back == c, "checkpoint {i} changed");
        let bits =
            |c: &Checkpoint| -> Vec<u64> { c.flatten().iter().map(|v| v.to_bits()).collect() };
        ensure!(bits(&back) == bits(&c), "checkpoint {i} not bitwise equal");
        for (name, dtype, shape) in &layout {
            let t = back
                .get(name)
                .ok_or(format!("checkpoint {i} lost {name}"))?;
            ensure!(
                t.dtype() == *dtype && t.shape() == shape.as_slice(),
                "checkpoint {i}: {name} changed layout"
            );
        }
        save_checkpoint(&back, dir.join("again.fck")).unwrap();
        ensure!(
            fs::read(&path).unwrap() == fs::read(dir.join("again.fck")).unwrap(),
            "re-save of {i} differs"
        );
    }

    let good = fs::read(dir.join("r0.fck")).unwrap();
    let mut fixtures: Vec<(&str, Vec<u8>)> = vec![
        ("bad magic", [b"XUSE".as_slice(), &good[4..]].concat()),
        (
            "bad version",
            [&good[..4], 2u32.to_le_bytes().as_slice(), &good[8..]].concat(),
        ),
        ("truncated header", good[..6].to_vec()),
        ("truncated body", good[..good.len() - 3].to_vec()),
        ("trailing bytes", [good.as_slice(), &[0]].concat()),
        ("empty file", Vec::new()),
    ];
    let mut bad_dtype = good.clone();
    bad_dtype[12 + 2 + u16::from_le_bytes([good[12], good[13]]) as usize] = 7;
    fixtures.push(("bad dtype code", bad_dtype));
    for (name, bytes) in fixtures {
        let path = dir.join("corrupt.fck");
        fs::write(&path, bytes).unwrap();
        match load_checkpoint(&path) {
            Err(modelfuse::Error::Core(modelfuse_core::Error::Format(_))) => {}
            other => return Err(format!("{name}: expected a format error, got {other:?}")),
        }
    }
    Ok("100 random checkpoints bitwise; 7 corrupted fixtures rejected".into())
}

/// Per-seed mean accuracy of each base kind in a results CSV.
fn per_seed_means(results: &Path, lambda: f64) -> BTreeMap<String, BTreeMap<u64, f64>> {
    let mut acc: BTreeMap<String, BTreeMap<u64, Vec<f64>>> = BTreeMap::new();
    for row in read_csv(results) {
        if num(&row, "lambda") != lambda {
            continue;
        }
        acc.entry(row["base_kind"].clone())
            .or_default()
            .entry(num(&row, "seed") as u64)
            .or_default()
            .push(num(&row, "accuracy"));
    }
    acc.into_iter()
        .map(|(k, seeds)| {
            (
                k,
                seeds
                    .into_iter()
                    .map(|(s, v)| (s, v.iter().sum::<f64>() / v.len() as f64))
                    .collect(),
            )
        })
        .collect()
}

fn table_row<'a>(
    rows: &'a [BTreeMap<String, String>],
    kind: &str,
    lambda: f64,
) -> Option<&'a BTreeMap<String, String>> {
    rows.iter()
        .find(|r| r["base_kind"] == kind && num(r, "lambda") == lambda)
}

fn run_exp(kind: &str, out: &Path, extra: &[&str]) -> Result<(), String> {
    let mut args = vec![
        "exp",
        kind,
        "--seeds",
        "5",
        "--family",
        "general",
        "--out",
        s(out),
        "--jobs",
        "1",
    ];
    args.extend_from_slice(extra);
    cli(&args).map(|_| ())
}

fn table1_ordering(out: &Path) -> Verdict {
    run_exp("cross", out, &[])?;
    let table = read_csv(&out.join("table.csv"));
    let fuse = num(table_row(&table, "fuse", 0.0).ok_or("no fuse row")?, "mean");
    let pre = num(
        table_row(&table, "pretrain", 0.0).ok_or("no pretrain row")?,
        "mean",
    );
    let seeds = per_seed_means(&out.join("results.csv"), 0.0);
    let wins = seeds["fuse"]
        .iter()
        .filter(|(s, v)| **v > seeds["pretrain"][s])
        .count();
    let detail = format!("fuse {fuse:.4} vs pretrain {pre:.4}; fuse wins {wins}/5 seeds");
    ensure!(fuse > pre && wins >= 4, "{detail}");
    Ok(detail)
}

fn stability(out: &Path) -> Verdict {
    let table = read_csv(&out.join("table.csv"));
    let fuse = num(table_row(&table, "fuse", 0.0).ok_or("no fuse row")?, "std");
    let pre = num(
        table_row(&table, "pretrain", 0.0).ok_or("no pretrain row")?,
        "std",
    );
    let detail = format!("std fuse {fuse:.4} vs pretrain {pre:.4}");
    ensure!(fuse <= pre, "{detail}");
    Ok(detail)
}

fn pairwise(out: &Path) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10_000 {
        let (f, a, b): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let expected = if f > a.max(b) {
            CellClass::Green
        } else if f > (a + b) / 2.0 {
            CellClass::Yellow
        } else if f > a.min(b) {
            CellClass::Red
        } else {
            CellClass::Black
        };
        ensure!(
            classify_cell(f, a, b) == expected,
            "classify_cell({f}, {a}, {b})"
        );
    }

    run_exp("pairs", out, &[])?;
    let cells = read_csv(&out.join("heatmap.csv"));
    let ids: Vec<String> = {
        let mut v: Vec<String> = cells.iter().map(|c| c["row"].clone()).collect();
        v.dedup();
        v
    };
    ensure!(ids.len() == 5, "expected 5 tasks, got {}", ids.len());
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0;
    for c in &cells {
        let (r, k) = (
            ids.iter().position(|i| *i == c["row"]),
            ids.iter().position(|i| *i == c["col"]),
        );
        if r < k {
            total += 1;
            *counts.entry(c["class"].clone()).or_default() += 1;
        }
        let mirror = cells
            .iter()
            .find(|m| m["row"] == c["col"] && m["col"] == c["row"])
            .unwrap();
        ensure!(
            mirror["improvement"] == c["improvement"],
            "heatmap not symmetric"
        );
    }
    let hits = total - counts.get("black").copied().unwrap_or(0);
    let frac = hits as f64 / total as f64;
    let detail = format!("{hits}/{total} pairs red or better ({counts:?})");
    ensure!(frac >= 0.8, "{detail}");
    Ok(detail)
}

fn decay(out: &Path, cross: &Path) -> Verdict {
    run_exp("decay", out, &[])?;
    let norms = read_csv(&out.join("norms.csv"));
    ensure!(
        norms.len() == 25,
        "expected 25 paired runs, got {}",
        norms.len()
    );
    // Per seed, compare the norm of all its source weights taken together.
    // Single runs can stop at different steps under early stopping, which
    // can outweigh the ~1e-5 per-step shrinkage.
    let mut per_seed: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut run_wins = 0;
    for r in &norms {
        let (plain, decayed) = (num(r, "norm_no_decay"), num(r, "norm_decay"));
        let e = per_seed.entry(r["seed"].clone()).or_default();
        e.0 += plain * plain;
        e.1 += decayed * decayed;
        run_wins += usize::from(decayed < plain);
    }
    ensure!(
        per_seed.len() == 5,
        "expected 5 seeds, got {}",
        per_seed.len()
    );
    for (seed, (plain, decayed)) in &per_seed {
        ensure!(
            decayed < plain,
            "seed {seed}: norm {} with decay vs {} without",
            decayed.sqrt(),
            plain.sqrt()
        );
    }
    let table = read_csv(&out.join("table.csv"));
    ensure!(table.len() == 6, "expected 2 x 3 rows, got {}", table.len());
    let mut cells = Vec::new();
    for lambda in [0.0, 0.01] {
        for kind in ["pretrain", "intertrain", "fuse"] {
            let row =
                table_row(&table, kind, lambda).ok_or(format!("missing {kind} at {lambda}"))?;
            ensure!(num(row, "std") >= 0.0, "negative std");
            cells.push(format!("{kind}@{lambda}={:.4}", num(row, "mean")));
        }
    }
    // The decay-free half is the cross-family run, bit for bit.
    let cross_table = read_csv(&cross.join("table.csv"));
    for kind in ["pretrain", "intertrain", "fuse"] {
        let a = table_row(&table, kind, 0.0).unwrap();
        let b = table_row(&cross_table, kind, 0.0).ok_or("cross table missing")?;
        ensure!(
            a["mean"] == b["mean"] && a["std"] == b["std"],
            "{kind} at lambda 0 differs from exp cross"
        );
    }
    Ok(format!(
        "5/5 seeds shrink ({run_wins}/25 single runs); {}",
        cells.join(" ")
    ))
}

fn size_sweep(out: &Path) -> Verdict {
    run_exp("size", out, &["--sizes", "100,400,1600,6400"])?;
    let curve = read_csv(&out.join("curve.csv"));
    let at = |size: &str| {
        curve
            .iter()
            .find(|r| r["base_kind"] == "fuse" && r["source_train_size"] == size)
            .map(|r| num(r, "mean"))
    };
    let (small, large) = (
        at("100").ok_or("no point at 100")?,
        at("6400").ok_or("no point at 6400")?,
    );
    let detail = format!("fuse {small:.4} at 100 vs {large:.4} at 6400");
    ensure!(large > small, "{detail}");
    Ok(detail)
}

fn interpolation(dir: &Path) -> Verdict {
    let specs = make_family(
        modelfuse_core::FamilyKind::SameDomain,
        3,
        &[600, 400, 200],
        9,
    )
    .unwrap();
    let cfg = TrainConfig {
        max_steps: 400,
        ..TrainConfig::default()
    };
    let p = pretrain(&ModelConfig::default(), &cfg, 0).unwrap();
    let a = finetune(&p, &materialize(&specs[0]).unwrap(), &cfg)
        .unwrap()
        .0;
    let b = finetune(&p, &materialize(&specs[1]).unwrap(), &cfg)
        .unwrap()
        .0;
    let (pa, pb, spec) = (dir.join("a.fck"), dir.join("b.fck"), dir.join("task.json"));
    save_checkpoint(&a, &pa).unwrap();
    save_checkpoint(&b, &pb).unwrap();
    modelfuse::files::write_json(&specs[2], &spec).unwrap();
    let val = materialize(&specs[2]).unwrap().val;

    let curve_at =
        |points: usize| -> Result<(Vec<BTreeMap<String, String>>, serde_json::Value), String> {
            let out = dir.join(format!("curve{points}.csv"));
            let p = points.to_string();
            let o = cli(&[
                "interp",
                "--a",
                s(&pa),
                "--b",
                s(&pb),
                "--task-spec",
                s(&spec),
                "--points",
                &p,
                "--out",
                s(&out),
            ])?;
            Ok((
                read_csv(&out),
                serde_json::from_slice(&o.stdout).map_err(|e| e.to_string())?,
            ))
        };

    let (rows, report) = curve_at(21)?;
    let last = rows.len() - 1;
    ensure!(
        num(&rows[0], "loss") == mean_loss(&a, &val).unwrap(),
        "alpha=0 loss differs from a"
    );
    ensure!(
        num(&rows[0], "accuracy") == evaluate(&a, &val).unwrap(),
        "alpha=0 accuracy differs from a"
    );
    ensure!(
        num(&rows[last], "loss") == mean_loss(&b, &val).unwrap(),
        "alpha=1 loss differs from b"
    );
    ensure!(
        num(&rows[last], "accuracy") == evaluate(&b, &val).unwrap(),
        "alpha=1 accuracy differs from b"
    );

    let (mid_rows, _) = curve_at(3)?;
    let mid = fuse(&[&a, &b], &FusionWeights::Uniform).unwrap();
    let dl = (num(&mid_rows[1], "loss") - mean_loss(&mid, &val).unwrap()).abs();
    let da = (num(&mid_rows[1], "accuracy") - evaluate(&mid, &val).unwrap()).abs();
    ensure!(
        dl <= 1e-12 && da <= 1e-12,
        "midpoint off by loss {dl:e}, accuracy {da:e}"
    );

    let losses: Vec<f64> = rows.iter().map(|r| num(r, "loss")).collect();
    let mut bump: f64 = 0.0;
    let mut monotone = true;
    for i in 1..losses.len() {
        bump = bump.max(losses[i] - losses[i - 1]);
        monotone &= losses[i] <= losses[i - 1] + 1e-9;
    }
    ensure!(
        report["monotone_decreasing"] == monotone,
        "monotone flag disagrees with the CSV"
    );
    ensure!(
        report["max_bump"].as_f64() == Some(bump),
        "max_bump {} vs scan {bump}",
        report["max_bump"]
    );
    Ok(format!("endpoints exact, midpoint within 1e-12, report agrees (monotone {monotone}, max bump {bump:.3e})"))
}

fn reproducibility(runs: &[PathBuf], scratch: &Path) -> Verdict {
    let mut checked = 0;
    for (i, first) in runs.iter().enumerate() {
        let manifest = first.join("manifest.json");
        ensure!(manifest.exists(), "{} has no manifest", first.display());
        let kind: serde_json::Value =
            serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
        let kind = kind["run"]["kind"]
            .as_str()
            .ok_or("manifest without experiment kind")?
            .to_string();
        let again = scratch.join(format!("rerun-{i}"));
        let jobs = (2 + i).to_string();
        cli(&[
            "exp",
            &kind,
            "--config",
            s(&manifest),
            "--out",
            s(&again),
            "--jobs",
            &jobs,
        ])?;
        let mut names: Vec<_> = fs::read_dir(first)
            .unwrap()
            .map(|e| e.unwrap().file_name())
            .collect();
        names.sort();
        for name in names {
            let (a, b) = (
                fs::read(first.join(&name)).unwrap(),
                fs::read(again.join(&name)).map_err(|e| e.to_string())?,
            );
            ensure!(
                a == b,
                "{kind}: {} differs on rerun with --jobs {jobs}",
                name.to_string_lossy()
            );
            checked += 1;
        }
    }
    Ok(format!(
        "{} experiments rerun from their manifests, {checked} files byte-identical",
        runs.len()
    ))
}

#[test]
fn acceptance_criteria() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let sub = |name: &str| {
        let p = d.join(name);
        fs::create_dir_all(&p).unwrap();
        p
    };
    let (cross, pairs, decay_dir, size) = (sub("cross"), sub("pairs"), sub("decay"), sub("size"));
    let mut report = Report {
        lines: Vec::new(),
        failed: 0,
    };
    let secs = Duration::from_secs;

    report.run(1, "fusion algebra", Some(secs(30)), fusion_algebra);
    report.run(2, "gradient oracle", Some(secs(10)), gradient_oracle);
    report.run(3, "format round-trip", Some(secs(10)), || {
        format_round_trip(&sub("format"))
    });
    report.run(
        4,
        "fuse beats pretrain (general, 5 seeds)",
        Some(secs(600)),
        || table1_ordering(&cross),
    );
    report.run(5, "fuse std <= pretrain std", None, || stability(&cross));
    report.run(6, "pairwise heatmap", Some(secs(900)), || pairwise(&pairs));
    report.run(7, "weight decay mechanism", None, || {
        decay(&decay_dir, &cross)
    });
    report.run(8, "source-size direction", None, || size_sweep(&size));
    report.run(9, "interpolation identities", None, || {
        interpolation(&sub("interp"))
    });
    report.run(10, "reproducibility from manifest", None, || {
        reproducibility(
            &[
                cross.clone(),
                pairs.clone(),
                decay_dir.clone(),
                size.clone(),
            ],
            d,
        )
    });

    println!("\nacceptance summary:");
    for line in &report.lines {
        println!("{line}");
    }
    assert_eq!(
        report.failed, 0,
        "{} acceptance criteria failed",
        report.failed
    );
}
