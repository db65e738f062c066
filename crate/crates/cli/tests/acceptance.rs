//! Acceptance suite. Every criterion runs sequentially inside one test so
//! the reported runtimes are not distorted by parallel tests, and prints one
//! PASS/FAIL line. The test fails if any criterion fails.

use std::path::Path;
use std::time::{Duration, Instant};

use lastraj::commands::{DATA_FILE, KS_FILE};
use lastraj::{run, Command, RunManifest};
use lastraj_core::metrics::{ks_distance, w1_empirical_1d, DiscreteDistribution, EmpiricalSample};
use lastraj_core::sampling::{sample_batch_las, LengthBuckets};
use lastraj_core::theory::{exact_w1_counts, exact_w1_discrete_line, run_sweep, SweepConfig, SweepReport};
use lastraj_nn::gradcheck::{layer_suite, REL_TOL};
use lastraj_nn::gumbel_softmax;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};
use tempfile::TempDir;

struct Outcome {
    pass: bool,
    detail: String,
}

fn criterion(name: &str, limit: Duration, f: impl FnOnce() -> Outcome, results: &mut Vec<(String, bool)>) {
    let t0 = Instant::now();
    let o = f();
    let took = t0.elapsed();
    let pass = o.pass && took <= limit;
    println!(
        "[{}] {name}: {} ({:.1} s, limit {} s)",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        took.as_secs_f64(),
        limit.as_secs()
    );
    results.push((name.to_string(), pass));
}

fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], t: f64| s.iter().filter(|&&v| v <= t).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&t| (cdf(a, t) - cdf(b, t)).abs())
        .fold(0.0, f64::max)
}

/// Minimum total `|a_i - b_pi(i)|` over all permutations, divided by n.
fn brute_matching(a: &[f64], b: &[f64]) -> f64 {
    fn go(i: usize, a: &[f64], b: &[f64], used: &mut [bool], acc: f64, best: &mut f64) {
        if acc >= *best {
            return;
        }
        if i == a.len() {
            *best = acc;
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(i + 1, a, b, used, acc + (a[i] - b[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(0, a, b, &mut vec![false; b.len()], 0.0, &mut best);
    best / a.len() as f64
}

fn sample(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    // Half the samples sit on a coarse grid so ties are common.
    let grid = rng.gen_bool(0.5);
    (0..n)
        .map(|_| {
            if grid {
                rng.gen_range(0..6) as f64
            } else {
                rng.gen_range(-3.0..3.0)
            }
        })
        .collect()
}

fn ks_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut exact = 0;
    for _ in 0..200 {
        let (n, m) = (rng.gen_range(1..=50), rng.gen_range(1..=50));
        let (a, b) = (sample(&mut rng, n), sample(&mut rng, m));
        let got = ks_distance(&EmpiricalSample::new(a.clone()).unwrap(), &EmpiricalSample::new(b.clone()).unwrap());
        exact += (got == brute_ks(&a, &b)) as usize;
    }
    Outcome {
        pass: exact == 200,
        detail: format!("{exact}/200 pairs equal to threshold enumeration"),
    }
}

fn w1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst_1d: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let (a, b) = (sample(&mut rng, n), sample(&mut rng, n));
        let got = w1_empirical_1d(&EmpiricalSample::new(a.clone()).unwrap(), &EmpiricalSample::new(b.clone()).unwrap());
        worst_1d = worst_1d.max((got - brute_matching(&a, &b)).abs());
    }
    let mut worst_line: f64 = 0.0;
    for _ in 0..200 {
        let t_max = rng.gen_range(1..=6);
        let total = rng.gen_range(1..=8u32);
        let mut counts = || {
            let mut c = vec![0u32; t_max + 1];
            for _ in 0..total {
                c[rng.gen_range(0..=t_max)] += 1;
            }
            c
        };
        let (p, q) = (counts(), counts());
        let dist = |c: &[u32]| DiscreteDistribution::from_weights(&c.iter().map(|&v| v as f64).collect::<Vec<_>>()).unwrap();
        let line = exact_w1_discrete_line(&dist(&p), &dist(&q)).unwrap();
        let general = exact_w1_counts(&p, &q, |i, j| i.abs_diff(j) as f64).unwrap();
        worst_line = worst_line.max((line - general).abs());
    }
    Outcome {
        pass: worst_1d <= 1e-9 && worst_line <= 1e-9,
        detail: format!("worst gap {worst_1d:.2e} vs exhaustive matching, {worst_line:.2e} line vs general"),
    }
}

fn sweep(spaces: usize, seed: u64) -> SweepReport {
    run_sweep(&SweepConfig {
        spaces,
        seed,
        ..SweepConfig::default()
    })
    .unwrap()
}

fn tally(report: &SweepReport, checks: &[&str]) -> (bool, String) {
    let s = report.summary();
    let mut ok = report.capacity_errors.is_empty();
    let mut parts = Vec::new();
    for c in checks {
        let (pass, total) = s.get(*c).copied().unwrap_or((0, 0));
        ok &= total > 0 && pass == total;
        parts.push(format!("{c} {pass}/{total}"));
    }
    (ok, parts.join(", "))
}

fn bound_certification() -> Outcome {
    let report = sweep(500, 103);
    let (pass, detail) = tally(&report, &["bound_tot", "bound_avg", "bound_vis"]);
    let min_slack = report
        .rows
        .iter()
        .filter(|r| r.check.starts_with("bound_"))
        .map(|r| r.slack())
        .fold(f64::INFINITY, f64::min);
    Outcome {
        pass,
        detail: format!("{detail}, min slack {min_slack:.3e}"),
    }
}

fn lemma_suite() -> Outcome {
    let report = sweep(200, 104);
    let (pass, detail) = tally(
        &report,
        &[
            "matched_step",
            "length_tail",
            "tail_divergence",
            "nullspace",
            "mixture_tot",
            "mixture_avg",
            "mixture_vis",
            "length_lower_bound",
        ],
    );
    Outcome { pass, detail }
}

fn gradient_checks() -> Outcome {
    let suite = layer_suite(105, 50).unwrap();
    let worst = suite.iter().map(|(_, g)| g.worst).fold(0.0, f64::max);
    let checked: usize = suite.iter().map(|(_, g)| g.checked).sum();
    let skipped: usize = suite.iter().map(|(_, g)| g.skipped).sum();
    Outcome {
        pass: worst <= REL_TOL && suite.iter().all(|(_, g)| g.checked > 0),
        detail: format!(
            "{} layers x 50 configs, {checked} coordinates, worst rel err {worst:.2e}, {skipped} kink skips",
            suite.len()
        ),
    }
}

fn gumbel_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let draws = 100_000usize;
    let mut inside = 0;
    let mut cells = 0;
    for _ in 0..10 {
        let k = rng.gen_range(2..=8);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let mut hits = vec![0usize; k];
        for _ in 0..draws {
            hits[gumbel_softmax(&logits, 1.0, &mut rng).unwrap().hard] += 1;
        }
        for (l, h) in logits.iter().zip(&hits) {
            let p = l.exp() / z;
            let sd = (draws as f64 * p * (1.0 - p)).sqrt();
            inside += ((*h as f64 - draws as f64 * p).abs() <= 3.0 * sd) as usize;
            cells += 1;
        }
    }
    Outcome {
        pass: inside == cells,
        detail: format!("{inside}/{cells} category frequencies within 3 sigma over 10 logit vectors"),
    }
}

fn las_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    let lengths: Vec<usize> = (0..3000)
        .map(|_| if rng.gen_bool(0.5) { rng.gen_range(1..=6) } else { rng.gen_range(20..=50) })
        .collect();
    let buckets = LengthBuckets::from_lengths(&lengths, 10).unwrap();
    let mut mixed = 0;
    for _ in 0..10_000 {
        let b = sample_batch_las(&buckets, 128, &mut rng);
        let k = b.bucket.unwrap();
        mixed += b.indices.iter().any(|&i| buckets.bucket_of_length(lengths[i]) != Some(k)) as usize;
    }
    let draws = 100_000u64;
    let mut hits = vec![0u64; buckets.len()];
    for _ in 0..draws {
        hits[sample_batch_las(&buckets, 1, &mut rng).bucket.unwrap()] += 1;
    }
    let mut inside = 0;
    for (k, &w) in buckets.weights.iter().enumerate() {
        let law = Binomial::new(w, draws).unwrap();
        inside += (law.inverse_cdf(0.0005) <= hits[k] && hits[k] <= law.inverse_cdf(0.9995)) as usize;
    }
    Outcome {
        pass: mixed == 0 && inside == buckets.len(),
        detail: format!(
            "{mixed} mixed batches in 10^4, {inside}/{} bucket counts inside 99.9% binomial intervals",
            buckets.len()
        ),
    }
}

const EXPERIMENT: &str = "
world.seed = 0
world.trajectories = 5000
split.holdout = 0.2
sampler.k_buckets = 10
train.profile = feature_matching
train.epochs = 6
train.batches_per_epoch = 64
train.batch_size = 128
train.lr = 1e-4
model.embed = 16
model.type_embed = 8
model.floor_embed = 4
model.latent = 8
model.hidden = 32
model.disc_hidden = 32
";

fn ks_file(path: &Path) -> (f64, f64, f64) {
    let text = std::fs::read_to_string(path).unwrap();
    let get = |m: &str| {
        text.lines()
            .find_map(|l| l.strip_prefix(&format!("{m},")))
            .and_then(|r| r.split(',').next())
            .unwrap()
            .parse::<f64>()
            .unwrap()
    };
    (get("visit_count"), get("total_time"), get("mean"))
}

fn directional_experiment() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let data = dir.join("data");
    let base = format!(
        "{EXPERIMENT}data.file = {}\n",
        data.join(DATA_FILE).display()
    );
    let cfg = dir.join("world.conf");
    std::fs::write(&cfg, &base).unwrap();
    run(Command::GenData, &cfg, None, &data).unwrap();
    let (mut both, mut mean) = (0, 0);
    let mut lines = Vec::new();
    for seed in 0..5u64 {
        let mut ks = Vec::new();
        for strategy in ["RS", "LAS"] {
            let model = dir.join(format!("{strategy}{seed}"));
            let text = format!(
                "{base}sampler.strategy = {strategy}\ntrain.seed = {seed}\neval.seed = {seed}\neval.model_dir = {}\n",
                model.display()
            );
            let cfg = dir.join(format!("{strategy}{seed}.conf"));
            std::fs::write(&cfg, text).unwrap();
            run(Command::Train, &cfg, None, &model).unwrap();
            let eval = dir.join(format!("{strategy}{seed}-eval"));
            run(Command::Eval, &cfg, None, &eval).unwrap();
            ks.push(ks_file(&eval.join(KS_FILE)));
        }
        let (rs, las) = (ks[0], ks[1]);
        both += (las.0 < rs.0 && las.1 < rs.1) as usize;
        mean += (las.2 < rs.2) as usize;
        lines.push(format!(
            "seed {seed}: visits {:.3}/{:.3} total time {:.3}/{:.3} mean {:.3}/{:.3} (RS/LAS)",
            rs.0, las.0, rs.1, las.1, rs.2, las.2
        ));
    }
    for l in &lines {
        println!("    {l}");
    }
    Outcome {
        pass: both >= 4 && mean >= 3,
        detail: format!("LAS lower on visits and total time in {both}/5 seeds, lower mean KS in {mean}/5"),
    }
}

/// Every output file a run's manifest lists, plus the manifest itself with
/// its timestamps zeroed.
fn run_outputs(out: &Path, c: Command) -> (RunManifest, Vec<Vec<u8>>) {
    let mut m = RunManifest::load(&out.join(RunManifest::file_name(c.name()))).unwrap();
    let files = m.outputs.iter().map(|o| std::fs::read(out.join(&o.path)).unwrap()).collect();
    m.started_at = 0.0;
    m.finished_at = 0.0;
    (m, files)
}

fn determinism() -> Outcome {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let text = format!(
        "world.seed = 5
world.trajectories = 60
world.item_count = 6
world.t_max = 10
world.b_bound = 10
world.regimes = 2:0.5, 7:0.5
data.file = {}
sampler.strategy = LAS
sampler.k_buckets = 3
train.seed = 2
train.profile = feature_matching
train.epochs = 2
train.batches_per_epoch = 2
train.batch_size = 16
model.hidden = 6
model.disc_hidden = 6
eval.model_dir = {}
eval.seed = 1
theory.seed = 3
theory.spaces = 5
",
        dir.join("gen-data-a").join(DATA_FILE).display(),
        dir.join("train-a").display()
    );
    let cfg = dir.join("c.conf");
    std::fs::write(&cfg, text).unwrap();
    let commands = [Command::GenData, Command::Train, Command::Eval, Command::VerifyTheory];
    let mut same = 0;
    for c in commands {
        let (a, b) = (dir.join(format!("{}-a", c.name())), dir.join(format!("{}-b", c.name())));
        run(c, &cfg, None, &a).unwrap();
        run(c, &cfg, None, &b).unwrap();
        let (x, y) = (run_outputs(&a, c), run_outputs(&b, c));
        same += (!x.1.is_empty() && x == y) as usize;
    }
    Outcome {
        pass: same == commands.len(),
        detail: format!("{same}/{} commands byte-identical on rerun", commands.len()),
    }
}

#[test]
fn acceptance() {
    let mut results = Vec::new();
    let s = Duration::from_secs;
    criterion("ks_oracle_equivalence", s(5), ks_oracle, &mut results);
    criterion("w1_oracle_equivalence", s(30), w1_oracle, &mut results);
    criterion("bound_certification", s(120), bound_certification, &mut results);
    criterion("lemma_suite", s(120), lemma_suite, &mut results);
    criterion("gradient_checks", s(60), gradient_checks, &mut results);
    criterion("gumbel_max_fidelity", s(10), gumbel_fidelity, &mut results);
    criterion("las_sampler_contract", s(10), las_contract, &mut results);
    criterion("determinism", s(120), determinism, &mut results);
    criterion("directional_experiment", s(900), directional_experiment, &mut results);
    let failed: Vec<&str> = results.iter().filter(|r| !r.1).map(|r| r.0.as_str()).collect();
    println!("{}/{} criteria pass", results.len() - failed.len(), results.len());
    assert!(failed.is_empty(), "failed: {failed:?}");
}
