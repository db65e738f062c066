use std::fs::File;
use std::path::{Path, PathBuf};

use lastraj_core::metrics::derived_report;
use lastraj_core::sampling::{BucketWeighting, SamplerConfig, Strategy};
use lastraj_core::synthworld::{build_world, LengthRegime, WorldConfig};
use lastraj_core::theory::sweep::{run_sweep, SweepConfig};
use lastraj_core::theory::{SpaceParams, CERT_TOL};
use lastraj_core::trajectory::{load_dataset, write_dataset, DatasetHeader, DerivedVariable, TrajectoryDataset};
use lastraj_nn::{GeneratorParams, ModelDims, ParamSet, StoreFeatures, Tensor};
use lastraj_train::{
    default_anneal, sample_trajectories, train, LossProfile, ModelWidths, ProfileKind, TrainError, TrainerConfig,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::Config;
use crate::manifest::{now, sha256_file, write_output, OutputRecord, RunManifest};
use crate::{CliError, Command, Result};

pub const DATA_FILE: &str = "trajectories.jsonl";
pub const WORLD_FILE: &str = "world.json";
pub const GEN_CKPT: &str = "generator.ckpt";
pub const DISC_CKPT: &str = "discriminator.ckpt";
pub const GEN_LAYOUT: &str = "generator.layout";
pub const DISC_LAYOUT: &str = "discriminator.layout";
pub const HISTORY_FILE: &str = "history.csv";
pub const FEATURES_FILE: &str = "store_features.json";
pub const MODEL_FILE: &str = "model.json";
pub const NAN_DUMP: &str = "nan_dump.txt";
pub const KS_FILE: &str = "ks_report.csv";
pub const CERT_FILE: &str = "certification.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

struct Run {
    command: Command,
    started_at: f64,
    outputs: Vec<OutputRecord>,
}

impl Run {
    fn start(command: Command) -> Self {
        Run {
            command,
            started_at: now(),
            outputs: Vec::new(),
        }
    }

    fn finish(self, cfg: &Config, seed: u64, out: &Path) -> Result<RunManifest> {
        let m = RunManifest {
            command: self.command.name().to_string(),
            config: cfg.resolved().clone(),
            seed,
            started_at: self.started_at,
            finished_at: now(),
            outputs: self.outputs,
        };
        m.write(out)?;
        Ok(m)
    }
}

fn parse_regimes(s: &str) -> Result<Vec<LengthRegime>> {
    s.split(',')
        .map(|r| {
            let parts: Vec<&str> = r.trim().split(':').map(str::trim).collect();
            let num = |x: &str| {
                x.parse::<f64>()
                    .map_err(|_| CliError::Config(format!("invalid value '{r}' for key 'world.regimes'")))
            };
            match parts.as_slice() {
                [m, w] => Ok(LengthRegime {
                    mean: num(m)?,
                    weight: num(w)?,
                    dwell_factor: 1.0,
                }),
                [m, w, d] => Ok(LengthRegime {
                    mean: num(m)?,
                    weight: num(w)?,
                    dwell_factor: num(d)?,
                }),
                _ => Err(CliError::Config(format!(
                    "world.regimes entries are `mean:weight[:dwell_factor]`, got '{r}'"
                ))),
            }
        })
        .collect()
}

fn world_config(cfg: &mut Config) -> Result<WorldConfig> {
    let d = WorldConfig::default();
    let default_regimes: Vec<String> = d
        .regimes
        .iter()
        .map(|r| format!("{}:{}:{}", r.mean, r.weight, r.dwell_factor))
        .collect();
    let regimes: String = cfg.opt("world.regimes", default_regimes.join(", "))?;
    let wc = WorldConfig {
        item_count: cfg.opt("world.item_count", d.item_count)?,
        floors: cfg.opt("world.floors", d.floors)?,
        categories: cfg.opt("world.categories", d.categories)?,
        regimes: parse_regimes(&regimes)?,
        dwell_scales: cfg.list("world.dwell_scales", &d.dwell_scales)?,
        t_max: cfg.opt("world.t_max", d.t_max)?,
        b_bound: cfg.opt("world.b_bound", d.b_bound)?,
        context_width: cfg.opt("world.context_width", d.context_width)?,
        context_signal: cfg.opt("world.context_signal", d.context_signal)?,
        length_spread: cfg.opt("world.length_spread", d.length_spread)?,
        seed: cfg.req("world.seed")?,
    };
    wc.validate()?;
    Ok(wc)
}

pub fn cmd_gen_data(cfg: &mut Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(Command::GenData);
    let wc = world_config(cfg)?;
    let n: usize = cfg.req("world.trajectories")?;
    let mut rng = ChaCha8Rng::seed_from_u64(wc.seed);
    let world = build_world(&wc, &mut rng)?;
    let ds = world.generate_dataset(n, &mut rng)?;
    let mut buf = Vec::new();
    write_dataset(&ds, &mut buf).map_err(|e| CliError::io(&out.join(DATA_FILE), e))?;
    run.outputs.push(write_output(out, DATA_FILE, &buf)?);
    let sidecar = serde_json::to_string_pretty(&wc).expect("world config serializes") + "\n";
    run.outputs.push(write_output(out, WORLD_FILE, sidecar.as_bytes())?);
    run.finish(cfg, wc.seed, out)
}

/// Held-out split: the last `holdout` fraction by file order, after an
/// optional seeded shuffle.
fn split(cfg: &mut Config, ds: &TrajectoryDataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let holdout: f64 = cfg.opt("split.holdout", 0.2)?;
    if !(0.0..=1.0).contains(&holdout) {
        return Err(CliError::Config("split.holdout must lie in [0, 1]".into()));
    }
    let shuffle: bool = cfg.opt("split.shuffle", false)?;
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    if shuffle {
        let seed: u64 = cfg.opt("split.seed", 0)?;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let n_hold = (holdout * ds.len() as f64).round() as usize;
    let test = idx.split_off(ds.len() - n_hold);
    Ok((idx, test))
}

fn load_data(cfg: &mut Config) -> Result<TrajectoryDataset> {
    let file: PathBuf = cfg.req("data.file")?;
    Ok(load_dataset(&file, &DatasetHeader::default())?)
}

fn trainer_config(cfg: &mut Config) -> Result<(TrainerConfig, LossProfile)> {
    let d = TrainerConfig::default();
    let w = ModelWidths::default();
    let epochs: usize = cfg.opt("train.epochs", d.epochs)?;
    let tau_init: f64 = cfg.opt("train.tau_init", d.tau_init)?;
    let tau_min: f64 = cfg.opt("train.tau_min", d.tau_min)?;
    let bpe: usize = cfg.opt("train.batches_per_epoch", 0)?;
    let tc = TrainerConfig {
        epochs,
        patience: cfg.opt("train.patience", d.patience)?,
        batch_size: cfg.opt("train.batch_size", d.batch_size)?,
        batches_per_epoch: (bpe > 0).then_some(bpe),
        lr: cfg.opt("train.lr", d.lr)?,
        beta1: cfg.opt("train.beta1", d.beta1)?,
        beta2: cfg.opt("train.beta2", d.beta2)?,
        tau_init,
        tau_min,
        anneal: cfg.opt("train.anneal", default_anneal(tau_init, tau_min, epochs.max(1)))?,
        seed: cfg.req("train.seed")?,
        spectral_iters: cfg.opt("train.spectral_iters", d.spectral_iters)?,
        straight_through: cfg.opt("train.straight_through", d.straight_through)?,
        model: ModelWidths {
            embed: cfg.opt("model.embed", w.embed)?,
            type_embed: cfg.opt("model.type_embed", w.type_embed)?,
            floor_embed: cfg.opt("model.floor_embed", w.floor_embed)?,
            latent: cfg.opt("model.latent", w.latent)?,
            hidden: cfg.opt("model.hidden", w.hidden)?,
            disc_hidden: cfg.opt("model.disc_hidden", w.disc_hidden)?,
        },
    };
    tc.validate()?;
    let kind: String = cfg.req("train.profile")?;
    let kind: ProfileKind = kind.parse()?;
    let default_lambda = if kind == ProfileKind::TimeAligned { 1.0 } else { 0.0 };
    let profile = LossProfile::new(kind, cfg.opt("train.lambda_time", default_lambda)?)?;
    Ok((tc, profile))
}

/// The trainer draws batches of `train.batch_size`; `sampler.batch_size`
/// may only restate it.
fn sampler_config(cfg: &mut Config, train_seed: u64, batch_size: usize) -> Result<SamplerConfig> {
    let d = SamplerConfig::default();
    let strategy: String = cfg.req("sampler.strategy")?;
    let weighting: String = cfg.opt("sampler.weighting", "empirical".to_string())?;
    let weighting = match weighting.as_str() {
        "empirical" => BucketWeighting::Empirical,
        "uniform" => BucketWeighting::Uniform,
        other => return Err(CliError::Config(format!("unknown sampler.weighting '{other}'"))),
    };
    let sc = SamplerConfig {
        strategy: strategy.parse::<Strategy>()?,
        k_buckets: cfg.opt("sampler.k_buckets", d.k_buckets)?,
        batch_size: cfg.opt("sampler.batch_size", batch_size)?,
        seed: cfg.opt("sampler.seed", train_seed.wrapping_add(1000))?,
        weighting,
    };
    if sc.batch_size != batch_size {
        return Err(CliError::Config(format!(
            "sampler.batch_size = {} disagrees with train.batch_size = {batch_size}",
            sc.batch_size
        )));
    }
    sc.validate()?;
    Ok(sc)
}

fn tensor_json(t: &Tensor) -> serde_json::Value {
    json!({ "rows": t.rows, "cols": t.cols, "data": t.data })
}

fn tensor_from_json(v: &serde_json::Value) -> Option<Tensor> {
    let rows = v.get("rows")?.as_u64()? as usize;
    let cols = v.get("cols")?.as_u64()? as usize;
    let data: Vec<f64> = serde_json::from_value(v.get("data")?.clone()).ok()?;
    Tensor::new(rows, cols, data).ok()
}

fn dims_json(d: &ModelDims) -> serde_json::Value {
    json!({
        "item_count": d.item_count,
        "categories": d.categories,
        "floors": d.floors,
        "neighbor_width": d.neighbor_width,
        "context_width": d.context_width,
        "embed": d.embed,
        "type_embed": d.type_embed,
        "floor_embed": d.floor_embed,
        "latent": d.latent,
        "hidden": d.hidden,
        "disc_hidden": d.disc_hidden,
    })
}

fn dims_from_json(v: &serde_json::Value) -> Option<ModelDims> {
    let f = |k: &str| v.get(k).and_then(|x| x.as_u64()).map(|x| x as usize);
    Some(ModelDims {
        item_count: f("item_count")?,
        categories: f("categories")?,
        floors: f("floors")?,
        neighbor_width: f("neighbor_width")?,
        context_width: f("context_width")?,
        embed: f("embed")?,
        type_embed: f("type_embed")?,
        floor_embed: f("floor_embed")?,
        latent: f("latent")?,
        hidden: f("hidden")?,
        disc_hidden: f("disc_hidden")?,
    })
}

/// Serialized form of everything besides the checkpoint needed to sample
/// from a trained generator.
pub fn model_files(
    dims: &ModelDims,
    t_max: usize,
    b_bound: f64,
    feats: &StoreFeatures,
) -> (String, String) {
    let model = json!({ "dims": dims_json(dims), "t_max": t_max, "b_bound": b_bound });
    let features = json!({
        "categories": feats.categories,
        "floors": feats.floors,
        "neighbor": tensor_json(&feats.neighbor),
    });
    (
        serde_json::to_string_pretty(&model).expect("json") + "\n",
        serde_json::to_string_pretty(&features).expect("json") + "\n",
    )
}

fn checkpoint_bytes(ps: &ParamSet) -> Vec<u8> {
    let mut buf = Vec::new();
    ps.write_checkpoint(&mut buf).expect("writing to memory");
    buf
}

/// Writes the generator checkpoint and sidecars, as `train` does. Returns
/// the output records in write order.
pub fn write_generator(
    out: &Path,
    gen: &GeneratorParams,
    t_max: usize,
    b_bound: f64,
    feats: &StoreFeatures,
) -> Result<Vec<OutputRecord>> {
    let (model, features) = model_files(&gen.dims, t_max, b_bound, feats);
    Ok(vec![
        write_output(out, GEN_CKPT, &checkpoint_bytes(&gen.params))?,
        write_output(out, GEN_LAYOUT, gen.params.manifest().as_bytes())?,
        write_output(out, FEATURES_FILE, features.as_bytes())?,
        write_output(out, MODEL_FILE, model.as_bytes())?,
    ])
}

pub fn cmd_train(cfg: &mut Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(Command::Train);
    let ds = load_data(cfg)?;
    let (train_idx, _) = split(cfg, &ds)?;
    if train_idx.is_empty() {
        return Err(CliError::Config("split leaves no training trajectories".into()));
    }
    let train_ds = ds.subset(&train_idx)?;
    let (tc, profile) = trainer_config(cfg)?;
    let sc = sampler_config(cfg, tc.seed, tc.batch_size)?;
    let trained = match train(&train_ds, &sc, &tc, profile) {
        Ok(t) => t,
        Err(TrainError::NumericalAbort(diag)) => {
            run.outputs.push(write_output(out, NAN_DUMP, diag.to_text().as_bytes())?);
            run.finish(cfg, tc.seed, out)?;
            return Err(CliError::NumericalAbort {
                dump: out.join(NAN_DUMP),
            });
        }
        Err(e) => return Err(e.into()),
    };
    run.outputs.extend(write_generator(
        out,
        &trained.gen,
        ds.meta.t_max,
        ds.meta.b_bound,
        &trained.feats,
    )?);
    run.outputs.push(write_output(out, DISC_CKPT, &checkpoint_bytes(&trained.disc.params))?);
    run.outputs.push(write_output(out, DISC_LAYOUT, trained.disc.params.manifest().as_bytes())?);
    let mut hist = Vec::new();
    trained.history.write_csv(&mut hist).expect("writing to memory");
    run.outputs.push(write_output(out, HISTORY_FILE, &hist)?);
    run.finish(cfg, tc.seed, out)
}

fn read_json(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| CliError::Integrity(format!("{}: {e}", path.display())))
}

struct LoadedModel {
    gen: GeneratorParams,
    feats: StoreFeatures,
    t_max: usize,
    b_bound: f64,
    tau_min: Option<f64>,
}

/// Loads a trained generator after checking every file against the train
/// manifest.
fn load_model(dir: &Path) -> Result<LoadedModel> {
    let manifest = RunManifest::load(&dir.join(RunManifest::file_name(Command::Train.name())))?;
    for name in [GEN_CKPT, FEATURES_FILE, MODEL_FILE] {
        let rec = manifest
            .output(name)
            .ok_or_else(|| CliError::Integrity(format!("train manifest does not list {name}")))?;
        let actual = sha256_file(&dir.join(name))?;
        if actual != rec.sha256 {
            return Err(CliError::Integrity(format!(
                "{name}: checksum {actual} does not match manifest {}",
                rec.sha256
            )));
        }
    }
    let bad = |name: &str| CliError::Integrity(format!("{name} is malformed"));
    let model = read_json(&dir.join(MODEL_FILE))?;
    let dims = model.get("dims").and_then(dims_from_json).ok_or_else(|| bad(MODEL_FILE))?;
    let t_max = model.get("t_max").and_then(|v| v.as_u64()).ok_or_else(|| bad(MODEL_FILE))? as usize;
    let b_bound = model.get("b_bound").and_then(|v| v.as_f64()).ok_or_else(|| bad(MODEL_FILE))?;
    let fj = read_json(&dir.join(FEATURES_FILE))?;
    let feats = (|| {
        Some(StoreFeatures {
            categories: serde_json::from_value(fj.get("categories")?.clone()).ok()?,
            floors: serde_json::from_value(fj.get("floors")?.clone()).ok()?,
            neighbor: tensor_from_json(fj.get("neighbor")?)?,
        })
    })()
    .ok_or_else(|| bad(FEATURES_FILE))?;
    let path = dir.join(GEN_CKPT);
    let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
    let params = ParamSet::read_checkpoint(std::io::BufReader::new(file))?;
    let gen = GeneratorParams::from_params(dims, params)?;
    let tau_min = manifest.config.get("train.tau_min").and_then(|s| s.parse().ok());
    Ok(LoadedModel {
        gen,
        feats,
        t_max,
        b_bound,
        tau_min,
    })
}

pub fn cmd_eval(cfg: &mut Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(Command::Eval);
    let dir: PathBuf = cfg.req("eval.model_dir")?;
    let model = load_model(&dir)?;
    let ds = load_data(cfg)?;
    let (_, test_idx) = split(cfg, &ds)?;
    if test_idx.is_empty() {
        return Err(CliError::Config("split leaves no held-out trajectories".into()));
    }
    let test = ds.subset(&test_idx)?;
    let tau: f64 = cfg.opt("eval.tau", model.tau_min.unwrap_or(TrainerConfig::default().tau_min))?;
    let seed: u64 = cfg.opt("eval.seed", 0)?;
    let contexts: Vec<Vec<f64>> = test.trajectories.iter().map(|t| t.context.0.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let generated = sample_trajectories(
        &model.gen,
        &model.feats,
        &contexts,
        model.t_max,
        tau,
        model.b_bound,
        &mut rng,
    )?;
    let report = derived_report(&test.trajectories, &generated, &DerivedVariable::ALL, &ds.meta)?;
    let mut csv = Vec::new();
    report.write_csv(&mut csv).expect("writing to memory");
    run.outputs.push(write_output(out, KS_FILE, &csv)?);
    run.finish(cfg, seed, out)
}

pub fn cmd_verify_theory(cfg: &mut Config, out: &Path) -> Result<RunManifest> {
    let mut run = Run::start(Command::VerifyTheory);
    let d = SweepConfig::default();
    let p = SpaceParams::default();
    let sc = SweepConfig {
        spaces: cfg.req("theory.spaces")?,
        seed: cfg.req("theory.seed")?,
        max_buckets: cfg.opt("theory.max_buckets", d.max_buckets)?,
        params: SpaceParams {
            t_max_ceiling: cfg.opt("theory.t_max_ceiling", p.t_max_ceiling)?,
            b_ceiling: cfg.opt("theory.b_ceiling", p.b_ceiling)?,
            max_trajectories: cfg.opt("theory.max_trajectories", p.max_trajectories)?,
            mass_total: cfg.opt("theory.mass_total", p.mass_total)?,
            time_grid_max: cfg.opt("theory.time_grid_max", p.time_grid_max)?,
        },
    };
    let halve: bool = cfg.opt("theory.debug_halve_rhs", false)?;
    let mut report = run_sweep(&sc)?;
    if halve {
        for r in &mut report.rows {
            r.rhs *= 0.5;
            r.holds = r.lhs <= r.rhs + CERT_TOL;
        }
    }
    let mut csv = Vec::new();
    report.write_csv(&mut csv).expect("writing to memory");
    run.outputs.push(write_output(out, CERT_FILE, &csv)?);
    run.outputs.push(write_output(out, SUMMARY_FILE, report.summary_text().as_bytes())?);
    let manifest = run.finish(cfg, sc.seed, out)?;
    let failed = report.rows.iter().filter(|r| !r.holds).count();
    if failed > 0 {
        return Err(CliError::Certification(failed));
    }
    Ok(manifest)
}
