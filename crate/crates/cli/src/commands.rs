use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use metalink::datasets::{generate_synthetic, load_csv, pearson_matrix, save_csv, SyntheticSpec};
use metalink::kgraph::KnownLabel;
use metalink::model::{HeadKind, ModelConfig};
use metalink::numcore::{grad_check, DenseMatrix};
use metalink::training::{self, evaluate, summarize, sweep_csv, SweepRow};
use metalink::{Dataset, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ConfigLayers, RunConfig, SEED_ENV};
use crate::error::{io_error, CliError};
use crate::ConfigArgs;

type Result<T> = std::result::Result<T, CliError>;

fn resolve(args: &ConfigArgs) -> Result<RunConfig> {
    let mut layers = match &args.config {
        Some(path) => ConfigLayers::from_file(path)?,
        None => ConfigLayers::default(),
    }
    .with_env_seed()
    .with_overrides(args.overrides.iter().map(String::as_str))?;
    if let Some(seed) = args.seed {
        layers = layers.set("seed", seed)?;
    }
    if let Some(dir) = &args.out_dir {
        layers = layers.set("out_dir", dir.display())?;
    }
    let cfg = layers.resolve()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| io_error("create", &cfg.out_dir, e))?;
    write(&cfg.out_dir.join("config.resolved"), &cfg.render())?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| io_error("write", path, e))
}

fn seed_from_env(flag: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}: cannot parse {v:?}"))),
        Err(_) => Ok(0),
    }
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 16)]
    pub d: usize,
    /// Task correlation in [0,1].
    #[arg(long, default_value_t = 0.5)]
    pub rho: f64,
    /// Label flip probability in [0,1).
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Missing-label probability in [0,1).
    #[arg(long, default_value_t = 0.0)]
    pub missing: f64,
    /// Generator seed; beats METALINK_SEED, which beats 0.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, default_value = "data.csv")]
    pub out: PathBuf,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n: args.n,
        m: args.m,
        d: args.d,
        rho: args.rho,
        label_noise: args.noise,
        missing_frac: args.missing,
        seed: seed_from_env(args.seed)?,
    };
    let ds: Dataset = generate_synthetic(&spec)?;
    if let Some(dir) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| io_error("create", dir, e))?;
    }
    save_csv(&ds, &args.out)?;
    println!("wrote {} (n={}, m={}, d={})", args.out.display(), ds.n(), ds.m(), ds.d());
    let positives = ds.positives_per_task();
    for (name, p) in ds.task_names().iter().zip(positives) {
        println!("  {name}: {p} positives");
    }
    Ok(())
}

pub fn train(args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let ds = cfg.load_dataset()?;
    let started = Instant::now();
    let (model, history) = training::train(&ds, &cfg.train)?;
    model.save(cfg.out_dir.join("checkpoint.json"))?;
    write(
        &cfg.out_dir.join("history.json"),
        &serde_json::to_string_pretty(&history).map_err(metalink::Error::from)?,
    )?;
    if let Some(report) = &history.test {
        write(&cfg.out_dir.join("test_report.json"), &report.to_json()?)?;
    }
    eprintln!(
        "trained {} epochs in {:.2}s",
        cfg.train.epochs,
        started.elapsed().as_secs_f64()
    );
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    let test = history.test.as_ref();
    println!(
        "best epoch {}; test macro AUC {}, mAP {}",
        history.best_epoch.map_or("-".to_string(), |e| e.to_string()),
        fmt(test.and_then(|r| r.macro_auc)),
        fmt(test.and_then(|r| r.map)),
    );
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

pub fn eval(checkpoint: &Path, split: &str, args: &ConfigArgs) -> Result<()> {
    let cfg = resolve(args)?;
    let ds = cfg.load_dataset()?;
    let model = Model::load(checkpoint)?;
    let plan = training::plan(&ds, &cfg.train)?;
    let mc = model.config();
    if mc.input_dim != ds.d() || mc.seen_tasks != plan.seen_tasks {
        return Err(CliError::Config(format!(
            "checkpoint expects input dim {} and seen tasks {:?}; config gives {} and {:?}",
            mc.input_dim,
            mc.seen_tasks,
            ds.d(),
            plan.seen_tasks
        )));
    }
    let examples = match split {
        "train" => &plan.split.train,
        "val" => &plan.split.val,
        _ => &plan.split.test,
    };
    let ev = evaluate(&model, &ds, &plan, examples, &cfg.train.eval_spec())?;
    write(&cfg.out_dir.join("eval_report.json"), &ev.report.to_json()?)?;
    let auc = ev.report.macro_auc.map_or("undefined".to_string(), |v| format!("{v:.4}"));
    println!("{split}: macro AUC {auc}, loss {:.4}, {} targets", ev.loss, ev.targets);
    if let Some(acc) = ev.accuracy {
        println!("{split}: few-shot accuracy {acc:.4}");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// Comma-separated run seeds.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4")]
    pub seeds: Vec<u64>,
    /// Worker threads for independent cells.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[command(flatten)]
    pub config: ConfigArgs,
}

fn write_sweep(cfg: &RunConfig, name: &str, column: &str, rows: &[SweepRow]) -> Result<()> {
    write(&cfg.out_dir.join(format!("{name}.csv")), &sweep_csv(rows, column))?;
    let mut summary = format!("{column},mean,std\n");
    for (value, ms) in summarize(rows) {
        summary.push_str(&format!("{value},{},{}\n", ms.mean, ms.std));
        println!("{column} {value}: {:.4} ± {:.4}", ms.mean, ms.std);
    }
    write(&cfg.out_dir.join(format!("{name}_summary.csv")), &summary)?;
    println!("outputs in {}", cfg.out_dir.display());
    Ok(())
}

pub fn sweep_ratio(ratios: &[f64], args: &SweepArgs) -> Result<()> {
    if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(CliError::Config(format!("ratio {r} is outside [0,1)")));
    }
    let cfg = resolve(&args.config)?;
    let ds = cfg.load_dataset()?;
    let rows = training::sweep_aux_ratio(&ds, &cfg.train, ratios, &args.seeds, args.workers)?;
    write_sweep(&cfg, "sweep_ratio", "ratio", &rows)
}

pub fn sweep_layers(layers: &[usize], args: &SweepArgs) -> Result<()> {
    let cfg = resolve(&args.config)?;
    let ds = cfg.load_dataset()?;
    let rows = training::sweep_layers(&ds, &cfg.train, layers, &args.seeds, args.workers)?;
    write_sweep(&cfg, "sweep_layers", "layers", &rows)
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Random instances to check.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub eps: f64,
    /// Message-passing layers.
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    /// Check the shared-weight variant.
    #[arg(long)]
    pub shared: bool,
    /// Use the dot-product edge predictor.
    #[arg(long)]
    pub dot: bool,
}

/// Four data nodes, three tasks, width 5, random edges, masked BCE, at
/// randomly perturbed parameters.
pub fn gradcheck(args: &GradCheckArgs) -> Result<()> {
    let mut worst: f64 = 0.0;
    for seed in 0..args.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let config = ModelConfig {
            input_dim: 3,
            hidden: vec![6],
            embed_dim: 5,
            layers: args.layers,
            shared_weights: args.shared,
            head: if args.dot { HeadKind::Dot } else { HeadKind::Mlp },
            seen_tasks: vec![0, 1, 2],
        };
        let mut model = Model::new(config, seed)?;
        model.perturb(0.1, &mut rng)?;
        let x = DenseMatrix::random_normal(4, 3, 1.0, &mut rng);
        let mut known = Vec::new();
        let mut targets = Vec::new();
        for i in 0..4 {
            for j in 0..3 {
                if rng.random::<f64>() < 0.4 {
                    known.push(KnownLabel::new(i, j, rng.random()));
                } else {
                    targets.push((i, j));
                }
            }
        }
        if targets.is_empty() {
            let k = known.pop().expect("twelve pairs");
            targets.push((k.data, k.task));
        }
        let labels: Vec<f64> = targets.iter().map(|_| f64::from(rng.random::<bool>())).collect();
        let mut mask: Vec<f64> = targets.iter().map(|_| f64::from(rng.random::<f64>() < 0.8)).collect();
        mask[0] = 1.0;
        let report = grad_check(model.params(), args.eps, |tape| {
            let m = Model::from_parts(model.config().clone(), tape.params().clone())?;
            let out = m.forward(tape, &x, &known, &[], &targets)?;
            tape.bce_with_logits(out.logits, &labels, &mask)
        })?;
        let ok = report.max_rel_error < args.tol;
        println!(
            "seed {seed}: max rel error {:.3e} over {} coordinates {}",
            report.max_rel_error,
            report.coordinates,
            if ok { "ok" } else { "FAIL" }
        );
        worst = worst.max(report.max_rel_error);
    }
    if worst < args.tol {
        println!("gradcheck passed: max rel error {worst:.3e} < {:e}", args.tol);
        Ok(())
    } else {
        Err(CliError::GradCheck(format!("max rel error {worst:.3e} >= {:e}", args.tol)))
    }
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct CorrelateSource {
    /// Dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Run config whose dataset is used; output goes to its `out_dir`.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub source: CorrelateSource,
    /// Output CSV; defaults to `correlation.csv` in the config's `out_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn correlate(args: &CorrelateArgs) -> Result<()> {
    let (ds, default_out): (Dataset, Option<PathBuf>) = match (&args.source.data, &args.source.config) {
        (Some(path), _) => (load_csv(path)?, None),
        (None, Some(config)) => {
            let cfg = resolve(&ConfigArgs {
                config: Some(config.clone()),
                overrides: Vec::new(),
                seed: None,
                out_dir: None,
            })?;
            (cfg.load_dataset()?, Some(cfg.out_dir.join("correlation.csv")))
        }
        (None, None) => unreachable!("clap requires a source"),
    };
    let out = args
        .out
        .clone()
        .or(default_out)
        .ok_or_else(|| CliError::Config("--out is required with --data".into()))?;
    let pm = pearson_matrix(&ds);
    let names = ds.task_names();
    let mut csv = format!("task,{}\n", names.join(","));
    for (a, name) in names.iter().enumerate() {
        let row: Vec<String> = (0..names.len()).map(|b| pm.values.get(a, b).to_string()).collect();
        csv.push_str(&format!("{name},{}\n", row.join(",")));
    }
    write(&out, &csv)?;
    for (a, b) in &pm.flagged {
        eprintln!("warning: correlation of {} and {} undefined, written as 0", names[*a], names[*b]);
    }
    println!("wrote {} ({}×{})", out.display(), names.len(), names.len());
    Ok(())
}
