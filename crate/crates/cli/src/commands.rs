//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use signtune_core::data::{
    build_manifest as scan_sources, coverage_check, split_by_region, write_coverage, Dataset, MappingConfig,
    RegionSplit, Samples, SyntheticSpec,
};
use signtune_core::eval::{compare, evaluate_split, export_embeddings, render_table, RegionReport, RunInfo};
use signtune_core::model::ReferenceEncoders;
use signtune_core::prompts::{generate_prompt_set, PromptSet, ScenarioPools, Taxonomy};
use signtune_core::training::{
    classifier_for, train as fit, train_zero_shot, wise_ft_ensemble, zero_shot_anchor, Strategy, TrainConfig,
    TrainData,
};
use signtune_core::weights::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};

use crate::config::RunConfig;
use crate::{
    BuildManifestArgs, CliError, DataArgs, EnsembleArgs, EvaluateArgs, GenPromptsArgs, PromptArgs, ReportArgs,
    SynthArgs, TrainArgs, ZeroShotArgs,
};

const SYNTHETIC_SOURCE_PREFIX: &str = "SYN";

type CliResult<T = ()> = Result<T, CliError>;

fn apply_prompt_args(cfg: &mut RunConfig, args: &PromptArgs) {
    if let Some(p) = &args.prompts {
        cfg.paths.prompts = Some(p.clone());
    }
    if let Some(p) = &args.taxonomy {
        cfg.paths.taxonomy = Some(p.clone());
    }
    if let Some(p) = &args.pools {
        cfg.paths.pools = Some(p.clone());
    }
    if let Some(n) = args.n_per_class {
        cfg.prompts.n_per_class = n;
    }
    if let Some(m) = &args.mode {
        cfg.prompts.mode = m.clone();
    }
    if let Some(n) = args.n_classes {
        cfg.prompts.n_classes = Some(n);
    }
}

fn apply_data_args(cfg: &mut RunConfig, args: &DataArgs) {
    if let Some(p) = &args.data {
        cfg.paths.data = Some(p.clone());
    }
    if !args.train_regions.is_empty() {
        cfg.regions.train = args.train_regions.clone();
    }
}

/// Loads the prompt file when one is configured, generates from the
/// taxonomy and pools otherwise.
fn prompt_set(cfg: &RunConfig, n_classes_hint: Option<usize>) -> CliResult<PromptSet> {
    if let Some(path) = &cfg.paths.prompts {
        return Ok(PromptSet::load(path)?);
    }
    let mut taxonomy = match &cfg.paths.taxonomy {
        Some(path) => Taxonomy::load(path)?,
        None => Taxonomy::default_signs(),
    };
    if let Some(n) = cfg.prompts.n_classes.or(n_classes_hint) {
        taxonomy = taxonomy.truncated(n)?;
    }
    let pools = match &cfg.paths.pools {
        Some(path) => ScenarioPools::load(path)?,
        None => ScenarioPools::default_english(),
    };
    Ok(generate_prompt_set(
        &taxonomy,
        &pools,
        cfg.prompts.n_per_class,
        cfg.prompt_mode()?,
        cfg.seed,
    )?)
}

struct LoadedData {
    dataset: Dataset,
    split: RegionSplit,
    synthetic: bool,
}

impl LoadedData {
    /// Synthetic data only uses the first few taxonomy classes.
    fn class_hint(&self) -> Option<usize> {
        self.synthetic
            .then(|| self.dataset.manifest.records().iter().map(|r| r.class_id + 1).max())
            .flatten()
    }

    fn train_val(&self, fraction: f64) -> CliResult<(Samples, Samples)> {
        Ok(self.dataset.samples(&self.split.train)?.holdout(fraction)?)
    }
}

fn load_data(cfg: &RunConfig) -> CliResult<LoadedData> {
    let dir = cfg
        .paths
        .data
        .as_ref()
        .ok_or_else(|| CliError::Config("no data directory given (--data or paths.data)".into()))?;
    if cfg.regions.train.is_empty() {
        return Err(CliError::Config("no training region given (--train-region or regions.train)".into()));
    }
    let dataset = Dataset::load(dir, cfg.encoder.image_side as u32)?;
    let regions: Vec<&str> = cfg.regions.train.iter().map(String::as_str).collect();
    let split = split_by_region(&dataset.manifest, &regions)?;
    let synthetic = dataset
        .manifest
        .records()
        .iter()
        .all(|r| r.source_id.starts_with(SYNTHETIC_SOURCE_PREFIX));
    log::info!(
        "loaded {} images; train regions {:?}, test regions {:?}",
        dataset.manifest.len(),
        split.train_regions,
        split.test_regions
    );
    Ok(LoadedData {
        dataset,
        split,
        synthetic,
    })
}

fn encoders(cfg: &RunConfig, prompts: &PromptSet) -> CliResult<ReferenceEncoders> {
    let enc = cfg.encoder.config(prompts.n_classes());
    Ok(ReferenceEncoders::init(&enc, cfg.encoder.init_seed)?)
}

/// Creates `<output_dir>/<timestamp>-seed<seed>` and records the run
/// configuration in it.
fn run_dir(cfg: &RunConfig) -> CliResult<PathBuf> {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S%.3f");
    let base = cfg.output_dir.join(format!("{stamp}-seed{}", cfg.seed));
    fs::create_dir_all(&cfg.output_dir)?;
    let mut dir = base.clone();
    let mut n = 1;
    while let Err(e) = fs::create_dir(&dir) {
        if e.kind() != std::io::ErrorKind::AlreadyExists {
            return Err(e.into());
        }
        dir = PathBuf::from(format!("{}-{n}", base.display()));
        n += 1;
    }
    let text = cfg.to_toml();
    eprintln!("# run directory: {}\n{text}", dir.display());
    fs::write(dir.join("config.toml"), text)?;
    println!("{}", dir.display());
    Ok(dir)
}

fn write_train_config(dir: &Path, train: &TrainConfig) -> CliResult {
    let text = toml::to_string(train).map_err(|e| CliError::Config(e.to_string()))?;
    eprintln!("# resolved training settings\n{text}");
    fs::write(dir.join("train.toml"), text)?;
    Ok(())
}

fn run_info(ckpt: &Checkpoint) -> RunInfo {
    RunInfo {
        strategy: ckpt.meta.strategy.clone(),
        seed: ckpt.meta.seed,
        checkpoint_digest: ckpt.params.digest(),
    }
}

/// Scores `ckpt` on the test regions and writes `report.json` and
/// `report.txt` into `dir`.
fn score(
    ckpt: &Checkpoint,
    prompts: &PromptSet,
    data: &LoadedData,
    baseline: Option<&RegionReport>,
    dir: &Path,
) -> CliResult<RegionReport> {
    if ckpt.meta.prompt_digest.as_deref().is_some_and(|d| d != prompts.digest()) {
        log::warn!("prompt set differs from the one recorded in the checkpoint");
    }
    let classifier = classifier_for(ckpt, prompts)?;
    let report = evaluate_split(&classifier, &data.dataset, &data.split, run_info(ckpt))?;
    report.save(dir.join("report.json"))?;
    let table = render_table(&[(ckpt.meta.strategy.as_str(), &report)], baseline)?;
    fs::write(dir.join("report.txt"), &table)?;
    eprint!("{table}");
    if let Some(base) = baseline {
        eprintln!("delta vs baseline: {:+.2} points", compare(&report, base)?);
    }
    Ok(report)
}

pub fn gen_prompts(mut cfg: RunConfig, args: GenPromptsArgs) -> CliResult {
    apply_prompt_args(&mut cfg, &args.prompt);
    let prompts = prompt_set(&cfg, None)?;
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    prompts.save(&args.out)?;
    eprintln!(
        "wrote {} templates ({} classes x {}) to {}",
        prompts.len(),
        prompts.n_classes(),
        prompts.n_per_class(),
        args.out.display()
    );
    println!("{}", prompts.digest());
    Ok(())
}

fn parse_source(spec: &str) -> CliResult<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((id, dir)) if !id.is_empty() && !dir.is_empty() => Ok((id.to_owned(), PathBuf::from(dir))),
        _ => Err(CliError::Config(format!("--source expects ID=DIR, got `{spec}`"))),
    }
}

pub fn build_manifest(mut cfg: RunConfig, args: BuildManifestArgs) -> CliResult {
    if let Some(p) = &args.mapping {
        cfg.paths.mapping = Some(p.clone());
    }
    let mapping = match &cfg.paths.mapping {
        Some(path) => MappingConfig::load(path)?,
        None => MappingConfig::template(),
    };
    let sources = args
        .sources
        .iter()
        .map(|s| parse_source(s))
        .collect::<CliResult<Vec<_>>>()?;
    let built = scan_sources(&sources, &mapping)?;
    for ((source, label), count) in &built.dropped {
        log::info!("dropped {count} images of {source}/{label}");
    }
    built.manifest.save(&args.out)?;
    let coverage = coverage_check(&built.manifest, args.n_classes);
    let mut table = Vec::new();
    write_coverage(&coverage, &mut table)?;
    fs::write(args.out.join("coverage.txt"), &table)?;
    eprint!("{}", String::from_utf8_lossy(&table));
    println!("{}", built.manifest.digest());
    Ok(())
}

pub fn synth_data(mut cfg: RunConfig, args: SynthArgs) -> CliResult {
    let s = &mut cfg.synthetic;
    s.n_classes = args.n_classes.unwrap_or(s.n_classes);
    s.n_regions = args.n_regions.unwrap_or(s.n_regions);
    s.samples_per_class_region = args.per.unwrap_or(s.samples_per_class_region);
    s.style_shift_strength = args.shift.unwrap_or(s.style_shift_strength);
    let spec = SyntheticSpec {
        n_classes: s.n_classes,
        n_regions: s.n_regions,
        samples_per_class_region: s.samples_per_class_region,
        style_shift_strength: s.style_shift_strength,
        seed: cfg.seed,
    };
    let dataset = spec.generate()?;
    let dir = args.out.join(format!("synthetic-seed{}", cfg.seed));
    dataset.save(&dir)?;
    eprintln!("wrote {} images to {}", dataset.manifest.len(), dir.display());
    println!("{}", dataset.manifest.digest());
    Ok(())
}

fn apply_train_args(cfg: &mut RunConfig, args: &TrainArgs) {
    let t = &mut cfg.train;
    macro_rules! set {
        ($($field:ident),*) => {$(
            if args.$field.is_some() {
                t.$field = args.$field.clone();
            }
        )*};
    }
    set!(
        strategy,
        epochs,
        batch_size,
        learning_rate,
        lambda,
        alpha,
        gamma,
        clamp_lo,
        clamp_hi,
        loss_mode,
        optimizer,
        weight_decay,
        warmup_steps
    );
    if let Some(v) = args.val_fraction {
        t.val_fraction = v;
    }
    if let Some(seed) = args.init_seed {
        cfg.encoder.init_seed = seed;
    }
    if let Some(p) = &args.ft_checkpoint {
        cfg.paths.ft_checkpoint = Some(p.clone());
    }
}

pub fn train(mut cfg: RunConfig, args: TrainArgs) -> CliResult {
    apply_prompt_args(&mut cfg, &args.prompt);
    apply_data_args(&mut cfg, &args.data);
    apply_train_args(&mut cfg, &args);
    let data = load_data(&cfg)?;
    let train_cfg = cfg.train.resolve(cfg.seed, data.synthetic)?;
    if train_cfg.strategy == Strategy::WiseFt && cfg.paths.ft_checkpoint.is_none() {
        return Err(CliError::Config(
            "wise_ft ensembles a finished fine-tuning run; pass --ft-checkpoint".into(),
        ));
    }
    let prompts = prompt_set(&cfg, data.class_hint())?;
    let encoders = encoders(&cfg, &prompts)?;
    let dir = run_dir(&cfg)?;
    write_train_config(&dir, &train_cfg)?;

    let ckpt = match train_cfg.strategy {
        Strategy::WiseFt => {
            let ft = load_checkpoint(cfg.paths.ft_checkpoint.as_ref().expect("checked above"))?;
            let anchor = zero_shot_anchor(&encoders, &prompts)?;
            let ckpt = ensembled(&anchor, &ft, train_cfg.alpha, cfg.seed)?;
            save_checkpoint(&ckpt, dir.join("checkpoint"))?;
            ckpt
        }
        Strategy::ZeroShot => {
            let outcome = train_zero_shot(&encoders, &prompts, &train_cfg)?;
            outcome.save(&dir)?;
            outcome.checkpoint
        }
        _ => {
            let (train, val) = data.train_val(cfg.train.val_fraction)?;
            let td = TrainData {
                train: &train,
                val: &val,
                prompts: &prompts,
            };
            let outcome = fit(&encoders, td, &train_cfg)?;
            outcome.save(&dir)?;
            outcome.checkpoint
        }
    };
    if !data.split.test.is_empty() {
        score(&ckpt, &prompts, &data, None, &dir)?;
    }
    Ok(())
}

fn ensembled(zs: &signtune_core::weights::ParameterSet, ft: &Checkpoint, alpha: f64, seed: u64) -> CliResult<Checkpoint> {
    let params = wise_ft_ensemble(zs, &ft.params, alpha)?;
    let mut meta = CheckpointMeta::new(Strategy::WiseFt.tag(), seed);
    meta.epoch = ft.meta.epoch;
    meta.train_losses = ft.meta.train_losses.clone();
    meta.prompt_digest = ft.meta.prompt_digest.clone();
    meta.loss_mode = ft.meta.loss_mode.clone();
    meta.alpha = Some(alpha);
    Ok(Checkpoint::new(params, meta)?)
}

pub fn ensemble(cfg: RunConfig, args: EnsembleArgs) -> CliResult {
    let alpha = args.alpha.or(cfg.train.alpha).unwrap_or(TrainConfig::default().alpha);
    let zs = load_checkpoint(&args.zs)?;
    let ft = load_checkpoint(&args.ft)?;
    let ckpt = ensembled(&zs.params, &ft, alpha, cfg.seed)?;
    let dir = run_dir(&cfg)?;
    save_checkpoint(&ckpt, dir.join("checkpoint"))?;
    eprintln!("alpha {alpha}: {}", ckpt.params.digest());
    Ok(())
}

pub fn zero_shot(mut cfg: RunConfig, args: ZeroShotArgs) -> CliResult {
    apply_prompt_args(&mut cfg, &args.prompt);
    apply_data_args(&mut cfg, &args.data);
    if let Some(seed) = args.init_seed {
        cfg.encoder.init_seed = seed;
    }
    let data = cfg.paths.data.is_some().then(|| load_data(&cfg)).transpose()?;
    let prompts = prompt_set(&cfg, data.as_ref().and_then(LoadedData::class_hint))?;
    let encoders = encoders(&cfg, &prompts)?;
    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..TrainConfig::default().with_strategy(Strategy::ZeroShot)
    };
    let dir = run_dir(&cfg)?;
    let outcome = train_zero_shot(&encoders, &prompts, &train_cfg)?;
    outcome.save(&dir)?;
    if let Some(data) = data.filter(|d| !d.split.test.is_empty()) {
        score(&outcome.checkpoint, &prompts, &data, None, &dir)?;
    }
    Ok(())
}

pub fn evaluate(mut cfg: RunConfig, args: EvaluateArgs) -> CliResult {
    apply_prompt_args(&mut cfg, &args.prompt);
    apply_data_args(&mut cfg, &args.data);
    if let Some(p) = &args.checkpoint {
        cfg.paths.checkpoint = Some(p.clone());
    }
    let path = cfg
        .paths
        .checkpoint
        .clone()
        .ok_or_else(|| CliError::Config("no checkpoint given (--checkpoint or paths.checkpoint)".into()))?;
    let ckpt = load_checkpoint(&path)?;
    let data = load_data(&cfg)?;
    let prompts = prompt_set(&cfg, data.class_hint())?;
    let baseline = args.baseline.as_ref().map(RegionReport::load).transpose()?;
    let dir = run_dir(&cfg)?;
    score(&ckpt, &prompts, &data, baseline.as_ref(), &dir)?;
    if args.export_embeddings {
        let test = data.dataset.samples(&data.split.test)?;
        let classifier = classifier_for(&ckpt, &prompts)?;
        let export = export_embeddings(&classifier, &test, dir.join("embeddings"))?;
        eprintln!("exported {} x {} embeddings", export.rows, export.dim);
    }
    Ok(())
}

pub fn report(_cfg: RunConfig, args: ReportArgs) -> CliResult {
    let reports = args
        .reports
        .iter()
        .map(RegionReport::load)
        .collect::<signtune_core::Result<Vec<_>>>()?;
    let baseline = args.baseline.as_ref().map(RegionReport::load).transpose()?;
    let rows: Vec<(&str, &RegionReport)> = reports.iter().map(|r| (r.run.strategy.as_str(), r)).collect();
    let table = render_table(&rows, baseline.as_ref())?;
    print!("{table}");
    if let Some(out) = &args.out {
        fs::write(out, &table)?;
    }
    Ok(())
}
