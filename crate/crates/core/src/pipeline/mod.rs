//! Command orchestration: configuration, seeding, checkpointing and the
//! analyze → train → generate → enhance → evaluate → assemble flow.

pub mod assemble;
pub mod checkpoint;
pub mod config;
pub mod seeds;

use std::collections::{HashMap, HashSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};

use biasforge_autograd::{AdamState, ParamSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bias::{analyze_dataset, flagged_attributes_from_text};
use crate::dataset::{parse_attribute_manifest, split_dataset, AttributeManifest};
use crate::enhance::{enhance_image, EnhanceGenerator, EnhanceTrainer};
use crate::ergan::{remove_glasses, ErganGenerator, ErganTrainer};
use crate::image::{load_image, save_image, Image};
use crate::metrics::{aggregate, write_report_csv, Category, SsimParams};
use crate::nets::NetError;
use crate::skin_gan::{recolor, Generator, SkinGanTrainer};

pub use assemble::{assemble_manifest, required_additions, AssemblyLine};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use config::{ConfigError, PipelineConfig, TrainSchedule};
pub use seeds::{derive_seed, STAGES};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Analyze,
    TrainSkin,
    TrainErgan,
    TrainEnhance,
    Generate,
    Enhance,
    Evaluate,
    Assemble,
}

impl Command {
    pub const ALL: [Command; 8] = [
        Command::Analyze,
        Command::TrainSkin,
        Command::TrainErgan,
        Command::TrainEnhance,
        Command::Generate,
        Command::Enhance,
        Command::Evaluate,
        Command::Assemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Analyze => "analyze",
            Command::TrainSkin => "train-skin",
            Command::TrainErgan => "train-ergan",
            Command::TrainEnhance => "train-enhance",
            Command::Generate => "generate",
            Command::Enhance => "enhance",
            Command::Evaluate => "evaluate",
            Command::Assemble => "assemble",
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Data(String),
    #[error(
        "checkpoint {path} was written under config hash {found}, but the current config hashes to {expected}; \
         pass --override-hash to use it anyway"
    )]
    HashMismatch { path: String, found: String, expected: String },
    #[error("{0}")]
    Numeric(String),
}

impl PipelineError {
    /// 1 usage or config error, 2 data error, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Usage(_) | PipelineError::Config(_) => 1,
            PipelineError::Data(_) | PipelineError::HashMismatch { .. } => 2,
            PipelineError::Numeric(_) => 3,
        }
    }
}

impl From<NetError> for PipelineError {
    fn from(e: NetError) -> Self {
        match e {
            NetError::NonFinite { .. } => PipelineError::Numeric(e.to_string()),
            NetError::Config(_) => PipelineError::Usage(e.to_string()),
            other => PipelineError::Data(other.to_string()),
        }
    }
}

impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        PipelineError::Data(e.to_string())
    }
}

fn data(context: impl Display, e: impl Display) -> PipelineError {
    PipelineError::Data(format!("{context}: {e}"))
}

/// One command's inputs after flag handling.
#[derive(Clone, Debug)]
pub struct Invocation {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub override_hash: bool,
    pub input: Option<PathBuf>,
    pub pairs: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub synthetic: Vec<PathBuf>,
}

impl Invocation {
    pub fn new(config: PipelineConfig) -> Self {
        Invocation {
            out: config.resolve(&config.output_dir),
            config,
            checkpoint: None,
            override_hash: false,
            input: None,
            pairs: None,
            report: None,
            synthetic: Vec::new(),
        }
    }
}

/// Stdout lines (`key=value`) and stderr warnings of a finished command.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Outcome {
    pub lines: Vec<String>,
    pub warnings: Vec<String>,
}

impl Outcome {
    fn line(&mut self, key: &str, value: impl Display) {
        self.lines.push(format!("{key}={value}"));
    }
}

fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn run_manifest_text(cmd: Command, inv: &Invocation, started: u64, finished: u64, outcome: &str) -> String {
    let cfg = &inv.config;
    let mut s = format!(
        "tool_version = {}\ncommand = {}\nconfig_hash = {}\nmaster_seed = {}\n",
        env!("CARGO_PKG_VERSION"),
        cmd.name(),
        cfg.hash(),
        cfg.seed
    );
    for stage in STAGES {
        s.push_str(&format!("seed.{stage} = {}\n", derive_seed(cfg.seed, stage)));
    }
    s.push_str(&format!(
        "started_unix = {started}\nfinished_unix = {finished}\noutcome = {}\n",
        outcome.replace('\n', " ")
    ));
    s
}

/// Runs one command and records it in `<out>/run_<command>.txt`.
pub fn run(cmd: Command, inv: &Invocation) -> Result<Outcome, PipelineError> {
    let started = unix_now();
    std::fs::create_dir_all(&inv.out).map_err(|e| data(inv.out.display(), e))?;
    let result = match cmd {
        Command::Analyze => cmd_analyze(inv),
        Command::TrainSkin => cmd_train_skin(inv),
        Command::TrainErgan => cmd_train_ergan(inv),
        Command::TrainEnhance => cmd_train_enhance(inv),
        Command::Generate => cmd_generate(inv),
        Command::Enhance => cmd_enhance(inv),
        Command::Evaluate => cmd_evaluate(inv),
        Command::Assemble => cmd_assemble(inv),
    };
    let status = match &result {
        Ok(_) => "ok".to_string(),
        Err(e) => format!("error: {e}"),
    };
    let path = inv.out.join(format!("run_{}.txt", cmd.name()));
    let written = std::fs::write(&path, run_manifest_text(cmd, inv, started, unix_now(), &status));
    match (result, written) {
        (Ok(_), Err(e)) => Err(data(path.display(), e)),
        (r, _) => r,
    }
}

pub fn load_manifest(path: &Path) -> Result<AttributeManifest, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("manifest {}", path.display()), e))?;
    let m = parse_attribute_manifest(&text).map_err(|e| data(format!("manifest {}", path.display()), e))?;
    if m.is_empty() {
        return Err(PipelineError::Data(format!("manifest {} has no records", path.display())));
    }
    Ok(m)
}

/// PNG and JPEG files in `dir`, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| data(format!("directory {}", dir.display()), e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| data(dir.display(), e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("png" | "jpg" | "jpeg")) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn load(path: &Path) -> Result<Image, PipelineError> {
    load_image(path).map_err(|e| PipelineError::Data(e.to_string()))
}

fn save(img: &Image, path: &Path) -> Result<(), PipelineError> {
    save_image(img, path).map_err(|e| PipelineError::Data(e.to_string()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    std::fs::write(path, text).map_err(|e| data(path.display(), e))
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_analyze(inv: &Invocation) -> Result<Outcome, PipelineError> {
    let cfg = &inv.config;
    let manifest_path = cfg.resolve(&cfg.manifest);
    let m = load_manifest(&manifest_path)?;
    let report = analyze_dataset(&m, &cfg.resolve(&cfg.images), cfg.bias_threshold)
        .map_err(|e| data(format!("analyzing {}", manifest_path.display()), e))?;
    let text_path = inv.out.join("bias_report.txt");
    write(&text_path, report.to_text())?;
    write(&inv.out.join("bias_report.csv"), report.to_csv())?;
    let mut out = Outcome::default();
    out.line("records", m.len());
    out.line(
        "flagged_attributes",
        report
            .flagged_attributes
            .iter()
            .map(|(n, r)| format!("{n}:{r}"))
            .collect::<Vec<_>>()
            .join(","),
    );
    out.line("report", text_path.display());
    Ok(out)
}

/// Training images from the train split, optionally restricted to records
/// whose `attribute` equals `value`.
fn training_images(cfg: &PipelineConfig, filter: Option<(&str, i8)>) -> Result<Vec<Image>, PipelineError> {
    let manifest_path = cfg.resolve(&cfg.manifest);
    let m = load_manifest(&manifest_path)?;
    let column = match filter {
        Some((name, _)) => Some(m.attribute_index(name).ok_or_else(|| {
            PipelineError::Data(format!("manifest {} has no {name} column", manifest_path.display()))
        })?),
        None => None,
    };
    let by_id: HashMap<&str, &[i8]> = m.records.iter().map(|r| (r.image_id.as_str(), r.values.as_slice())).collect();
    let root = cfg.resolve(&cfg.images);
    let mut images = Vec::new();
    for id in split_dataset(&m, cfg.split_seed).train_ids {
        if let (Some(col), Some((_, want))) = (column, filter) {
            if by_id[id.as_str()][col] != want {
                continue;
            }
        }
        images.push(load(&root.join(&id))?.to_rgb());
    }
    if images.is_empty() {
        return Err(PipelineError::Data(format!(
            "no training images selected from {}",
            manifest_path.display()
        )));
    }
    Ok(images)
}

struct StepRecord {
    loss_d: f64,
    loss_g: f64,
    extra: Vec<(&'static str, f64)>,
}

trait Trainable {
    const MODEL: &'static str;
    fn iteration(&self) -> u64;
    fn seed(&self) -> u64;
    fn step(&mut self) -> Result<StepRecord, NetError>;
    fn sections(&self) -> Vec<(String, Vec<u8>)>;
    fn restore(&mut self, ck: &Checkpoint) -> Result<(), String>;
}

fn section<'a>(ck: &'a Checkpoint, name: &str) -> Result<&'a [u8], String> {
    ck.section(name).ok_or_else(|| format!("checkpoint lacks section {name}"))
}

pub fn restore_params(params: &mut ParamSet, bytes: &[u8]) -> Result<(), String> {
    let loaded = ParamSet::from_bytes(bytes).map_err(|e| e.to_string())?;
    if loaded.names() != params.names() {
        return Err("parameter names differ from the configured architecture".into());
    }
    params.assign(loaded.tensors().to_vec()).map_err(|e| e.to_string())
}

fn restore_adam(bytes: &[u8]) -> Result<AdamState, String> {
    AdamState::from_bytes(bytes).map_err(|e| e.to_string())
}

impl Trainable for SkinGanTrainer {
    const MODEL: &'static str = "skin";
    fn iteration(&self) -> u64 {
        self.iteration
    }
    fn seed(&self) -> u64 {
        self.cfg.seed
    }
    fn step(&mut self) -> Result<StepRecord, NetError> {
        let d = self.train_step()?;
        Ok(StepRecord {
            loss_d: d.loss_d,
            loss_g: d.loss_g,
            extra: vec![("wasserstein", d.wasserstein), ("penalty", d.penalty), ("grad_norm", d.grad_norm)],
        })
    }
    fn sections(&self) -> Vec<(String, Vec<u8>)> {
        vec![
            ("generator".into(), self.generator.params.to_bytes()),
            ("critic".into(), self.critic.params.to_bytes()),
            ("adam.generator".into(), self.g_adam.to_bytes()),
            ("adam.critic".into(), self.d_adam.to_bytes()),
        ]
    }
    fn restore(&mut self, ck: &Checkpoint) -> Result<(), String> {
        restore_params(&mut self.generator.params, section(ck, "generator")?)?;
        restore_params(&mut self.critic.params, section(ck, "critic")?)?;
        self.g_adam = restore_adam(section(ck, "adam.generator")?)?;
        self.d_adam = restore_adam(section(ck, "adam.critic")?)?;
        self.iteration = ck.iteration;
        self.critic_steps = ck.iteration * self.cfg.n_critic as u64;
        self.generator_steps = ck.iteration;
        Ok(())
    }
}

impl Trainable for ErganTrainer {
    const MODEL: &'static str = "ergan";
    fn iteration(&self) -> u64 {
        self.iteration
    }
    fn seed(&self) -> u64 {
        self.cfg.seed
    }
    fn step(&mut self) -> Result<StepRecord, NetError> {
        let d = self.train_step()?;
        Ok(StepRecord {
            loss_d: d.loss_d,
            loss_g: d.loss_g,
            extra: vec![
                ("adv", d.adv),
                ("id", d.id),
                ("rec", d.rec),
                ("mask_min", d.mask_min),
                ("mask_max", d.mask_max),
            ],
        })
    }
    fn sections(&self) -> Vec<(String, Vec<u8>)> {
        vec![
            ("generator".into(), self.generator.params.to_bytes()),
            ("discriminator".into(), self.discriminator.params.to_bytes()),
            ("adam.generator".into(), self.g_adam.to_bytes()),
            ("adam.discriminator".into(), self.d_adam.to_bytes()),
        ]
    }
    fn restore(&mut self, ck: &Checkpoint) -> Result<(), String> {
        restore_params(&mut self.generator.params, section(ck, "generator")?)?;
        restore_params(&mut self.discriminator.params, section(ck, "discriminator")?)?;
        self.g_adam = restore_adam(section(ck, "adam.generator")?)?;
        self.d_adam = restore_adam(section(ck, "adam.discriminator")?)?;
        self.iteration = ck.iteration;
        Ok(())
    }
}

impl Trainable for EnhanceTrainer {
    const MODEL: &'static str = "enhance";
    fn iteration(&self) -> u64 {
        self.iteration
    }
    fn seed(&self) -> u64 {
        self.cfg.seed
    }
    fn step(&mut self) -> Result<StepRecord, NetError> {
        let d = self.train_step()?;
        Ok(StepRecord {
            loss_d: d.loss_d,
            loss_g: d.loss_g,
            extra: vec![("adv_d1", d.adv_d1), ("adv_d2", d.adv_d2), ("content", d.content)],
        })
    }
    fn sections(&self) -> Vec<(String, Vec<u8>)> {
        vec![
            ("generator".into(), self.generator.params.to_bytes()),
            ("d1".into(), self.discriminators.d1.params.to_bytes()),
            ("d2".into(), self.discriminators.d2.params.to_bytes()),
            ("adam.generator".into(), self.g_adam.to_bytes()),
            ("adam.d1".into(), self.d1_adam.to_bytes()),
            ("adam.d2".into(), self.d2_adam.to_bytes()),
        ]
    }
    fn restore(&mut self, ck: &Checkpoint) -> Result<(), String> {
        restore_params(&mut self.generator.params, section(ck, "generator")?)?;
        restore_params(&mut self.discriminators.d1.params, section(ck, "d1")?)?;
        restore_params(&mut self.discriminators.d2.params, section(ck, "d2")?)?;
        self.g_adam = restore_adam(section(ck, "adam.generator")?)?;
        self.d1_adam = restore_adam(section(ck, "adam.d1")?)?;
        self.d2_adam = restore_adam(section(ck, "adam.d2")?)?;
        self.iteration = ck.iteration;
        Ok(())
    }
}

/// Loads a checkpoint for `model`, enforcing the config-hash contract.
fn open_checkpoint(inv: &Invocation, path: &Path, models: &[&str], out: &mut Outcome) -> Result<Checkpoint, PipelineError> {
    let ck = Checkpoint::load(path)?;
    if !models.contains(&ck.model.as_str()) {
        return Err(PipelineError::Data(format!(
            "checkpoint {} holds a {} model; expected {}",
            path.display(),
            ck.model,
            models.join(" or ")
        )));
    }
    let expected = inv.config.hash();
    if ck.config_hash != expected {
        if !inv.override_hash {
            return Err(PipelineError::HashMismatch {
                path: path.display().to_string(),
                found: ck.config_hash,
                expected,
            });
        }
        out.warnings.push(format!(
            "warning: checkpoint {} config hash {} differs from current {}; proceeding under --override-hash",
            path.display(),
            ck.config_hash,
            expected
        ));
    }
    Ok(ck)
}

fn train<T: Trainable>(inv: &Invocation, mut trainer: T, schedule: &TrainSchedule) -> Result<Outcome, PipelineError> {
    let mut out = Outcome::default();
    if let Some(path) = &inv.checkpoint {
        let ck = open_checkpoint(inv, path, &[T::MODEL], &mut out)?;
        trainer
            .restore(&ck)
            .map_err(|e| data(format!("checkpoint {}", path.display()), e))?;
    }
    let dir = inv.out.join("checkpoints");
    let mut last = None;
    let mut saved = None;
    while trainer.iteration() < schedule.steps {
        let rec = trainer.step()?;
        let it = trainer.iteration();
        if it.is_multiple_of(schedule.checkpoint_every) || it == schedule.steps {
            let ck = Checkpoint {
                model: T::MODEL.into(),
                seed: trainer.seed(),
                iteration: it,
                config_hash: inv.config.hash(),
                loss_d: rec.loss_d,
                loss_g: rec.loss_g,
                sections: trainer.sections(),
            };
            saved = Some(ck.save(&dir)?);
        }
        last = Some(rec);
    }
    out.line("model", T::MODEL);
    out.line("iteration", trainer.iteration());
    if let Some(rec) = last {
        out.line("loss_d", rec.loss_d);
        out.line("loss_g", rec.loss_g);
        for (k, v) in rec.extra {
            out.line(k, v);
        }
    }
    if let Some(p) = saved {
        out.line("checkpoint", p.display());
    }
    Ok(out)
}

fn cmd_train_skin(inv: &Invocation) -> Result<Outcome, PipelineError> {
    let cfg = &inv.config;
    let images = training_images(cfg, None)?;
    train(inv, SkinGanTrainer::new(cfg.skin_config(), &images)?, &cfg.skin_schedule)
}

fn cmd_train_ergan(inv: &Invocation) -> Result<Outcome, PipelineError> {
    let cfg = &inv.config;
    let mut warnings = Vec::new();
    let images = match training_images(cfg, Some(("Eyeglasses", -1))) {
        Ok(v) => v,
        Err(PipelineError::Data(reason)) if reason.starts_with("no training images") => {
            warnings.push("warning: no glasses-free training records; using every training image".to_string());
            training_images(cfg, None)?
        }
        Err(e) => return Err(e),
    };
    let mut out = train(inv, ErganTrainer::new(cfg.ergan_config(), &images)?, &cfg.ergan_schedule)?;
    out.warnings.extend(warnings);
    Ok(out)
}

fn frames_dir(inv: &Invocation) -> PathBuf {
    inv.input.clone().unwrap_or_else(|| inv.config.resolve(&inv.config.frames))
}

fn load_all(files: &[PathBuf], dir: &Path) -> Result<Vec<Image>, PipelineError> {
    if files.is_empty() {
        return Err(PipelineError::Data(format!("no PNG or JPEG images in {}", dir.display())));
    }
    files.iter().map(|f| load(f).map(|i| i.to_rgb())).collect()
}

fn cmd_train_enhance(inv: &Invocation) -> Result<Outcome, PipelineError> {
    let dir = frames_dir(inv);
    let frames = load_all(&list_images(&dir)?, &dir)?;
    let trainer = EnhanceTrainer::new(inv.config.enhance_config(), &frames).map_err(|e| match e {
        crate::enhance::EnhanceError::Net(n) => PipelineError::from(n),
        other => PipelineError::Data(other.to_string()),
    })?;
    train(inv, trainer, &inv.config.enhance_schedule)
}

fn absolute(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

fn pairs_csv(rows: &[(String, String, Category)]) -> String {
    let mut s = String::from("generated,reference,category\n");
    for (g, r, c) in rows {
        s.push_str(&format!("{g},{r},{}\n", c.as_str()));
    }
    s
}

fn cmd_generate(inv: &Invocation) -> Result<Outcome, PipelineError> {
    let cfg = &inv.config;
    let path = inv
        .checkpoint
        .as_ref()
        .ok_or_else(|| PipelineError::Usage("generate needs --checkpoint".into()))?;
    let mut out = Outcome::default();
    let ck = open_checkpoint(inv, path, &["skin", "ergan"], &mut out)?;
    let restore_err = |e: String| data(format!("checkpoint {}", path.display()), e);
    let dir = inv.input.clone().unwrap_or_else(|| cfg.resolve(&cfg.images));
    let files = list_images(&dir)?;
    if files.is_empty() {
        return Err(PipelineError::Data(format!("no PNG or JPEG images in {}", dir.display())));
    }
    let gen_seed = derive_seed(cfg.seed, "generate");
    let mut rows = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    if ck.model == "skin" {
        let mut g = Generator::new(&cfg.skin_config(), &mut rng);
        restore_params(&mut g.params, section(&ck, "generator").map_err(restore_err)?).map_err(restore_err)?;
        for f in &files {
            let img = load(f)?.to_rgb();
            let y = recolor(&g, &img, derive_seed(gen_seed, &file_name(f)))?;
            let name = format!("{}_skin.png", file_stem(f));
            save(&y, &inv.out.join(&name))?;
            rows.push((name, absolute(f).display().to_string(), Category::Skin));
        }
    } else {
        let mut g = ErganGenerator::new(&cfg.ergan_config(), &mut rng);
        restore_params(&mut g.params, section(&ck, "generator").map_err(restore_err)?).map_err(restore_err)?;
        for f in &files {
            let img = load(f)?.to_rgb();
            let (y, mask) = remove_glasses(&g, &img)?;
            let name = format!("{}_noglasses.png", file_stem(f));
            save(&y, &inv.out.join(&name))?;
            save(&mask, &inv.out.join(format!("{}_mask.png", file_stem(f))))?;
            rows.push((name, absolute(f).display().to_string(), Category::Eyeglasses));
        }
    }
    let pairs = inv.out.join("pairs.csv");
    write(&pairs, pairs_csv(&rows))?;
    out.line("model", &ck.model);
    out.line("generated", rows.len());
    out.line("pairs", pairs.display());
    Ok(out)
}

fn cmd_enhance(inv: &Invocation) -> Result<Outcome, PipelineError> {
    let cfg = &inv.config;
    let path = inv
        .checkpoint
        .as_ref()
        .ok_or_else(|| PipelineError::Usage("enhance needs --checkpoint".into()))?;
    let mut out = Outcome::default();
    let ck = open_checkpoint(inv, path, &["enhance"], &mut out)?;
    let restore_err = |e: String| data(format!("checkpoint {}", path.display()), e);
    let mut g = EnhanceGenerator::new(&cfg.enhance.arch, &mut ChaCha8Rng::seed_from_u64(0));
    restore_params(&mut g.params, section(&ck, "generator").map_err(restore_err)?).map_err(restore_err)?;
    let dir = frames_dir(inv);
    let files = list_images(&dir)?;
    if files.is_empty() {
        return Err(PipelineError::Data(format!("no PNG or JPEG images in {}", dir.display())));
    }
    let ecfg = cfg.enhance_config();
    let mut rows = Vec::new();
    for f in &files {
        let img = load(f)?.to_rgb();
        let y = enhance_image(&ecfg, &g, &img).map_err(|e| data(f.display(), e))?;
        let name = format!("{}.png", file_stem(f));
        save(&y, &inv.out.join(&name))?;
        rows.push((name, absolute(f).display().to_string(), Category::Enhanced));
    }
    let pairs = inv.out.join("pairs.csv");
    write(&pairs, pairs_csv(&rows))?;
    out.line("enhanced", rows.len());
    out.line("pairs", pairs.display());
    Ok(out)
}

/// Reads `generated,reference,category` lines; relative paths are taken
/// from the pairs file's directory.
pub fn read_pairs(path: &Path) -> Result<Vec<(Image, Image, Category)>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| data(format!("pairs file {}", path.display()), e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let window = SsimParams::default().window;
    let mut pairs = Vec::new();
    let mut first = true;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if std::mem::take(&mut first) && line == "generated,reference,category" {
            continue;
        }
        let at = |e: &dyn Display| PipelineError::Data(format!("{} line {}: {e}", path.display(), i + 1));
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let [g, r, c] = fields[..] else {
            return Err(at(&"expected generated,reference,category"));
        };
        let category: Category = c.parse().map_err(|e: String| at(&e))?;
        let mut a = load_image(base.join(g)).map_err(|e| at(&e))?;
        let mut b = load_image(base.join(r)).map_err(|e| at(&e))?;
        if a.channels() != b.channels() {
            a = a.to_rgb();
            b = b.to_rgb();
        }
        if a.dims() != b.dims() {
            return Err(at(&format!("image shapes differ: {:?} vs {:?}", a.dims(), b.dims())));
        }
        if a.height() < window || a.width() < window {
            return Err(at(&format!("images smaller than the {window}x{window} SSIM window")));
        }
        pairs.push((a, b, category));
    }
    if pairs.is_empty() {
        return Err(PipelineError::Data(format!("pairs file {} lists no pairs", path.display())));
    }
    Ok(pairs)
}

fn cmd_evaluate(inv: &Invocation) -> Result<Outcome, PipelineError> {
    let cfg = &inv.config;
    let path = match (&inv.pairs, cfg.evaluate_pairs.is_empty()) {
        (Some(p), _) => p.clone(),
        (None, false) => cfg.resolve(&cfg.evaluate_pairs),
        (None, true) => return Err(PipelineError::Usage("evaluate needs --pairs or evaluate.pairs".into())),
    };
    let pairs = read_pairs(&path)?;
    let report = aggregate(&pairs).map_err(|e| data(path.display(), e))?;
    let csv = inv.out.join("metrics.csv");
    write_report_csv(&report, &csv).map_err(|e| PipelineError::Data(e.to_string()))?;
    let mut out = Outcome::default();
    out.line("pairs", pairs.len());
    for s in &report.stats {
        out.line(&format!("{}.{}.mean", s.category.as_str(), s.metric.as_str()), s.mean);
    }
    out.line("report", csv.display());
    Ok(out)
}

/// Synthetic candidates per attribute from `<dir>/<attribute>/` folders.
fn synthetic_candidates(
    m: &AttributeManifest,
    dirs: &[PathBuf],
    out: &mut Outcome,
) -> Result<HashMap<String, Vec<String>>, PipelineError> {
    let mut found: HashMap<String, Vec<String>> = HashMap::new();
    for dir in dirs {
        let entries = std::fs::read_dir(dir).map_err(|e| data(format!("synthetic directory {}", dir.display()), e))?;
        let mut subdirs: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        subdirs.sort();
        for sub in subdirs {
            let attr = file_name(&sub);
            if m.attribute_index(&attr).is_none() {
                out.warnings
                    .push(format!("warning: ignoring {}: {attr} is not a manifest attribute", sub.display()));
                continue;
            }
            for f in list_images(&sub)? {
                let id = f.display().to_string().replace('\\', "/");
                if id.chars().any(char::is_whitespace) {
                    return Err(PipelineError::Data(format!("synthetic path {id:?} contains whitespace")));
                }
                found.entry(attr.clone()).or_default().push(id);
            }
        }
    }
    Ok(found)
}

fn cmd_assemble(inv: &Invocation) -> Result<Outcome, PipelineError> {
    let cfg = &inv.config;
    let m = load_manifest(&cfg.resolve(&cfg.manifest))?;
    let report_path = match (&inv.report, cfg.assemble_report.is_empty()) {
        (Some(p), _) => p.clone(),
        (None, false) => cfg.resolve(&cfg.assemble_report),
        (None, true) => inv.out.join("bias_report.txt"),
    };
    let text = std::fs::read_to_string(&report_path).map_err(|e| data(format!("bias report {}", report_path.display()), e))?;
    let flagged = flagged_attributes_from_text(&text).map_err(|e| data(report_path.display(), e))?;
    let mut dirs = inv.synthetic.clone();
    dirs.extend(cfg.synthetic_dirs.iter().map(|d| cfg.resolve(d)));
    let mut out = Outcome::default();
    let known: HashSet<&str> = m.attribute_names.iter().map(String::as_str).collect();
    for name in &flagged {
        if !known.contains(name.as_str()) {
            return Err(PipelineError::Data(format!(
                "bias report {} flags {name}, which the manifest does not have",
                report_path.display()
            )));
        }
    }
    let candidates = synthetic_candidates(&m, &dirs, &mut out)?;
    let (balanced, lines) = assemble_manifest(&m, &flagged, &candidates, cfg.target_rate);
    let mut report = format!(
        "target_rate = {}\noriginal_records = {}\nrecords = {}\nadded_records = {}\n",
        cfg.target_rate,
        m.len(),
        balanced.len(),
        balanced.len() - m.len()
    );
    for l in &lines {
        if l.available == 0 {
            out.warnings.push(format!(
                "warning: no synthetic images for flagged attribute {}; its rate stays {}",
                l.attribute, l.rate_after
            ));
        }
        report.push_str(&l.to_text());
        out.line(&format!("rate.{}", l.attribute), l.rate_after);
    }
    let manifest_out = inv.out.join("balanced_attributes.txt");
    write(&manifest_out, balanced.to_text())?;
    write(&inv.out.join("assembly_report.txt"), &report)?;
    out.line("added_records", balanced.len() - m.len());
    out.line("manifest", manifest_out.display());
    Ok(out)
}
