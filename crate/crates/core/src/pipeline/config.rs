//! Line-oriented `key = value` configuration with dotted section prefixes.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::AugmentConfig;
use crate::enhance::EnhanceConfig;
use crate::ergan::ErganConfig;
use crate::skin_gan::SkinGanConfig;

use super::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, found {text:?}")]
    Syntax { line: usize, text: String },
    #[error("line {line}: key {key} given twice")]
    Duplicate { line: usize, key: String },
    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),
    #[error("line {line}: bad value for {key}: {reason}")]
    Value { line: usize, key: String, reason: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    pub steps: u64,
    pub checkpoint_every: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub output_dir: String,
    pub manifest: String,
    pub images: String,
    pub frames: String,
    pub split_seed: u64,
    pub bias_threshold: f64,
    pub target_rate: f64,
    pub synthetic_dirs: Vec<String>,
    pub assemble_report: String,
    pub evaluate_pairs: String,
    pub augment: AugmentConfig,
    pub skin: SkinGanConfig,
    pub skin_schedule: TrainSchedule,
    pub ergan: ErganConfig,
    pub ergan_schedule: TrainSchedule,
    pub enhance: EnhanceConfig,
    pub enhance_schedule: TrainSchedule,
    /// Directory relative paths are resolved against; not part of the hash.
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let schedule = TrainSchedule {
            steps: 1000,
            checkpoint_every: 100,
        };
        PipelineConfig {
            seed: 0,
            output_dir: "out".into(),
            manifest: "list_attr_celeba.txt".into(),
            images: "images".into(),
            frames: "frames".into(),
            split_seed: 0,
            bias_threshold: crate::bias::DEFAULT_THRESHOLD,
            target_rate: 0.5,
            synthetic_dirs: Vec::new(),
            assemble_report: String::new(),
            evaluate_pairs: String::new(),
            augment: AugmentConfig::default(),
            skin: SkinGanConfig::default(),
            skin_schedule: schedule.clone(),
            ergan: ErganConfig::default(),
            ergan_schedule: schedule.clone(),
            enhance: EnhanceConfig::default(),
            enhance_schedule: schedule,
            base_dir: PathBuf::from("."),
        }
    }
}

fn list<const N: usize>(v: &[usize; N]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<const N: usize>(s: &str) -> Result<[usize; N], String> {
    let items: Vec<usize> = s
        .split(',')
        .map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}")))
        .collect::<Result<_, _>>()?;
    let n = items.len();
    items.try_into().map_err(|_| format!("expected {N} comma-separated widths, got {n}"))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

fn flag(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err("expected true or false".into()),
    }
}

impl PipelineConfig {
    /// Every key with its current value, sorted by key.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.skin;
        let e = &self.ergan;
        let h = &self.enhance;
        let mut v: Vec<(&'static str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("output.dir", self.output_dir.clone()),
            ("data.manifest", self.manifest.clone()),
            ("data.images", self.images.clone()),
            ("data.frames", self.frames.clone()),
            ("data.split_seed", self.split_seed.to_string()),
            ("bias.threshold", self.bias_threshold.to_string()),
            ("assemble.target_rate", self.target_rate.to_string()),
            ("assemble.synthetic_dirs", self.synthetic_dirs.join(",")),
            ("assemble.report", self.assemble_report.clone()),
            ("evaluate.pairs", self.evaluate_pairs.clone()),
            ("augment.p_flip", self.augment.p_flip.to_string()),
            ("augment.max_angle_deg", self.augment.max_angle_deg.to_string()),
            ("skin.image_size", s.image_size.to_string()),
            ("skin.z_dim", s.z_dim.to_string()),
            ("skin.lambda_gp", s.lambda_gp.to_string()),
            ("skin.n_critic", s.n_critic.to_string()),
            ("skin.lr_critic", s.lr_critic.to_string()),
            ("skin.lr_generator", s.lr_generator.to_string()),
            ("skin.adam_beta1", s.adam_beta1.to_string()),
            ("skin.adam_beta2", s.adam_beta2.to_string()),
            ("skin.batch_size", s.batch_size.to_string()),
            ("skin.literal_fc", s.literal_fc.to_string()),
            ("skin.encoder", list(&s.arch.encoder)),
            ("skin.fc", s.arch.fc.to_string()),
            ("skin.decoder", list(&s.arch.decoder)),
            ("skin.critic", list(&s.arch.critic)),
            ("skin.steps", self.skin_schedule.steps.to_string()),
            ("skin.checkpoint_every", self.skin_schedule.checkpoint_every.to_string()),
            ("ergan.image_size", e.image_size.to_string()),
            ("ergan.w_adv", e.w_adv.to_string()),
            ("ergan.w_id", e.w_id.to_string()),
            ("ergan.w_rec", e.w_rec.to_string()),
            ("ergan.w_mask", e.w_mask.to_string()),
            ("ergan.lr_generator", e.lr_generator.to_string()),
            ("ergan.lr_discriminator", e.lr_discriminator.to_string()),
            ("ergan.adam_beta1", e.adam_beta1.to_string()),
            ("ergan.adam_beta2", e.adam_beta2.to_string()),
            ("ergan.batch_size", e.batch_size.to_string()),
            ("ergan.encoder", list(&e.arch.encoder)),
            ("ergan.discriminator", list(&e.arch.discriminator)),
            ("ergan.steps", self.ergan_schedule.steps.to_string()),
            ("ergan.checkpoint_every", self.ergan_schedule.checkpoint_every.to_string()),
            ("enhance.work_size", h.work_size.to_string()),
            ("enhance.superpixels", h.superpixels.to_string()),
            ("enhance.edge_threshold", h.edge_threshold.to_string()),
            ("enhance.blur_sigma", h.blur_sigma.to_string()),
            ("enhance.slic_iters", h.slic_iters.to_string()),
            ("enhance.w_d1", h.w_d1.to_string()),
            ("enhance.w_d2", h.w_d2.to_string()),
            ("enhance.w_content", h.w_content.to_string()),
            ("enhance.lr_generator", h.lr_generator.to_string()),
            ("enhance.lr_discriminator", h.lr_discriminator.to_string()),
            ("enhance.adam_beta1", h.adam_beta1.to_string()),
            ("enhance.adam_beta2", h.adam_beta2.to_string()),
            ("enhance.batch_size", h.batch_size.to_string()),
            ("enhance.support", list(&h.arch.support)),
            ("enhance.main", list(&h.arch.main)),
            ("enhance.discriminator", list(&h.arch.discriminator)),
            ("enhance.steps", self.enhance_schedule.steps.to_string()),
            ("enhance.checkpoint_every", self.enhance_schedule.checkpoint_every.to_string()),
        ];
        v.sort_by(|a, b| a.0.cmp(b.0));
        v
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, String> {
        let s = &mut self.skin;
        let e = &mut self.ergan;
        let h = &mut self.enhance;
        match key {
            "seed" => self.seed = num(value)?,
            "output.dir" => self.output_dir = value.into(),
            "data.manifest" => self.manifest = value.into(),
            "data.images" => self.images = value.into(),
            "data.frames" => self.frames = value.into(),
            "data.split_seed" => self.split_seed = num(value)?,
            "bias.threshold" => self.bias_threshold = num(value)?,
            "assemble.target_rate" => self.target_rate = num(value)?,
            "assemble.synthetic_dirs" => {
                self.synthetic_dirs = value
                    .split(',')
                    .map(str::trim)
                    .filter(|d| !d.is_empty())
                    .map(String::from)
                    .collect()
            }
            "assemble.report" => self.assemble_report = value.into(),
            "evaluate.pairs" => self.evaluate_pairs = value.into(),
            "augment.p_flip" => self.augment.p_flip = num(value)?,
            "augment.max_angle_deg" => self.augment.max_angle_deg = num(value)?,
            "skin.image_size" => s.image_size = num(value)?,
            "skin.z_dim" => s.z_dim = num(value)?,
            "skin.lambda_gp" => s.lambda_gp = num(value)?,
            "skin.n_critic" => s.n_critic = num(value)?,
            "skin.lr_critic" => s.lr_critic = num(value)?,
            "skin.lr_generator" => s.lr_generator = num(value)?,
            "skin.adam_beta1" => s.adam_beta1 = num(value)?,
            "skin.adam_beta2" => s.adam_beta2 = num(value)?,
            "skin.batch_size" => s.batch_size = num(value)?,
            "skin.literal_fc" => s.literal_fc = flag(value)?,
            "skin.encoder" => s.arch.encoder = parse_list(value)?,
            "skin.fc" => s.arch.fc = num(value)?,
            "skin.decoder" => s.arch.decoder = parse_list(value)?,
            "skin.critic" => s.arch.critic = parse_list(value)?,
            "skin.steps" => self.skin_schedule.steps = num(value)?,
            "skin.checkpoint_every" => self.skin_schedule.checkpoint_every = num(value)?,
            "ergan.image_size" => e.image_size = num(value)?,
            "ergan.w_adv" => e.w_adv = num(value)?,
            "ergan.w_id" => e.w_id = num(value)?,
            "ergan.w_rec" => e.w_rec = num(value)?,
            "ergan.w_mask" => e.w_mask = num(value)?,
            "ergan.lr_generator" => e.lr_generator = num(value)?,
            "ergan.lr_discriminator" => e.lr_discriminator = num(value)?,
            "ergan.adam_beta1" => e.adam_beta1 = num(value)?,
            "ergan.adam_beta2" => e.adam_beta2 = num(value)?,
            "ergan.batch_size" => e.batch_size = num(value)?,
            "ergan.encoder" => e.arch.encoder = parse_list(value)?,
            "ergan.discriminator" => e.arch.discriminator = parse_list(value)?,
            "ergan.steps" => self.ergan_schedule.steps = num(value)?,
            "ergan.checkpoint_every" => self.ergan_schedule.checkpoint_every = num(value)?,
            "enhance.work_size" => h.work_size = num(value)?,
            "enhance.superpixels" => h.superpixels = num(value)?,
            "enhance.edge_threshold" => h.edge_threshold = num(value)?,
            "enhance.blur_sigma" => h.blur_sigma = num(value)?,
            "enhance.slic_iters" => h.slic_iters = num(value)?,
            "enhance.w_d1" => h.w_d1 = num(value)?,
            "enhance.w_d2" => h.w_d2 = num(value)?,
            "enhance.w_content" => h.w_content = num(value)?,
            "enhance.lr_generator" => h.lr_generator = num(value)?,
            "enhance.lr_discriminator" => h.lr_discriminator = num(value)?,
            "enhance.adam_beta1" => h.adam_beta1 = num(value)?,
            "enhance.adam_beta2" => h.adam_beta2 = num(value)?,
            "enhance.batch_size" => h.batch_size = num(value)?,
            "enhance.support" => h.arch.support = parse_list(value)?,
            "enhance.main" => h.arch.main = parse_list(value)?,
            "enhance.discriminator" => h.arch.discriminator = parse_list(value)?,
            "enhance.steps" => self.enhance_schedule.steps = num(value)?,
            "enhance.checkpoint_every" => self.enhance_schedule.checkpoint_every = num(value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Parses config text over the defaults. Blank lines and `#` comments are
    /// skipped; every unknown key is reported at once.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = PipelineConfig::default();
        let mut seen = std::collections::HashSet::new();
        let mut unknown = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            if !seen.insert(key.to_string()) {
                return Err(ConfigError::Duplicate {
                    line: i + 1,
                    key: key.to_string(),
                });
            }
            match cfg.set(key, value) {
                Ok(true) => {}
                Ok(false) => unknown.push(key.to_string()),
                Err(reason) => {
                    return Err(ConfigError::Value {
                        line: i + 1,
                        key: key.to_string(),
                        reason,
                    })
                }
            }
        }
        if !unknown.is_empty() {
            return Err(ConfigError::UnknownKeys(unknown));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !(self.target_rate > 0.0 && self.target_rate <= 1.0) {
            return invalid(format!("assemble.target_rate {} must lie in (0, 1]", self.target_rate));
        }
        if !(self.bias_threshold > 0.0 && self.bias_threshold < 1.0) {
            return invalid(format!("bias.threshold {} must lie in (0, 1)", self.bias_threshold));
        }
        if !(0.0..=1.0).contains(&self.augment.p_flip) || !(0.0..=45.0).contains(&self.augment.max_angle_deg) {
            return invalid("augment.p_flip must lie in [0, 1] and augment.max_angle_deg in [0, 45]".into());
        }
        for (name, sched) in [
            ("skin", &self.skin_schedule),
            ("ergan", &self.ergan_schedule),
            ("enhance", &self.enhance_schedule),
        ] {
            if sched.checkpoint_every == 0 {
                return invalid(format!("{name}.checkpoint_every must be positive"));
            }
        }
        self.skin_config()
            .validate()
            .and_then(|_| self.ergan_config().validate())
            .and_then(|_| self.enhance_config().validate())
            .or_else(|e| invalid(e.to_string()))
    }

    /// Canonical text: sorted `key = value` lines without the output
    /// directory, which does not affect results.
    pub fn canonical_text(&self) -> String {
        self.entries()
            .into_iter()
            .filter(|(k, _)| *k != "output.dir")
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_text().as_bytes()))
    }

    pub fn resolve(&self, p: &str) -> PathBuf {
        let p = Path::new(p);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn skin_config(&self) -> SkinGanConfig {
        SkinGanConfig {
            seed: derive_seed(self.seed, "train-skin"),
            augment: self.augment,
            ..self.skin.clone()
        }
    }

    pub fn ergan_config(&self) -> ErganConfig {
        ErganConfig {
            seed: derive_seed(self.seed, "train-ergan"),
            augment: self.augment,
            ..self.ergan.clone()
        }
    }

    pub fn enhance_config(&self) -> EnhanceConfig {
        EnhanceConfig {
            seed: derive_seed(self.seed, "train-enhance"),
            ..self.enhance.clone()
        }
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_round_trip() {
        let cfg = PipelineConfig::default();
        let text: String = cfg.entries().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
        let back = PipelineConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        for (k, v) in cfg.entries() {
            assert!(PipelineConfig::default().set(k, &v).unwrap(), "{k}");
        }
    }

    #[test]
    fn reordering_keeps_hash() {
        let a = PipelineConfig::parse("seed = 3\nskin.lambda_gp = 5\n# note\n\nbias.threshold = 0.1\n").unwrap();
        let b = PipelineConfig::parse("bias.threshold = 0.1\nskin.lambda_gp = 5\nseed = 3\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        let c = PipelineConfig::parse("bias.threshold = 0.1\nskin.lambda_gp = 6\nseed = 3\n").unwrap();
        assert_ne!(a.hash(), c.hash());
        let d = PipelineConfig::parse("output.dir = elsewhere\nbias.threshold = 0.1\nskin.lambda_gp = 5\nseed = 3\n").unwrap();
        assert_eq!(a.hash(), d.hash());
    }

    #[test]
    fn errors() {
        match PipelineConfig::parse("seed = 1\nskin.lamda_gp = 3\nbogus = 1\n") {
            Err(ConfigError::UnknownKeys(k)) => assert_eq!(k, ["skin.lamda_gp", "bogus"]),
            other => panic!("{other:?}"),
        }
        assert!(matches!(PipelineConfig::parse("seed 1"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(
            PipelineConfig::parse("seed = 1\nseed = 2"),
            Err(ConfigError::Duplicate { line: 2, .. })
        ));
        assert!(matches!(
            PipelineConfig::parse("skin.n_critic = x"),
            Err(ConfigError::Value { line: 1, .. })
        ));
        assert!(matches!(PipelineConfig::parse("skin.encoder = 3,4,5"), Err(ConfigError::Value { .. })));
        assert!(matches!(PipelineConfig::parse("assemble.target_rate = 0"), Err(ConfigError::Invalid(_))));
        assert!(matches!(PipelineConfig::parse("ergan.image_size = 24"), Err(ConfigError::Invalid(_))));
        assert!(PipelineConfig::parse("assemble.target_rate = 1").is_ok());
    }

    #[test]
    fn model_seeds_derive_from_master() {
        let a = PipelineConfig::parse("seed = 1").unwrap();
        let b = PipelineConfig::parse("seed = 2").unwrap();
        assert_ne!(a.skin_config().seed, b.skin_config().seed);
        assert_ne!(a.skin_config().seed, a.ergan_config().seed);
        assert_eq!(a.skin_config().seed, derive_seed(1, "train-skin"));
    }
}
