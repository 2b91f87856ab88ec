//! Flat `key = value` run configuration.
//!
//! Grammar: one `key = value` pair per line, `#` starts a comment, blank
//! lines are ignored, keys may appear once. Unknown keys are rejected.
//! Values from the file are overridden by the `METALINK_SEED` environment
//! variable (seed only) and then by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use metalink::datasets::{generate_synthetic, load_csv, SyntheticSpec};
use metalink::model::HeadKind;
use metalink::training::{Setting, TrainConfig};
use metalink::Dataset;

use crate::error::CliError;

pub const SEED_ENV: &str = "METALINK_SEED";

/// Every accepted key with its documentation, in echo order.
pub const KEYS: &[(&str, &str)] = &[
    ("data_path", "CSV dataset; empty means generate synthetic data from the keys below"),
    ("n", "synthetic examples"),
    ("m", "synthetic tasks"),
    ("d", "synthetic feature dimension"),
    ("rho", "synthetic task correlation in [0,1]"),
    ("noise", "synthetic label flip probability in [0,1)"),
    ("missing", "synthetic missing-label probability in [0,1)"),
    ("data_seed", "synthetic generator seed"),
    ("out_dir", "directory for all outputs"),
    ("setting", "standard | relational | meta | relational_meta | fewshot"),
    ("aux_ratio", "fraction of tasks revealed per example, in [0,1)"),
    ("held_out_task_fraction", "fraction of tasks held out in meta settings"),
    ("shots", "support examples per episode (per class for fewshot)"),
    ("query_size", "query examples per episode (per class for fewshot)"),
    ("ways", "meta tasks per episode, or auto for the held-out count"),
    ("batch_size", "examples per batch in standard and relational settings"),
    ("epochs", "training epochs"),
    ("base_lr", "initial Adam learning rate, annealed by a cosine schedule"),
    ("weight_decay", "L2 weight decay"),
    ("layers", "message-passing layers"),
    ("hidden", "comma-separated hidden widths of the feature extractor"),
    ("embed_dim", "embedding and task-node width"),
    ("shared_weights", "share message and update weights across node types"),
    ("head", "mlp | dot edge predictor"),
    ("seed", "run seed (flag > METALINK_SEED > file > 0)"),
    ("eval_every", "epochs between validation passes"),
    ("split", "train,val,test fractions"),
    ("eval_episodes", "few-shot evaluation episodes"),
];

fn defaults() -> BTreeMap<&'static str, String> {
    let t = TrainConfig::default();
    let s = SyntheticSpec {
        n: 1000,
        m: 10,
        d: 16,
        rho: 0.5,
        label_noise: 0.0,
        missing_frac: 0.0,
        seed: 0,
    };
    let mut map = BTreeMap::new();
    map.insert("data_path", String::new());
    map.insert("n", s.n.to_string());
    map.insert("m", s.m.to_string());
    map.insert("d", s.d.to_string());
    map.insert("rho", s.rho.to_string());
    map.insert("noise", s.label_noise.to_string());
    map.insert("missing", s.missing_frac.to_string());
    map.insert("data_seed", s.seed.to_string());
    map.insert("out_dir", "out".to_string());
    map.insert("setting", setting_name(t.setting).to_string());
    map.insert("aux_ratio", t.aux_ratio.to_string());
    map.insert("held_out_task_fraction", t.held_out_task_fraction.to_string());
    map.insert("shots", t.shots.to_string());
    map.insert("query_size", t.query_size.to_string());
    map.insert("ways", t.ways.map_or("auto".to_string(), |w| w.to_string()));
    map.insert("batch_size", t.batch_size.to_string());
    map.insert("epochs", t.epochs.to_string());
    map.insert("base_lr", t.base_lr.to_string());
    map.insert("weight_decay", t.weight_decay.to_string());
    map.insert("layers", t.layers.to_string());
    map.insert("hidden", join(&t.hidden));
    map.insert("embed_dim", t.embed_dim.to_string());
    map.insert("shared_weights", t.shared_weights.to_string());
    map.insert("head", "mlp".to_string());
    map.insert("seed", t.seed.to_string());
    map.insert("eval_every", t.eval_every.to_string());
    map.insert("split", format!("{},{},{}", t.split.0, t.split.1, t.split.2));
    map.insert("eval_episodes", t.eval_episodes.to_string());
    map
}

fn setting_name(s: Setting) -> &'static str {
    match s {
        Setting::Standard => "standard",
        Setting::Relational => "relational",
        Setting::Meta => "meta",
        Setting::RelationalMeta => "relational_meta",
        Setting::Fewshot => "fewshot",
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Raw key/value layers; later layers win.
#[derive(Clone, Debug, Default)]
pub struct ConfigLayers {
    values: BTreeMap<&'static str, String>,
    base_dir: Option<PathBuf>,
}

fn known_key(key: &str) -> Result<&'static str, CliError> {
    KEYS.iter()
        .map(|k| k.0)
        .find(|k| *k == key)
        .ok_or_else(|| CliError::Config(format!("unknown key {key:?}")))
}

impl ConfigLayers {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut layers = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        layers.base_dir = path.parent().map(Path::to_path_buf);
        Ok(layers)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = known_key(key.trim()).map_err(|e| CliError::Config(format!("line {}: {e}", i + 1)))?;
            if values.insert(key, value.trim().to_string()).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {key:?}", i + 1)));
            }
        }
        Ok(Self { values, base_dir: None })
    }

    /// Applies `METALINK_SEED` when set.
    pub fn with_env_seed(mut self) -> Self {
        if let Ok(seed) = std::env::var(SEED_ENV) {
            self.values.insert("seed", seed);
        }
        self
    }

    /// Applies `key=value` overrides from flags.
    pub fn with_overrides<'a>(mut self, pairs: impl IntoIterator<Item = &'a str>) -> Result<Self, CliError> {
        for pair in pairs {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("override {pair:?} is not key=value")))?;
            self.values.insert(known_key(key.trim())?, value.trim().to_string());
        }
        Ok(self)
    }

    pub fn set(mut self, key: &str, value: impl ToString) -> Result<Self, CliError> {
        self.values.insert(known_key(key)?, value.to_string());
        Ok(self)
    }

    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut merged = defaults();
        merged.extend(self.values.iter().map(|(k, v)| (*k, v.clone())));
        RunConfig::from_map(merged, self.base_dir.as_deref())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSource,
    pub out_dir: PathBuf,
    resolved: BTreeMap<&'static str, String>,
}

fn parse<T: std::str::FromStr>(map: &BTreeMap<&'static str, String>, key: &str) -> Result<T, CliError> {
    let raw = &map[key];
    raw.parse()
        .map_err(|_| CliError::Config(format!("{key}: cannot parse {raw:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, raw: &str) -> Result<Vec<T>, CliError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Config(format!("{key}: cannot parse {s:?}"))))
        .collect()
}

fn parse_bool(key: &str, raw: &str) -> Result<bool, CliError> {
    match raw {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(CliError::Config(format!("{key}: expected true or false, got {raw:?}"))),
    }
}

impl RunConfig {
    fn from_map(map: BTreeMap<&'static str, String>, base_dir: Option<&Path>) -> Result<Self, CliError> {
        let split: Vec<f64> = parse_list("split", &map["split"])?;
        let [a, b, c] = split[..] else {
            return Err(CliError::Config("split needs three comma-separated fractions".into()));
        };
        let ways = match map["ways"].as_str() {
            "auto" => None,
            w => Some(w.parse().map_err(|_| CliError::Config(format!("ways: cannot parse {w:?}")))?),
        };
        let head = match map["head"].as_str() {
            "mlp" => HeadKind::Mlp,
            "dot" => HeadKind::Dot,
            h => return Err(CliError::Config(format!("head: expected mlp or dot, got {h:?}"))),
        };
        let train = TrainConfig {
            setting: map["setting"].parse().map_err(CliError::from)?,
            aux_ratio: parse(&map, "aux_ratio")?,
            held_out_task_fraction: parse(&map, "held_out_task_fraction")?,
            shots: parse(&map, "shots")?,
            query_size: parse(&map, "query_size")?,
            ways,
            batch_size: parse(&map, "batch_size")?,
            epochs: parse(&map, "epochs")?,
            base_lr: parse(&map, "base_lr")?,
            weight_decay: parse(&map, "weight_decay")?,
            layers: parse(&map, "layers")?,
            hidden: parse_list("hidden", &map["hidden"])?,
            embed_dim: parse(&map, "embed_dim")?,
            shared_weights: parse_bool("shared_weights", &map["shared_weights"])?,
            head,
            seed: parse(&map, "seed")?,
            eval_every: parse(&map, "eval_every")?,
            split: (a, b, c),
            eval_episodes: parse(&map, "eval_episodes")?,
        };
        let data = if map["data_path"].is_empty() {
            let spec = SyntheticSpec {
                n: parse(&map, "n")?,
                m: parse(&map, "m")?,
                d: parse(&map, "d")?,
                rho: parse(&map, "rho")?,
                label_noise: parse(&map, "noise")?,
                missing_frac: parse(&map, "missing")?,
                seed: parse(&map, "data_seed")?,
            };
            spec.validate()?;
            DataSource::Synthetic(spec)
        } else {
            let p = PathBuf::from(&map["data_path"]);
            DataSource::Csv(match base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            })
        };
        let mut resolved = map;
        if let DataSource::Csv(p) = &data {
            resolved.insert("data_path", p.display().to_string());
        }
        let out_dir = PathBuf::from(&resolved["out_dir"]);
        Ok(Self { train, data, out_dir, resolved })
    }

    pub fn load_dataset(&self) -> Result<Dataset, CliError> {
        Ok(match &self.data {
            DataSource::Csv(path) => load_csv(path)?,
            DataSource::Synthetic(spec) => generate_synthetic(spec)?,
        })
    }

    /// The merged configuration in the file grammar, every key present.
    pub fn render(&self) -> String {
        let mut out = String::from("# resolved configuration\n");
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.resolved[key]);
        }
        out
    }
}

/// Help text listing every key and its default.
pub fn key_help() -> String {
    let d = defaults();
    let mut out = String::from("Config keys (`key = value`, `#` comments):\n");
    for (key, doc) in KEYS {
        let _ = writeln!(out, "  {key:<24} {doc} [default: {}]", d[key]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_key_has_a_default() {
        let d = defaults();
        assert_eq!(d.len(), KEYS.len());
        assert!(KEYS.iter().all(|(k, _)| d.contains_key(k)));
        let resolved = ConfigLayers::default().resolve().unwrap();
        assert_eq!(resolved.train, TrainConfig::default());
    }

    #[test]
    fn parses_comments_and_rejects_unknown_keys() {
        let c = ConfigLayers::parse("# run\nepochs = 3 # short\n\nsetting=relational\nhidden = 8, 8\n")
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.setting, Setting::Relational);
        assert_eq!(c.train.hidden, vec![8, 8]);
        assert!(matches!(ConfigLayers::parse("epoch = 3"), Err(CliError::Config(_))));
        assert!(matches!(ConfigLayers::parse("epochs 3"), Err(CliError::Config(_))));
        assert!(matches!(ConfigLayers::parse("seed = 1\nseed = 2"), Err(CliError::Config(_))));
        assert!(ConfigLayers::parse("epochs = many").unwrap().resolve().is_err());
        assert!(ConfigLayers::parse("rho = 1.2").unwrap().resolve().is_err());
    }

    #[test]
    fn overrides_win_and_render_round_trips() {
        let c = ConfigLayers::parse("seed = 4\nways = 3\nhead = dot")
            .unwrap()
            .with_overrides(["seed=9", "split = 0.6,0.2,0.2"])
            .unwrap()
            .resolve()
            .unwrap();
        assert_eq!(c.train.seed, 9);
        assert_eq!(c.train.ways, Some(3));
        assert_eq!(c.train.head, HeadKind::Dot);
        assert_eq!(c.train.split, (0.6, 0.2, 0.2));
        let again = ConfigLayers::parse(&c.render()).unwrap().resolve().unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn relative_data_paths_follow_the_config_file() {
        let mut layers = ConfigLayers::parse("data_path = data.csv").unwrap();
        layers.base_dir = Some(PathBuf::from("/tmp/exp"));
        assert_eq!(layers.resolve().unwrap().data, DataSource::Csv(PathBuf::from("/tmp/exp/data.csv")));
    }
}
