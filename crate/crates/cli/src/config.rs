//! Flat JSON pipeline configuration.
//!
//! Defaults come from [`PipelineConfig::default`]; a `--config` file and then
//! `--key value` flags are layered on top. A flag value is parsed according to
//! the JSON type of the key's default.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use flowgan::classifier::ClassifierConfig;
use flowgan::gan::{GanConfig, GeneratorLoss, NoisePrior};
use flowgan::ingest::{AttackFamily, Field, LabelMap, LabelRule, Schema};
use flowgan::optimizer::LbfgsConfig;
use flowgan::preprocess::{default_rule, EncoderSpec, EncodingRule, DEFAULT_BINS};
use flowgan::synthdata::SynthSpec;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: String,
    pub work_dir: String,
    pub header: bool,
    pub strict: bool,
    pub schema: Schema,
    pub family: AttackFamily,
    pub background_label: String,
    pub extra_labels: BTreeMap<String, LabelRule>,
    pub encoder_rules: BTreeMap<String, EncodingRule>,
    pub chunk_rows: usize,
    pub chunk_stem: String,
    pub normalize: bool,
    pub histogram_bins: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub parallel: bool,
    pub hidden_width: usize,
    pub n_hidden: usize,
    pub lbfgs_memory: usize,
    pub grad_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    pub armijo_c1: f64,
    pub learning_rate: f64,
    pub threshold: f64,
    pub gan_noise_dim: usize,
    pub gan_noise_prior: NoisePrior,
    pub gan_d_lr: f64,
    pub gan_g_lr: f64,
    pub gan_d_steps: usize,
    pub gan_batch_size: usize,
    pub gan_epochs: usize,
    pub gan_loss: GeneratorLoss,
    pub gan_hidden_width: usize,
    pub gan_n_hidden: usize,
    pub n_generate: usize,
    pub balanced: bool,
    pub balance_test: bool,
    pub attack: usize,
    pub nonattack: usize,
    pub features: usize,
    pub mean_attack: Vec<f64>,
    pub mean_nonattack: Vec<f64>,
    pub spread_attack: f64,
    pub spread_nonattack: f64,
    pub overlap: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SynthSpec::default();
        let clf = ClassifierConfig::default();
        let gan = GanConfig::default();
        let lbfgs = LbfgsConfig::default();
        Self {
            input: "flows.csv".into(),
            work_dir: "work".into(),
            header: true,
            strict: false,
            schema: Schema::default(),
            family: AttackFamily::Blacklist,
            background_label: "background".into(),
            extra_labels: BTreeMap::new(),
            encoder_rules: BTreeMap::new(),
            chunk_rows: 50_000,
            chunk_stem: "chunk".into(),
            normalize: true,
            histogram_bins: DEFAULT_BINS,
            train_fraction: flowgan::classifier::TRAIN_FRACTION,
            seed: 7,
            parallel: true,
            hidden_width: clf.hidden_width,
            n_hidden: clf.n_hidden,
            lbfgs_memory: lbfgs.memory,
            grad_tol: lbfgs.grad_tol,
            step_tol: lbfgs.step_tol,
            max_iter: lbfgs.max_iter,
            armijo_c1: lbfgs.c1,
            learning_rate: 1e-6,
            threshold: flowgan::classifier::DEFAULT_THRESHOLD,
            gan_noise_dim: gan.noise_dim,
            gan_noise_prior: gan.noise_prior,
            gan_d_lr: gan.d_lr,
            gan_g_lr: gan.g_lr,
            gan_d_steps: gan.d_steps_per_g_step,
            gan_batch_size: gan.batch_size,
            gan_epochs: gan.epochs,
            gan_loss: gan.generator_loss_mode,
            gan_hidden_width: gan.hidden_width,
            gan_n_hidden: gan.n_hidden,
            n_generate: 0,
            balanced: false,
            balance_test: false,
            attack: synth.n_attack,
            nonattack: synth.n_nonattack,
            features: synth.d,
            mean_attack: synth.mean_attack,
            mean_nonattack: synth.mean_nonattack,
            spread_attack: synth.spread_attack,
            spread_nonattack: synth.spread_nonattack,
            overlap: synth.overlap,
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse_flag_value(key: &str, raw: &str, default: &Value) -> Result<Value, CliError> {
    let bad = || usage(format!("invalid value {raw:?} for --{key}"));
    Ok(match default {
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
        }
        Value::String(_) => Value::String(raw.to_string()),
        _ => serde_json::from_str(raw).map_err(|_| bad())?,
    })
}

/// Splits `--key value` / `--key=value` pairs. Dashes in keys map to
/// underscores.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(arg) = it.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(usage(format!("unexpected argument {arg:?}")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| usage(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn merge(base: &mut Map<String, Value>, layer: Map<String, Value>, origin: &str) -> Result<(), CliError> {
    for (k, v) in layer {
        if !base.contains_key(&k) {
            return Err(usage(format!("unknown config key {k:?} in {origin}")));
        }
        base.insert(k, v);
    }
    Ok(())
}

/// Builds the effective configuration from defaults, an optional config
/// file and flag overrides.
pub fn load(args: &[String]) -> Result<PipelineConfig, CliError> {
    let defaults = serde_json::to_value(PipelineConfig::default()).expect("config serializes");
    let Value::Object(mut map) = defaults else { unreachable!("config is a struct") };
    let mut overrides = parse_overrides(args)?;
    if let Some(pos) = overrides.iter().position(|(k, _)| k == "config") {
        let (_, path) = overrides.remove(pos);
        let text = std::fs::read_to_string(&path).map_err(|e| CliError::Data(format!("{path}: {e}")))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| usage(format!("{path}: {e}")))?;
        let Value::Object(file) = file else { return Err(usage(format!("{path}: config must be a JSON object"))) };
        merge(&mut map, file, &path)?;
    }
    let mut layer = Map::new();
    for (k, raw) in overrides {
        let default = map.get(&k).ok_or_else(|| usage(format!("unknown flag --{k}")))?;
        layer.insert(k.clone(), parse_flag_value(&k, &raw, default)?);
    }
    merge(&mut map, layer, "flags")?;
    let cfg: PipelineConfig = serde_json::from_value(Value::Object(map)).map_err(|e| usage(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("chunk_rows", self.chunk_rows),
            ("histogram_bins", self.histogram_bins),
            ("hidden_width", self.hidden_width),
            ("lbfgs_memory", self.lbfgs_memory),
            ("gan_noise_dim", self.gan_noise_dim),
            ("gan_d_steps", self.gan_d_steps),
            ("gan_batch_size", self.gan_batch_size),
            ("gan_hidden_width", self.gan_hidden_width),
            ("features", self.features),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(usage(format!("{name} must be positive")));
            }
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(usage("train_fraction must lie in (0, 1)"));
        }
        for (name, v) in [("gan_d_lr", self.gan_d_lr), ("gan_g_lr", self.gan_g_lr), ("learning_rate", self.learning_rate)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(usage(format!("{name} must be positive")));
            }
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(usage("armijo_c1 must lie in (0, 1)"));
        }
        if !self.threshold.is_finite() {
            return Err(usage("threshold must be finite"));
        }
        for key in self.encoder_rules.keys() {
            key.parse::<Field>().map_err(|_| usage(format!("encoder_rules: unknown field {key:?}")))?;
        }
        Ok(())
    }

    pub fn work_path(&self, rel: &str) -> PathBuf {
        Path::new(&self.work_dir).join(rel)
    }

    /// Paths under `work_dir` are shown relative to it, so records written
    /// by runs in different work directories stay comparable.
    pub fn shown_path(&self, path: &Path) -> String {
        match path.strip_prefix(&self.work_dir) {
            Ok(rel) if !self.work_dir.is_empty() => rel.display().to_string(),
            _ => path.display().to_string(),
        }
    }

    pub fn exec(&self) -> flowgan::par::Execution {
        if self.parallel {
            flowgan::par::Execution::default()
        } else {
            flowgan::par::Execution::Sequential
        }
    }

    pub fn label_map(&self) -> LabelMap {
        let mut map = LabelMap::for_family(self.family, &self.background_label);
        for (label, rule) in &self.extra_labels {
            map.insert(label, *rule);
        }
        map
    }

    pub fn encoder(&self) -> EncoderSpec {
        EncoderSpec::with_rules(|f| self.encoder_rules.get(f.name()).copied().unwrap_or_else(|| default_rule(f)))
    }

    pub fn classifier(&self) -> ClassifierConfig {
        ClassifierConfig {
            hidden_width: self.hidden_width,
            n_hidden: self.n_hidden,
            seed: self.seed,
            strict: true,
            lbfgs: LbfgsConfig {
                memory: self.lbfgs_memory,
                grad_tol: self.grad_tol,
                step_tol: self.step_tol,
                max_iter: self.max_iter,
                c1: self.armijo_c1,
                initial_step: Some(self.learning_rate),
                ..LbfgsConfig::default()
            },
        }
    }

    pub fn gan(&self) -> GanConfig {
        GanConfig {
            noise_dim: self.gan_noise_dim,
            noise_prior: self.gan_noise_prior,
            d_lr: self.gan_d_lr,
            g_lr: self.gan_g_lr,
            d_steps_per_g_step: self.gan_d_steps,
            batch_size: self.gan_batch_size,
            epochs: self.gan_epochs,
            generator_loss_mode: self.gan_loss,
            hidden_width: self.gan_hidden_width,
            n_hidden: self.gan_n_hidden,
            seed: self.seed,
        }
    }

    /// Synthetic dataset settings; mean vectors of the wrong length are rejected by the
    /// generator.
    pub fn synth(&self) -> SynthSpec {
        SynthSpec {
            n_attack: self.attack,
            n_nonattack: self.nonattack,
            d: self.features,
            mean_nonattack: self.mean_nonattack.clone(),
            mean_attack: self.mean_attack.clone(),
            spread_nonattack: self.spread_nonattack,
            spread_attack: self.spread_attack,
            overlap: self.overlap,
            seed: self.seed,
        }
    }

    /// `""` or `"_balanced"`, appended to classifier and metrics artifacts.
    pub fn suffix(&self) -> &'static str {
        if self.balanced {
            "_balanced"
        } else {
            ""
        }
    }

    /// Configuration as hashed into manifests: everything except the work
    /// directory, so identical runs in different directories match.
    pub fn hash_view(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("work_dir");
            m.insert("input".into(), Value::String(self.shown_path(Path::new(&self.input))));
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use flowgan::N_FEATURES;

    fn args(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn defaults_roundtrip_and_validate() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<PipelineConfig>(&json).unwrap(), cfg);
        assert_eq!(load(&[]).unwrap(), cfg);
        assert_eq!(cfg.features, N_FEATURES);
    }

    #[test]
    fn flags_are_typed_by_default() {
        let cfg = load(&args(&["--attack", "70", "--nonattack=19700", "--overlap", "0.5", "--balance-test", "true", "--family", "dos"])).unwrap();
        assert_eq!((cfg.attack, cfg.nonattack), (70, 19700));
        assert_eq!(cfg.overlap, 0.5);
        assert!(cfg.balance_test);
        assert_eq!(cfg.family, AttackFamily::Dos);
        let cfg = load(&args(&["--mean_attack", "[0.1,0.2]", "--features", "2", "--mean_nonattack", "[0.5,0.5]"])).unwrap();
        assert_eq!(cfg.mean_attack, vec![0.1, 0.2]);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            vec!["--nope", "1"],
            vec!["--attack", "-3"],
            vec!["--attack"],
            vec!["positional"],
            vec!["--family", "heartbleed"],
            vec!["--train_fraction", "1.0"],
            vec!["--encoder_rules", r#"{"colour": "dictionary"}"#],
            vec!["--gan_d_lr", "0"],
        ] {
            assert!(matches!(load(&args(&bad)), Err(CliError::Usage(_))), "{bad:?}");
        }
    }

    #[test]
    fn config_file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 11, "max_iter": 3}"#).unwrap();
        let cfg = load(&args(&["--config", path.to_str().unwrap(), "--max_iter", "9"])).unwrap();
        assert_eq!((cfg.seed, cfg.max_iter), (11, 9));
        std::fs::write(&path, r#"{"sed": 11}"#).unwrap();
        assert!(matches!(load(&args(&["--config", path.to_str().unwrap()])), Err(CliError::Usage(_))));
        let missing = dir.path().join("none.json");
        assert!(matches!(load(&args(&["--config", missing.to_str().unwrap()])), Err(CliError::Data(_))));
    }

    #[test]
    fn hash_view_ignores_work_dir() {
        let a = PipelineConfig { work_dir: "a".into(), ..Default::default() };
        let b = PipelineConfig { work_dir: "b".into(), ..Default::default() };
        assert_eq!(a.hash_view(), b.hash_view());
        let a = PipelineConfig { input: "a/chunks".into(), ..a };
        let b = PipelineConfig { input: "b/chunks".into(), ..b };
        assert_eq!(a.hash_view(), b.hash_view());
        assert_eq!(a.hash_view()["input"], "chunks");
    }
}
