//! Subcommand bodies.
//!
//! A stage reads and checks all of its inputs first and collects its outputs
//! in memory; files are written only after the stage has succeeded, followed
//! by `<command>.manifest.json`.

use std::fs;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use flowgan::classifier::{split_fraction, train_classifier, ClassifierError, TrainedClassifier};
use flowgan::evalmetrics::{evaluate, report, EvalReport, MetricsError};
use flowgan::gan::{balance_dataset, feature_std, generate, train_gan, GanError, GanState};
use flowgan::ingest::{build_family_dataset, chunk_csv, read_flows, IngestError};
use flowgan::io::{feature_header, samples_from_csv, samples_to_csv, to_json_string};
use flowgan::neuralnet::NetError;
use flowgan::optimizer::trace_csv;
use flowgan::preprocess::{apply_normalizer, fit_normalizer, histogram, Normalizer, PreprocessError};
use flowgan::synthdata::{generate_synthetic, SynthError};
use flowgan::{class_counts, Class, EncodedSample};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::CliError;

pub const ENCODED: &str = "encoded.csv";
pub const ENCODER: &str = "encoder.json";
pub const TRAIN: &str = "train.csv";
pub const TEST: &str = "test.csv";
pub const NORMALIZER: &str = "normalizer.json";
pub const GAN: &str = "gan.json";
pub const GENERATED: &str = "generated.csv";
pub const TRAIN_BALANCED: &str = "train_balanced.csv";
pub const TEST_BALANCED: &str = "test_balanced.csv";
pub const CHUNK_DIR: &str = "chunks";

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        data(e)
    }
}

impl From<PreprocessError> for CliError {
    fn from(e: PreprocessError) -> Self {
        data(e)
    }
}

impl From<flowgan::io::IoError> for CliError {
    fn from(e: flowgan::io::IoError) -> Self {
        data(e)
    }
}

impl From<NetError> for CliError {
    fn from(e: NetError) -> Self {
        data(e)
    }
}

impl From<ClassifierError> for CliError {
    fn from(e: ClassifierError) -> Self {
        match e {
            ClassifierError::NonFinite | ClassifierError::Optim(_) => CliError::Numeric(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<GanError> for CliError {
    fn from(e: GanError) -> Self {
        match e {
            GanError::NonFinite => CliError::Numeric(e.to_string()),
            GanError::BadConfig(_) => CliError::Usage(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NonFiniteScore => CliError::Numeric(e.to_string()),
            _ => data(e),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let file = fs::File::open(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let mut reader = BufReader::new(file);
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = reader.read(&mut buf).map_err(|e| data(format!("{}: {e}", path.display())))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

#[derive(Debug, Clone, Serialize)]
struct FileEntry {
    path: String,
    sha256: String,
}

/// One subcommand invocation: records what it read, buffers what it writes.
struct Stage<'a> {
    cfg: &'a PipelineConfig,
    inputs: Vec<FileEntry>,
    outputs: Vec<(String, Vec<u8>)>,
    /// Files already written by streaming stages.
    streamed: Vec<FileEntry>,
}

impl<'a> Stage<'a> {
    fn new(cfg: &'a PipelineConfig) -> Self {
        Self { cfg, inputs: Vec::new(), outputs: Vec::new(), streamed: Vec::new() }
    }

    fn read_path(&mut self, path: &Path, shown: String) -> Result<Vec<u8>, CliError> {
        let bytes = fs::read(path).map_err(|e| data(format!("{}: {e}", path.display())))?;
        self.inputs.push(FileEntry { path: shown, sha256: sha256_hex(&bytes) });
        Ok(bytes)
    }

    fn read(&mut self, rel: &str) -> Result<Vec<u8>, CliError> {
        self.read_path(&self.cfg.work_path(rel), rel.to_string())
    }

    fn exists(&self, rel: &str) -> bool {
        self.cfg.work_path(rel).is_file()
    }

    fn samples(&mut self, rel: &str) -> Result<Vec<EncodedSample>, CliError> {
        let bytes = self.read(rel)?;
        let text = String::from_utf8(bytes).map_err(|_| data(format!("{rel}: not UTF-8")))?;
        let samples = samples_from_csv(&text, Path::new(rel))?;
        if let Some(d) = samples.first().map(|s| s.features.len()) {
            if samples.iter().any(|s| s.features.len() != d) {
                return Err(data(format!("{rel}: rows differ in width")));
            }
        }
        Ok(samples)
    }

    fn json<T: DeserializeOwned>(&mut self, rel: &str) -> Result<T, CliError> {
        let bytes = self.read(rel)?;
        serde_json::from_slice(&bytes).map_err(|e| data(format!("{rel}: {e}")))
    }

    fn emit(&mut self, rel: impl Into<String>, bytes: impl Into<Vec<u8>>) {
        self.outputs.push((rel.into(), bytes.into()));
    }

    fn emit_json<T: Serialize>(&mut self, rel: impl Into<String>, value: &T) {
        self.emit(rel, to_json_string(value));
    }

    fn emit_samples(&mut self, rel: &str, samples: &[EncodedSample]) {
        self.emit(rel, samples_to_csv(samples));
    }

    fn finish(self, manifest_name: &str, command: &str) -> Result<(), CliError> {
        let mut outputs = self.streamed;
        for (rel, bytes) in &self.outputs {
            let path = self.cfg.work_path(rel);
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir).map_err(|e| data(format!("{}: {e}", dir.display())))?;
            }
            fs::write(&path, bytes).map_err(|e| data(format!("{}: {e}", path.display())))?;
            outputs.push(FileEntry { path: rel.clone(), sha256: sha256_hex(bytes) });
        }
        let config = self.cfg.hash_view();
        let manifest = json!({
            "command": command,
            "version": flowgan::VERSION,
            "seed": self.cfg.seed,
            "config_sha256": sha256_hex(config.to_string().as_bytes()),
            "config": config,
            "inputs": self.inputs,
            "outputs": outputs,
        });
        let path = self.cfg.work_path(manifest_name);
        fs::create_dir_all(&self.cfg.work_dir).map_err(|e| data(format!("{}: {e}", self.cfg.work_dir)))?;
        fs::write(&path, to_json_string(&manifest)).map_err(|e| data(format!("{}: {e}", path.display())))
    }
}

pub fn run(command: &str, cfg: &PipelineConfig) -> Result<(), CliError> {
    let mut stage = Stage::new(cfg);
    match command {
        "chunk" => chunk(&mut stage)?,
        "preprocess" => preprocess(&mut stage)?,
        "split" => split_stage(&mut stage)?,
        "train-clf" => train_clf(&mut stage)?,
        "train-gan" => train_gan_stage(&mut stage)?,
        "generate" => generate_stage(&mut stage)?,
        "balance" => balance(&mut stage)?,
        "evaluate" => evaluate_stage(&mut stage)?,
        "report" => report_stage(&mut stage)?,
        "synth" => synth(&mut stage)?,
        other => return Err(CliError::Usage(format!("unknown command {other:?}"))),
    }
    let suffix = match command {
        "train-clf" | "evaluate" => cfg.suffix(),
        _ => "",
    };
    stage.finish(&format!("{command}{suffix}.manifest.json"), command)
}

fn chunk(stage: &mut Stage) -> Result<(), CliError> {
    let cfg = stage.cfg;
    let input = Path::new(&cfg.input);
    let digest = sha256_file(input)?;
    stage.inputs.push(FileEntry { path: cfg.shown_path(input), sha256: digest });
    let file = fs::File::open(input).map_err(|e| data(format!("{}: {e}", input.display())))?;
    let out_dir = cfg.work_path(CHUNK_DIR);
    // clear chunks left by an earlier run with the same stem
    if out_dir.is_dir() {
        let prefix = format!("{}_", cfg.chunk_stem);
        for entry in fs::read_dir(&out_dir).map_err(data)?.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name.starts_with(&prefix) && name.ends_with(".csv") {
                fs::remove_file(entry.path()).map_err(data)?;
            }
        }
    }
    let paths = chunk_csv(BufReader::new(file), cfg.chunk_rows, &out_dir, &cfg.chunk_stem, cfg.header)?;
    for p in paths {
        let name = p.file_name().expect("chunk file name").to_string_lossy().into_owned();
        stage.streamed.push(FileEntry { path: format!("{CHUNK_DIR}/{name}"), sha256: sha256_file(&p)? });
    }
    Ok(())
}

fn input_files(input: &Path) -> Result<Vec<PathBuf>, CliError> {
    if input.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(input)
            .map_err(|e| data(format!("{}: {e}", input.display())))?
            .flatten()
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "csv"))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(data(format!("{}: no .csv files", input.display())));
        }
        Ok(files)
    } else if input.is_file() {
        Ok(vec![input.to_path_buf()])
    } else {
        Err(data(format!("{}: no such file or directory", input.display())))
    }
}

fn preprocess(stage: &mut Stage) -> Result<(), CliError> {
    let cfg = stage.cfg;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for path in input_files(Path::new(&cfg.input))? {
        let shown = cfg.shown_path(&path);
        stage.inputs.push(FileEntry { path: shown.clone(), sha256: sha256_file(&path)? });
        let parsed = read_flows(&path, &cfg.schema, cfg.header, cfg.strict)?;
        records.extend(parsed.records);
        skipped.extend(parsed.skipped.into_iter().map(|e| format!("{shown}: {e}")));
    }
    let n_rows = records.len();
    let dataset = build_family_dataset(records, cfg.family, &cfg.label_map(), cfg.strict)?;
    if dataset.is_empty() {
        return Err(data("no rows left after labelling"));
    }
    let mut encoder = cfg.encoder();
    let rows = encoder.fit_encode(dataset.records.iter().map(|(r, _)| r))?;
    let samples: Vec<EncodedSample> =
        rows.into_iter().zip(&dataset.records).map(|(x, (_, class))| EncodedSample::new(x, *class)).collect();
    stage.emit_samples(ENCODED, &samples);
    stage.emit_json(ENCODER, &encoder);
    let summary = json!({
        "family": dataset.family,
        "rows_parsed": n_rows,
        "rows_skipped": skipped.len(),
        "skipped_examples": skipped.iter().take(10).collect::<Vec<_>>(),
        "n_attack": dataset.n_attack,
        "n_nonattack": dataset.n_nonattack,
        "n_dropped": dataset.n_dropped,
    });
    stage.emit_json("preprocess_summary.json", &summary);
    Ok(())
}

fn emit_split(stage: &mut Stage, samples: &[EncodedSample], normalize: bool) -> Result<(), CliError> {
    let cfg = stage.cfg;
    let parts = split_fraction(samples, cfg.seed, cfg.train_fraction)?;
    let d = samples[0].features.len();
    let norm = if normalize {
        let feats: Vec<&[f64]> = parts.train.iter().map(|s| s.features.as_slice()).collect();
        fit_normalizer(&feats)?
    } else {
        Normalizer::identity(d)
    };
    let apply = |set: &[EncodedSample]| -> Result<Vec<EncodedSample>, CliError> {
        set.iter()
            .map(|s| Ok(EncodedSample { features: apply_normalizer(&s.features, &norm)?, ..s.clone() }))
            .collect()
    };
    let (train, test) = (apply(&parts.train)?, apply(&parts.test)?);
    for (j, name) in feature_header(d).iter().enumerate() {
        let column: Vec<f64> = train.iter().map(|s| s.features[j]).collect();
        stage.emit(format!("histograms/{name}.csv"), histogram(&column, cfg.histogram_bins)?.to_csv());
    }
    stage.emit_samples(TRAIN, &train);
    stage.emit_samples(TEST, &test);
    stage.emit_json(NORMALIZER, &norm);
    Ok(())
}

fn split_stage(stage: &mut Stage) -> Result<(), CliError> {
    let samples = stage.samples(ENCODED)?;
    if samples.is_empty() {
        return Err(data(format!("{ENCODED}: no samples")));
    }
    emit_split(stage, &samples, stage.cfg.normalize)
}

fn synth(stage: &mut Stage) -> Result<(), CliError> {
    let samples = generate_synthetic(&stage.cfg.synth())?;
    if samples.is_empty() {
        return Err(CliError::Usage("attack + nonattack must be positive".into()));
    }
    stage.emit_samples(ENCODED, &samples);
    // features are already in [0, 1]
    emit_split(stage, &samples, false)
}

fn train_clf(stage: &mut Stage) -> Result<(), CliError> {
    let cfg = stage.cfg;
    let train_file = if cfg.balanced { TRAIN_BALANCED } else { TRAIN };
    let train = stage.samples(train_file)?;
    let normalizer: Normalizer = stage.json(NORMALIZER)?;
    let encoder = if stage.exists(ENCODER) { Some(stage.json(ENCODER)?) } else { None };
    if train.is_empty() {
        return Err(data(format!("{train_file}: no samples")));
    }
    if train[0].features.len() != normalizer.arity() {
        return Err(data(format!("{train_file} has {} features, normalizer expects {}", train[0].features.len(), normalizer.arity())));
    }
    let (mut clf, result) = train_classifier(&train, &cfg.classifier(), cfg.exec())?;
    clf.encoder = encoder;
    clf.normalizer = Some(normalizer);
    let sfx = cfg.suffix();
    stage.emit_json(format!("classifier{sfx}.json"), &clf);
    stage.emit(format!("lbfgs_log{sfx}.csv"), trace_csv(&result.trace));
    Ok(())
}

fn real_attack_rows(samples: &[EncodedSample]) -> Vec<Vec<f64>> {
    samples.iter().filter(|s| s.label == Class::Attack && !s.synthetic).map(|s| s.features.clone()).collect()
}

fn train_gan_stage(stage: &mut Stage) -> Result<(), CliError> {
    let train = stage.samples(TRAIN)?;
    let minority = real_attack_rows(&train);
    if minority.is_empty() {
        return Err(data(format!("{TRAIN}: no real attack rows to learn from")));
    }
    let state = train_gan(&minority, &stage.cfg.gan())?;
    let mut history = String::from("epoch,d_loss,g_loss,mean_d_real,mean_d_fake\n");
    for h in &state.history {
        history.push_str(&format!("{},{},{},{},{}\n", h.epoch, h.d_loss, h.g_loss, h.mean_d_real, h.mean_d_fake));
    }
    stage.emit_json(GAN, &state);
    stage.emit("gan_history.csv", history);
    Ok(())
}

fn generate_stage(stage: &mut Stage) -> Result<(), CliError> {
    let state: GanState = stage.json(GAN)?;
    let n = if stage.cfg.n_generate > 0 {
        stage.cfg.n_generate
    } else {
        let (a, n) = class_counts(&stage.samples(TRAIN)?);
        n.saturating_sub(a)
    };
    let rows = generate(&state, n, stage.cfg.seed.wrapping_add(3))?;
    let mean: Vec<f64> = match rows.first() {
        Some(first) => (0..first.len()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect(),
        None => Vec::new(),
    };
    let summary = json!({ "n": rows.len(), "feature_mean": mean, "feature_std": feature_std(&rows) });
    let samples: Vec<EncodedSample> = rows.into_iter().map(EncodedSample::synthetic).collect();
    stage.emit_samples(GENERATED, &samples);
    stage.emit_json("generated_summary.json", &summary);
    Ok(())
}

fn balance_one(stage: &mut Stage, state: &GanState, input: &str, output: &str, seed: u64) -> Result<(), CliError> {
    let samples = stage.samples(input)?;
    let balanced = match balance_dataset(&samples, state, seed) {
        Ok(b) => b,
        Err(GanError::AlreadyBalanced) => {
            eprintln!("{}", json!({ "warning": format!("{input}: classes already balanced, copied unchanged") }));
            samples
        }
        Err(e) => return Err(e.into()),
    };
    stage.emit_samples(output, &balanced);
    Ok(())
}

fn balance(stage: &mut Stage) -> Result<(), CliError> {
    let state: GanState = stage.json(GAN)?;
    let seed = stage.cfg.seed;
    balance_one(stage, &state, TRAIN, TRAIN_BALANCED, seed.wrapping_add(4))?;
    if stage.cfg.balance_test {
        balance_one(stage, &state, TEST, TEST_BALANCED, seed.wrapping_add(5))?;
    }
    Ok(())
}

fn evaluate_stage(stage: &mut Stage) -> Result<(), CliError> {
    let cfg = stage.cfg;
    let sfx = cfg.suffix();
    let clf: TrainedClassifier = stage.json(&format!("classifier{sfx}.json"))?;
    let test_file = if cfg.balanced && cfg.balance_test { TEST_BALANCED } else { TEST };
    let test = stage.samples(test_file)?;
    let scores = clf.scores(&test, cfg.exec())?;
    let (t_attack, t_nonattack) = class_counts(&test);
    let counts = (
        clf.meta.n_attack + t_attack,
        clf.meta.n_nonattack + t_nonattack,
        clf.meta.n_synthetic + test.iter().filter(|s| s.synthetic).count(),
    );
    let (report, roc, pr) = evaluate(&scores, cfg.threshold, cfg.family, counts)?;
    let title = format!("{} {}", cfg.family, if cfg.balanced { "balanced" } else { "unbalanced" });
    stage.emit_json(format!("metrics{sfx}.json"), &report);
    stage.emit(format!("roc{sfx}.csv"), roc.to_csv());
    stage.emit(format!("roc{sfx}.svg"), roc.to_svg(&format!("ROC, {title}")));
    stage.emit(format!("pr{sfx}.csv"), pr.to_csv());
    stage.emit(format!("pr{sfx}.svg"), pr.to_svg(&format!("Precision-recall, {title}")));
    Ok(())
}

fn report_stage(stage: &mut Stage) -> Result<(), CliError> {
    let before: EvalReport = stage.json("metrics.json")?;
    let after: EvalReport = stage.json("metrics_balanced.json")?;
    let cmp = report(&before, &after, stage.cfg.family)?;
    stage.emit("report.txt", cmp.to_text());
    stage.emit_json("report.json", &cmp);
    Ok(())
}
