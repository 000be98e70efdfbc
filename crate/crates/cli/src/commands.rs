use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use csiam_core::augment::{
    alignment_map, apply_masks, apply_warp, sample_masks, sample_warp, tempo_features,
    wsola_stretch, AlignmentMap, Tempo, UniformTempoConfig,
};
use csiam_core::checkpoint::Checkpoint;
use csiam_core::encoder::CSiamModel;
use csiam_core::frontend::{
    load_wav, log_mel, read_features, save_wav, write_features, FeatureSequence, FrameLabels,
    MelConfig, SyntheticCorpus, SyntheticCorpusSpec,
};
use csiam_core::gradsuite::{check_component, GradComponent};
use csiam_core::probe::{emit_curve, train_probe, ProbeConfig, ProbeExample};
use csiam_core::rng::rng_for;
use csiam_core::train::{
    greedy_decode, retrieval_eval, train_until, DataConfig, DecodeLimits, StepOptions, ToyData,
    TrainState,
};

use crate::config::load_run_config;
use crate::{AugmentArgs, EvalArgs, GenDataArgs, GradCheckArgs, ProbeArgs, TrainArgs};

/// Failure classes, mapped to exit codes 2 (usage or config), 1
/// (verification failure) and 1 (anything else).
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Verification(String),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Verification(_) | CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "{m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<csiam_core::Error> for CliError {
    fn from(e: csiam_core::Error) -> Self {
        match e {
            csiam_core::Error::Config(m) => CliError::Usage(m),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub features: String,
    pub labels: String,
    pub frames: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticCorpusSpec,
    pub utterances: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct UtteranceLabels {
    pub frame_labels: Vec<usize>,
    pub symbols: Vec<usize>,
}

pub fn gen_data(a: &GenDataArgs) -> CliResult {
    let mut data = match &a.config {
        Some(p) => load_run_config(p)?.data,
        None => DataConfig::default(),
    };
    if let Some(s) = a.seed {
        data.seed = s;
    }
    if let Some(n) = a.noise_std {
        data.noise_std = n;
    }
    let spec = data.corpus_spec();
    let corpus = SyntheticCorpus::new(spec.clone())?;
    fs::create_dir_all(&a.out)?;
    let mut utterances = Vec::with_capacity(a.num);
    for i in 0..a.num {
        let u = corpus.utterance::<f32>(i as u64);
        let id = format!("utt_{i:05}");
        let features = format!("{id}.csft");
        let labels = format!("{id}.labels.json");
        write_features(
            BufWriter::new(File::create(a.out.join(&features))?),
            &u.features,
        )?;
        let l = UtteranceLabels {
            frame_labels: u.labels.labels.clone(),
            symbols: u.symbols.clone(),
        };
        fs::write(a.out.join(&labels), serde_json::to_vec(&l)?)?;
        utterances.push(ManifestEntry {
            id,
            features,
            labels,
            frames: u.features.len(),
        });
    }
    let manifest = Manifest { spec, utterances };
    fs::write(
        a.out.join("manifest.json"),
        serde_json::to_vec_pretty(&manifest)?,
    )?;
    println!("wrote {} utterances to {}", a.num, a.out.display());
    Ok(())
}

fn save_checkpoint(dir: &Path, state: &TrainState<f32>) -> csiam_core::Result<PathBuf> {
    let path = dir.join(format!("step_{:06}.csck", state.step));
    Checkpoint::from_state(state).save(&path)?;
    Ok(path)
}

pub fn train(a: &TrainArgs) -> CliResult {
    let mut cfg = load_run_config(&a.config)?;
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    let until = a.steps.unwrap_or(cfg.train.total_steps);
    let state = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            if ck.config != cfg.model_config() {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was trained with a different model layout",
                    p.display()
                )));
            }
            ck.to_state::<f32>()?
        }
        None => TrainState::new(CSiamModel::new(cfg.model_config(), cfg.train.seed)?),
    };
    let data = ToyData::new(&cfg.data)?;
    fs::create_dir_all(&a.ckpt_dir)?;
    if let Some(parent) = a
        .metrics_path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
    {
        fs::create_dir_all(parent)?;
    }
    let mut metrics = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .write(true)
            .append(a.resume.is_some())
            .truncate(a.resume.is_none())
            .open(&a.metrics_path)?,
    );
    let start = state.step;
    log::info!("training from step {start} to {until}");
    let state = train_until(
        state,
        &data,
        &cfg,
        until,
        &StepOptions::default(),
        |s, r| {
            serde_json::to_writer(&mut metrics, r)?;
            metrics.write_all(b"\n")?;
            if s.step % 100 == 0 {
                log::info!(
                    "step {} total {:.4} rnnt {:.4} contrastive {:.4} lr {:.2e}",
                    s.step,
                    r.total_loss,
                    r.rnnt_loss,
                    r.contrastive_loss,
                    r.lr
                );
            }
            if a.ckpt_every > 0 && s.step % a.ckpt_every == 0 {
                save_checkpoint(&a.ckpt_dir, s)?;
            }
            Ok(())
        },
    )?;
    metrics.flush()?;
    let path = save_checkpoint(&a.ckpt_dir, &state)?;
    println!(
        "trained steps {start}..{}; checkpoint {}",
        state.step,
        path.display()
    );
    Ok(())
}

pub fn load_manifest(dir: &Path) -> Result<Manifest, CliError> {
    let text = fs::read(dir.join("manifest.json")).map_err(|e| {
        CliError::Usage(format!("cannot read {}/manifest.json: {e}", dir.display()))
    })?;
    Ok(serde_json::from_slice(&text)?)
}

pub fn probe(a: &ProbeArgs) -> CliResult {
    let model = Checkpoint::load(&a.ckpt)?.to_state::<f32>()?.model;
    let manifest = load_manifest(&a.data)?;
    let checksum = model.params.checksum();
    let mut examples = Vec::with_capacity(manifest.utterances.len());
    for u in &manifest.utterances {
        let x: FeatureSequence<f32> = read_features(File::open(a.data.join(&u.features))?)?;
        let l: UtteranceLabels = serde_json::from_slice(&fs::read(a.data.join(&u.labels))?)?;
        examples.push(ProbeExample {
            acts: model.activations(&x)?,
            labels: FrameLabels::new(l.frame_labels, manifest.spec.num_classes)?,
        });
    }
    let cfg = ProbeConfig {
        hidden_dim: a.hidden_dim,
        num_classes: manifest.spec.num_classes,
        train_steps: a.steps,
        lr: a.lr,
        layer_indices: a.layers.clone(),
        seed: a.seed,
        ..ProbeConfig::default()
    };
    let table = train_probe(&examples, model.cfg.encoder.downsampling(), &cfg)?;
    debug_assert_eq!(checksum, model.params.checksum());
    emit_curve(&table, &a.out)?;
    for r in &table.rows {
        println!(
            "layer {:>2}  train {:.4}  val {:.4}",
            r.layer, r.train_acc, r.val_acc
        );
    }
    Ok(())
}

fn write_alignment(path: &Path, map: &AlignmentMap) -> CliResult {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "t_ds,target_t_ds")?;
    for (t, target) in map.as_slice().iter().enumerate() {
        writeln!(w, "{t},{target}")?;
    }
    w.flush()?;
    Ok(())
}

const STRIDE: usize = 4;

fn ds(len: usize) -> usize {
    len.div_ceil(STRIDE)
}

pub fn augment(a: &AugmentArgs) -> CliResult {
    if a.warp_seed.is_some() && a.alpha.is_some() {
        return Err(CliError::Usage(
            "--warp-seed and --alpha are mutually exclusive".into(),
        ));
    }
    if a.identity && (a.warp_seed.is_some() || a.alpha.is_some() || a.mask_seed.is_some()) {
        return Err(CliError::Usage(
            "--identity cannot be combined with other transforms".into(),
        ));
    }
    let ext = a
        .input
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    match ext.as_str() {
        "wav" => augment_wav(a),
        "csft" => augment_features(a),
        _ => Err(CliError::Usage(format!(
            "unsupported input {} (expected .wav or .csft)",
            a.input.display()
        ))),
    }
}

fn augment_wav(a: &AugmentArgs) -> CliResult {
    if a.warp_seed.is_some() || a.mask_seed.is_some() {
        return Err(CliError::Usage(
            "time warping and masking apply to feature files only".into(),
        ));
    }
    let wave = load_wav(&a.input)?;
    let (out, tempo) = match a.alpha {
        Some(alpha) => (
            wsola_stretch(&wave, alpha, &UniformTempoConfig::default())?,
            Tempo::Uniform { alpha },
        ),
        None => (wave.clone(), Tempo::Identity),
    };
    save_wav(&a.output, &out)?;
    if let Some(p) = &a.emit_alignment {
        let mel = MelConfig::default();
        let t_in = log_mel::<f32>(&wave, &mel)?.len();
        let t_out = log_mel::<f32>(&out, &mel)?.len();
        write_alignment(p, &alignment_map(&tempo, STRIDE, ds(t_out), ds(t_in))?)?;
    }
    println!(
        "{} samples -> {} samples ({:.4} duration ratio)",
        wave.len(),
        out.len(),
        out.len() as f64 / wave.len() as f64
    );
    Ok(())
}

fn augment_features(a: &AugmentArgs) -> CliResult {
    let x: FeatureSequence<f32> = read_features(File::open(&a.input)?)?;
    let (mut y, tempo) = match (a.warp_seed, a.alpha) {
        (Some(seed), None) => {
            let w = sample_warp(&mut rng_for(seed, &[]), x.len(), 5, 0.2, 100)?;
            (apply_warp(&x, &w)?, Tempo::Warp(w))
        }
        (None, Some(alpha)) => (tempo_features(&x, alpha)?, Tempo::Uniform { alpha }),
        _ => (x.clone(), Tempo::Identity),
    };
    if let Some(seed) = a.mask_seed {
        let plan = sample_masks(&mut rng_for(seed, &[]), y.len(), a.mask_prob, a.mask_span);
        y = apply_masks(&y, &plan)?;
    }
    write_features(BufWriter::new(File::create(&a.output)?), &y)?;
    if let Some(p) = &a.emit_alignment {
        write_alignment(p, &alignment_map(&tempo, STRIDE, ds(y.len()), ds(x.len()))?)?;
    }
    println!("{} frames -> {} frames", x.len(), y.len());
    Ok(())
}

pub fn grad_check(a: &GradCheckArgs) -> CliResult {
    let components = match &a.component {
        Some(name) => vec![name.parse::<GradComponent>()?],
        None => GradComponent::ALL.to_vec(),
    };
    let mut failed = Vec::new();
    for c in components {
        let r = check_component(c, a.inject_sign_flip)?;
        println!(
            "{:<12} max_rel_error {:.3e}  tolerance {:.0e}  checked {:>5}  {}",
            c.name(),
            r.max_rel_error,
            r.tolerance,
            r.checked,
            if r.passed() { "PASS" } else { "FAIL" }
        );
        if !r.passed() {
            failed.push(c.name());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "gradient mismatch in {}",
            failed.join(", ")
        )))
    }
}

fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1; b.len() + 1];
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = (prev[j] + usize::from(x != y))
                .min(prev[j + 1] + 1)
                .min(cur[j] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

#[derive(Debug, Serialize)]
struct EvalReport {
    utterances: usize,
    retrieval_clean: f64,
    retrieval_noise: f64,
    retrieval_chance: f64,
    symbol_error_rate: f64,
}

pub fn eval(a: &EvalArgs) -> CliResult {
    let cfg = load_run_config(&a.config)?;
    let model = Checkpoint::load(&a.ckpt)?.to_state::<f32>()?.model;
    if model.cfg != cfg.model_config() {
        return Err(CliError::Usage(
            "checkpoint and config describe different models".into(),
        ));
    }
    let data = ToyData::new(&cfg.data)?;
    let first = (cfg.data.num_supervised + cfg.data.num_unsupervised) as u64;
    let held_out: Vec<_> = (0..a.utterances as u64)
        .map(|i| data.corpus.utterance::<f32>(first + i))
        .collect();
    let features: Vec<_> = held_out.iter().map(|u| u.features.clone()).collect();
    let retrieval = retrieval_eval(&model, &features, &cfg, a.seed)?;
    let (mut errors, mut total) = (0usize, 0usize);
    for u in &held_out {
        let hyp: Vec<usize> = greedy_decode(&model, &u.features, &DecodeLimits::default())?
            .into_iter()
            .map(|id| id - 1)
            .collect();
        errors += edit_distance(&hyp, &u.symbols);
        total += u.symbols.len();
    }
    let report = EvalReport {
        utterances: held_out.len(),
        retrieval_clean: retrieval.clean,
        retrieval_noise: retrieval.noise,
        retrieval_chance: retrieval.chance,
        symbol_error_rate: errors as f64 / total.max(1) as f64,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn edit_distance_cases() {
        assert_eq!(edit_distance(&[], &[1, 2]), 2);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(edit_distance(&[1, 2, 3], &[3, 2, 1]), 2);
        assert_eq!(edit_distance(&[4], &[4]), 0);
    }

    #[test]
    fn usage_errors_exit_with_two() {
        assert_eq!(
            CliError::from(csiam_core::Error::Config("x".into())).exit_code(),
            2
        );
        assert_eq!(CliError::Verification("x".into()).exit_code(), 1);
    }
}
