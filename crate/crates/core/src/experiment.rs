//! Experiment configuration and the two sweep harnesses.
//!
//! The volume sweep trains students on growing prefixes of one generated
//! corpus. The few-shot sweep sub-samples train and dev, rebuilds the
//! teacher for each sample, and compares Kneser-Ney, the sampled student
//! and their interpolation on a fixed test set.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::approx::sba_build;
use crate::corpus::{subsample, Corpus};
use crate::error::{Error, Result};
use crate::eval::{evaluate, PerplexityReport};
use crate::interp::{static_merge, tune_weights_em, EmOptions, SharedModel};
use crate::ngram::{train_kneser_ney, NGramModel};
use crate::sampling::{generate_corpus, GeneratedCorpus, SamplerConfig};
use crate::source::{NGramTeacher, TokenSource};
use crate::vocab::{build_vocabulary, Vocabulary};

pub const DEFAULT_MULTIPLIERS: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub data: DataPaths,
    pub sampler: SamplerSection,
    #[serde(default)]
    pub volume: VolumeSection,
    #[serde(default)]
    pub fewshot: Option<FewshotSection>,
    #[serde(default)]
    pub teacher: Option<TeacherSection>,
    #[serde(default)]
    pub adapter: Option<AdapterSection>,
    #[serde(default)]
    pub em: EmSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "default_top_p")]
    pub top_p: f64,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: usize,
    /// Required: no implicit entropy.
    pub seed: u64,
    #[serde(default = "default_shards")]
    pub shards: usize,
    /// Token-id file (one id per line) enabling restricted decoding.
    #[serde(default)]
    pub restriction: Option<PathBuf>,
}

fn default_top_p() -> f64 {
    SamplerConfig::default().top_p
}
fn default_temperature() -> f64 {
    SamplerConfig::default().temperature
}
fn default_max_tokens() -> usize {
    SamplerConfig::default().max_tokens
}
fn default_shards() -> usize {
    1
}
fn default_multipliers() -> Vec<f64> {
    DEFAULT_MULTIPLIERS.to_vec()
}
fn default_fewshot_multiplier() -> f64 {
    100.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSection {
    #[serde(default = "default_multipliers")]
    pub multipliers: Vec<f64>,
}

impl Default for VolumeSection {
    fn default() -> Self {
        VolumeSection {
            multipliers: default_multipliers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FewshotSection {
    /// Train sizes in sentences.
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_fewshot_multiplier")]
    pub multiplier: f64,
}

/// A Kneser-Ney teacher, from an ARPA file or trained on a held-in corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherSection {
    #[serde(default)]
    pub arpa: Option<PathBuf>,
    #[serde(default)]
    pub held_in: Option<PathBuf>,
    /// Weight of a uniform model statically merged into the teacher.
    #[serde(default)]
    pub flatten: f64,
    /// In few-shot sweeps, adapt the teacher to each train sample.
    #[serde(default = "default_true")]
    pub finetune: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSection {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmSection {
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for EmSection {
    fn default() -> Self {
        let d = EmOptions::default();
        EmSection {
            tol: d.tol,
            max_iters: d.max_iters,
        }
    }
}

impl From<EmSection> for EmOptions {
    fn from(e: EmSection) -> Self {
        EmOptions {
            tol: e.tol,
            max_iters: e.max_iters,
        }
    }
}

impl ExperimentConfig {
    /// Parses a TOML config. Relative paths resolve against the config
    /// file's directory and every input path must exist.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        fix(&mut self.data.train);
        fix(&mut self.data.dev);
        fix(&mut self.data.test);
        if let Some(r) = &mut self.sampler.restriction {
            fix(r);
        }
        if let Some(t) = &mut self.teacher {
            t.arpa.as_mut().map(fix);
            t.held_in.as_mut().map(fix);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut inputs = vec![&self.data.train, &self.data.dev, &self.data.test];
        inputs.extend(self.sampler.restriction.iter());
        if let Some(t) = &self.teacher {
            if t.arpa.is_some() == t.held_in.is_some() {
                return Err(Error::Config("teacher needs exactly one of `arpa` or `held_in`".into()));
            }
            if !(0.0..1.0).contains(&t.flatten) {
                return Err(Error::Config(format!("teacher.flatten {} not in [0, 1)", t.flatten)));
            }
            inputs.extend(t.arpa.iter().chain(t.held_in.iter()));
        }
        if self.teacher.is_some() == self.adapter.is_some() {
            return Err(Error::Config("configure exactly one of [teacher] or [adapter]".into()));
        }
        for p in inputs {
            if !p.exists() {
                return Err(Error::Config(format!("{} does not exist", p.display())));
            }
        }
        if self.volume.multipliers.is_empty() || self.volume.multipliers.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("volume.multipliers must be positive".into()));
        }
        if let Some(f) = &self.fewshot {
            if f.sizes.is_empty() || f.seeds.is_empty() || f.sizes.contains(&0) {
                return Err(Error::Config("fewshot needs positive sizes and at least one seed".into()));
            }
        }
        self.sampler_config(None)?.validate()
    }

    pub fn sampler_config(&self, multiplier: Option<f64>) -> Result<SamplerConfig> {
        let restriction = match &self.sampler.restriction {
            Some(p) => Some(Arc::new(crate::vocab::RestrictedTokenSet::read(p)?)),
            None => None,
        };
        Ok(SamplerConfig {
            top_p: self.sampler.top_p,
            temperature: self.sampler.temperature,
            restriction,
            max_tokens: self.sampler.max_tokens,
            seed: self.sampler.seed,
            target_multiplier: multiplier.unwrap_or(100.0),
            shards: self.sampler.shards,
        })
    }
}

/// `models/`, `corpora/` and `reports/` under one experiment directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let l = Layout { root: root.into() };
        for d in [l.models(), l.corpora(), l.reports()] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(l)
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn corpora(&self) -> PathBuf {
        self.root.join("corpora")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }
}

/// Kneser-Ney teacher; `flatten > 0` statically merges in a uniform model
/// over the same vocabulary, raising its entropy.
pub fn ngram_teacher(name: &str, model: NGramModel, flatten: f64) -> Result<NGramTeacher> {
    let model = if flatten > 0.0 {
        let uniform = NGramModel::uniform(&model.vocabulary());
        static_merge(&[&model, &uniform], &[1.0 - flatten, flatten])?.model
    } else {
        model
    };
    NGramTeacher::new(name, Arc::new(model))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeRow {
    pub label: String,
    pub multiplier: f64,
    pub words: usize,
    pub ppl: f64,
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VolumeReport {
    pub baseline: PerplexityReport,
    pub rows: Vec<VolumeRow>,
}

impl VolumeReport {
    /// First multiplier whose student beats the baseline.
    pub fn crossing(&self) -> Option<f64> {
        self.rows
            .iter()
            .skip(1)
            .find(|r| r.normalized < 1.0)
            .map(|r| r.multiplier)
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("label\tmultiplier\twords\tppl\tnormalized\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{}\t{}\t{:.6}\t{:.6}", r.label, r.multiplier, r.words, r.ppl, r.normalized);
        }
        s
    }
}

/// Generates once at the largest multiplier and trains a student on each
/// word-count prefix. The first row is the Kneser-Ney baseline trained on
/// `train`; every perplexity is divided by its perplexity. All models share
/// the vocabulary of `train` plus the generated text.
pub fn sweep_volume(
    src: &dyn TokenSource,
    train: &Corpus,
    test: &Corpus,
    multipliers: &[f64],
    sampler: &SamplerConfig,
    save_corpus: Option<&Path>,
) -> Result<VolumeReport> {
    let max = multipliers.iter().copied().fold(0.0, f64::max);
    let cfg = SamplerConfig {
        target_multiplier: max,
        ..sampler.clone()
    };
    let generated = generate_corpus(src, &cfg, train.word_count())?;
    if let Some(p) = save_corpus {
        generated.write(p)?;
    }
    let vocab = build_vocabulary(&[train, &generated.corpus])?;
    let baseline = evaluate(&train_kneser_ney(train, &vocab)?, test, &vocab);
    let label = if generated.restricted() { "VR-KN3" } else { "RS-KN3" };

    let rows: Vec<VolumeRow> = multipliers
        .par_iter()
        .map(|&m| {
            let words = (m * train.word_count() as f64).ceil() as usize;
            let part = GeneratedCorpus {
                corpus: generated.corpus.prefix_by_words(words),
                meta: generated.meta.clone(),
            };
            let student = sba_build(&part, &vocab)?;
            let r = evaluate(&student.model, test, &vocab);
            Ok(VolumeRow {
                label: label.to_string(),
                multiplier: m,
                words: part.corpus.word_count(),
                ppl: r.ppl,
                normalized: r.ppl / baseline.ppl,
            })
        })
        .collect::<Result<_>>()?;
    let mut all = vec![VolumeRow {
        label: "KN3".into(),
        multiplier: 0.0,
        words: train.word_count(),
        ppl: baseline.ppl,
        normalized: 1.0,
    }];
    all.extend(rows);
    Ok(VolumeReport { baseline, rows: all })
}

/// Builds the token source for one few-shot point.
pub trait TeacherFactory: Sync {
    fn build(&self, train: &Corpus, dev: &Corpus) -> Result<Arc<dyn TokenSource>>;
}

/// Returns the same source for every point.
pub struct FixedTeacher(pub Arc<dyn TokenSource>);

impl TeacherFactory for FixedTeacher {
    fn build(&self, _: &Corpus, _: &Corpus) -> Result<Arc<dyn TokenSource>> {
        Ok(self.0.clone())
    }
}

/// Adapts a pretrained n-gram teacher to a train sample: Kneser-Ney on the
/// sample is mixed with the pretrained model using EM weights from the dev
/// sample, and the mixture is statically merged into one model.
pub struct AdaptedTeacher {
    pub pretrained: Arc<NGramModel>,
    pub flatten: f64,
    pub em: EmOptions,
}

impl TeacherFactory for AdaptedTeacher {
    fn build(&self, train: &Corpus, dev: &Corpus) -> Result<Arc<dyn TokenSource>> {
        let vocab = self.pretrained.vocabulary().union(&build_vocabulary(&[train])?);
        let local = Arc::new(train_kneser_ney(train, &vocab)?);
        let em = tune_weights_em(
            vec![
                ("pretrained".into(), self.pretrained.clone() as SharedModel),
                ("local".into(), local.clone() as SharedModel),
            ],
            dev,
            &vocab,
            self.em,
        )?;
        let merged = static_merge(&[&self.pretrained, &local], em.mixture.weights())?.model;
        Ok(Arc::new(ngram_teacher("adapted", merged, self.flatten)?))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewshotRow {
    pub size: usize,
    pub seed: u64,
    pub dev_size: usize,
    pub generated_words: usize,
    pub kn3: f64,
    pub sba: f64,
    pub interp: f64,
    pub sba_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewshotSummary {
    pub size: usize,
    pub kn3: f64,
    pub sba: f64,
    pub interp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FewshotReport {
    pub full_kn3: f64,
    pub rows: Vec<FewshotRow>,
    /// Mean perplexities per size, divided by `full_kn3`.
    pub summary: Vec<FewshotSummary>,
}

impl FewshotReport {
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("size\tseed\tdev_size\tgenerated_words\tkn3\tsba\tinterp\tsba_weight\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.size, r.seed, r.dev_size, r.generated_words, r.kn3, r.sba, r.interp, r.sba_weight
            );
        }
        s
    }

    pub fn summary_tsv(&self) -> String {
        let mut s = String::from("size\tkn3_norm\tsba_norm\tinterp_norm\n");
        for r in &self.summary {
            let _ = writeln!(s, "{}\t{:.6}\t{:.6}\t{:.6}", r.size, r.kn3, r.sba, r.interp);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct FewshotPlan {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub multiplier: f64,
    pub em: EmOptions,
}

fn fewshot_point(
    factory: &dyn TeacherFactory,
    data: (&Corpus, &Corpus, &Corpus),
    global: &Vocabulary,
    size: usize,
    seed: u64,
    sampler: &SamplerConfig,
    plan: &FewshotPlan,
) -> Result<FewshotRow> {
    let (train, dev, test) = data;
    let sub_train = subsample(train, size, seed)?;
    let dev_size = ((size as f64 * dev.len() as f64 / train.len() as f64).round() as usize).clamp(1, dev.len());
    let sub_dev = subsample(dev, dev_size, seed)?;
    let src = factory.build(&sub_train, &sub_dev)?;
    let cfg = SamplerConfig {
        target_multiplier: plan.multiplier,
        seed,
        ..sampler.clone()
    };
    let generated = generate_corpus(&*src, &cfg, sub_train.word_count())?;
    // the student also needs whatever words the teacher invented
    let student_vocab = global.union(&build_vocabulary(&[&generated.corpus])?);
    let kn3: SharedModel = Arc::new(train_kneser_ney(&sub_train, global)?);
    let sba: SharedModel = Arc::new(sba_build(&generated, &student_vocab)?.model);
    let em = tune_weights_em(
        vec![("kn3".into(), kn3.clone()), ("sba".into(), sba.clone())],
        &sub_dev,
        global,
        plan.em,
    )?;
    Ok(FewshotRow {
        size,
        seed,
        dev_size,
        generated_words: generated.corpus.word_count(),
        kn3: evaluate(&*kn3, test, global).ppl,
        sba: evaluate(&*sba, test, global).ppl,
        interp: evaluate(&em.mixture, test, global).ppl,
        sba_weight: em.mixture.weights()[1],
    })
}

/// Few-shot sweep over `plan.sizes x plan.seeds`. Each point sub-samples
/// train and dev (dev proportionally), rebuilds the teacher, generates
/// `plan.multiplier` times the sample's words, and evaluates Kneser-Ney on
/// the sample, the student and their EM mixture on the fixed test set.
/// Evaluation uses the vocabulary of the full train, dev and test corpora.
pub fn sweep_fewshot(
    factory: &dyn TeacherFactory,
    train: &Corpus,
    dev: &Corpus,
    test: &Corpus,
    sampler: &SamplerConfig,
    plan: &FewshotPlan,
) -> Result<FewshotReport> {
    let global = build_vocabulary(&[train, dev, test])?;
    let full_kn3 = evaluate(&train_kneser_ney(train, &global)?, test, &global).ppl;
    let points: Vec<(usize, u64)> = plan
        .sizes
        .iter()
        .flat_map(|&n| plan.seeds.iter().map(move |&s| (n, s)))
        .collect();
    let rows: Vec<FewshotRow> = points
        .par_iter()
        .map(|&(n, s)| fewshot_point(factory, (train, dev, test), &global, n, s, sampler, plan))
        .collect::<Result<_>>()?;
    let summary = plan
        .sizes
        .iter()
        .map(|&n| {
            let at: Vec<&FewshotRow> = rows.iter().filter(|r| r.size == n).collect();
            let mean = |f: fn(&FewshotRow) -> f64| at.iter().map(|r| f(r)).sum::<f64>() / at.len() as f64 / full_kn3;
            FewshotSummary {
                size: n,
                kn3: mean(|r| r.kn3),
                sba: mean(|r| r.sba),
                interp: mean(|r| r.interp),
            }
        })
        .collect();
    Ok(FewshotReport { full_kn3, rows, summary })
}
