use std::fs;
use std::io::{self, BufWriter};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use lmdistill::eval::read_subword_logprobs;
use lmdistill::experiment::{
    ngram_teacher, sweep_fewshot as run_fewshot, sweep_volume as run_volume, AdaptedTeacher, ExperimentConfig,
    FewshotPlan, FixedTeacher, Layout, TeacherFactory,
};
use lmdistill::interp::{read_weights, write_weights, SharedModel};
use lmdistill::protocol::{serve, AdapterClient};
use lmdistill::synthetic::{Benchmark, Splits, SyntheticDomain};
use lmdistill::{
    build_restricted_token_set, build_vocabulary, evaluate, generate_corpus, load_corpus, pba_build, read_arpa,
    sba_build, static_merge, train_kneser_ney, tune_weights_em, word_ppl_from_subword, write_arpa, CharTokenizer,
    Corpus, EmOptions, Mixture, NGramModel, PbaContext, RestrictedTokenSet, SamplerConfig, SubwordTokenizer,
    TokenSource, Vocabulary,
};

use crate::{
    ConfigArgs, ContextMode, EvalArgs, InterpArgs, MergeArgs, PbaArgs, RestrictArgs, SampleArgs, ServeArgs,
    SourceArgs, SynthArgs, TrainArgs, WordPplArgs,
};

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn corpus(path: &Path) -> Result<Corpus> {
    load_corpus(path, stem(path)).with_context(|| format!("reading corpus {}", path.display()))
}

fn model(path: &Path) -> Result<NGramModel> {
    read_arpa(path).with_context(|| format!("reading model {}", path.display()))
}

fn union_vocab(models: &[NGramModel]) -> Vocabulary {
    models
        .iter()
        .fold(Vocabulary::new(), |v, m| v.union(&m.vocabulary()))
}

/// Weights from a weights file or repeated `--weight` flags, in model order.
fn weights_for(n: usize, file: Option<&Path>, flags: &[f64]) -> Result<Vec<f64>> {
    let w: Vec<f64> = match file {
        Some(p) => read_weights(p)?.into_iter().map(|(_, w)| w).collect(),
        None => flags.to_vec(),
    };
    if w.len() != n {
        bail!("{n} models but {} weights", w.len());
    }
    Ok(w)
}

fn named(paths: &[std::path::PathBuf], models: Vec<NGramModel>) -> Vec<(String, SharedModel)> {
    paths
        .iter()
        .zip(models)
        .map(|(p, m)| (stem(p), Arc::new(m) as SharedModel))
        .collect()
}

fn source(args: &SourceArgs) -> Result<Arc<dyn TokenSource>> {
    match (&args.teacher_arpa, &args.adapter) {
        (Some(p), None) => Ok(Arc::new(ngram_teacher(&stem(p), model(p)?, args.flatten)?)),
        (None, Some(cmd)) => Ok(Arc::new(
            AdapterClient::spawn(cmd, &args.adapter_args).with_context(|| format!("starting adapter {cmd}"))?,
        )),
        _ => bail!("give exactly one of --teacher-arpa or --adapter"),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let c = corpus(&a.corpus)?;
    let mut parts = vec![c.clone()];
    for p in &a.vocab_from {
        parts.push(corpus(p)?);
    }
    let vocab = build_vocabulary(&parts.iter().collect::<Vec<_>>())?;
    let m = train_kneser_ney(&c, &vocab)?;
    write_arpa(&m, &a.out)?;
    println!(
        "{}: {} sentences, vocabulary {}, n-grams {}/{}/{}",
        a.out.display(),
        c.len(),
        vocab.len(),
        m.count(1),
        m.count(2),
        m.count(3)
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let test = corpus(&a.test)?;
    let models: Vec<NGramModel> = a.models.iter().map(|p| model(p)).collect::<Result<_>>()?;
    let report = if let Some(train_path) = &a.inject_test_vocab {
        if models.len() != 1 {
            bail!("--inject-test-vocab works on a single model");
        }
        let train = corpus(train_path)?;
        let vocab = models[0].vocabulary().union(&build_vocabulary(&[&train, &test])?);
        let retrained = train_kneser_ney(&train, &vocab)?;
        evaluate(&retrained, &test, &vocab)
    } else if models.len() == 1 {
        evaluate(&models[0], &test, &models[0].vocabulary())
    } else {
        let vocab = union_vocab(&models);
        let w = weights_for(models.len(), a.weights.as_deref(), &a.weight)?;
        let mix = Mixture::new(named(&a.models, models), w)?;
        evaluate(&mix, &test, &vocab)
    };
    println!("{report}");
    print!("{}", report.records());
    if let Some(p) = &a.report {
        write_text(p, &report.records())?;
    }
    Ok(())
}

pub fn interp(a: InterpArgs) -> Result<()> {
    if a.models.len() < 2 {
        bail!("interpolation needs at least two --model");
    }
    let dev = corpus(&a.dev)?;
    let models: Vec<NGramModel> = a.models.iter().map(|p| model(p)).collect::<Result<_>>()?;
    let vocab = union_vocab(&models);
    let components = named(&a.models, models);
    for (name, m) in &components {
        println!("component {name}: dev ppl {:.6}", evaluate(m, &dev, &vocab).ppl);
    }
    let opts = EmOptions {
        tol: a.tol,
        max_iters: a.max_iters,
    };
    let out = tune_weights_em(components, &dev, &vocab, opts)?;
    println!(
        "EM: {} iterations{}",
        out.iterations,
        if out.converged { "" } else { " (not converged)" }
    );
    print!("{}", out.mixture.weights_record());
    println!("tuned dev ppl {:.6}", evaluate(&out.mixture, &dev, &vocab).ppl);
    if let Some(t) = &a.test {
        println!("{}", evaluate(&out.mixture, &corpus(t)?, &vocab));
    }
    if let Some(p) = &a.weights_out {
        write_weights(p, out.mixture.names(), out.mixture.weights())?;
    }
    Ok(())
}

pub fn merge(a: MergeArgs) -> Result<()> {
    let models: Vec<NGramModel> = a.models.iter().map(|p| model(p)).collect::<Result<_>>()?;
    let w = weights_for(models.len(), a.weights.as_deref(), &a.weight)?;
    let refs: Vec<&NGramModel> = models.iter().collect();
    let out = static_merge(&refs, &w)?;
    write_arpa(&out.model, &a.out)?;
    println!(
        "{}: n-grams {}/{}/{}, unigram mass before renormalization {:.9}",
        a.out.display(),
        out.model.count(1),
        out.model.count(2),
        out.model.count(3),
        out.unigram_mass
    );
    Ok(())
}

pub fn pba(a: PbaArgs) -> Result<()> {
    let src = source(&a.source)?;
    let baseline = model(&a.baseline)?;
    let train = corpus(&a.train)?;
    let mode = match a.context {
        ContextMode::Full => PbaContext::FullSentence,
        ContextMode::Ngram => PbaContext::NGramHistory,
    };
    let (m, report) = pba_build(&*src, &train, &baseline, mode)?;
    write_arpa(&m, &a.out)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let src = source(&a.source)?;
    let train = a.train.as_deref().map(corpus).transpose()?;
    let train_words = match (&train, a.train_words) {
        (Some(c), _) => c.word_count(),
        (None, Some(n)) => n,
        (None, None) => bail!("give --train or --train-words"),
    };
    let restriction = match &a.restriction {
        Some(p) => Some(Arc::new(RestrictedTokenSet::read(p)?)),
        None => None,
    };
    let cfg = SamplerConfig {
        top_p: a.top_p,
        temperature: a.temperature,
        restriction,
        max_tokens: a.max_tokens,
        seed: a.seed,
        target_multiplier: a.multiplier,
        shards: a.shards,
    };
    let generated = generate_corpus(&*src, &cfg, train_words)?;
    generated.write(&a.out)?;
    let meta = &generated.meta;
    println!(
        "{}: {} sentences, {} words, {} tokens, {} truncated, {} empty skipped, {} rejected",
        a.out.display(),
        meta.sentences,
        meta.words,
        meta.tokens,
        meta.truncated,
        meta.empty_skipped,
        meta.rejected
    );
    if let Some(p) = &a.student {
        let mut parts = vec![&generated.corpus];
        parts.extend(train.as_ref());
        let student = sba_build(&generated, &build_vocabulary(&parts)?)?;
        write_arpa(&student.model, p)?;
        println!("{} student: {}", student.label, p.display());
    }
    Ok(())
}

/// Teacher model named by a config: an ARPA file, or Kneser-Ney on the
/// held-in corpus (plus `with`, when given).
fn config_teacher_model(cfg: &ExperimentConfig, with: Option<&Corpus>) -> Result<NGramModel> {
    let t = cfg.teacher.as_ref().expect("validated");
    if let Some(p) = &t.arpa {
        return model(p);
    }
    let held = corpus(t.held_in.as_ref().expect("validated"))?;
    let text = match with {
        Some(c) => Corpus::concat("teacher", &[&held, c]),
        None => held,
    };
    Ok(train_kneser_ney(&text, &build_vocabulary(&[&text])?)?)
}

fn adapter(cfg: &ExperimentConfig) -> Result<Arc<dyn TokenSource>> {
    let a = cfg.adapter.as_ref().expect("validated");
    Ok(Arc::new(
        AdapterClient::spawn(&a.command, &a.args).with_context(|| format!("starting adapter {}", a.command))?,
    ))
}

pub fn sweep_volume(a: ConfigArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let layout = Layout::create(&cfg.output_dir)?;
    let train = corpus(&cfg.data.train)?;
    let test = corpus(&cfg.data.test)?;
    let src: Arc<dyn TokenSource> = match &cfg.teacher {
        Some(t) => Arc::new(ngram_teacher("teacher", config_teacher_model(&cfg, Some(&train))?, t.flatten)?),
        None => adapter(&cfg)?,
    };
    let sampler = cfg.sampler_config(None)?;
    let report = run_volume(
        &*src,
        &train,
        &test,
        &cfg.volume.multipliers,
        &sampler,
        Some(&layout.corpora().join("volume.txt")),
    )?;
    let tsv = report.to_tsv();
    write_text(&layout.reports().join("volume.tsv"), &tsv)?;
    print!("{tsv}");
    match report.crossing() {
        Some(m) => println!("crossing multiplier: {m}"),
        None => println!("crossing multiplier: none"),
    }
    Ok(())
}

pub fn sweep_fewshot(a: ConfigArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&a.config)?;
    let Some(fs_cfg) = &cfg.fewshot else {
        bail!("{}: no [fewshot] section", a.config.display());
    };
    let layout = Layout::create(&cfg.output_dir)?;
    let train = corpus(&cfg.data.train)?;
    let dev = corpus(&cfg.data.dev)?;
    let test = corpus(&cfg.data.test)?;
    let em: EmOptions = cfg.em.into();
    let factory: Box<dyn TeacherFactory> = match &cfg.teacher {
        Some(t) if t.finetune => Box::new(AdaptedTeacher {
            pretrained: Arc::new(config_teacher_model(&cfg, None)?),
            flatten: t.flatten,
            em,
        }),
        Some(t) => Box::new(FixedTeacher(Arc::new(ngram_teacher(
            "teacher",
            config_teacher_model(&cfg, None)?,
            t.flatten,
        )?))),
        None => Box::new(FixedTeacher(adapter(&cfg)?)),
    };
    let plan = FewshotPlan {
        sizes: fs_cfg.sizes.clone(),
        seeds: fs_cfg.seeds.clone(),
        multiplier: fs_cfg.multiplier,
        em,
    };
    let report = run_fewshot(&*factory, &train, &dev, &test, &cfg.sampler_config(None)?, &plan)?;
    write_text(&layout.reports().join("fewshot.tsv"), &report.to_tsv())?;
    let summary = report.summary_tsv();
    write_text(&layout.reports().join("fewshot_summary.tsv"), &summary)?;
    println!("full-size KN3 ppl {:.6}", report.full_kn3);
    print!("{summary}");
    Ok(())
}

pub fn serve_teacher(a: ServeArgs) -> Result<()> {
    let t = ngram_teacher(&stem(&a.arpa), model(&a.arpa)?, a.flatten)?;
    let stdin = io::stdin();
    serve(&t, stdin.lock(), BufWriter::new(io::stdout().lock()))?;
    Ok(())
}

pub fn word_ppl(a: WordPplArgs) -> Result<()> {
    let recs = read_subword_logprobs(&a.logprobs)?;
    let w = word_ppl_from_subword(&recs, a.include_end)?;
    println!("words={}\nln_sum={}\nppl={}", w.n_words, w.ln_sum, w.ppl);
    Ok(())
}

pub fn restrict(a: RestrictArgs) -> Result<()> {
    let parts: Vec<Corpus> = a.vocab_from.iter().map(|p| corpus(p)).collect::<Result<_>>()?;
    let vocab = build_vocabulary(&parts.iter().collect::<Vec<_>>())?;
    let chars = CharTokenizer::new(true);
    let src = if a.chars { None } else { Some(source(&a.source)?) };
    let tok: &dyn SubwordTokenizer = match &src {
        Some(s) => s.tokenizer(),
        None => &chars,
    };
    let set = build_restricted_token_set(&vocab, tok)?;
    set.write(&a.out)?;
    println!("{}: {} token ids for {} words", a.out.display(), set.len(), vocab.len());
    Ok(())
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let d = SyntheticDomain::new(a.vocab_size, a.pool, a.branching, a.sharpness, a.mean_len, a.domain_seed);
    d.validate()?;
    let held_from = if a.shift > 0.0 {
        d.shifted(a.shift, a.domain_seed.wrapping_add(1))
    } else {
        d.clone()
    };
    let splits = Splits {
        train: a.train,
        dev: a.dev,
        test: a.test,
        held_in: a.held_in,
    };
    let b = Benchmark::draw(&d, &held_from, splits, a.seed)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    for (name, c) in [("train", &b.train), ("dev", &b.dev), ("test", &b.test), ("held_in", &b.held_in)] {
        c.write(a.out_dir.join(format!("{name}.txt")))?;
    }
    let config = format!(
        "# generated by `lmdistill synth`\n\
         output_dir = \"experiment\"\n\n\
         [data]\ntrain = \"train.txt\"\ndev = \"dev.txt\"\ntest = \"test.txt\"\n\n\
         [sampler]\nseed = {}\nshards = 8\n\n\
         [teacher]\nheld_in = \"held_in.txt\"\n\n\
         [fewshot]\nsizes = [100, 200, 500, 1000, 2000]\nseeds = [1, 2, 3]\n",
        a.seed
    );
    write_text(&a.out_dir.join("config.toml"), &config)?;
    write_text(&a.out_dir.join("domain.json"), &serde_json::to_string_pretty(&d)?)?;
    println!(
        "{}: train {} / dev {} / test {} / held-in {} sentences",
        a.out_dir.display(),
        b.train.len(),
        b.dev.len(),
        b.test.len(),
        b.held_in.len()
    );
    Ok(())
}
