use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use anyhow::{anyhow, Context};
use serde_json::json;

use ft2ra_core::augment::{AugmentConfig, WeightingStrategy};
use ft2ra_core::datastore::{Datastore, DatastoreMeta};
use ft2ra_core::eval::{
    compare_finetune, complete_line, evaluate, evaluate_sequential, line_samples, pad_prompt, sweep, token_samples,
    GridPoint, LineEval, SweepGrid,
};
use ft2ra_core::knn::Metric;
use ft2ra_core::predict::{Ft2RaLm, KnnLm, KnnLmConfig, OriginalLm, PersistentFt2RaLm};
use ft2ra_core::synth::{generate, SynthConfig};
use ft2ra_core::toylm::{train, ToyLm, TrainConfig};
use ft2ra_core::vocab::{normalize_whitespace, TokenId, Vocab};

use crate::args::*;
use crate::engine::{Engine, Tracing};
use crate::runlog::{self, RunLog};

pub enum Failure {
    /// Bad arguments or missing input files.
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<ft2ra_core::Error> for Failure {
    fn from(e: ft2ra_core::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type Result<T> = std::result::Result<T, Failure>;

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

macro_rules! say {
    ($($t:tt)*) => {
        emit(&format!("{}\n", format_args!($($t)*)))?
    };
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("input file {} does not exist", path.display())))
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::GenCorpus(a) => gen_corpus(&a),
        Command::BuildVocab(a) => build_vocab(&a),
        Command::Train(a) => train_cmd(&a),
        Command::BuildDatastore(a) => build_datastore(&a),
        Command::Complete(a) => complete(&a),
        Command::Eval(a) => eval(&a),
        Command::Sweep(a) => sweep_cmd(&a),
        Command::CompareFinetune(a) => compare(&a),
    }
}

fn init_threads(rt: &Runtime) -> Result<()> {
    if rt.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(rt.threads)
            .build_global()
            .map_err(|e| anyhow!("cannot start thread pool: {e}"))?;
    }
    Ok(())
}

fn write_log<A: serde::Serialize>(
    command: &str,
    args: &A,
    rt: &Runtime,
    out: &Path,
    effective: serde_json::Value,
) -> Result<()> {
    let log = RunLog {
        command,
        version: env!("CARGO_PKG_VERSION"),
        seed: rt.seed,
        threads: rayon::current_num_threads(),
        args,
        effective,
    };
    let path = runlog::path_for(rt.log.as_deref(), out);
    log.write(&path).with_context(|| format!("writing run log {}", path.display()))?;
    Ok(())
}

fn read_text(path: &Path) -> Result<String> {
    require_file(path)?;
    Ok(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

fn load_vocab(path: &Path) -> Result<Vocab> {
    require_file(path)?;
    Ok(Vocab::load(path).with_context(|| format!("loading vocabulary {}", path.display()))?)
}

fn load_model(path: &Path, vocab: &Vocab) -> Result<ToyLm> {
    require_file(path)?;
    let model = ToyLm::load(path).with_context(|| format!("loading model {}", path.display()))?;
    if model.vocab_size() != vocab.len() {
        return Err(anyhow!(
            "model has a vocabulary of {} tokens, {} has {}",
            model.vocab_size(),
            "the vocabulary file",
            vocab.len()
        )
        .into());
    }
    Ok(model)
}

fn load_datastore(path: &Path, model: &ToyLm) -> Result<Datastore> {
    require_file(path)?;
    let ds = Datastore::load(path).with_context(|| format!("loading datastore {}", path.display()))?;
    ds.check_compatible(model.vocab_size(), model.dmodel())
        .with_context(|| format!("datastore {} does not fit the model", path.display()))?;
    Ok(ds)
}

/// Build timestamp for datastore metadata: `SOURCE_DATE_EPOCH` or 0, so
/// rebuilt files are byte-identical.
fn build_timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH").ok().and_then(|s| s.parse().ok()).unwrap_or(0)
}

fn metric(m: MetricArg) -> Metric {
    match m {
        MetricArg::L2 => Metric::L2,
        MetricArg::L2sq => Metric::L2Sq,
    }
}

fn strategy(s: StrategyArg, temperature: f64) -> Result<WeightingStrategy> {
    Ok(match s {
        StrategyArg::Rec => WeightingStrategy::Rec,
        StrategyArg::Uni => WeightingStrategy::Uni,
        StrategyArg::Smax => WeightingStrategy::Smax,
        StrategyArg::Smaxt => WeightingStrategy::smax_t(temperature).map_err(|e| usage(e.to_string()))?,
    })
}

fn augment_config(m: &MethodArgs) -> Result<AugmentConfig> {
    let cfg = AugmentConfig {
        eta_logits: m.eta,
        iters: m.iters,
        neighbors: m.neighbors,
        strategy: strategy(m.strategy, m.temperature)?,
        reset_query_each_epoch: m.reset_query,
        persist_updates: m.persist_updates,
        metric: metric(m.metric),
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn knnlm_config(m: &MethodArgs) -> Result<KnnLmConfig> {
    if !(0.0..=1.0).contains(&m.lambda) {
        return Err(usage(format!("--lambda must lie in [0, 1], got {}", m.lambda)));
    }
    if m.neighbors == 0 {
        return Err(usage("--neighbors must be at least 1"));
    }
    Ok(KnnLmConfig { lambda: m.lambda, neighbors: m.neighbors, metric: metric(m.metric) })
}

fn stop_ids(vocab: &Vocab, names: &[String]) -> Result<Vec<TokenId>> {
    names
        .iter()
        .map(|n| vocab.id(n).ok_or_else(|| usage(format!("stop token {n:?} is not in the vocabulary"))))
        .collect()
}

fn method_config(m: &MethodArgs) -> Result<serde_json::Value> {
    if m.persist_updates && m.method != MethodArg::Ft2ra {
        return Err(usage("--persist-updates only applies to --method ft2ra"));
    }
    Ok(match m.method {
        MethodArg::Original => json!({ "method": "original" }),
        MethodArg::Ft2ra => json!({ "method": "ft2ra", "augment": augment_config(m)? }),
        MethodArg::Knnlm => json!({ "method": "knnlm", "knnlm": knnlm_config(m)? }),
    })
}

/// Loads the datastore when the method needs one.
fn method_datastore(m: &MethodArgs, path: Option<&Path>, model: &ToyLm) -> Result<Option<Datastore>> {
    if m.method == MethodArg::Original {
        return Ok(None);
    }
    match path {
        Some(p) => Ok(Some(load_datastore(p, model)?)),
        None => Err(anyhow!("--method {} needs a datastore (--datastore)", method_name(m.method)).into()),
    }
}

fn method_name(m: MethodArg) -> &'static str {
    match m {
        MethodArg::Original => "original",
        MethodArg::Ft2ra => "ft2ra",
        MethodArg::Knnlm => "knnlm",
    }
}

fn engine<'a>(m: &MethodArgs, model: &'a ToyLm, ds: Option<&'a mut Datastore>) -> Result<Engine<'a>> {
    Ok(match (m.method, ds) {
        (MethodArg::Original, _) => Engine::Original(OriginalLm { model }),
        (MethodArg::Ft2ra, Some(ds)) if m.persist_updates => {
            Engine::Persistent(PersistentFt2RaLm::new(model, ds, augment_config(m)?)?)
        }
        (MethodArg::Ft2ra, Some(ds)) => Engine::Ft2ra(Ft2RaLm::new(model, ds, augment_config(m)?)?),
        (MethodArg::Knnlm, Some(ds)) => Engine::Knnlm(KnnLm::new(model, ds, knnlm_config(m)?)?),
        (_, None) => return Err(anyhow!("missing datastore").into()),
    })
}

fn gen_corpus(a: &GenCorpusArgs) -> Result<()> {
    let cfg = SynthConfig {
        seed: a.runtime.seed,
        base_tokens: a.base_tokens,
        domain_tokens: a.domain_tokens,
        patterns: a.patterns,
        ..SynthConfig::default()
    };
    if cfg.patterns == 0 {
        return Err(usage("--patterns must be at least 1"));
    }
    let c = generate(&cfg);
    fs::create_dir_all(&a.out)?;
    for (name, text) in [("base.py", &c.base), ("domain_train.py", &c.domain_train), ("domain_test.py", &c.domain_test)]
    {
        fs::write(a.out.join(name), text)?;
    }
    write_log("gen-corpus", a, &a.runtime, &a.out.join("run"), json!({ "synth": cfg }))?;
    say!("wrote base.py, domain_train.py, domain_test.py to {}", a.out.display());
    Ok(())
}

fn build_vocab(a: &BuildVocabArgs) -> Result<()> {
    let mut vocab = Vocab::new();
    for path in &a.corpus {
        vocab.encode_extend(&read_text(path)?);
    }
    vocab.save(&a.out)?;
    write_log("build-vocab", a, &a.runtime, &a.out, json!({ "tokens": vocab.len() }))?;
    say!("{} tokens", vocab.len());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    init_threads(&a.runtime)?;
    let texts = a.corpus.iter().map(|p| read_text(p)).collect::<Result<Vec<_>>>()?;
    if let Some(m) = &a.model {
        require_file(m)?;
    }
    let (vocab, built) = if a.vocab.is_file() {
        (load_vocab(&a.vocab)?, false)
    } else {
        let mut v = Vocab::new();
        for t in &texts {
            v.encode_extend(t);
        }
        (v, true)
    };
    let corpus: Vec<TokenId> = texts.iter().flat_map(|t| vocab.encode(t)).collect();
    let init = match &a.model {
        Some(path) => load_model(path, &vocab)?,
        None => {
            ToyLm::for_vocab(&vocab, a.context, a.d_emb, a.dmodel, a.runtime.seed).map_err(|e| usage(e.to_string()))?
        }
    };
    let cfg = TrainConfig {
        eta_theta: a.lr,
        epochs: a.epochs,
        batch: a.batch,
        seed: a.runtime.seed,
        ..TrainConfig::default()
    };
    let model = train(&init, &corpus, &cfg).map_err(|e| match e {
        ft2ra_core::Error::InvalidInput(msg) => usage(msg),
        other => other.into(),
    })?;
    if built {
        vocab.save(&a.vocab)?;
    }
    model.save(&a.out)?;
    write_log(
        "train",
        a,
        &a.runtime,
        &a.out,
        json!({
            "train": cfg,
            "dims": model.dims(),
            "corpus_tokens": corpus.len(),
            "vocab_built": built,
            "init_fingerprint": init.fingerprint(),
            "fingerprint": model.fingerprint(),
        }),
    )?;
    say!("{}", model.fingerprint());
    Ok(())
}

fn build_datastore(a: &BuildDatastoreArgs) -> Result<()> {
    init_threads(&a.runtime)?;
    let vocab = load_vocab(&a.vocab)?;
    let text = read_text(&a.corpus)?;
    require_file(&a.model)?;
    let model = load_model(&a.model, &vocab)?;
    let corpus = vocab.encode(&text);
    let name = a.corpus.file_name().and_then(|s| s.to_str()).unwrap_or("corpus");
    let meta = DatastoreMeta::describe(&model.fingerprint(), name, build_timestamp());
    let ds = Datastore::build(&model, &corpus, meta)?;
    ds.save(&a.out)?;
    write_log(
        "build-datastore",
        a,
        &a.runtime,
        &a.out,
        json!({ "entries": ds.len(), "meta": ds.meta().text, "model_fingerprint": model.fingerprint() }),
    )?;
    say!("{} entries", ds.len());
    Ok(())
}

fn complete(a: &CompleteArgs) -> Result<()> {
    init_threads(&a.runtime)?;
    let effective = method_config(&a.method)?;
    let vocab = load_vocab(&a.vocab)?;
    let stop = stop_ids(&vocab, &a.decode.stop_tokens)?;
    if let Some(p) = &a.datastore {
        require_file(p)?;
    }
    let model = load_model(&a.model, &vocab)?;
    let mut ds = method_datastore(&a.method, a.datastore.as_deref(), &model)?;
    let prompt = vocab.encode(&a.prompt);
    let padded = pad_prompt(&prompt, model.context_len(), vocab.specials().bos);
    let (completion, traces) = {
        let mut engine = engine(&a.method, &model, ds.as_mut())?;
        let mut p = Tracing { engine: &mut engine, record: a.trace, traces: Vec::new() };
        let out = complete_line(&mut p, &padded, a.decode.max_tokens, &stop)?;
        (out, p.traces)
    };
    let mut all = prompt.clone();
    all.extend(&completion);
    let text = normalize_whitespace(&vocab.decode(&all)?);
    say!("{text}");
    if a.trace {
        say!("# epoch\ttop-5 ids\ttop-5 logits\tdelta norm");
        // a trace exists for every predicted token, including the stop token
        for (step, trace) in traces.iter().enumerate() {
            let token =
                completion.get(step).map_or("<stop>".to_string(), |&t| vocab.token(t).unwrap_or("?").to_string());
            say!("# step {} -> {}", step + 1, token);
            emit(&trace.to_tsv())?;
        }
    }
    if let Some(out) = &a.out {
        fs::write(out, format!("{text}\n"))?;
        if let (true, Some(ds)) = (a.method.persist_updates, &ds) {
            let mut p = out.as_os_str().to_owned();
            p.push(".ds");
            ds.save(Path::new(&p))?;
        }
        write_log(
            "complete",
            a,
            &a.runtime,
            out,
            json!({ "method": effective, "prompt_tokens": prompt.len(), "completion_tokens": completion.len() }),
        )?;
    } else if let Some(log) = &a.runtime.log {
        write_log("complete", a, &a.runtime, log, json!({ "method": effective }))?;
    }
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    init_threads(&a.runtime)?;
    let effective = method_config(&a.method)?;
    let vocab = load_vocab(&a.vocab)?;
    let stop = stop_ids(&vocab, &a.decode.stop_tokens)?;
    let text = read_text(&a.corpus)?;
    if let Some(p) = &a.datastore {
        require_file(p)?;
    }
    let model = load_model(&a.model, &vocab)?;
    let mut ds = method_datastore(&a.method, a.datastore.as_deref(), &model)?;
    let corpus = vocab.encode(&text);
    let n = model.context_len();
    let tokens = token_samples(&corpus, n);
    let lines = line_samples(&corpus, n, vocab.specials().eol);
    let line_eval = (!a.token_only).then_some(LineEval {
        samples: &lines,
        vocab: &vocab,
        max_tokens: a.decode.max_tokens,
        stop: &stop,
    });
    let config = json!({
        "method": effective,
        "model_fingerprint": model.fingerprint(),
        "datastore_meta": ds.as_ref().map(|d| d.meta().text.clone()),
        "test_corpus": a.corpus,
        "max_tokens": a.decode.max_tokens,
        "stop_tokens": a.decode.stop_tokens,
    });
    let name = method_name(a.method.method);
    let mut engine = engine(&a.method, &model, ds.as_mut())?;
    let report = match engine.shared() {
        Some(p) => evaluate(name, config.clone(), p, &tokens, line_eval)?,
        None => {
            let mut p = Tracing { engine: &mut engine, record: false, traces: Vec::new() };
            evaluate_sequential(name, config.clone(), &mut p, &tokens, line_eval)?
        }
    };
    report.save(&a.out)?;
    write_log("eval", a, &a.runtime, &a.out, config)?;
    emit(&report.summary_table())?;
    Ok(())
}

fn sweep_cmd(a: &SweepArgs) -> Result<()> {
    init_threads(&a.runtime)?;
    let vocab = load_vocab(&a.vocab)?;
    let stop = stop_ids(&vocab, &a.decode.stop_tokens)?;
    let text = read_text(&a.corpus)?;
    require_file(&a.model)?;
    require_file(&a.datastore)?;
    let has = |m| a.method.contains(&m);
    let strategies = if has(MethodArg::Ft2ra) {
        a.strategy.iter().map(|&s| strategy(s, a.temperature)).collect::<Result<Vec<_>>>()?
    } else {
        Vec::new()
    };
    let grid = SweepGrid {
        include_original: has(MethodArg::Original),
        iters: a.iters.clone(),
        etas: a.eta.clone(),
        neighbors: a.neighbors.clone(),
        strategies,
        lambdas: if has(MethodArg::Knnlm) { a.lambda.clone() } else { Vec::new() },
        metric: metric(a.metric),
        reset_query: a.reset_query,
    };
    if grid.points().is_empty() {
        return Err(usage("the sweep grid is empty"));
    }
    if a.neighbors.contains(&0) {
        return Err(usage("--neighbors must be at least 1"));
    }
    if let Some(l) = a.lambda.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(usage(format!("--lambda must lie in [0, 1], got {l}")));
    }
    if let Some(e) = a.eta.iter().find(|e| !(**e >= 0.0 && e.is_finite())) {
        return Err(usage(format!("--eta must be >= 0, got {e}")));
    }
    let model = load_model(&a.model, &vocab)?;
    let ds = load_datastore(&a.datastore, &model)?;
    let corpus = vocab.encode(&text);
    let n = model.context_len();
    let tokens = token_samples(&corpus, n);
    let lines = line_samples(&corpus, n, vocab.specials().eol);
    let line_eval =
        a.lines.then_some(LineEval { samples: &lines, vocab: &vocab, max_tokens: a.decode.max_tokens, stop: &stop });
    let report = sweep(&model, &ds, &tokens, &grid, line_eval)?;
    report.save(&a.out)?;
    let curves = report.save_curves(&a.out)?;
    write_log(
        "sweep",
        a,
        &a.runtime,
        &a.out,
        json!({ "grid": grid, "model_fingerprint": model.fingerprint(), "datastore_meta": ds.meta().text, "curves": curves }),
    )?;
    emit(&report.summary_table())?;
    Ok(())
}

fn compare(a: &CompareFinetuneArgs) -> Result<()> {
    init_threads(&a.runtime)?;
    if a.method.contains(&MethodArg::Original) {
        return Err(usage("the bare model is always evaluated; list only ft2ra and/or knnlm"));
    }
    if a.epochs == 0 {
        return Err(usage("--epochs must be at least 1"));
    }
    let vocab = load_vocab(&a.vocab)?;
    let train_text = read_text(&a.corpus)?;
    let test_text = read_text(&a.test_corpus)?;
    let model = load_model(&a.model, &vocab)?;
    let mut augmentors = Vec::new();
    for m in &a.method {
        let margs = MethodArgs {
            method: *m,
            neighbors: a.neighbors,
            eta: a.eta,
            iters: a.iters,
            strategy: a.strategy,
            temperature: a.temperature,
            lambda: a.lambda,
            metric: a.metric,
            persist_updates: false,
            reset_query: a.reset_query,
        };
        augmentors.push(match m {
            MethodArg::Ft2ra => GridPoint::Ft2ra(augment_config(&margs)?),
            _ => GridPoint::Knnlm(knnlm_config(&margs)?),
        });
    }
    let train_cfg =
        TrainConfig { eta_theta: a.lr, epochs: 1, batch: a.batch, seed: a.runtime.seed, ..TrainConfig::default() };
    let corpus = vocab.encode(&train_text);
    let tokens = token_samples(&vocab.encode(&test_text), model.context_len());
    let cmp = compare_finetune(&model, &corpus, &tokens, a.epochs, &train_cfg, &augmentors)?;

    let mut table = String::new();
    let _ = write!(table, "{:>5} {:>9}", "epoch", "original");
    for (label, _) in &cmp.augmented {
        let _ = write!(table, "  {label}");
    }
    table.push('\n');
    for e in 0..=cmp.epochs_max() {
        let _ = write!(table, "{e:>5} {:>9.2}", cmp.original[e]);
        for (label, ys) in &cmp.augmented {
            let _ = write!(table, "  {:>w$.2}", ys[e], w = label.len());
        }
        table.push('\n');
    }
    let effective = json!({ "train": train_cfg, "augmentors": augmentors, "model_fingerprint": model.fingerprint() });
    let report = cmp.into_report()?;
    report.save(&a.out)?;
    report.save_curves(&a.out)?;
    write_log("compare-finetune", a, &a.runtime, &a.out, effective)?;
    emit(&table)?;
    Ok(())
}
