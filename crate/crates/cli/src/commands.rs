use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use epics_anomaly::channel_grammar::{build_flow_graph, export_sankey};
use epics_anomaly::event_log::{load_filter, EventReader, FilterList, TimeRange};
use epics_anomaly::pipeline::{
    load_bundle, save_bundle, train_pipeline_with, LatentCsvWriter, PipelineError, SavedState, ScoreCsvWriter,
    ScoreRecord, Scorer, TrainHooks,
};
use epics_anomaly::synth_oracle::{evaluate, generate_corpus, read_labels, CorpusSpec};

use crate::config::RunConfig;
use crate::{
    Command, EmbeddingsArgs, EvalArgs, Overrides, ParseArgs, SankeyArgs, ScoreArgs, SynthArgs, TrainArgs,
};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime { kind: &'static str, message: String },
}

fn runtime(kind: &'static str, message: impl Into<String>) -> CliError {
    CliError::Runtime {
        kind,
        message: message.into(),
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        runtime(e.kind(), e.to_string())
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        runtime("IoError", e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Parse(a) => cmd_parse(a),
        Command::Sankey(a) => cmd_sankey(a),
        Command::Train(a) => cmd_train(a),
        Command::Score(a) => cmd_score(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Embeddings(a) => cmd_embeddings(a),
    }
}

/// Named input files must exist; anything else is a usage error.
fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} '{}' does not exist or is not a file", path.display())))
    }
}

fn open_input(input: &str) -> Result<Box<dyn BufRead>> {
    if input == "-" {
        return Ok(Box::new(io::stdin().lock()));
    }
    let path = Path::new(input);
    require_file(path, "input")?;
    let file = File::open(path).map_err(|e| runtime("IoError", format!("{}: {e}", path.display())))?;
    Ok(Box::new(BufReader::new(file)))
}

fn create_output(output: &str) -> Result<Box<dyn Write>> {
    if output == "-" {
        return Ok(Box::new(io::stdout().lock()));
    }
    let file = File::create(output).map_err(|e| runtime("IoError", format!("{output}: {e}")))?;
    Ok(Box::new(BufWriter::new(file)))
}

fn read_filter(path: Option<&Path>) -> Result<FilterList> {
    match path {
        None => Ok(FilterList::default()),
        Some(p) => {
            require_file(p, "filter file")?;
            let text = std::fs::read_to_string(p).map_err(|e| runtime("IoError", format!("{}: {e}", p.display())))?;
            Ok(load_filter(&text))
        }
    }
}

fn cmd_parse(args: ParseArgs) -> Result<()> {
    let filter = read_filter(args.filter.as_deref())?;
    let source = open_input(&args.input)?;
    let mut out = create_output(&args.output)?;
    let range = TimeRange {
        start: args.start,
        end: args.end,
    };
    let mut reader = EventReader::new(source, &filter);
    let (mut events, mut outside, mut malformed) = (0u64, 0u64, 0u64);
    let mut report = |reader: &mut EventReader<'_, Box<dyn BufRead>>| {
        for d in reader.take_diagnostics() {
            eprintln!("{d}");
            malformed += 1;
        }
    };
    while let Some(item) = reader.next() {
        report(&mut reader);
        let ev = item.map_err(PipelineError::from)?;
        if range.contains(ev.timestamp) {
            writeln!(out, "{}", ev.to_line())?;
            events += 1;
        } else {
            outside += 1;
        }
    }
    report(&mut reader);
    out.flush()?;
    eprintln!(
        "parsed {events} events from {} lines ({} filtered, {outside} outside time range, {malformed} malformed)",
        reader.lines_read(),
        reader.filtered()
    );
    if args.strict && malformed > 0 {
        return Err(runtime("MalformedLine", format!("{malformed} malformed lines (--strict)")));
    }
    Ok(())
}

fn cmd_sankey(args: SankeyArgs) -> Result<()> {
    let filter = read_filter(args.filter.as_deref())?;
    let source = open_input(&args.input)?;
    let mut reader = EventReader::new(source, &filter);
    let mut all = Vec::new();
    let mut distinct = BTreeSet::new();
    while let Some(item) = reader.next() {
        for d in reader.take_diagnostics() {
            eprintln!("{d}");
        }
        let ev = item.map_err(PipelineError::from)?;
        if args.per_event {
            all.push(ev.pv);
        } else {
            distinct.insert(ev.pv);
        }
    }
    for d in reader.take_diagnostics() {
        eprintln!("{d}");
    }
    let graph = if args.per_event {
        build_flow_graph(&all, args.strip_numbers)
    } else {
        build_flow_graph(&distinct, args.strip_numbers)
    };
    let mut out = create_output(&args.output)?;
    writeln!(out, "{}", export_sankey(&graph))?;
    out.flush()?;
    eprintln!(
        "{} paths, {} nodes, {} links, {} names without tokens",
        if args.per_event { all.len() } else { distinct.len() },
        graph.nodes.len(),
        graph.edges.len(),
        graph.skipped
    );
    Ok(())
}

fn apply_overrides(config: &mut RunConfig, o: &Overrides) {
    fn set<T: Copy>(slot: &mut T, v: Option<T>) {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if o.seed.is_some() {
        config.seed = o.seed;
    }
    if o.start.is_some() {
        config.time_range.start = o.start;
    }
    if o.end.is_some() {
        config.time_range.end = o.end;
    }
    set(&mut config.tokenizer, o.tokenizer);
    let e = &mut config.embedding;
    set(&mut e.dim, o.dim);
    set(&mut e.window, o.window);
    set(&mut e.negatives, o.negatives);
    set(&mut e.epochs, o.sg_epochs);
    set(&mut e.learning_rate, o.sg_learning_rate);
    set(&mut e.min_count, o.min_count);
    let d = &mut config.detector;
    set(&mut d.hidden, o.hidden);
    set(&mut d.latent, o.latent);
    set(&mut d.segment_len, o.segment_len);
    set(&mut d.epochs, o.epochs);
    set(&mut d.learning_rate, o.learning_rate);
    set(&mut d.weight_decay, o.weight_decay);
    set(&mut d.center_floor, o.center_floor);
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(p) => {
            require_file(p, "config file")?;
            RunConfig::load(p).map_err(CliError::Usage)?
        }
        None => RunConfig::default(),
    };
    apply_overrides(&mut config, &args.overrides);
    if let Some(i) = &args.input {
        config.paths.input = Some(PathBuf::from(i));
    }
    if let Some(f) = &args.filter {
        config.paths.filter = Some(f.clone());
    }
    if let Some(o) = &args.out {
        config.paths.out = Some(o.clone());
    }
    let input = config
        .paths
        .input
        .clone()
        .ok_or_else(|| CliError::Usage("no input: pass --input or set paths.input in --config".into()))?;
    let out = config
        .paths
        .out
        .clone()
        .ok_or_else(|| CliError::Usage("no output: pass --out or set paths.out in --config".into()))?;
    let seed = match config.seed {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            eprintln!("seed {s} (chosen at random; pass --seed {s} to reproduce)");
            s
        }
    };
    config.seed = Some(seed);
    if args.print_config {
        print!("{}", config.to_toml());
    }
    let pipeline = config.pipeline(seed);
    pipeline.embedding.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    pipeline.detector.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let filter = read_filter(config.paths.filter.as_deref())?;
    let source = open_input(&input.to_string_lossy())?;
    let total = pipeline.detector.epochs;
    let quiet = args.quiet;
    let bundle = train_pipeline_with(
        source,
        &filter,
        &pipeline,
        TrainHooks {
            on_diagnostic: &mut |d| eprintln!("{d}"),
            on_epoch: &mut |epoch, loss| {
                if !quiet {
                    eprintln!("epoch {}/{total} loss {loss}", epoch + 1);
                }
            },
        },
    )?;
    let file = File::create(&out).map_err(|e| runtime("IoError", format!("{}: {e}", out.display())))?;
    save_bundle(&bundle, BufWriter::new(file))?;
    eprintln!(
        "trained on {} events, vocabulary {} tokens; wrote {} (sha256 {})",
        bundle.training.events,
        bundle.embedding.vocab.len(),
        out.display(),
        bundle.checksum()
    );
    Ok(())
}

fn open_csv(path: &str, append: bool) -> Result<(Box<dyn Write>, bool)> {
    if path == "-" {
        return Ok((Box::new(io::stdout().lock()), !append));
    }
    let p = Path::new(path);
    let file = if append {
        OpenOptions::new().create(true).append(true).open(p)
    } else {
        File::create(p)
    }
    .map_err(|e| runtime("IoError", format!("{path}: {e}")))?;
    let header = !append || file.metadata().map(|m| m.len() == 0).unwrap_or(true);
    Ok((Box::new(BufWriter::new(file)), header))
}

fn load_model(path: &Path) -> Result<epics_anomaly::pipeline::ModelBundle> {
    require_file(path, "model")?;
    let file = File::open(path).map_err(|e| runtime("IoError", format!("{}: {e}", path.display())))?;
    Ok(load_bundle(BufReader::new(file))?)
}

/// The `k` highest scores seen so far; ties keep input order.
struct TopK {
    k: usize,
    seen: u64,
    best: Vec<(f64, u64, ScoreRecord)>,
}

impl TopK {
    fn new(k: usize) -> Self {
        TopK {
            k,
            seen: 0,
            best: Vec::with_capacity(k + 1),
        }
    }

    fn offer(&mut self, r: &ScoreRecord) {
        let order = self.seen;
        self.seen += 1;
        if self.k == 0 {
            return;
        }
        if self.best.len() == self.k && self.best.last().is_some_and(|(s, _, _)| r.score <= *s) {
            return;
        }
        let at = self.best.partition_point(|(s, _, _)| *s >= r.score);
        self.best.insert(at, (r.score, order, r.clone()));
        self.best.truncate(self.k);
    }
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let bundle = load_model(&args.model)?;
    let mut scorer = match &args.state {
        Some(p) if p.exists() => {
            let text = std::fs::read_to_string(p).map_err(|e| runtime("IoError", format!("{}: {e}", p.display())))?;
            Scorer::resume(&bundle, SavedState::from_json(&text)?)?
        }
        _ => Scorer::new(&bundle),
    };
    let live = args.input == "-";
    let source = open_input(&args.input)?;
    let (out, header) = open_csv(&args.out, args.append)?;
    let mut scores = ScoreCsvWriter::new(out, header)?;
    let mut latents = match &args.latents {
        Some(p) => {
            let (w, header) = open_csv(&p.to_string_lossy(), args.append)?;
            Some(LatentCsvWriter::new(w, bundle.dims().latent, header)?)
        }
        None => None,
    };
    let mut top = args.top.map(TopK::new);
    let n = scorer.score_source(
        source,
        |r| {
            scores.write(&r)?;
            if let Some(l) = latents.as_mut() {
                l.write(&r)?;
            }
            if live {
                scores.flush()?;
                if let Some(l) = latents.as_mut() {
                    l.flush()?;
                }
            }
            if let Some(t) = top.as_mut() {
                t.offer(&r);
            }
            Ok(())
        },
        |d| eprintln!("{d}"),
    )?;
    scores.flush()?;
    if let Some(l) = latents.as_mut() {
        l.flush()?;
    }
    drop(scores);
    drop(latents);
    if let Some(p) = &args.state {
        std::fs::write(p, scorer.save_state().to_json())
            .map_err(|e| runtime("IoError", format!("{}: {e}", p.display())))?;
    }
    if let Some(t) = top {
        let mut sink: Box<dyn Write> = if args.out == "-" {
            Box::new(io::stderr().lock())
        } else {
            Box::new(io::stdout().lock())
        };
        writeln!(sink, "rank\tscore\ttimestamp\tpv\tprev\tnew")?;
        for (rank, (_, _, r)) in t.best.iter().enumerate() {
            writeln!(
                sink,
                "{}\t{}\t{}\t{}\t{}\t{}",
                rank + 1,
                r.score,
                r.timestamp,
                r.pv,
                r.prev_state,
                r.new_state
            )?;
        }
        sink.flush()?;
    }
    eprintln!("scored {n} events ({} in stream state)", scorer.state().events_seen);
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => {
            require_file(p, "spec file")?;
            let text = std::fs::read_to_string(p).map_err(|e| runtime("IoError", format!("{}: {e}", p.display())))?;
            toml::from_str::<CorpusSpec>(&text)
                .map_err(|e| CliError::Usage(format!("invalid spec {}: {e}", p.display())))?
        }
        None => CorpusSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(r) = args.anomaly_rate {
        spec.anomaly_rate = r;
    }
    if let Some(n) = args.events {
        spec.n_events = n;
    }
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if args.print_spec {
        print!("{}", toml::to_string(&spec).expect("spec serializes"));
        return Ok(());
    }
    let (Some(out), Some(labels)) = (&args.out, &args.labels) else {
        return Err(CliError::Usage("synth needs --out and --labels (or --print-spec)".into()));
    };
    let corpus = generate_corpus(&spec).map_err(|e| CliError::Usage(e.to_string()))?;
    let create = |p: &Path| File::create(p).map_err(|e| runtime("IoError", format!("{}: {e}", p.display())));
    corpus.write_log(BufWriter::new(create(out)?))?;
    corpus
        .write_labels(BufWriter::new(create(labels)?))
        .map_err(|e| runtime("CsvError", e.to_string()))?;
    if let Some(h) = &args.history {
        let history = generate_corpus(&spec.nominal_history()).map_err(|e| CliError::Usage(e.to_string()))?;
        history.write_log(BufWriter::new(create(h)?))?;
    }
    let anomalous = corpus.labels.iter().filter(|&&l| l).count();
    eprintln!(
        "wrote {} events ({anomalous} anomalous) to {}, seed {}",
        corpus.lines.len(),
        out.display(),
        spec.seed
    );
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    require_file(&args.scores, "scores file")?;
    require_file(&args.labels, "labels file")?;
    let scores = epics_anomaly::pipeline::read_score_column(File::open(&args.scores)?)
        .map_err(|e| runtime("CsvError", e.to_string()))?;
    let labels: Vec<bool> = read_labels(BufReader::new(File::open(&args.labels)?))
        .map_err(|e| runtime("CsvError", e.to_string()))?
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    let eval = evaluate(&scores, &labels).map_err(|e| runtime("EvalError", e.to_string()))?;
    print!("{}", eval.report());
    Ok(())
}

fn cmd_embeddings(args: EmbeddingsArgs) -> Result<()> {
    let bundle = load_model(&args.model)?;
    let out = create_output(&args.out)?;
    bundle
        .embedding
        .write_csv(out)
        .map_err(|e| runtime("CsvError", e.to_string()))?;
    Ok(())
}
