//! `ccvqa` command line: retrieve | answer | eval | ablate | stats.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use clap::{Args, Parser, Subcommand};

use ccvqa::clients::live::{HttpConfig, LiveChatClient, LiveEmbedder};
use ccvqa::clients::stub::PinnedEmbedder;
use ccvqa::clients::{CachedEmbedder, ChatClient, EmbeddingProvider};
use ccvqa::config::Mode;
use ccvqa::corpus::{
    self, load_gt_refs, load_knowledge_base, load_queries, KnowledgeBase, Query, RetrievedContext,
};
use ccvqa::correlation::build_profile;
use ccvqa::error::Error;
use ccvqa::eval::{self, similarity_stats, QueryTrace};
use ccvqa::exec::map_ordered;
use ccvqa::lm::NextTokenLm;
use ccvqa::pipeline::{answer_query, PipelineClients};
use ccvqa::stub_suite::builtin_suite;
use ccvqa::toylm::ToyLm;
use ccvqa::vccr::ContextUnit;
use ccvqa::{Result, RunConfig};

#[derive(Parser)]
#[command(name = "ccvqa", version, about = "Conflict- and correlation-aware retrieval-augmented VQA")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    #[command(flatten)]
    opts: GlobalOpts,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Cmd {
    /// Retrieve top articles and sections per query, writing contexts JSONL.
    Retrieve,
    /// Run the full answering pipeline per query, writing answers JSONL.
    Answer,
    /// Evaluate a mode over the query set, writing a report JSON.
    Eval,
    /// Sweep alpha, tau, and the component grid, one report per point.
    Ablate,
    /// Sentence-similarity statistics over retrieved contexts.
    Stats,
}

#[derive(Args)]
struct GlobalOpts {
    /// Config file (TOML or JSON); explicit flags override file values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Knowledge base JSONL (defaults to the built-in suite under --stub).
    #[arg(long, global = true)]
    kb: Option<PathBuf>,
    /// Query JSONL (defaults to the built-in suite under --stub).
    #[arg(long, global = true)]
    queries: Option<PathBuf>,
    /// Output file (commands append suffixes for side outputs); stdout when
    /// omitted. `ablate` treats this as a directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// base | rag | ccvqa | oracle.
    #[arg(long, global = true)]
    mode: Option<String>,
    /// Compression fraction in [0, 1].
    #[arg(long, global = true)]
    tau: Option<f64>,
    /// Compression increment in (0, 1].
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Conflict-score bias.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// Oracle ground-truth JSONL ({"qid","entity_id","section_id"} lines);
    /// bare --oracle uses the built-in references under --stub. Implies
    /// --mode oracle.
    #[arg(long, global = true)]
    oracle: Option<Option<PathBuf>>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = scheduler default, 1 = sequential).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Use the built-in scripted clients; no network.
    #[arg(long, global = true)]
    stub: bool,
    /// Also write per-step decoding signals as JSONL.
    #[arg(long, global = true)]
    dump_trace: bool,
    /// Disable conflict reasoning.
    #[arg(long, global = true)]
    no_vccr: bool,
    /// Disable positional compression.
    #[arg(long, global = true)]
    no_cpe: bool,
    /// Disable adaptive decoding.
    #[arg(long, global = true)]
    no_cad: bool,
}

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } | Error::Config(_) => 2,
        _ => 1,
    }
}

fn resolve_config(opts: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(mode) = &opts.mode {
        cfg.mode = mode.parse()?;
    }
    if opts.oracle.is_some() {
        cfg.mode = Mode::Oracle;
    }
    if let Some(tau) = opts.tau {
        cfg.tau = tau;
    }
    if let Some(alpha) = opts.alpha {
        cfg.cpe_alpha = alpha;
    }
    if let Some(delta) = opts.delta {
        cfg.delta = delta;
    }
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
        cfg.lm.seed = seed;
    }
    if let Some(workers) = opts.workers {
        cfg.workers = workers;
    }
    if opts.stub {
        cfg.stub = true;
    }
    if opts.no_vccr {
        cfg.vccr = false;
    }
    if opts.no_cpe {
        cfg.cpe = false;
    }
    if opts.no_cad {
        cfg.cad = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Everything a command needs: inputs plus the three model roles.
struct Runtime {
    cfg: RunConfig,
    kb: KnowledgeBase,
    queries: Vec<Query>,
    gt: Option<HashMap<String, RetrievedContext>>,
    chat: Box<dyn ChatClient>,
    embedder: Box<dyn EmbeddingProvider>,
    lm: Box<dyn NextTokenLm>,
}

impl Runtime {
    fn clients(&self) -> PipelineClients<'_> {
        PipelineClients {
            vlm: self.chat.as_ref(),
            embedder: self.embedder.as_ref(),
            lm: self.lm.as_ref(),
        }
    }
}

struct Roles {
    chat: Box<dyn ChatClient>,
    embedder: Box<dyn EmbeddingProvider>,
    lm: Box<dyn NextTokenLm>,
}

fn build_runtime(opts: &GlobalOpts, cfg: RunConfig) -> Result<Runtime> {
    let (kb, queries, builtin_gt, roles) = if cfg.stub {
        let suite = builtin_suite();
        let kb = match &opts.kb {
            Some(p) => load_knowledge_base(p)?,
            None => suite.kb.clone(),
        };
        let queries = match &opts.queries {
            Some(p) => load_queries(p)?,
            None if cfg.mode == Mode::Oracle => suite.oracle_queries.clone(),
            None => suite.queries.clone(),
        };
        let embedder: PinnedEmbedder = suite.embedder();
        let roles = Roles {
            chat: Box::new(suite.chat()),
            embedder: Box::new(CachedEmbedder::new(embedder)),
            lm: Box::new(suite.lm()),
        };
        (kb, queries, Some(suite.gt.clone()), roles)
    } else {
        let kb_path = opts
            .kb
            .as_ref()
            .ok_or_else(|| Error::Config("--kb is required outside --stub mode".into()))?;
        let kb = load_knowledge_base(kb_path)?;
        let queries_path = opts
            .queries
            .as_ref()
            .ok_or_else(|| Error::Config("--queries is required outside --stub mode".into()))?;
        let queries = load_queries(queries_path)?;
        if cfg.clients.chat_endpoint.is_empty() || cfg.clients.embed_endpoint.is_empty() {
            return Err(Error::Config(
                "live mode needs clients.chat_endpoint and clients.embed_endpoint in the config"
                    .into(),
            ));
        }
        let mk_http = |endpoint: &str, model: &str| HttpConfig {
            endpoint: endpoint.to_string(),
            model: model.to_string(),
            max_retries: cfg.clients.max_retries,
            timeout: std::time::Duration::from_secs(cfg.clients.timeout_secs),
            rate_limit: cfg.clients.rate_limit,
            ..HttpConfig::new(endpoint, model)
        };
        let chat = LiveChatClient::new(mk_http(&cfg.clients.chat_endpoint, &cfg.clients.chat_model));
        let embedder = LiveEmbedder::new(
            mk_http(&cfg.clients.embed_endpoint, &cfg.clients.embed_model),
            cfg.clients.embed_dim,
        );
        let roles = Roles {
            chat: Box::new(chat),
            embedder: Box::new(CachedEmbedder::new(embedder)),
            lm: Box::new(ToyLm::new(cfg.lm)?),
        };
        (kb, queries, None, roles)
    };

    // ground-truth contexts for oracle runs
    let gt = match (&opts.oracle, cfg.mode) {
        (Some(Some(path)), _) if !path.as_os_str().is_empty() => {
            Some(resolve_gt(&kb, &load_gt_refs(path)?)?)
        }
        (Some(_), _) | (None, Mode::Oracle) => match &builtin_gt {
            Some(refs) => Some(resolve_gt(&kb, &refs.values().cloned().collect::<Vec<_>>())?),
            None => {
                return Err(Error::Config(
                    "oracle mode outside --stub needs --oracle <gt.jsonl>".into(),
                ))
            }
        },
        _ => None,
    };

    if queries.is_empty() {
        return Err(Error::Config("query set is empty".into()));
    }

    Ok(Runtime {
        cfg,
        kb,
        queries,
        gt,
        chat: roles.chat,
        embedder: roles.embedder,
        lm: roles.lm,
    })
}

fn resolve_gt(
    kb: &KnowledgeBase,
    refs: &[corpus::GtRef],
) -> Result<HashMap<String, RetrievedContext>> {
    let mut out = HashMap::new();
    for r in refs {
        let ctx = kb.context_for(&r.entity_id, &r.section_id).ok_or_else(|| {
            Error::Config(format!(
                "ground truth {}/{} for '{}' not in the knowledge base",
                r.entity_id, r.section_id, r.qid
            ))
        })?;
        out.insert(r.qid.clone(), ctx);
    }
    Ok(out)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.opts)?;
    let rt = build_runtime(&cli.opts, cfg)?;
    match cli.command {
        Cmd::Retrieve => cmd_retrieve(&cli.opts, &rt),
        Cmd::Answer => cmd_answer(&cli.opts, &rt),
        Cmd::Eval => cmd_eval(&cli.opts, &rt),
        Cmd::Ablate => cmd_ablate(&cli.opts, &rt),
        Cmd::Stats => cmd_stats(&cli.opts, &rt),
    }
}

/// Writes lines in input order while work completes out of order, flushing
/// each contiguous prefix as soon as it exists (an interrupt loses only the
/// in-flight tail).
struct OrderedSink {
    inner: Mutex<OrderedSinkState>,
}

struct OrderedSinkState {
    next: usize,
    pending: BTreeMap<usize, String>,
    writer: Box<dyn Write + Send>,
}

impl OrderedSink {
    fn create(path: Option<&Path>) -> Result<Self> {
        let writer: Box<dyn Write + Send> = match path {
            Some(p) => Box::new(std::fs::File::create(p).map_err(|e| Error::io(p, e))?),
            None => Box::new(std::io::stdout()),
        };
        Ok(OrderedSink {
            inner: Mutex::new(OrderedSinkState {
                next: 0,
                pending: BTreeMap::new(),
                writer,
            }),
        })
    }

    fn push(&self, idx: usize, line: String) {
        let mut st = self.inner.lock().unwrap();
        st.pending.insert(idx, line);
        loop {
            let next = st.next;
            let Some(line) = st.pending.remove(&next) else {
                break;
            };
            st.next += 1;
            let _ = writeln!(st.writer, "{line}");
            let _ = st.writer.flush();
        }
    }
}

fn cmd_retrieve(opts: &GlobalOpts, rt: &Runtime) -> Result<()> {
    let sink = OrderedSink::create(opts.out.as_deref())?;
    let par = rt.cfg.parallelism();
    let indexed: Vec<(usize, &Query)> = rt.queries.iter().enumerate().collect();
    let results: Vec<Result<()>> = map_ordered(par, &indexed, |&(i, q)| {
        let entries = corpus::retrieve_top_k(q, &rt.kb, rt.cfg.top_k_articles, rt.embedder.as_ref(), par)?;
        let mut contexts =
            corpus::select_sections(&entries, q, rt.cfg.top_sections, rt.embedder.as_ref(), par)?;
        let mut record = serde_json::json!({"qid": q.qid, "contexts": contexts});
        if let Some(gt) = rt.gt.as_ref().and_then(|m| m.get(&q.qid)) {
            let (updated, already) = corpus::oracle_insert(&contexts, gt, rt.cfg.oracle_slot)?;
            contexts = updated;
            record = serde_json::json!({
                "qid": q.qid,
                "contexts": contexts,
                "oracle_injected": !already,
                "oracle_already_present": already,
            });
        }
        sink.push(i, record.to_string());
        Ok(())
    });
    results.into_iter().collect()
}

fn cmd_answer(opts: &GlobalOpts, rt: &Runtime) -> Result<()> {
    let sink = OrderedSink::create(opts.out.as_deref())?;
    let trace_sink = if opts.dump_trace {
        Some(OrderedSink::create(
            opts.out
                .as_deref()
                .map(|p| suffixed(p, ".trace.jsonl"))
                .as_deref(),
        )?)
    } else {
        None
    };
    let par = rt.cfg.parallelism();
    let clients = rt.clients();
    let indexed: Vec<(usize, &Query)> = rt.queries.iter().enumerate().collect();
    let results: Vec<Result<()>> = map_ordered(par, &indexed, |&(i, q)| {
        let gt = rt.gt.as_ref().and_then(|m| m.get(&q.qid));
        let outcome = answer_query(q, &rt.kb, &clients, &rt.cfg, gt)?;
        if let Some(ts) = &trace_sink {
            let mut lines = String::new();
            for step in &outcome.trace {
                let mut v = serde_json::to_value(step).unwrap();
                v["qid"] = serde_json::json!(outcome.qid);
                lines.push_str(&v.to_string());
                lines.push('\n');
            }
            ts.push(i, lines.trim_end().to_string());
        }
        sink.push(i, serde_json::to_string(&outcome).unwrap());
        Ok(())
    });
    results.into_iter().collect()
}

fn cmd_eval(opts: &GlobalOpts, rt: &Runtime) -> Result<()> {
    let clients = rt.clients();
    let run = eval::run_experiment(&rt.queries, &rt.kb, &clients, &rt.cfg, rt.gt.as_ref())?;
    let report = serde_json::to_string_pretty(&run.report).unwrap();
    match &opts.out {
        Some(path) => {
            write_file(path, &report)?;
            let records: String = run
                .records
                .iter()
                .map(|r| serde_json::to_string(r).unwrap() + "\n")
                .collect();
            write_file(&suffixed(path, ".records.jsonl"), &records)?;
            if opts.dump_trace {
                let traces: String = run
                    .traces
                    .iter()
                    .map(|t: &QueryTrace| serde_json::to_string(t).unwrap() + "\n")
                    .collect();
                write_file(&suffixed(path, ".trace.jsonl"), &traces)?;
            }
        }
        None => println!("{report}"),
    }
    eprintln!(
        "mode {}: accuracy {:.4} over {} queries ({} failures)",
        run.report.mode, run.report.accuracy, run.report.n, run.report.failures
    );
    Ok(())
}

fn cmd_ablate(opts: &GlobalOpts, rt: &Runtime) -> Result<()> {
    let out_dir = opts
        .out
        .clone()
        .ok_or_else(|| Error::Config("ablate needs --out <directory>".into()))?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let clients = rt.clients();
    let table = eval::ablate(&rt.queries, &rt.kb, &clients, &rt.cfg)?;
    for (group, cells) in [
        ("alpha", &table.alpha),
        ("tau", &table.tau),
        ("components", &table.components),
    ] {
        for cell in cells {
            // alpha/tau labels already carry the grid name
            let name = if group == "components" {
                format!("ablate_components_{}.json", cell.label.trim_start_matches('+'))
            } else {
                format!("ablate_{}.json", cell.label.replace('=', "_"))
            };
            write_file(
                &out_dir.join(name),
                &serde_json::to_string_pretty(&cell.report).unwrap(),
            )?;
        }
    }
    write_file(
        &out_dir.join("ablation.json"),
        &serde_json::to_string_pretty(&table).unwrap(),
    )?;
    write_file(&out_dir.join("ablation.txt"), &table.text_table())?;
    println!("{}", table.text_table());
    Ok(())
}

fn cmd_stats(opts: &GlobalOpts, rt: &Runtime) -> Result<()> {
    let par = rt.cfg.parallelism();
    let profiles: Vec<Result<ccvqa::correlation::CorrelationProfile>> =
        map_ordered(par, &rt.queries, |q| {
            let entries =
                corpus::retrieve_top_k(q, &rt.kb, rt.cfg.top_k_articles, rt.embedder.as_ref(), par)?;
            let contexts =
                corpus::select_sections(&entries, q, rt.cfg.top_sections, rt.embedder.as_ref(), par)?;
            let units: Vec<ContextUnit> = contexts.iter().map(ContextUnit::retrieved).collect();
            build_profile(
                &units,
                &q.question,
                &q.image,
                rt.cfg.tau,
                rt.embedder.as_ref(),
                par,
            )
        });
    let profiles: Vec<_> = profiles.into_iter().collect::<Result<_>>()?;
    let golds: Vec<Vec<String>> = rt.queries.iter().map(|q| q.answers.clone()).collect();
    let stats = similarity_stats(&profiles, Some(&golds), 40)?;
    let json = serde_json::to_string_pretty(&stats).unwrap();
    match &opts.out {
        Some(path) => {
            write_file(path, &json)?;
            write_file(&suffixed(path, ".csv"), &stats.histogram_csv())?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_file(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}
