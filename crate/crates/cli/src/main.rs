use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use ocrrag_core::corpus::{
    page_map, read_jsonl, read_pages, read_qas, write_jsonl, Corpus, PageRecord,
};
use ocrrag_core::docmodel::Domain;
use ocrrag_core::fmtnoise::FmtRule;
use ocrrag_core::generation::mock::MockChat;
use ocrrag_core::generation::{ChatEndpoint, GenConfig, HttpChatClient, PromptAsset};
use ocrrag_core::harness::{
    build_kb_set, error_breakdown, eval_e2e, eval_generation, eval_retrieval, fmt_noisy_pages,
    render_table, reports_to_csv, run_sweep, score_predictions, KbSet, Prediction, RetrieverSpec,
    RunOptions, Stage, SweepConfig,
};
use ocrrag_core::imgnoise::{
    load_png, page_seed, save_png, Distorter, DistortionKind, DistortionParams, DistortionSpec,
    PsfBank, SeverityMode,
};
use ocrrag_core::metrics::{lcs_score_fmt_aware, r_noise, r_noise_with, UNAFFECTED_LCS};
use ocrrag_core::qafilter::filter_qas;
use ocrrag_core::retrieval::{ChunkParams, ChunkStrategy, Retriever};
use ocrrag_core::{EvalReport, FmtPlan, KnowledgeBase};
use serde::Serialize;
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "ocrrag",
    version,
    about = "OCR noise injection and RAG evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply formatting noise to ground-truth pages.
    PerturbFmt {
        /// Pages JSONL or a corpus directory.
        #[arg(long)]
        pages: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Comma-separated subset of rules; all rules when absent. Rules: text-style,
        /// title-formatting, paragraph-break, formula-conversion, extraneous-elements,
        /// equivalent-symbols, table-lines, table-cell-content.
        #[arg(long, value_delimiter = ',')]
        rules: Vec<FmtRule>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Distort a page image, or every PNG in a directory.
    PerturbImg {
        /// PNG file or directory of PNGs.
        #[arg(long, visible_alias = "in")]
        input: PathBuf,
        /// Output PNG, or output directory when the input is a directory.
        #[arg(long)]
        out: PathBuf,
        /// A single distortion: background, salt-pepper, dirty-rollers, rotation,
        /// binarization, warping, shadows or psf-blur.
        #[arg(long, conflicts_with = "mode")]
        kind: Option<DistortionKind>,
        /// JSON parameters for `--kind`; defaults when absent.
        #[arg(long, requires = "kind")]
        params: Option<String>,
        /// `one-weak`, `one-strong` or `two-random`.
        #[arg(long)]
        mode: Option<SeverityMode>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Blur kernel bank file, created on first use.
        #[arg(long)]
        psf_bank: Option<PathBuf>,
    },
    /// Chunk pages into one knowledge base per domain.
    BuildKb {
        #[arg(long)]
        pages: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        chunk: ChunkArgs,
    },
    /// Score retrieval against evidence.
    EvalRetrieval {
        #[arg(long)]
        kb_dir: PathBuf,
        #[arg(long)]
        qas: PathBuf,
        #[command(flatten)]
        retriever: RetrieverArgs,
        #[arg(long, default_value_t = 2)]
        k: usize,
        /// Ignore formatting noise of this rate when comparing evidence.
        #[arg(long)]
        fmt_aware_rate: Option<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score generation with the gold pages as context.
    EvalGen {
        #[arg(long)]
        pages: PathBuf,
        #[arg(long)]
        qas: PathBuf,
        #[command(flatten)]
        gen: GenArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Retrieve, generate and score answers.
    EvalE2e {
        #[arg(long)]
        kb_dir: PathBuf,
        #[arg(long)]
        qas: PathBuf,
        #[command(flatten)]
        retriever: RetrieverArgs,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[command(flatten)]
        gen: GenArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score saved predictions without calling any endpoint.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        qas: PathBuf,
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        fmt_aware_rate: Option<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Share of QAs whose evidence is damaged on perturbed pages.
    Rnoise {
        #[arg(long)]
        pages: PathBuf,
        #[arg(long)]
        qas: PathBuf,
        #[arg(long)]
        fmt_aware_rate: Option<f64>,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Drop context-dependent and unverifiable QAs.
    QaFilter {
        #[arg(long)]
        qas: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Chat endpoint used as a judge.
        #[arg(long, requires = "judge_model")]
        judge_url: Option<String>,
        #[arg(long)]
        judge_model: Option<String>,
        #[arg(long)]
        api_key_env: Option<String>,
        /// Where to write the rejection report.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Print a score table for saved reports.
    Report {
        reports: Vec<PathBuf>,
        /// Also split the first report by OCR damage and correctness.
        #[arg(long, requires_all = ["qas", "noisy_pages"])]
        breakdown: bool,
        #[arg(long)]
        qas: Option<PathBuf>,
        #[arg(long)]
        noisy_pages: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5)]
        f1_threshold: f64,
    },
    /// Run a grid of noise levels, retrievers and stages.
    Sweep {
        /// JSON config; defaults when absent.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ChunkArgs {
    #[arg(long, default_value_t = 1024)]
    chunk_size: usize,
    #[arg(long, default_value_t = 0)]
    overlap: usize,
    #[arg(long)]
    block_aligned: bool,
}

impl ChunkArgs {
    fn params(&self) -> ChunkParams {
        ChunkParams {
            size: self.chunk_size,
            overlap: self.overlap,
            strategy: if self.block_aligned {
                ChunkStrategy::BlockAligned
            } else {
                ChunkStrategy::Window
            },
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum RetrieverKind {
    Bm25,
    Oracle,
    Dense,
}

#[derive(Args)]
struct RetrieverArgs {
    #[arg(long, value_enum, default_value = "bm25")]
    retriever: RetrieverKind,
    /// OpenAI-compatible embeddings base URL, for `--retriever dense`.
    #[arg(long)]
    embed_url: Option<String>,
    #[arg(long)]
    embed_model: Option<String>,
    #[arg(long)]
    embed_cache: Option<PathBuf>,
    #[arg(long)]
    embed_api_key_env: Option<String>,
}

impl RetrieverArgs {
    fn spec(&self) -> Result<RetrieverSpec> {
        Ok(match self.retriever {
            RetrieverKind::Bm25 => RetrieverSpec::Bm25,
            RetrieverKind::Oracle => RetrieverSpec::Oracle,
            RetrieverKind::Dense => {
                let (Some(url), Some(model)) = (&self.embed_url, &self.embed_model) else {
                    bail!("--retriever dense needs --embed-url and --embed-model");
                };
                RetrieverSpec::Dense {
                    endpoint_url: url.clone(),
                    model: model.clone(),
                    cache_dir: self.embed_cache.clone(),
                    api_key_env: self.embed_api_key_env.clone(),
                }
            }
        })
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MockKind {
    GoldEcho,
    Empty,
}

#[derive(Args)]
struct GenArgs {
    /// OpenAI-compatible chat base URL.
    #[arg(long, conflicts_with = "mock", requires = "model")]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    api_key_env: Option<String>,
    #[arg(long, default_value_t = 256)]
    max_tokens: u32,
    /// Offline stand-in for an endpoint.
    #[arg(long, value_enum)]
    mock: Option<MockKind>,
    /// Prompt asset file; the bundled RAG prompt when absent.
    #[arg(long)]
    prompt: Option<PathBuf>,
}

impl GenArgs {
    fn endpoint(&self, qas: &[ocrrag_core::QaRecord]) -> Result<Box<dyn ChatEndpoint>> {
        match (&self.endpoint, &self.model, self.mock) {
            (Some(url), Some(model), None) => {
                let mut cfg = GenConfig::new(url, model);
                cfg.api_key_env = self.api_key_env.clone();
                cfg.max_tokens = self.max_tokens;
                Ok(Box::new(HttpChatClient::new(cfg)))
            }
            (None, _, Some(MockKind::GoldEcho)) => Ok(Box::new(MockChat::gold_echo(qas))),
            (None, _, Some(MockKind::Empty)) => {
                Ok(Box::new(MockChat::Fixed("<response></response>".into())))
            }
            _ => bail!("give either --endpoint with --model, or --mock"),
        }
    }

    fn asset(&self) -> Result<PromptAsset> {
        Ok(match &self.prompt {
            Some(p) => PromptAsset::load(p)?,
            None => PromptAsset::rag_generation(),
        })
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = 4)]
    threads: usize,
    /// JSONL checkpoint; an interrupted run resumes from it.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Report JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn options(&self, label: serde_json::Value) -> RunOptions {
        RunOptions {
            threads: self.threads,
            checkpoint: self.checkpoint.clone(),
            label,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum StageArg {
    Retrieval,
    Generation,
    EndToEnd,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Retrieval => Stage::Retrieval,
            StageArg::Generation => Stage::Generation,
            StageArg::EndToEnd => Stage::EndToEnd,
        }
    }
}

/// Pages from a JSONL file or a corpus directory.
fn load_pages(path: &Path) -> Result<Vec<PageRecord>> {
    let pages = if path.is_dir() {
        Corpus::load_dir(path)?.pages
    } else {
        read_pages(path)?
    };
    if pages.is_empty() {
        bail!("no pages in {}", path.display());
    }
    Ok(pages)
}

/// QAs from a JSONL file, or the `qa.jsonl` of a corpus directory.
fn load_qas(path: &Path) -> Result<Vec<ocrrag_core::QaRecord>> {
    let file = if path.is_dir() {
        path.join("qa.jsonl")
    } else {
        path.to_path_buf()
    };
    Ok(read_qas(&file)?)
}

fn load_kbs(dir: &Path) -> Result<KbSet> {
    let mut kbs = KbSet::new();
    for domain in Domain::ALL {
        let path = KnowledgeBase::path_in(dir, domain);
        if path.exists() {
            let kb = KnowledgeBase::load(&path)
                .with_context(|| format!("loading {}", path.display()))?;
            kbs.insert(domain, kb);
        }
    }
    if kbs.is_empty() {
        bail!("no knowledge bases in {}", dir.display());
    }
    Ok(kbs)
}

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn finish_report(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    if out.is_some() {
        print!("{}", render_table(&[("run".to_string(), report)]));
    }
    if report.n_errors > 0 {
        log::warn!("{} QAs failed and scored 0", report.n_errors);
    }
    write_json(report, out)
}

fn fmt_plan(rate: Option<f64>, seed: u64) -> Result<Option<FmtPlan>> {
    rate.map(|r| {
        let plan = FmtPlan::new(r, seed);
        plan.validate()?;
        Ok(plan)
    })
    .transpose()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::PerturbFmt {
            pages,
            rate,
            seed,
            rules,
            out,
        } => {
            let mut plan = FmtPlan::new(rate, seed);
            if !rules.is_empty() {
                plan = plan.with_rules(rules);
            }
            plan.validate()?;
            let pages = load_pages(&pages)?;
            let noisy = fmt_noisy_pages(&pages, &plan)?;
            write_jsonl(&out, &noisy)?;
            info!("wrote {} pages to {}", noisy.len(), out.display());
        }
        Command::PerturbImg {
            input,
            out,
            kind,
            params,
            mode,
            seed,
            psf_bank,
        } => {
            let bank = match &psf_bank {
                Some(path) => PsfBank::load_or_generate(path)?,
                None => PsfBank::standard().clone(),
            };
            let distorter = Distorter::new(&bank);
            let spec_for = |seed: u64| -> Result<Option<DistortionSpec>> {
                match (kind, &params, mode) {
                    (Some(kind), Some(json), None) => {
                        let p: DistortionParams =
                            serde_json::from_str(json).context("parsing --params")?;
                        let spec = DistortionSpec::with_params(p, seed);
                        if spec.kind != kind {
                            bail!(
                                "--params describe {}, not {}",
                                spec.kind.as_str(),
                                kind.as_str()
                            );
                        }
                        Ok(Some(spec))
                    }
                    (Some(kind), None, None) => Ok(Some(DistortionSpec::new(kind, seed))),
                    (None, _, Some(_)) => Ok(None),
                    _ => bail!("give exactly one of --kind or --mode"),
                }
            };
            let apply = |image: &ocrrag_core::imgnoise::RgbImage, seed: u64| -> Result<_> {
                Ok(match (spec_for(seed)?, mode) {
                    (Some(spec), _) => (distorter.distort(image, &spec)?, vec![spec]),
                    (None, Some(mode)) => distorter.apply_mode(image, mode, seed)?,
                    (None, None) => unreachable!("spec_for rejects this"),
                })
            };
            if input.is_dir() {
                let mut files: Vec<PathBuf> = fs::read_dir(&input)?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<std::io::Result<_>>()?;
                files.retain(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")));
                files.sort();
                fs::create_dir_all(&out)?;
                let mut provenance = Vec::new();
                for path in &files {
                    let name = path.file_name().unwrap().to_string_lossy().into_owned();
                    let (result, specs) = apply(&load_png(path)?, page_seed(seed, &name))?;
                    save_png(&result, &out.join(&name))?;
                    provenance.push(serde_json::json!({ "page": name, "specs": specs }));
                }
                write_jsonl(&out.join("provenance.jsonl"), &provenance)?;
                info!("distorted {} pages into {}", files.len(), out.display());
            } else {
                let (result, specs) = apply(&load_png(&input)?, seed)?;
                save_png(&result, &out)?;
                write_json(&specs, None)?;
            }
        }
        Command::BuildKb { pages, out, chunk } => {
            let pages = load_pages(&pages)?;
            let kbs = build_kb_set(&pages, chunk.params())?;
            for (domain, kb) in &kbs {
                let path = KnowledgeBase::path_in(&out, *domain);
                kb.save(&path)?;
                info!(
                    "{}: {} chunks -> {}",
                    domain.as_str(),
                    kb.len(),
                    path.display()
                );
            }
        }
        Command::EvalRetrieval {
            kb_dir,
            qas,
            retriever,
            k,
            fmt_aware_rate,
            seed,
            run,
        } => {
            let kbs = load_kbs(&kb_dir)?;
            let qas = load_qas(&qas)?;
            let retriever: Box<dyn Retriever> = retriever.spec()?.build();
            let plan = fmt_plan(fmt_aware_rate, seed)?;
            let opts = run.options(serde_json::json!({ "kb_dir": kb_dir }));
            let report = eval_retrieval(&kbs, &qas, retriever.as_ref(), k, plan.as_ref(), &opts)?;
            finish_report(&report, run.out.as_deref())?;
        }
        Command::EvalGen {
            pages,
            qas,
            gen,
            run,
        } => {
            let pages = page_map(&load_pages(&pages)?);
            let qas = load_qas(&qas)?;
            let endpoint = gen.endpoint(&qas)?;
            let opts = run.options(serde_json::json!({ "prompt": gen.prompt }));
            let report = eval_generation(&pages, &qas, endpoint.as_ref(), &gen.asset()?, &opts)?;
            finish_report(&report, run.out.as_deref())?;
        }
        Command::EvalE2e {
            kb_dir,
            qas,
            retriever,
            k,
            gen,
            run,
        } => {
            let kbs = load_kbs(&kb_dir)?;
            let qas = load_qas(&qas)?;
            let retriever = retriever.spec()?.build();
            let endpoint = gen.endpoint(&qas)?;
            let opts = run.options(serde_json::json!({ "kb_dir": kb_dir, "prompt": gen.prompt }));
            let report = eval_e2e(
                &kbs,
                &qas,
                retriever.as_ref(),
                endpoint.as_ref(),
                &gen.asset()?,
                k,
                &opts,
            )?;
            finish_report(&report, run.out.as_deref())?;
        }
        Command::Score {
            predictions,
            qas,
            stage,
            fmt_aware_rate,
            seed,
            out,
        } => {
            let preds: Vec<Prediction> = read_jsonl(&predictions)?;
            let qas = load_qas(&qas)?;
            let plan = fmt_plan(fmt_aware_rate, seed)?;
            let report = score_predictions(stage.into(), &preds, &qas, plan.as_ref())?;
            finish_report(&report, out.as_deref())?;
        }
        Command::Rnoise {
            pages,
            qas,
            fmt_aware_rate,
            seed,
        } => {
            let pages = page_map(&load_pages(&pages)?);
            let qas = load_qas(&qas)?;
            let value = match fmt_plan(fmt_aware_rate, seed)? {
                Some(plan) => r_noise_with(&qas, &pages, |e, r| lcs_score_fmt_aware(e, r, &plan))?,
                None => r_noise(&qas, &pages)?,
            };
            println!("{value:.6}");
            info!(
                "share of {} QAs with evidence LCS <= {UNAFFECTED_LCS}",
                qas.len()
            );
        }
        Command::QaFilter {
            qas,
            out,
            judge_url,
            judge_model,
            api_key_env,
            report,
        } => {
            let qas = load_qas(&qas)?;
            let judge: Option<Box<dyn ChatEndpoint>> = match (judge_url, judge_model) {
                (Some(url), Some(model)) => {
                    let mut cfg = GenConfig::new(&url, &model);
                    cfg.api_key_env = api_key_env;
                    Some(Box::new(HttpChatClient::new(cfg)))
                }
                _ => None,
            };
            let (kept, summary) = filter_qas(&qas, judge.as_deref())?;
            write_jsonl(&out, &kept)?;
            println!("kept {} of {}", summary.kept, summary.total);
            for (rule, n) in &summary.by_rule {
                println!("  {rule}: {n}");
            }
            if let Some(path) = report {
                write_json(&summary, Some(&path))?;
            }
        }
        Command::Report {
            reports,
            breakdown,
            qas,
            noisy_pages,
            f1_threshold,
        } => {
            if reports.is_empty() {
                bail!("no report files given");
            }
            let mut loaded = Vec::new();
            for path in &reports {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let report: EvalReport = serde_json::from_str(&text)
                    .with_context(|| format!("parsing {}", path.display()))?;
                let label = path
                    .file_stem()
                    .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
                loaded.push((label, report));
            }
            let rows: Vec<(String, &EvalReport)> =
                loaded.iter().map(|(l, r)| (l.clone(), r)).collect();
            print!("{}", render_table(&rows));
            if breakdown {
                let (Some(qas), Some(pages)) = (qas, noisy_pages) else {
                    bail!("--breakdown needs --qas and --noisy-pages");
                };
                let qas = load_qas(&qas)?;
                let pages = page_map(&load_pages(&pages)?);
                let b = error_breakdown(&loaded[0].1, &qas, &pages, f1_threshold)?;
                println!();
                println!("{:<14} {:>8} {:>10}", "", "correct", "incorrect");
                println!(
                    "{:<14} {:>8} {:>10}",
                    "ocr affected", b.ocr_affected.correct, b.ocr_affected.incorrect
                );
                println!(
                    "{:<14} {:>8} {:>10}",
                    "unaffected", b.unaffected.correct, b.unaffected.incorrect
                );
            }
        }
        Command::Sweep { config, csv, out } => {
            let cfg: SweepConfig = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path)
                        .with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => SweepConfig::default(),
            };
            let rows = run_sweep(&cfg)?;
            let table = reports_to_csv(&rows);
            match csv {
                Some(path) => fs::write(&path, &table)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{table}"),
            }
            if let Some(path) = out {
                write_json(&rows, Some(&path))?;
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
