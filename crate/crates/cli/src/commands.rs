//! One function per subcommand. Paths are checked before any work starts.

use std::collections::BTreeSet;
use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::Path;

use espew_core::attack::{cse_eliminate, cse_identify, cse_identify_against, dropout_attack, permute_embeddings, random_permutation};
use espew_core::io::{load_corpus, load_matrix, save_corpus, save_matrix};
use espew_core::key::Method;
use espew_core::simulate::grid::{run_experiment_grid, GridSpec};
use espew_core::simulate::plot::{
    cos_histogram, dropout_curve, dropout_reports, harmlessness, harmlessness_bars, pca_scatter, world_harmlessness,
    PlotTable, DEFAULT_DROPOUT_RATES,
};
use espew_core::simulate::{build_key, generate_corpus, KeySpec, PipelineConfig, PlotKind, PseudoEmbedder, SyntheticConfig, World};
use espew_core::triggers::{count_triggers, document_frequencies, select_triggers};
use espew_core::verify::{ReportConfig, ReportFile};
use espew_core::{inject, verify_service, CseConfig, Document, Embedding, VerifyParams, WatermarkKey};

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::service::{serve, RemoteService, ServiceState};

fn readable(p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Config(format!("input {} is not a readable file", p.display())))
    }
}

fn writable(p: &Path) -> CliResult<()> {
    if p.is_dir() {
        return Err(CliError::Config(format!("output {} is a directory", p.display())));
    }
    match p.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => Err(CliError::Config(format!(
            "output directory {} does not exist",
            dir.display()
        ))),
        _ => Ok(()),
    }
}

fn write_text(p: &Path, text: &str) -> CliResult<()> {
    fs::write(p, text).map_err(|e| CliError::Data(format!("writing {}: {e}", p.display())))
}

fn load_key(p: &Path) -> CliResult<WatermarkKey> {
    WatermarkKey::load(p).map_err(|e| CliError::Data(format!("key {}: {e}", p.display())))
}

/// A key without targets (NONE) says nothing about dimension; the flag does.
fn key_dim(key: &WatermarkKey, model: &ModelArgs) -> usize {
    key.dim().unwrap_or(model.dim)
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Corpus(a) => corpus(a),
        Command::Triggers(a) => triggers(a),
        Command::Inject(a) => inject(a),
        Command::Verify(a) => verify(a),
        Command::Attack(a) => attack(a),
        Command::Experiment(a) => experiment(a),
        Command::Plot(a) => plot(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn corpus(a: CorpusArgs) -> CliResult<()> {
    writable(&a.out)?;
    let cfg = SyntheticConfig {
        corpus_size: a.size,
        vocab_size: a.vocab_size,
        ..SyntheticConfig::with_seed(a.seed)
    };
    let docs = generate_corpus(&cfg)?;
    save_corpus(&a.out, &docs)?;
    println!("wrote {} documents to {}", docs.len(), a.out.display());
    Ok(())
}

fn triggers(a: TriggersArgs) -> CliResult<()> {
    readable(&a.corpus)?;
    writable(&a.out)?;
    let docs = load_corpus(&a.corpus)?;
    let set = select_triggers(&document_frequencies(&docs)?, a.band, a.n, a.seed)?;
    write_text(&a.out, &(serde_json::to_string_pretty(&set).map_err(espew_core::Error::from)? + "\n"))?;
    println!("selected {} trigger tokens", set.len());
    Ok(())
}

fn inject(a: InjectArgs) -> CliResult<()> {
    readable(&a.corpus)?;
    writable(&a.out)?;
    writable(&a.key)?;
    let method: Method = a.method.into();
    let docs = load_corpus(&a.corpus)?;
    let key = if a.key.exists() {
        let key = load_key(&a.key)?;
        if key.method != method || key.alpha != a.alpha {
            return Err(CliError::Config(format!(
                "key {} is {} at alpha {}, not {} at alpha {}",
                a.key.display(),
                key.method.name(),
                key.alpha,
                method.name(),
                a.alpha
            )));
        }
        key
    } else {
        let cfg = a.model.embedder(a.model.dim);
        let spec = KeySpec {
            alpha: a.alpha,
            band: a.band,
            trigger_count: a.n,
            ..KeySpec::new(method, a.seed)
        };
        let key = build_key(&document_frequencies(&docs)?, |d| espew_core::simulate::pseudo_embed(d, &cfg), &spec)?;
        key.save(&a.key)?;
        eprintln!("created key {}", a.key.display());
        key
    };
    let vocab: Vec<String> = vocabulary(&docs);
    let embedder = PseudoEmbedder::new(a.model.embedder(key_dim(&key, &a.model)), &vocab);
    let clean = embedder.embed_all(&docs)?;
    let marked = inject::watermark_matrix(&docs, &clean, &key)?;
    save_matrix(&a.out, &marked)?;
    let touched = docs
        .iter()
        .filter(|d| key.method != Method::None && key.triggers.iter().any(|t| count_triggers(d, t) > 0))
        .count();
    println!("embedded {} documents, {} watermarked", docs.len(), touched);
    Ok(())
}

fn vocabulary(docs: &[Document]) -> Vec<String> {
    let set: BTreeSet<&String> = docs.iter().flat_map(|d| &d.tokens).collect();
    set.into_iter().cloned().collect()
}

fn verify(a: VerifyArgs) -> CliResult<()> {
    readable(&a.key)?;
    if let Some(p) = &a.service_key {
        readable(p)?;
    }
    if let Some(p) = &a.corpus {
        readable(p)?;
    }
    writable(&a.report)?;
    let inline = a.service == "inline";
    if !inline && !(a.service.starts_with("http://") || a.service.starts_with("https://")) {
        return Err(CliError::Config(format!("--service must be inline or an http(s) URL, got {:?}", a.service)));
    }
    if a.service_key.is_some() && !inline {
        return Err(CliError::Config("--service-key only applies to the inline service".into()));
    }
    let key = load_key(&a.key)?;
    let vocab = match &a.corpus {
        Some(p) => vocabulary(&load_corpus(p)?),
        None => SyntheticConfig {
            vocab_size: a.vocab_size,
            ..SyntheticConfig::default()
        }
        .vocabulary(),
    };
    let params = VerifyParams {
        n_backdoor: a.nb,
        n_benign: a.nn,
        doc_len: a.doc_len,
        seed: a.seed,
        permuted_target: a.permuted_target,
    };
    let report = if inline {
        let served = match &a.service_key {
            Some(p) => load_key(p)?,
            None => key.clone(),
        };
        let state = ServiceState::new(a.model.embedder(key_dim(&served, &a.model)), served)?;
        verify_service(&|d: &Document| state.embed(d), &key, &vocab, &params)?
    } else {
        let remote = RemoteService::new(&a.service)?;
        verify_service(&|d: &Document| remote.embed(d), &key, &vocab, &params)?
    };
    let file = ReportFile::new(
        report,
        ReportConfig {
            method: key.method,
            alpha: key.alpha,
            k: None,
            seed: a.seed,
        },
    );
    write_text(&a.report, &file.to_json()?)?;
    println!(
        "p_value={:e} ks_d={} delta_cos_pct={} delta_l2_pct={} is_copy={}",
        report.p_value, report.ks_d, report.delta_cos_pct, report.delta_l2_pct, report.is_copy
    );
    if a.expect_clean && report.is_copy {
        return Err(CliError::UnexpectedCopy { p_value: report.p_value });
    }
    Ok(())
}

fn attack(a: AttackArgs) -> CliResult<()> {
    readable(&a.input)?;
    if let Some(p) = &a.reference {
        readable(p)?;
    }
    writable(&a.out)?;
    let x = load_matrix(&a.input)?;
    let out = match a.kind {
        AttackKind::Cse => {
            let cfg = CseConfig {
                k: a.k,
                pair_sample: a.pair_sample,
                outlier_sigma: a.sigma,
                ..CseConfig::default()
            };
            let suspicious = match &a.reference {
                Some(p) => cse_identify_against(&x, &load_matrix(p)?, &cfg, a.seed)?,
                None => cse_identify(&x, &cfg, a.seed)?,
            };
            let outcome = cse_eliminate(&x, &suspicious, &cfg)?;
            println!(
                "cse: {} suspicious rows, removed variance {}, {} rows zeroed",
                outcome.suspicious.len(),
                outcome.explained_removed,
                outcome.zeroed_rows.len()
            );
            outcome.matrix
        }
        AttackKind::Dropout => {
            let m = dropout_attack(&x, a.rate, a.seed)?;
            println!("dropout at rate {} on {} rows", a.rate, m.rows());
            m
        }
        AttackKind::Permute => {
            let m = permute_embeddings(&x, &random_permutation(x.dim(), a.seed))?;
            println!("permuted {} coordinates", m.dim());
            m
        }
    };
    save_matrix(&a.out, &out)?;
    Ok(())
}

fn experiment(a: ExperimentArgs) -> CliResult<()> {
    if a.out.exists() && !a.out.is_dir() {
        return Err(CliError::Config(format!("{} is not a directory", a.out.display())));
    }
    fs::create_dir_all(&a.out).map_err(|e| CliError::Config(format!("creating {}: {e}", a.out.display())))?;
    let spec = match a.grid {
        GridName::Default => GridSpec::default_grid(a.seed),
    };
    let grid = run_experiment_grid(&spec)?;
    write_text(&a.out.join("grid.tsv"), &grid.to_tsv())?;
    write_text(&a.out.join("grid.json"), &(grid.to_json()? + "\n"))?;
    for r in &grid.rows {
        println!(
            "{:<9} {:<7} {:>4}  p={:<10.3e} copy={}",
            r.method.name(),
            r.attack,
            r.param,
            r.report.p_value,
            r.report.is_copy
        );
    }
    Ok(())
}

fn required<'a>(p: &'a Option<std::path::PathBuf>, flag: &str, kind: PlotKind) -> CliResult<&'a Path> {
    let p = p
        .as_deref()
        .ok_or_else(|| CliError::Config(format!("{kind} needs --{flag}")))?;
    readable(p)?;
    Ok(p)
}

/// Rows carrying any trigger of the key, i.e. the rows the victim marked.
fn watermark_flags(docs: &[Document], key: &WatermarkKey) -> Vec<bool> {
    docs.iter()
        .map(|d| key.method != Method::None && key.triggers.iter().any(|t| count_triggers(d, t) > 0))
        .collect()
}

fn first_target(key: &WatermarkKey) -> CliResult<&Embedding> {
    key.targets
        .first()
        .ok_or_else(|| CliError::Config("key has no target embedding".into()))
}

fn plot(a: PlotArgs) -> CliResult<()> {
    writable(&a.out)?;
    let table: PlotTable = match a.kind {
        PlotKind::CosHistogram | PlotKind::PcaScatter => {
            let m = load_matrix(required(&a.input, "in", a.kind)?)?;
            let docs = load_corpus(required(&a.corpus, "corpus", a.kind)?)?;
            let key = load_key(required(&a.key, "key", a.kind)?)?;
            let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
            let flags = watermark_flags(&docs, &key);
            if a.kind == PlotKind::CosHistogram {
                cos_histogram(&ids, &m, first_target(&key)?.values(), &flags)?
            } else {
                pca_scatter(&ids, &m, &flags)?
            }
        }
        PlotKind::HarmlessnessBars => {
            let h = if a.input.is_some() {
                let m = load_matrix(required(&a.input, "in", a.kind)?)?;
                let docs = load_corpus(required(&a.corpus, "corpus", a.kind)?)?;
                let key = load_key(required(&a.key, "key", a.kind)?)?;
                let ids: Vec<String> = docs.iter().map(|d| d.id.clone()).collect();
                harmlessness(&ids, &m, first_target(&key)?.values(), key.alpha, a.seed)?
            } else {
                let world = World::build(&SyntheticConfig::with_seed(a.seed))?;
                let key = world.make_key(&KeySpec::new(Method::Espew, a.seed))?;
                world_harmlessness(&world, &key, a.seed)?
            };
            harmlessness_bars(&h)
        }
        PlotKind::DropoutCurve => {
            if a.input.is_some() || a.corpus.is_some() || a.key.is_some() {
                return Err(CliError::Config(
                    "dropout_curve runs on the synthetic world; only --seed applies".into(),
                ));
            }
            let world = World::build(&SyntheticConfig::with_seed(a.seed))?;
            let key = world.make_key(&KeySpec::new(Method::Espew, a.seed))?;
            let points = dropout_reports(&world, &key, &DEFAULT_DROPOUT_RATES, &PipelineConfig::default(), a.seed)?;
            dropout_curve(&points)
        }
    };
    write_text(&a.out, &table.to_tsv())?;
    println!("wrote {} rows of {} data", table.rows.len(), a.kind);
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> CliResult<()> {
    readable(&a.key)?;
    let key = load_key(&a.key)?;
    let state = ServiceState::new(a.model.embedder(key_dim(&key, &a.model)), key)?;
    let addr: SocketAddr = (a.host.as_str(), a.port)
        .to_socket_addrs()
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| CliError::Config(format!("cannot resolve {}:{}", a.host, a.port)))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Config(format!("runtime: {e}")))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Config(format!("binding {addr}: {e}")))?;
        eprintln!("serving dimension {} on http://{}", state.dim(), listener.local_addr().unwrap_or(addr));
        serve(listener, state).await.map_err(|e| CliError::Data(format!("server: {e}")))
    })
}
