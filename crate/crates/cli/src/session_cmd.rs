use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Subcommand};

use dforge::bank::Source;
use dforge::eval::write_ratings;
use dforge::session::{create_session, AnnotationSession, SessionOptions};
use dforge::{jsonl, DistractorSet};
use dforge_service::{ServiceConfig, SessionStore};

use crate::error::{backend, data, usage, CliResult};
use crate::generate::load_bank;

#[derive(Debug, Subcommand)]
pub enum SessionCmd {
    /// Build a blinded session for one annotator.
    Create(CreateArgs),
    /// Serve sessions over HTTP.
    Serve(ServeArgs),
    /// Write a session's ratings as CSV.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct CreateArgs {
    #[arg(long)]
    pub test_set: PathBuf,
    /// distractors.jsonl from `generate`; repeat once per model.
    #[arg(long, required = true)]
    pub distractors: Vec<PathBuf>,
    #[arg(long)]
    pub annotator: String,
    /// Restrict the session to one subject.
    #[arg(long)]
    pub subject: Option<String>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub storage: PathBuf,
    #[arg(long)]
    pub session_id: Option<String>,
    /// Show cross-model duplicates verbatim instead of merging them.
    #[arg(long)]
    pub keep_duplicates: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub storage: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
    /// Built UI assets, served under `/`.
    #[arg(long = "static")]
    pub static_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub storage: PathBuf,
    #[arg(long)]
    pub session: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Export even if some items are still unrated.
    #[arg(long)]
    pub allow_partial: bool,
}

pub fn run(cmd: SessionCmd) -> CliResult {
    match cmd {
        SessionCmd::Create(a) => create(a),
        SessionCmd::Serve(a) => serve(a),
        SessionCmd::Export(a) => export(a),
    }
}

fn create(args: CreateArgs) -> CliResult {
    let tests = load_bank(&args.test_set, Source::Test)?;
    let items: Vec<_> = tests
        .iter()
        .filter(|i| args.subject.as_ref().is_none_or(|s| &i.subject == s))
        .cloned()
        .collect();
    if items.is_empty() {
        return Err(data("no test items selected"));
    }
    let wanted: std::collections::HashSet<&str> = items.iter().map(|i| i.id.as_str()).collect();
    let mut sets: Vec<DistractorSet> = Vec::new();
    for p in &args.distractors {
        let read: Vec<DistractorSet> =
            jsonl::read(p).map_err(|e| data(format!("{}: {e}", p.display())))?;
        sets.extend(read.into_iter().filter(|s| wanted.contains(s.question_id.as_str())));
    }
    let opts = SessionOptions {
        session_id: args.session_id,
        keep_duplicates: args.keep_duplicates,
    };
    let session = create_session(&items, &sets, &args.annotator, args.seed, &opts).map_err(data)?;
    let store = SessionStore::open(&args.storage).map_err(data)?;
    let path = store.create(&session).map_err(data)?;
    let total = session.progress().total;
    println!("session {} ({} questions, {total} distractors)", session.session_id, items.len());
    println!("stored at {}", path.display());
    println!("annotator url: /?session={}&token={}", session.session_id, session.token);
    Ok(())
}

fn serve(args: ServeArgs) -> CliResult {
    if let Some(d) = &args.static_dir {
        if !d.is_dir() {
            return Err(usage(format!("--static {}: not a directory", d.display())));
        }
    }
    let config = ServiceConfig {
        bind: args.bind,
        storage_dir: args.storage,
        static_dir: args.static_dir,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(backend)?;
    runtime.block_on(dforge_service::serve(config)).map_err(data)
}

fn export(args: ExportArgs) -> CliResult {
    let store = SessionStore::open(&args.storage).map_err(data)?;
    let path = store.path_for(&args.session).map_err(usage)?;
    let session = AnnotationSession::load(&path).map_err(|e| data(format!("{}: {e}", path.display())))?;
    let export = session.export();
    if export.partial && !args.allow_partial {
        return Err(data(format!(
            "session {} is {:.1}% complete; pass --allow-partial to export anyway",
            session.session_id, export.completeness
        )));
    }
    for (q, d) in &export.conflicts {
        eprintln!("warning: {q}: duplicate copies of {d:?} were rated differently; first kept");
    }
    write_ratings(&args.out, &export.records).map_err(data)?;
    println!(
        "exported {} ratings ({:.1}% complete) to {}",
        export.records.len(),
        export.completeness,
        args.out.display()
    );
    Ok(())
}
