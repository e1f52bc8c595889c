use std::collections::BTreeSet;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use covertscope::audit::amplification::{ProbeConfig, DEFAULT_THRESHOLD, DEFAULT_WAIT};
use covertscope::ingest::ingest_bundle;
use covertscope::needles::build_needle_set;
use covertscope::pipeline::{analyze_corpus, InspectOptions};
use covertscope::report::{exit_code, render_report, Format};

#[derive(Parser)]
#[command(name = "covertscope", version, about = "Find PII hidden in custom-encrypted and non-standard app traffic")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze bundle directories and write the corpus report.
    Inspect(InspectArgs),
    /// Generate a synthetic bundle (plus expected.json) from a manifest.
    GenFixture { manifest: PathBuf, out_dir: PathBuf },
    /// Run the loopback UDP amplifier until interrupted.
    AmpServer {
        #[arg(long)]
        factor: u64,
        #[arg(long, default_value_t = 0)]
        port: u16,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Markdown,
}

#[derive(clap::Args)]
struct InspectArgs {
    #[arg(required = true)]
    bundles: Vec<PathBuf>,
    /// Report file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
    /// Print each bundle's search dictionary to stderr.
    #[arg(long)]
    dump_needles: bool,
    /// Raw evidence excerpts instead of masked ones.
    #[arg(long)]
    unsafe_evidence: bool,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    amp_threshold: f64,
    /// Replay recorded UDP payloads to measure amplification.
    #[arg(long)]
    active_probe: bool,
    /// Seconds to collect replies after resending.
    #[arg(long, default_value_t = DEFAULT_WAIT.as_secs_f64())]
    amp_wait_secs: f64,
    /// File of `ip:port` lines; only these destinations are probed.
    #[arg(long)]
    amp_allow_list: Option<PathBuf>,
    /// Permit probing destinations outside private address ranges.
    #[arg(long)]
    i_understand_active_probe: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Inspect(args) => inspect(args),
        Command::GenFixture { manifest, out_dir } => {
            let m = covertscope_fixtures::load_manifest(&manifest)?;
            let expected = covertscope_fixtures::generate_bundle(&m, &out_dir)?;
            eprintln!(
                "wrote {} ({} leaks, {} credentials, {} operations planted)",
                out_dir.display(),
                expected.leaks.len(),
                expected.credentials.len(),
                expected.operations.len()
            );
            Ok(0)
        }
        Command::AmpServer { factor, port } => {
            let server = covertscope_fixtures::run_amplifier_server(factor, port)?;
            println!("{}", server.local_addr());
            std::io::stdout().flush()?;
            loop {
                std::thread::park();
            }
        }
    }
}

fn read_allow_list(path: &Path) -> Result<BTreeSet<SocketAddr>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| l.parse().with_context(|| format!("{}: `{l}` is not ip:port", path.display())))
        .collect()
}

fn inspect(args: InspectArgs) -> Result<u8> {
    if !(args.amp_wait_secs.is_finite() && args.amp_wait_secs >= 0.0) {
        bail!("--amp-wait-secs must be a non-negative number");
    }
    let active_probe = if args.active_probe {
        Some(ProbeConfig {
            wait: Duration::from_secs_f64(args.amp_wait_secs),
            threshold: args.amp_threshold,
            allow_public: args.i_understand_active_probe,
            allow_list: args.amp_allow_list.as_deref().map(read_allow_list).transpose()?,
            ..ProbeConfig::default()
        })
    } else {
        None
    };
    let opts = InspectOptions { unsafe_evidence: args.unsafe_evidence, amp_threshold: args.amp_threshold, active_probe };

    let mut bundles = Vec::new();
    for dir in &args.bundles {
        let outcome = ingest_bundle(dir).with_context(|| format!("ingesting {}", dir.display()))?;
        log::info!("{}: {:?}", dir.display(), outcome.counts);
        if args.dump_needles {
            let mut err = std::io::stderr().lock();
            writeln!(err, "# {} ({})", dir.display(), outcome.bundle.app_id)?;
            for n in build_needle_set(&outcome.bundle.profile) {
                writeln!(err, "{}\t{n}", n.id)?;
            }
        }
        bundles.push(outcome.bundle);
    }
    let report = analyze_corpus(&bundles, &opts)?;
    let format = match args.format {
        FormatArg::Json => Format::Json,
        FormatArg::Markdown => Format::Markdown,
    };
    let bytes = render_report(&report, format)?;
    match &args.out {
        Some(path) => std::fs::write(path, &bytes).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    Ok(exit_code(&report) as u8)
}
