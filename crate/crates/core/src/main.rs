use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use blockweb::calculus::model::Model;
use blockweb::config::ServeConfig;
use blockweb::experiment::{self, Backend, ExperimentError, Params};
use blockweb::paygraph::{csv_to_lines, PaymentGraph};
use blockweb::transport::tcp::TcpServer;
use blockweb::Keypair;

#[derive(Parser)]
#[command(name = "blockweb", version, about = "Block storage, attestation servers and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Wilbur,
    Fern,
}

#[derive(Subcommand)]
enum Command {
    /// Serve a Wilbur or a fern over TCP until killed.
    Serve {
        #[arg(value_enum)]
        role: Role,
        /// Fern kind: agreement, timestamp, nakamoto, gitsim or hetcons.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Key file; overrides `key` in the config.
        #[arg(long)]
        key: Option<PathBuf>,
        /// e.g. `:9001` or `127.0.0.1:9001`; overrides `listen` in the config.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Run one experiment and write its metrics.
    Experiment {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "sim")]
        backend: Backend,
        /// Metrics path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiment parameter as key=value; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Payment-graph tools.
    Paygraph {
        #[command(subcommand)]
        command: PaygraphCommand,
    },
    /// Evaluate a calculus model file.
    Calculus { model: PathBuf },
    /// Write a new key file.
    Keygen {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PaygraphCommand {
    /// Critical-path report for a transaction file.
    Analyze {
        file: PathBuf,
        #[arg(long)]
        two_account: bool,
        /// Also write `key=value` metrics here.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Convert a CSV export to the line format.
    Convert { csv: PathBuf },
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &PathBuf, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn serve(role: Role, kind: Option<String>, config: Option<PathBuf>, key: Option<PathBuf>, listen: Option<String>) -> Result<(), String> {
    let mut c = match &config {
        Some(p) => ServeConfig::load(p).map_err(|e| e.to_string())?,
        None => ServeConfig::default(),
    };
    if let Some(k) = key {
        let abs = std::path::absolute(&k).map_err(|e| format!("{}: {e}", k.display()))?;
        c.set("key", abs.to_string_lossy());
    }
    if let Some(l) = listen {
        c.set("listen", l);
    }
    let kind = match (role, kind) {
        (Role::Wilbur, None) => "wilbur".to_string(),
        (Role::Wilbur, Some(_)) => return Err("--kind applies to ferns only".into()),
        (Role::Fern, Some(k)) if k != "wilbur" => k,
        (Role::Fern, _) => return Err("serve fern needs --kind agreement|timestamp|nakamoto|gitsim|hetcons".into()),
    };
    let node = c.build(&kind).map_err(|e| e.to_string())?;
    let listen = c.get("listen").unwrap_or(":0");
    let listen = if listen.starts_with(':') { format!("0.0.0.0{listen}") } else { listen.to_string() };
    let server = TcpServer::spawn(&listen, node).map_err(|e| format!("bind {listen}: {e}"))?;
    println!("{kind} listening on {}", server.local_addr());
    loop {
        std::thread::park();
    }
}

fn run_experiment(name: &str, seed: u64, backend: Backend, out: Option<PathBuf>, params: &[String]) -> Result<(), ExperimentError> {
    let params = Params::parse(params.iter().map(String::as_str))?;
    let metrics = experiment::run_on(name, &params, seed, backend)?;
    match out {
        Some(p) => write(&p, &metrics.render()).map_err(ExperimentError::Failed),
        None => {
            print!("{metrics}");
            Ok(())
        }
    }
}

fn analyze(file: &PathBuf, two_account: bool, metrics: Option<PathBuf>) -> Result<(), String> {
    let graph = PaymentGraph::parse(&read(file)?).map_err(|e| e.to_string())?;
    let report = graph.report(two_account).map_err(|e| e.to_string())?;
    println!("transactions {}", report.transactions);
    println!("linearized_rounds {}", report.linearized_rounds);
    println!("parallel_rounds {}", report.parallel_rounds);
    println!("speedup {:.3}", report.speedup());
    println!("critical_path {}", report.witness.join(" -> "));
    for o in &graph.overspends {
        println!("overspend {o}");
    }
    if let Some(p) = metrics {
        let mut text = String::from("# schema=blockweb-metrics/1\n# experiment=paygraph-analyze\n");
        text.push_str(&format!("# two_account={two_account}\n"));
        for (k, v) in report.metrics() {
            text.push_str(&format!("# {k}={v}\n"));
        }
        write(&p, &text)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Serve {
            role,
            kind,
            config,
            key,
            listen,
        } => serve(role, kind, config, key, listen),
        Command::Experiment {
            name,
            seed,
            backend,
            out,
            params,
        } => match run_experiment(&name, seed, backend, out, &params) {
            Err(e @ (ExperimentError::Unknown(_) | ExperimentError::Param { .. })) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
            r => r.map_err(|e| e.to_string()),
        },
        Command::Paygraph {
            command: PaygraphCommand::Analyze {
                file,
                two_account,
                metrics,
            },
        } => analyze(&file, two_account, metrics),
        Command::Paygraph {
            command: PaygraphCommand::Convert { csv },
        } => read(&csv).and_then(|t| csv_to_lines(&t).map_err(|e| e.to_string())).map(|s| print!("{s}")),
        Command::Calculus { model } => read(&model)
            .and_then(|t| Model::parse(&t).map_err(|e| e.to_string()))
            .map(|m| print!("{}", m.report())),
        Command::Keygen { out } => {
            let k = Keypair::generate(&mut rand::rngs::OsRng);
            eprintln!("id {}", k.id().to_hex());
            match out {
                Some(p) => write(&p, &k.to_key_file()),
                None => {
                    print!("{}", k.to_key_file());
                    Ok(())
                }
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
