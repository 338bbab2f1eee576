//! Command-line front end: discovery runs, process generation, validation
//! and signaling queries over `procmat-v1` files.
//!
//! Exit codes: 0 on success (including analyses whose verdict is negative),
//! 2 on invalid input, 3 on internal errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use qcausal::discovery::discover;
use qcausal::generate::{comb_with_memory, markovian_process, mixture, DagEdge, DagSpec};
use qcausal::io::{load_dag_spec, load_procmat, save_procmat};
use qcausal::oracle::signaling_strength;
use qcausal::process::{PartySpec, ProcessMatrix, Severity, SystemLayout, ValidationCheck};
use qcausal::Error;

#[derive(Parser)]
#[command(name = "qcausal", version, about = "Causal discovery for quantum process matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run causal discovery on a procmat-v1 file.
    Discover(DiscoverArgs),
    /// Generate test processes (with a ground-truth sidecar).
    #[command(subcommand)]
    Generate(GenerateCommand),
    /// Check hermiticity, positivity and trace normalization.
    Validate(ValidateArgs),
    /// Measure operational signaling between two parties.
    Oracle(OracleArgs),
}

#[derive(Args)]
struct DiscoverArgs {
    /// Input procmat-v1 file.
    file: PathBuf,
    /// Comparison tolerance for the linear constraints.
    #[arg(long, default_value_t = 1e-9)]
    eps: f64,
    /// Write the full report as JSON.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Write the DAG in DOT format (Markovian processes only).
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GenerateCommand {
    /// A Markovian process for a DAG specification.
    Markov(MarkovArgs),
    /// A causally ordered chain with channel memory (non-Markovian for
    /// memory dimension above 1).
    Comb(CombArgs),
    /// A mixture of the two causal orders of a two-party chain.
    Mixture(MixtureArgs),
}

#[derive(Args)]
struct MarkovArgs {
    /// DAG specification JSON (parties plus edges).
    #[arg(long)]
    spec: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output procmat-v1 file.
    #[arg(short, long)]
    output: PathBuf,
    /// Ground-truth sidecar path (defaults to <output>.truth.json).
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct CombArgs {
    /// Number of chained parties.
    #[arg(long, default_value_t = 2)]
    parties: usize,
    /// Memory dimension carried across each link.
    #[arg(long, default_value_t = 2)]
    memory_dim: usize,
    /// Input/output dimension of each party.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct MixtureArgs {
    /// Weight of the A-before-B term.
    #[arg(long, default_value_t = 0.5)]
    weight: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    file: PathBuf,
    /// Emit the report as JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OracleArgs {
    file: PathBuf,
    /// Sending party.
    #[arg(long = "from")]
    sender: String,
    /// Receiving party.
    #[arg(long = "to")]
    receiver: String,
    /// Extra random settings per side.
    #[arg(long, default_value_t = 3)]
    settings: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum CliError {
    /// Bad or inconsistent input: exit code 2.
    Input(String),
    /// Unexpected internal failure: exit code 3.
    Internal(String),
}

/// Errors raised while interpreting user input.
fn input_err(e: Error) -> CliError {
    match e {
        Error::Numerical(m) => CliError::Internal(format!("numerical failure: {m}")),
        other => CliError::Input(other.to_string()),
    }
}

/// Errors raised after the input was accepted.
fn internal_err(e: Error) -> CliError {
    CliError::Internal(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Internal(msg)) => {
            eprintln!("internal error: {msg}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Discover(args) => cmd_discover(args),
        Command::Generate(args) => cmd_generate(args),
        Command::Validate(args) => cmd_validate(args),
        Command::Oracle(args) => cmd_oracle(args),
    }
}

fn cmd_discover(args: DiscoverArgs) -> Result<(), CliError> {
    if args.eps <= 0.0 {
        return Err(CliError::Input("eps must be positive".into()));
    }
    let w = load_procmat(&args.file).map_err(input_err)?;
    let report = discover(&w, args.eps).map_err(input_err)?;
    for line in report.console_lines() {
        println!("{line}");
    }
    if let Some(path) = &args.report {
        std::fs::write(path, report.to_json_string())
            .map_err(|e| CliError::Internal(e.to_string()))?;
    }
    if let Some(path) = &args.dot {
        match report.to_dot() {
            Some(dot) => {
                std::fs::write(path, dot).map_err(|e| CliError::Internal(e.to_string()))?
            }
            None => eprintln!("no DAG to write: the process is not Markovian"),
        }
    }
    Ok(())
}

fn write_outputs(
    w: &ProcessMatrix,
    sidecar: serde_json::Value,
    output: &PathBuf,
    ground_truth: &Option<PathBuf>,
) -> Result<(), CliError> {
    save_procmat(w, output).map_err(internal_err)?;
    let sidecar_path = ground_truth
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.truth.json", output.display())));
    std::fs::write(
        sidecar_path,
        serde_json::to_string_pretty(&sidecar).expect("sidecar serialization"),
    )
    .map_err(|e| CliError::Internal(e.to_string()))?;
    Ok(())
}

fn cmd_generate(cmd: GenerateCommand) -> Result<(), CliError> {
    match cmd {
        GenerateCommand::Markov(args) => {
            let spec = load_dag_spec(&args.spec).map_err(input_err)?;
            let truth = markovian_process(&spec, args.seed).map_err(input_err)?;
            let sidecar = json!({
                "generator": "markov",
                "seed": args.seed,
                "edges": spec.edges.iter()
                    .map(|e| json!({"from": [e.from.party, e.from.subsystem], "to": e.to}))
                    .collect::<Vec<_>>(),
                "open": truth.open.iter()
                    .map(|r| json!([r.party, r.subsystem]))
                    .collect::<Vec<_>>(),
                "first": truth.first,
                "last": truth.last,
            });
            write_outputs(&truth.process, sidecar, &args.output, &args.ground_truth)?;
            println!("wrote {} (dimension {})", args.output.display(), truth.process.total_dim());
            Ok(())
        }
        GenerateCommand::Comb(args) => {
            if args.parties < 2 {
                return Err(CliError::Input("a comb needs at least two parties".into()));
            }
            let dims = vec![(args.dim, args.dim); args.parties];
            let memory = vec![args.memory_dim; args.parties - 1];
            let w = comb_with_memory(&dims, &memory, args.seed).map_err(input_err)?;
            let sidecar = json!({
                "generator": "comb",
                "parties": args.parties,
                "dim": args.dim,
                "memory_dim": args.memory_dim,
                "seed": args.seed,
                "causally_ordered": true,
                "markovian": args.memory_dim == 1,
            });
            write_outputs(&w, sidecar, &args.output, &args.ground_truth)?;
            println!("wrote {} (dimension {})", args.output.display(), w.total_dim());
            Ok(())
        }
        GenerateCommand::Mixture(args) => {
            let layout = SystemLayout::new(vec![
                PartySpec::new("A", 2, vec![2]),
                PartySpec::new("B", 2, vec![2]),
            ])
            .map_err(internal_err)?;
            let spec_ab = DagSpec::new(layout.clone(), vec![DagEdge::new("A", 0, "B")])
                .map_err(internal_err)?;
            let spec_ba = DagSpec::new(layout, vec![DagEdge::new("B", 0, "A")])
                .map_err(internal_err)?;
            let w_ab = markovian_process(&spec_ab, args.seed).map_err(internal_err)?;
            let w_ba = markovian_process(&spec_ba, args.seed.wrapping_add(1)).map_err(internal_err)?;
            let w = mixture(args.weight, &w_ab.process, &w_ba.process).map_err(input_err)?;
            let sidecar = json!({
                "generator": "mixture",
                "weight": args.weight,
                "seed": args.seed,
                "terms": ["A before B", "B before A"],
            });
            write_outputs(&w, sidecar, &args.output, &args.ground_truth)?;
            println!("wrote {} (dimension {})", args.output.display(), w.total_dim());
            Ok(())
        }
    }
}

fn check_name(check: ValidationCheck) -> &'static str {
    match check {
        ValidationCheck::Hermiticity => "hermiticity",
        ValidationCheck::PositiveSemidefinite => "psd",
        ValidationCheck::TraceNormalization => "trace",
    }
}

fn cmd_validate(args: ValidateArgs) -> Result<(), CliError> {
    let w = load_procmat(&args.file).map_err(input_err)?;
    let report = w.validate_default();
    if args.json {
        let issues: Vec<_> = report
            .issues
            .iter()
            .map(|i| {
                json!({
                    "check": check_name(i.check),
                    "severity": if i.severity == Severity::Failure { "failure" } else { "warning" },
                    "violation": i.violation,
                })
            })
            .collect();
        let out = json!({
            "valid": report.is_valid(),
            "hermiticity_violation": report.hermiticity_violation,
            "psd_violation": report.psd_violation,
            "psd_estimated": report.psd_estimated,
            "measured_trace": report.measured_trace,
            "expected_trace": report.expected_trace,
            "trace_violation": report.trace_violation,
            "issues": issues,
        });
        println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    } else {
        println!("hermiticity violation: {:.3e}", report.hermiticity_violation);
        println!(
            "psd violation: {:.3e}{}",
            report.psd_violation,
            if report.psd_estimated { " (estimated)" } else { "" }
        );
        println!(
            "trace: measured {:.6}, expected {:.6} (relative violation {:.3e})",
            report.measured_trace, report.expected_trace, report.trace_violation
        );
        for issue in &report.issues {
            let tag = if issue.severity == Severity::Failure { "FAIL" } else { "WARN" };
            println!("{tag} {}: violation {:.3e}", check_name(issue.check), issue.violation);
        }
        println!("{}", if report.is_valid() { "valid" } else { "invalid" });
    }
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> Result<(), CliError> {
    let w = load_procmat(&args.file).map_err(input_err)?;
    let strength = signaling_strength(&w, &args.sender, &args.receiver, args.settings, args.seed)
        .map_err(input_err)?;
    println!("{strength:.9}");
    Ok(())
}
