use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context as _;
use clap::{Parser, Subcommand, ValueEnum};

use wfcheck_core::analysis::{analyze, Overall};
use wfcheck_core::oracle::{check_invariant_by_intruder, simulate, ClosureConfig, SimConfig};
use wfcheck_core::protocol::{
    apply_context_overrides, parse_term, Resolution, Severity, SymbolTable,
};
use wfcheck_core::roles::{collect_generalized_messages, extract_roles};
use wfcheck_core::safe::{SafeFunction, Selector, Subject};
use wfcheck_core::unify::origins;
use wfcheck_core::{parse, validate, OracleError, Protocol, Term, TypingContext};

#[derive(Parser)]
#[command(
    name = "wfcheck",
    version,
    about = "Static secrecy analysis of cryptographic protocols"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Function {
    Max,
    N,
    Ek,
}

impl From<Function> for Selector {
    fn from(f: Function) -> Self {
        match f {
            Function::Max => Selector::Max,
            Function::N => Selector::N,
            Function::Ek => Selector::Ek,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Check every send step of every generalized role.
    Analyze {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "max")]
        function: Function,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
        /// File of `level <atom> <level>` and `knows I : ...` overrides.
        #[arg(long)]
        context: Option<PathBuf>,
    },
    /// Print the generalized roles and the generalized message set.
    Roles { file: PathBuf },
    /// List the message-set entries that unify with a term.
    Origins {
        file: PathBuf,
        #[arg(long)]
        term: String,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Evaluate a safe function on one term.
    Eval {
        #[arg(long, value_enum, default_value = "max")]
        function: Function,
        /// Atom or variable to evaluate.
        #[arg(long)]
        atom: String,
        #[arg(long)]
        term: String,
        /// Protocol file whose declarations give the levels.
        #[arg(long)]
        context: PathBuf,
    },
    /// Bounded intruder checks.
    Oracle {
        file: PathBuf,
        #[arg(long, default_value_t = 2)]
        sessions: u32,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        /// Also check that the function cannot be lowered by the intruder.
        #[arg(long)]
        check_invariant: bool,
        #[arg(long, value_enum, default_value = "max")]
        function: Function,
        #[arg(long, default_value_t = 20_000)]
        max_terms: usize,
        #[arg(long, default_value_t = 200_000)]
        max_states: usize,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
}

/// Failures that map to an exit code other than 0 or 1.
enum Failure {
    Input(anyhow::Error),
    Resource(OracleError),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Input(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Input(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Resource(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

/// Parses and validates; warnings go to stderr, errors abort.
fn load(path: &Path) -> anyhow::Result<(Protocol, TypingContext)> {
    let text = read(path)?;
    let p = parse(&text).with_context(|| path.display().to_string())?;
    let ctx = p.typing_context();
    check(&p, &ctx, path)?;
    Ok((p, ctx))
}

fn check(p: &Protocol, ctx: &TypingContext, path: &Path) -> anyhow::Result<()> {
    let diags = validate(p, ctx);
    for d in &diags {
        eprintln!("{}: {d}", path.display());
    }
    if diags.iter().any(|d| d.severity == Severity::Error) {
        anyhow::bail!("{} does not validate", path.display());
    }
    Ok(())
}

fn query_term(p: &Protocol, text: &str) -> anyhow::Result<Term> {
    let table = SymbolTable::for_protocol(p, Resolution::Query);
    Ok(parse_term(text, &table, &p.key_table(), 1, 1)?)
}

fn run(command: Command) -> Result<bool, Failure> {
    match command {
        Command::Analyze {
            file,
            function,
            format,
            context,
        } => {
            let (p, mut ctx) = load(&file)?;
            if let Some(path) = context {
                let text = read(&path)?;
                apply_context_overrides(&text, &p, &mut ctx)
                    .with_context(|| path.display().to_string())?;
                check(&p, &ctx, &path)?;
            }
            let sel: Selector = function.into();
            let report = analyze(&p, &sel, &ctx).map_err(anyhow::Error::from)?;
            match format {
                Format::Table => print!("{}", report.render_table()),
                Format::Json => println!("{}", report.to_json()),
            }
            Ok(report.overall == Overall::Secure)
        }
        Command::Roles { file } => {
            let (p, _) = load(&file)?;
            let roles = extract_roles(&p).map_err(anyhow::Error::from)?;
            for r in &roles {
                println!("{r}");
            }
            let set = collect_generalized_messages(&roles);
            println!("M_p^G ({} entries)", set.len());
            for e in set.iter() {
                println!("  {e}");
            }
            Ok(true)
        }
        Command::Origins { file, term, format } => {
            let (p, _) = load(&file)?;
            let q = query_term(&p, &term)?;
            let roles = extract_roles(&p).map_err(anyhow::Error::from)?;
            let set = collect_generalized_messages(&roles);
            let found = origins(&q, &set);
            match format {
                Format::Table => {
                    println!("query {q}: {} origin(s)", found.len());
                    for o in &found {
                        println!("  {}  σ = {}", o.entry, o.unifier);
                    }
                }
                Format::Json => {
                    let rows: Vec<serde_json::Value> = found
                        .iter()
                        .map(|o| {
                            let sigma: serde_json::Map<String, serde_json::Value> = o
                                .unifier
                                .bindings
                                .iter()
                                .map(|(s, t)| (s.to_string(), t.render().into()))
                                .collect();
                            serde_json::json!({"entry": o.entry.render(), "sigma": sigma})
                        })
                        .collect();
                    let out = serde_json::json!({"query": q.render(), "origins": rows});
                    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
                }
            }
            Ok(true)
        }
        Command::Eval {
            function,
            atom,
            term,
            context,
        } => {
            let text = read(&context)?;
            let p = parse(&text).with_context(|| context.display().to_string())?;
            let ctx = p.typing_context();
            let subject = Subject::of(&query_term(&p, &atom)?)
                .ok_or_else(|| anyhow::anyhow!("`{atom}` is not an atom or a variable"))?;
            let m = query_term(&p, &term)?;
            let sel: Selector = function.into();
            let level = sel
                .evaluate(&subject, &m, &ctx)
                .map_err(anyhow::Error::from)?;
            println!("{level}");
            Ok(true)
        }
        Command::Oracle {
            file,
            sessions,
            depth,
            check_invariant,
            function,
            max_terms,
            max_states,
            format,
        } => {
            let (p, ctx) = load(&file)?;
            if sessions == 0 {
                return Err(anyhow::anyhow!("--sessions must be at least 1").into());
            }
            let cfg = SimConfig {
                sessions,
                depth,
                max_states,
                max_terms,
                ..SimConfig::default()
            };
            let sim = simulate(&p, &cfg).map_err(Failure::Resource)?;
            let mut counterexamples = Vec::new();
            if check_invariant {
                let sel: Selector = function.into();
                let mut messages = Vec::new();
                for run in 1..=sessions {
                    messages.extend(p.honest_messages(run));
                }
                let ccfg = ClosureConfig {
                    depth: depth.min(3),
                    max_terms,
                    compose: true,
                };
                counterexamples = check_invariant_by_intruder(&sel, &messages, &ctx, &ccfg)
                    .map_err(Failure::Resource)?;
            }
            match format {
                Format::Table => {
                    println!(
                        "states {}  completed traces {}  leaked {}",
                        sim.states,
                        sim.completed,
                        if sim.leaked.is_empty() {
                            "none".to_string()
                        } else {
                            sim.leaked.iter().cloned().collect::<Vec<_>>().join(", ")
                        }
                    );
                    if check_invariant {
                        println!("invariant counterexamples {}", counterexamples.len());
                        for c in &counterexamples {
                            println!(
                                "  {} in {}: {} is not above {}",
                                c.atom, c.message, c.value, c.reference
                            );
                        }
                    }
                }
                Format::Json => {
                    let out = serde_json::json!({
                        "protocol": p.name,
                        "sessions": sessions,
                        "depth": depth,
                        "states": sim.states,
                        "completed": sim.completed,
                        "leaked": sim.leaked,
                        "counterexamples": counterexamples.iter().map(|c| serde_json::json!({
                            "atom": c.atom.to_string(),
                            "message": c.message.render(),
                            "value": c.value.to_string(),
                            "reference": c.reference.to_string(),
                        })).collect::<Vec<_>>(),
                    });
                    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
                }
            }
            Ok(sim.leaked.is_empty() && counterexamples.is_empty())
        }
    }
}
