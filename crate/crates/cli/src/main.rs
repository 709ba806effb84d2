//! trustkit: load `.trust` documents and run the trust-decision engine —
//! validation, evaluation with forensics, trust potential, gap analysis,
//! lifecycle scenarios, down-set completion, and the wire services.
//!
//! Exit codes: 0 success (assertions pass, evaluation reaches a non-bottom
//! level), 1 domain failure (bottom decision, failed assertion, failed
//! validation), 2 usage or parse errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use trustkit_core::lattice::LatticeDiagnostic;
use trustkit_core::pipeline::PipelinePoint;
use trustkit_core::report;
use trustkit_core::verdict::Severity;
use trustkit_dsl::{build, merge, parse, BuiltModel, SourceDocument};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Structured,
}

#[derive(Parser)]
#[command(
    name = "trustkit",
    version,
    about = "Trust-decision engine over attested elements"
)]
struct Cli {
    /// Output format for reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check the lattice and every policy; nonzero exit on defects.
    Validate {
        /// Input documents, merged in order.
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Accept a non-Heyting (non-distributive or implication-incomplete)
        /// lattice with a warning instead of failing.
        #[arg(long)]
        allow_nonheyting: bool,
    },
    /// Run the pipeline over one element and print decision plus forensics.
    Eval {
        element: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Pipeline point mechanism:verify:decide; required unless exactly
        /// one triple is admitted for the element.
        #[arg(long)]
        point: Option<String>,
    },
    /// Print the trust potential and trustability classification.
    Potential {
        element: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Lower bound for the trustability classification.
        #[arg(long)]
        bound: Option<String>,
    },
    /// What is missing to move from one trust level to another.
    Gap {
        from: String,
        to: String,
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Policy pair as mechanism:verify:decide (mechanism ignored) or
        /// verify:decide; defaults to the alphabetically first verify policy
        /// and its first admitted decide policy.
        #[arg(long)]
        point: Option<String>,
    },
    /// Execute scenarios and print traces with assertion outcomes.
    Scenario {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Run only the named scenario (default: all).
        #[arg(long)]
        name: Option<String>,
    },
    /// Serve the world's elements as an attester agent.
    ServeAgent {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, env = "TRUSTKIT_AGENT", default_value = "127.0.0.1:7840")]
        endpoint: String,
    },
    /// Serve the staged verifier, forwarding attestation to an agent.
    ServeVerifier {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long, env = "TRUSTKIT_ENDPOINT", default_value = "127.0.0.1:7841")]
        endpoint: String,
        #[arg(long, env = "TRUSTKIT_AGENT", default_value = "127.0.0.1:7840")]
        agent: String,
    },
    /// Print the down-set completion of the configured lattice as a
    /// policy-language document.
    CompleteLattice {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
}

fn load(files: &[PathBuf]) -> Result<BuiltModel, ExitCode> {
    let mut models = Vec::new();
    let mut diagnostics = Vec::new();
    for path in files {
        let text = match std::fs::read_to_string(path) {
            Ok(text) => text,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return Err(ExitCode::from(2));
            }
        };
        let result = parse(&SourceDocument::new(path.display().to_string(), text));
        diagnostics.extend(result.diagnostics);
        if let Some(model) = result.model {
            models.push(model);
        }
    }
    for diag in &diagnostics {
        eprintln!("{diag}");
    }
    if diagnostics
        .iter()
        .any(|d| d.severity == trustkit_dsl::DiagnosticSeverity::Error)
    {
        return Err(ExitCode::from(2));
    }
    let merged = match merge(models) {
        Ok(model) => model,
        Err(diags) => {
            for diag in &diags {
                eprintln!("{diag}");
            }
            return Err(ExitCode::from(2));
        }
    };
    match build(&merged) {
        Ok(built) => Ok(built),
        Err(diags) => {
            for diag in &diags {
                eprintln!("{diag}");
            }
            Err(ExitCode::from(2))
        }
    }
}

/// Check policies; error-severity diagnostics are fatal for evaluation.
fn require_checked(built: &BuiltModel) -> Result<(), ExitCode> {
    let diags = built.env.check_policies();
    let mut fatal = false;
    for (name, diag) in &diags {
        match diag.severity() {
            Severity::Error => {
                fatal = true;
                eprintln!("error: {name}: {diag:?}");
            }
            Severity::Warning => eprintln!("warning: {name}: {diag:?}"),
        }
    }
    if fatal {
        Err(ExitCode::from(1))
    } else {
        Ok(())
    }
}

fn resolve_point(
    built: &BuiltModel,
    element: &str,
    requested: &Option<String>,
) -> Result<PipelinePoint, ExitCode> {
    let admitted = match built
        .env
        .admitted_triples(&built.world, &element.into())
    {
        Ok(admitted) => admitted,
        Err(e) => {
            eprintln!("error: {e}");
            return Err(ExitCode::from(2));
        }
    };
    match requested {
        Some(spec) => match spec.parse::<PipelinePoint>() {
            Ok(point) => Ok(point),
            Err(e) => {
                eprintln!("error: {e}");
                Err(ExitCode::from(2))
            }
        },
        None if admitted.len() == 1 => Ok(admitted.into_iter().next().unwrap()),
        None => {
            eprintln!(
                "error: element `{element}` admits {} pipeline points; pick one with --point",
                admitted.len()
            );
            for point in &admitted {
                eprintln!("  --point {point}");
            }
            Err(ExitCode::from(2))
        }
    }
}

fn run_validate(files: &[PathBuf], allow_nonheyting: bool, format: Format) -> ExitCode {
    let built = match load(files) {
        Ok(built) => built,
        Err(code) => return code,
    };
    let lattice_diags = built.env.lattice.validate();
    let policy_diags = built.env.check_policies();

    if format == Format::Structured {
        let payload = serde_json::json!({
            "lattice": lattice_diags,
            "policies": policy_diags
                .iter()
                .map(|(name, diag)| serde_json::json!({ "policy": name, "diagnostic": diag }))
                .collect::<Vec<_>>(),
        });
        println!("{}", serde_json::to_string_pretty(&payload).unwrap());
    }

    let mut hard_failure = false;
    let mut nonheyting = false;
    for diag in &lattice_diags {
        match diag {
            LatticeDiagnostic::NotAPoset { .. } | LatticeDiagnostic::NotALattice { .. } => {
                hard_failure = true;
                if format == Format::Text {
                    println!("error: lattice: {diag:?}");
                }
            }
            LatticeDiagnostic::NotDistributive { .. } | LatticeDiagnostic::NoImplication { .. } => {
                nonheyting = true;
                if format == Format::Text {
                    println!("warning: lattice is not a Heyting algebra: {diag:?}");
                }
            }
        }
    }
    for (name, diag) in &policy_diags {
        match diag.severity() {
            Severity::Error => {
                hard_failure = true;
                if format == Format::Text {
                    println!("error: {name}: {diag:?}");
                }
            }
            Severity::Warning => {
                if format == Format::Text {
                    println!("warning: {name}: {diag:?}");
                }
            }
        }
    }

    if format == Format::Text {
        if lattice_diags.is_empty() && policy_diags.is_empty() {
            println!("all checks passed");
        } else if !hard_failure && (!nonheyting || allow_nonheyting) {
            println!("checks passed with warnings");
        }
    }
    if hard_failure || (nonheyting && !allow_nonheyting) {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    }
}

fn run_eval(element: &str, files: &[PathBuf], point: &Option<String>, format: Format) -> ExitCode {
    let built = match load(files) {
        Ok(built) => built,
        Err(code) => return code,
    };
    if let Err(code) = require_checked(&built) {
        return code;
    }
    let point = match resolve_point(&built, element, point) {
        Ok(point) => point,
        Err(code) => return code,
    };
    let mut ctx = built.ctx.clone();
    match trustkit_core::pipeline::run_pipeline(
        &built.world,
        &built.env,
        &element.into(),
        &point,
        &mut ctx,
    ) {
        Ok((level, forensic)) => {
            match format {
                Format::Text => {
                    println!("{level}");
                    print!("{}", report::forensic_text(&forensic));
                }
                Format::Structured => println!("{}", report::to_structured(&forensic)),
            }
            if level == built.env.lattice.bottom() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_potential(
    element: &str,
    files: &[PathBuf],
    bound: &Option<String>,
    format: Format,
) -> ExitCode {
    let built = match load(files) {
        Ok(built) => built,
        Err(code) => return code,
    };
    if let Err(code) = require_checked(&built) {
        return code;
    }
    let bound_level = match bound {
        Some(name) => match built.env.lattice.level(name) {
            Ok(level) => level,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => built.env.lattice.bottom(),
    };
    let potential = match built.env.trust_potential(&built.world, &element.into()) {
        Ok(potential) => potential,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let class = built
        .env
        .trustable_class(&built.world, &element.into(), &bound_level)
        .expect("bound resolved above");
    match format {
        Format::Text => print!(
            "{}",
            report::potential_text(element, &built.env.lattice, &potential, &class)
        ),
        Format::Structured => {
            let payload = serde_json::json!({
                "element": element,
                "potential": potential.iter().map(|l| l.name()).collect::<Vec<_>>(),
                "bound": bound_level.name(),
                "classification": class,
            });
            println!("{}", serde_json::to_string_pretty(&payload).unwrap());
        }
    }
    ExitCode::SUCCESS
}

fn run_gap(
    from: &str,
    to: &str,
    files: &[PathBuf],
    point: &Option<String>,
    format: Format,
) -> ExitCode {
    let built = match load(files) {
        Ok(built) => built,
        Err(code) => return code,
    };
    if let Err(code) = require_checked(&built) {
        return code;
    }
    let (verify_policy, decide_policy) = match point {
        Some(spec) => {
            let parts: Vec<&str> = spec.split(':').collect();
            match parts.as_slice() {
                [_, v, d] => (v.to_string(), d.to_string()),
                [v, d] => (v.to_string(), d.to_string()),
                _ => {
                    eprintln!("error: --point must be verify:decide or mechanism:verify:decide");
                    return ExitCode::from(2);
                }
            }
        }
        None => {
            let Some(verify_policy) = built.env.verify_policies.keys().next().cloned() else {
                eprintln!("error: no verify policies loaded");
                return ExitCode::from(2);
            };
            let Some(decide_policy) = built.env.rho_decide(&verify_policy).into_iter().next()
            else {
                eprintln!("error: no decide policy admitted after `{verify_policy}`");
                return ExitCode::from(2);
            };
            (verify_policy, decide_policy)
        }
    };
    let (from_level, to_level) = match (built.env.lattice.level(from), built.env.lattice.level(to))
    {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match trustkit_core::pipeline::gap_analysis(
        &built.env,
        &verify_policy,
        &decide_policy,
        &from_level,
        &to_level,
    ) {
        Ok(gap) => {
            match format {
                Format::Text => print!("{}", report::gap_text(&gap)),
                Format::Structured => println!("{}", report::to_structured(&gap)),
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_scenario(files: &[PathBuf], name: &Option<String>, format: Format) -> ExitCode {
    let built = match load(files) {
        Ok(built) => built,
        Err(code) => return code,
    };
    if let Err(code) = require_checked(&built) {
        return code;
    }
    let selected: Vec<&str> = match name {
        Some(name) => {
            if !built.scenarios.contains_key(name) {
                eprintln!("error: no scenario `{name}` in the loaded documents");
                return ExitCode::from(2);
            }
            vec![name.as_str()]
        }
        None => built.scenarios.keys().map(String::as_str).collect(),
    };
    if selected.is_empty() {
        eprintln!("error: no scenarios in the loaded documents");
        return ExitCode::from(2);
    }
    let mut all_ok = true;
    for scenario in selected {
        let script = &built.scenarios[scenario];
        match trustkit_core::lifecycle::run_scenario(
            script,
            &built.world,
            &built.env,
            &built.sigmas,
            built.ctx.clone(),
        ) {
            Ok(trace) => {
                match format {
                    Format::Text => print!("{}", report::trace_text(&trace)),
                    Format::Structured => println!("{}", report::to_structured(&trace)),
                }
                all_ok &= trace.ok();
            }
            Err(e) => {
                eprintln!("error: scenario `{scenario}`: {e}");
                return ExitCode::from(2);
            }
        }
    }
    if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn run_serve_agent(files: &[PathBuf], endpoint: &str) -> ExitCode {
    let built = match load(files) {
        Ok(built) => built,
        Err(code) => return code,
    };
    match trustkit_wire::agent_serve(built.world, endpoint) {
        Ok(handle) => {
            println!("agent listening on {}", handle.addr());
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_serve_verifier(files: &[PathBuf], endpoint: &str, agent: &str) -> ExitCode {
    let built = match load(files) {
        Ok(built) => built,
        Err(code) => return code,
    };
    if let Err(code) = require_checked(&built) {
        return code;
    }
    match trustkit_wire::verifier_serve(built.env, built.ctx, endpoint, agent) {
        Ok(handle) => {
            println!("verifier listening on {} (agent {agent})", handle.addr());
            loop {
                std::thread::sleep(std::time::Duration::from_secs(3600));
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run_complete_lattice(files: &[PathBuf], format: Format) -> ExitCode {
    let built = match load(files) {
        Ok(built) => built,
        Err(code) => return code,
    };
    let completed = built.env.lattice.downset_completion();
    match format {
        Format::Structured => {
            println!(
                "{}",
                report::to_structured(&report::LatticeReport::of(&completed))
            );
        }
        Format::Text => {
            let decl = trustkit_dsl::LatticeDecl {
                origin: "completed".into(),
                pos: trustkit_dsl::Pos::default(),
                levels: completed.level_names(),
                orders: completed.covering_pairs(),
                bottom: Some(completed.bottom().name().to_string()),
                top: Some(completed.top().name().to_string()),
            };
            let model = trustkit_dsl::Model {
                lattice: Some(decl),
                ..Default::default()
            };
            print!("{}", trustkit_dsl::render(&model));
        }
    }
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let format = cli.format;
    match &cli.command {
        Command::Validate {
            files,
            allow_nonheyting,
        } => run_validate(files, *allow_nonheyting, format),
        Command::Eval {
            element,
            files,
            point,
        } => run_eval(element, files, point, format),
        Command::Potential {
            element,
            files,
            bound,
        } => run_potential(element, files, bound, format),
        Command::Gap {
            from,
            to,
            files,
            point,
        } => run_gap(from, to, files, point, format),
        Command::Scenario { files, name } => run_scenario(files, name, format),
        Command::ServeAgent { files, endpoint } => run_serve_agent(files, endpoint),
        Command::ServeVerifier {
            files,
            endpoint,
            agent,
        } => run_serve_verifier(files, endpoint, agent),
        Command::CompleteLattice { files } => run_complete_lattice(files, format),
    }
}
