//! Command-line driver for the rule compiler, inference engine, task
//! executive, and scenario harness.
//!
//! Subcommands mirror the pipeline: `check` and `compile` take a rule base
//! to a network file, `profile` measures per-node cost from a replayed
//! track, `run` executes backward-goal and forward-evidence tasks under
//! deadlines, and `simulate`/`validate` close the loop from scripted
//! scenario to scored belief report. Every command reads and writes only
//! the paths named on its command line. Exit codes: 0 success, 1 for I/O
//! problems, 2 for domain errors (parse failures, cycles, scoring errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use credal::compile::timing::{profile, TimingTable};
use credal::compile::{emit_network, load_network, CompiledNetwork};
use credal::engine::track::{self, TrackFile};
use credal::engine::{Engine, PredicateRegistry};
use credal::exec::{
    parse_task_record, Clock, Executive, PlanObjective, SystemClock, TaskKind, TaskStatus,
    VirtualClock,
};
use credal::kb::parse_kb;
use credal::sim::{run_scenario, validate, GoalMap, Scenario, TruthLog};

#[derive(Parser)]
#[command(name = "credal", version, about = "Plausible-reasoning toolkit driver")]
struct Cli {
    /// Output style: `human` prose or machine-readable `records`.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Human)]
    format: OutputFormat,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OutputFormat {
    Human,
    Records,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a rule base and report dependency-graph health.
    Check {
        /// Rule-base source file (`.rkb`).
        kb: PathBuf,
    },
    /// Compile a rule base into a network file.
    Compile {
        /// Rule-base source file (`.rkb`).
        kb: PathBuf,
        /// Output network file (`.rkn`).
        #[arg(short, long)]
        out: PathBuf,
        /// Print the topological node order.
        #[arg(long)]
        print_topo: bool,
    },
    /// Measure per-node execution cost by replaying a track.
    Profile {
        /// Compiled network file (`.rkn`).
        #[arg(long)]
        net: PathBuf,
        /// Track file to replay (`.rtf`).
        #[arg(long)]
        track: PathBuf,
        /// Output timing table (`.rkt`).
        #[arg(short, long)]
        out: PathBuf,
        /// Samples to collect per node.
        #[arg(long, default_value_t = 32)]
        samples: usize,
    },
    /// Execute tasks against a network under the real-time executive.
    Run {
        /// Compiled network (`.rkn`) or rule-base source (`.rkb`).
        #[arg(long)]
        net: PathBuf,
        /// Track of evidence to load before the tasks run.
        #[arg(long)]
        track: Option<PathBuf>,
        /// Load the track without propagating, leaving the inference work
        /// to the tasks themselves.
        #[arg(long, requires = "track")]
        defer: bool,
        /// Timing table for planning and deadline margins (`.rkt`).
        #[arg(long)]
        timing: Option<PathBuf>,
        /// Task record, e.g. `(task :kind goal :goal (alert c1 yes)
        /// :priority 1 :deadline +50ms)`; repeatable.
        #[arg(long)]
        task: Vec<String>,
        /// File of task records, executed in order.
        #[arg(long)]
        tasks_file: Option<PathBuf>,
        /// Shorthand for a single backward-goal task on this wff.
        #[arg(long)]
        query: Option<String>,
        /// Budget for `--query`, e.g. `250us`, `50ms`, `2s` (default 10s).
        #[arg(long)]
        budget: Option<String>,
        /// Priority for `--query` (higher runs first).
        #[arg(long, default_value_t = 0)]
        priority: i32,
        /// Comma-separated rule classes restricting `--query`.
        #[arg(long)]
        scope: Option<String>,
        /// Plan for certainty instead of path coverage.
        #[arg(long, value_enum, default_value_t = Objective::Coverage)]
        objective: Objective,
        /// Use a deterministic virtual clock instead of wall time.
        #[arg(long)]
        virtual_clock: bool,
        /// Append a proof trace for each completed goal.
        #[arg(long)]
        explain: bool,
    },
    /// Run a scenario script into ground-truth and track files.
    Simulate {
        /// Scenario script (`.rsc`).
        scenario: PathBuf,
        /// Output track file (default: scenario path with `.rtf`).
        #[arg(long)]
        track_out: Option<PathBuf>,
        /// Output truth log (default: scenario path with `.rgt`).
        #[arg(long)]
        truth_out: Option<PathBuf>,
    },
    /// Score a replayed track against labeled ground truth.
    Validate {
        /// Compiled network (`.rkn`) or rule-base source (`.rkb`).
        #[arg(long)]
        net: PathBuf,
        /// Track file to replay (`.rtf`).
        #[arg(long)]
        track: PathBuf,
        /// Ground-truth log (`.rgt`).
        #[arg(long)]
        truth: PathBuf,
        /// Goal map binding goals to labels (`.rmap`).
        #[arg(long)]
        map: PathBuf,
        /// Write the report here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Objective {
    Coverage,
    Certainty,
}

/// Failure carrying its exit code: 1 for I/O, 2 for domain errors.
enum CliError {
    Io(String),
    Domain(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Domain(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Io(m) | CliError::Domain(m) => m,
        }
    }
}

fn domain(err: impl std::fmt::Display) -> CliError {
    CliError::Domain(err.to_string())
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text)
        .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

/// Load a network from either a compiled `.rkn` file or a `.rkb` source.
fn load_net(path: &Path) -> Result<CompiledNetwork, CliError> {
    let text = read_file(path)?;
    if text.trim_start().starts_with("(network") {
        load_network(&text).map_err(domain)
    } else {
        let kb = parse_kb(&text).map_err(domain)?;
        CompiledNetwork::compile(kb).map_err(domain)
    }
}

fn engine_for(net: CompiledNetwork) -> Result<Engine, CliError> {
    Engine::new(net, PredicateRegistry::default()).map_err(domain)
}

/// Parse a duration like `250us`, `50ms`, `2s`, or bare microseconds.
fn parse_duration_us(text: &str) -> Result<u64, CliError> {
    let (digits, scale) = if let Some(v) = text.strip_suffix("us") {
        (v, 1.0)
    } else if let Some(v) = text.strip_suffix("ms") {
        (v, 1_000.0)
    } else if let Some(v) = text.strip_suffix('s') {
        (v, 1_000_000.0)
    } else {
        (text, 1.0)
    };
    let value: f64 = digits
        .parse()
        .map_err(|_| CliError::Domain(format!("bad duration `{text}`")))?;
    if value < 0.0 {
        return Err(CliError::Domain(format!("bad duration `{text}`")));
    }
    Ok((value * scale).round() as u64)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let format = cli.format;
    match cli.command {
        Command::Check { kb } => cmd_check(&kb, format),
        Command::Compile { kb, out, print_topo } => cmd_compile(&kb, &out, print_topo, format),
        Command::Profile {
            net,
            track,
            out,
            samples,
        } => cmd_profile(&net, &track, &out, samples, format),
        Command::Run {
            net,
            track,
            defer,
            timing,
            task,
            tasks_file,
            query,
            budget,
            priority,
            scope,
            objective,
            virtual_clock,
            explain,
        } => cmd_run(RunArgs {
            net,
            track,
            defer,
            timing,
            task,
            tasks_file,
            query,
            budget,
            priority,
            scope,
            objective,
            virtual_clock,
            explain,
            format,
        }),
        Command::Simulate {
            scenario,
            track_out,
            truth_out,
        } => cmd_simulate(&scenario, track_out, truth_out, format),
        Command::Validate {
            net,
            track,
            truth,
            map,
            out,
        } => cmd_validate(&net, &track, &truth, &map, out.as_deref(), format),
    }
}

fn cmd_check(kb_path: &Path, format: OutputFormat) -> Result<(), CliError> {
    let text = read_file(kb_path)?;
    let kb = parse_kb(&text).map_err(domain)?;
    let templates = kb.templates.len();
    let net = CompiledNetwork::compile(kb).map_err(domain)?;
    let g = &net.graph;
    match format {
        OutputFormat::Records => println!(
            "(check :templates {} :or-nodes {} :and-nodes {} :arcs {} :loops {})",
            templates,
            g.or_nodes.len(),
            g.and_nodes.len(),
            g.arcs.len(),
            g.loops.len()
        ),
        OutputFormat::Human => println!(
            "ok: {} templates, {} wff nodes, {} rule nodes, {} arcs, {} loop regions; \
             monotonic part acyclic",
            templates,
            g.or_nodes.len(),
            g.and_nodes.len(),
            g.arcs.len(),
            g.loops.len()
        ),
    }
    Ok(())
}

fn cmd_compile(
    kb_path: &Path,
    out: &Path,
    print_topo: bool,
    format: OutputFormat,
) -> Result<(), CliError> {
    let text = read_file(kb_path)?;
    let kb = parse_kb(&text).map_err(domain)?;
    let net = CompiledNetwork::compile(kb).map_err(domain)?;
    let emitted = emit_network(&net.graph, &net.kb).map_err(domain)?;
    write_file(out, &emitted)?;
    if print_topo {
        for (i, &node) in net.graph.topo_order.iter().enumerate() {
            println!("(topo {i} {})", net.graph.node_name(node));
        }
    }
    match format {
        OutputFormat::Records => println!(
            "(compiled :out {} :or-nodes {} :and-nodes {} :arcs {})",
            out.display(),
            net.graph.or_nodes.len(),
            net.graph.and_nodes.len(),
            net.graph.arcs.len()
        ),
        OutputFormat::Human => println!(
            "compiled {} -> {} ({} nodes, {} arcs)",
            kb_path.display(),
            out.display(),
            net.graph.node_count(),
            net.graph.arcs.len()
        ),
    }
    Ok(())
}

fn cmd_profile(
    net_path: &Path,
    track_path: &Path,
    out: &Path,
    samples: usize,
    format: OutputFormat,
) -> Result<(), CliError> {
    let net = load_net(net_path)?;
    let track = TrackFile::parse(&read_file(track_path)?).map_err(domain)?;
    let table = profile(&net, &track, PredicateRegistry::default, samples).map_err(domain)?;
    write_file(out, &table.emit())?;
    let measured = table.entries.values().filter(|e| e.measured).count();
    match format {
        OutputFormat::Records => println!(
            "(profiled :out {} :nodes {} :measured {} :samples {})",
            out.display(),
            table.entries.len(),
            measured,
            samples
        ),
        OutputFormat::Human => println!(
            "profiled {} nodes ({} measured, {} defaulted) -> {}",
            table.entries.len(),
            measured,
            table.entries.len() - measured,
            out.display()
        ),
    }
    Ok(())
}

struct RunArgs {
    net: PathBuf,
    track: Option<PathBuf>,
    defer: bool,
    timing: Option<PathBuf>,
    task: Vec<String>,
    tasks_file: Option<PathBuf>,
    query: Option<String>,
    budget: Option<String>,
    priority: i32,
    scope: Option<String>,
    objective: Objective,
    virtual_clock: bool,
    explain: bool,
    format: OutputFormat,
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let net = load_net(&args.net)?;
    let mut engine = engine_for(net)?;
    if let Some(track_path) = &args.track {
        let track = TrackFile::parse(&read_file(track_path)?).map_err(domain)?;
        if args.defer {
            // Apply evidence without propagating: the tasks do the work.
            for (t, records) in &track.ticks() {
                track::apply_tick(&mut engine, *t, records).map_err(domain)?;
            }
        } else {
            track::replay(&mut engine, &track).map_err(domain)?;
        }
    }
    let timing = match &args.timing {
        Some(path) => TimingTable::parse(&read_file(path)?).map_err(domain)?,
        None => TimingTable::default(),
    };
    let clock: Arc<dyn Clock> = if args.virtual_clock {
        Arc::new(VirtualClock::new())
    } else {
        Arc::new(SystemClock::new())
    };

    let mut exec = Executive::new(engine, timing, clock);
    if args.objective == Objective::Certainty {
        exec.set_objective(PlanObjective::Certainty);
    }

    let mut task_texts: Vec<String> = Vec::new();
    if let Some(path) = &args.tasks_file {
        let text = read_file(path)?;
        let forms = credal::kb::sexpr::parse_all(&text).map_err(domain)?;
        task_texts.extend(forms.iter().map(ToString::to_string));
    }
    task_texts.extend(args.task.iter().cloned());

    for text in &task_texts {
        let (kind, priority, deadline_us, scope) =
            parse_task_record(exec.engine(), exec.now_us(), text).map_err(domain)?;
        exec.submit(kind, priority, deadline_us, scope);
    }
    if let Some(query) = &args.query {
        let goal = exec.engine().parse_wff(query).map_err(domain)?;
        let budget_us = match &args.budget {
            Some(b) => parse_duration_us(b)?,
            None => 10_000_000,
        };
        let scope = args
            .scope
            .as_deref()
            .map(|s| {
                s.split(',')
                    .filter(|c| !c.is_empty())
                    .map(credal::kb::ClassPath::parse)
                    .collect()
            })
            .unwrap_or_default();
        let deadline = exec.now_us().saturating_add(budget_us);
        exec.submit(TaskKind::BackwardGoal(goal), args.priority, deadline, scope);
    }
    if task_texts.is_empty() && args.query.is_none() {
        return Err(CliError::Domain(
            "nothing to run: give --query or --task".to_string(),
        ));
    }

    exec.run_until_idle();
    let results = exec.take_results();
    for r in &results {
        match args.format {
            OutputFormat::Records => println!("{}", r.to_record()),
            OutputFormat::Human => {
                let mut line = format!("task {} {}", r.task, r.status.name());
                if let Some(goal) = &r.goal {
                    line.push_str(&format!(" {goal}"));
                }
                if let Some(iv) = &r.interval {
                    line.push_str(&format!(
                        " [{:.4}, {:.4}]",
                        iv.lb.value(),
                        iv.ub.value()
                    ));
                }
                if let Some(v) = &r.validity {
                    line.push_str(&format!(" {}", v.name()));
                }
                line.push_str(&format!(" in {}us", r.elapsed_us));
                if let Some(p) = &r.plan_summary {
                    line.push_str(&format!(" (plan {p})"));
                }
                if let Some(e) = &r.error {
                    line.push_str(&format!(": {e}"));
                }
                println!("{line}");
            }
        }
        if args.explain && r.status == TaskStatus::Done {
            if let Some(goal) = &r.goal {
                let trace = exec.engine().explain(goal).map_err(domain)?;
                print!("{}", trace.render());
            }
        }
    }
    Ok(())
}

fn cmd_simulate(
    scenario_path: &Path,
    track_out: Option<PathBuf>,
    truth_out: Option<PathBuf>,
    format: OutputFormat,
) -> Result<(), CliError> {
    let sc = Scenario::parse(&read_file(scenario_path)?).map_err(domain)?;
    let (truth, track) = run_scenario(&sc).map_err(domain)?;
    let track_path = track_out.unwrap_or_else(|| scenario_path.with_extension("rtf"));
    let truth_path = truth_out.unwrap_or_else(|| scenario_path.with_extension("rgt"));
    write_file(&track_path, &track.emit())?;
    write_file(&truth_path, &truth.emit())?;
    match format {
        OutputFormat::Records => println!(
            "(simulated :name {} :steps {} :players {} :track-records {} :truth-states {})",
            sc.name,
            sc.steps,
            sc.players.len(),
            track.records.len(),
            truth.states.len()
        ),
        OutputFormat::Human => println!(
            "simulated `{}`: {} steps, {} players -> {} ({} records), {} ({} states)",
            sc.name,
            sc.steps,
            sc.players.len(),
            track_path.display(),
            track.records.len(),
            truth_path.display(),
            truth.states.len()
        ),
    }
    Ok(())
}

fn cmd_validate(
    net_path: &Path,
    track_path: &Path,
    truth_path: &Path,
    map_path: &Path,
    out: Option<&Path>,
    format: OutputFormat,
) -> Result<(), CliError> {
    let net = load_net(net_path)?;
    let mut engine = engine_for(net)?;
    let track = TrackFile::parse(&read_file(track_path)?).map_err(domain)?;
    let truth = TruthLog::parse(&read_file(truth_path)?).map_err(domain)?;
    let map = GoalMap::parse(&read_file(map_path)?).map_err(domain)?;
    let report = validate(&mut engine, &track, &truth, &map).map_err(domain)?;
    let text = report.emit();
    match out {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    if format == OutputFormat::Human && out.is_some() {
        println!(
            "validated `{}`: {} goals -> {}",
            report.scenario,
            report.goals.len(),
            out.unwrap().display()
        );
    }
    Ok(())
}
