use std::collections::BTreeSet;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use mpicheck::arrays::{read_binary, write_binary, write_csv};
use mpicheck::bench::{self, BenchError, Benchmark, ConvectionConfig, HeatConfig, PoissonConfig, Solution};
use mpicheck::calculus::{topology_warnings, validate_topology, Command, Resolved, TopologySpec};
use mpicheck::explorer::{self, ExploreOptions, FreeBufferPolicy, Verdict};
use mpicheck::monitor::monitor_trace;
use mpicheck::par::Parallelism;
use mpicheck::runtime::sim::{ExhaustiveLimits, RandomScheduler};
use mpicheck::runtime::threads::ThreadsConfig;
use mpicheck::calculus::GlobalState;
use mpicheck::semantics::{enabled_transitions, is_deadlock, Rule, Trace};
use serde_json::{json, Value};

/// Exit status for a run that completed but found a problem.
const NEGATIVE: u8 = 1;
/// Exit status for bad input or configuration.
const USAGE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "mpicheck", version, about = "Explore, monitor and benchmark tag-ordered message-passing programs")]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = Format::Json, global = true)]
    format: Format,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Exhaustively explore every schedule of a calculus program.
    Explore(ExploreArgs),
    /// Follow one seeded random schedule of a calculus program.
    Run(RunArgs),
    /// Run a PDE benchmark in parallel and compare it with the sequential solver.
    Bench(BenchArgs),
    /// Replay a trace and print every intermediate state.
    Trace(TraceArgs),
    /// Check a topology for a range of process counts.
    Validate(ValidateArgs),
    /// Write a benchmark's calculus model (program and topology) as JSON.
    Model(ModelArgs),
}

#[derive(Args, Debug)]
struct Source {
    /// Program JSON file.
    #[arg(required_unless_present = "model")]
    program: Option<PathBuf>,
    /// Topology JSON file.
    #[arg(required_unless_present = "model")]
    spec: Option<PathBuf>,
    /// Use a built-in benchmark model instead of files.
    #[arg(long, value_enum, conflicts_with_all = ["program", "spec"])]
    model: Option<BenchName>,
    /// Steps (iterations) of the built-in model.
    #[arg(long, default_value_t = 2)]
    steps: i64,
    /// Number of processes.
    #[arg(long, short)]
    n: i64,
}

#[derive(Args, Debug)]
struct ExploreArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, env = "MPICHECK_MAX_STATES", default_value_t = 5_000_000)]
    max_states: usize,
    #[arg(long, default_value_t = 1_000_000)]
    max_depth: usize,
    /// Check the axioms on every state.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    monitor: bool,
    #[arg(long, value_enum, default_value_t = FreePolicy::Eager)]
    free_buffer: FreePolicy,
    /// Expand single-process rules one at a time.
    #[arg(long)]
    no_compress: bool,
    /// Search on the calling thread only.
    #[arg(long)]
    sequential: bool,
    /// Write the explored state graph in DOT format.
    #[arg(long)]
    dot: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FreePolicy {
    Eager,
    Explore,
    Never,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    monitor: bool,
    #[arg(long, default_value_t = 1_000_000)]
    max_depth: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BenchName {
    Convection,
    Poisson,
    Heat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Mode {
    /// Simulated ranks under a seeded scheduler.
    Sim,
    /// One OS thread per rank.
    Workers,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(value_enum)]
    benchmark: BenchName,
    #[arg(long, short, default_value_t = 4)]
    n: i64,
    #[arg(long, value_enum, default_value_t = Mode::Sim)]
    mode: Mode,
    /// First scheduler seed (sim mode).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of seeded schedules to run (sim mode); all must agree.
    #[arg(long, default_value_t = 1)]
    schedules: u64,
    /// Enumerate every schedule instead of sampling (sim mode).
    #[arg(long)]
    exhaustive: bool,
    /// Exit 1 if the parallel result differs from the sequential one.
    #[arg(long)]
    check: bool,
    /// Largest message in bytes sent eagerly (workers mode).
    #[arg(long, default_value_t = 4096)]
    eager_bytes: usize,
    /// Seconds a worker may block in one call (workers mode).
    #[arg(long, default_value_t = 30)]
    timeout: u64,
    /// Grid points along x.
    #[arg(long)]
    nx: Option<usize>,
    /// Grid points along y (Poisson, heat).
    #[arg(long)]
    ny: Option<usize>,
    /// Time steps or iterations.
    #[arg(long, visible_alias = "iters")]
    nt: Option<usize>,
    /// Poisson: stop updating once the residual is below this.
    #[arg(long)]
    tolerance: Option<f64>,
    /// Poisson: read the right-hand side from a binary array file.
    #[arg(long)]
    rhs: Option<PathBuf>,
    /// Write the gathered solution (.csv, otherwise flat binary).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write the solution as gnuplot `x y value` blocks.
    #[arg(long)]
    gnuplot: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TraceArgs {
    /// A trace, or any JSON document with a `trace` field (verdicts, runs).
    trace: PathBuf,
    spec: PathBuf,
    /// Hide states entered by a single-process step; the arrow into the
    /// next shown state lists every step taken.
    #[arg(long)]
    fold_local: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    spec: PathBuf,
    #[arg(long, default_value_t = 2)]
    min_n: i64,
    #[arg(long, default_value_t = 8)]
    max_n: i64,
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(value_enum)]
    benchmark: BenchName,
    #[arg(long, default_value_t = 2)]
    steps: i64,
    /// Directory for `<name>.program.json` and `<name>.spec.json`.
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(USAGE)
        }
    }
}

fn run(cli: &Cli) -> Result<u8> {
    let mut out = io::stdout().lock();
    match &cli.cmd {
        Cmd::Explore(a) => cmd_explore(a, cli.format, &mut out),
        Cmd::Run(a) => cmd_run(a, cli.format, &mut out),
        Cmd::Bench(a) => cmd_bench(a, cli.format, &mut out),
        Cmd::Trace(a) => cmd_trace(a, cli.format, &mut out),
        Cmd::Validate(a) => cmd_validate(a, cli.format, &mut out),
        Cmd::Model(a) => cmd_model(a, &mut out),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn load_spec(path: &Path) -> Result<TopologySpec> {
    TopologySpec::from_json(&read(path)?).with_context(|| format!("{} is not a valid topology", path.display()))
}

fn model(name: BenchName, steps: i64) -> bench::models::Model {
    match name {
        BenchName::Convection => bench::models::convection(steps),
        BenchName::Poisson => bench::models::poisson(steps),
        BenchName::Heat => bench::models::heat(steps),
    }
}

/// Loads the program and resolves the topology for `n`, rejecting specs
/// that fail validation.
fn load(src: &Source) -> Result<(Command, Resolved)> {
    let (program, spec) = match (src.model, &src.program, &src.spec) {
        (Some(m), _, _) => {
            let m = model(m, src.steps);
            (m.program, m.spec)
        }
        (None, Some(p), Some(s)) => {
            let program: Command =
                serde_json::from_str(&read(p)?).with_context(|| format!("{} is not a valid program", p.display()))?;
            (program, load_spec(s)?)
        }
        _ => bail!("give a program and a topology, or --model"),
    };
    if src.n < 2 {
        bail!("the calculus needs at least two processes, got {}", src.n);
    }
    let errors = validate_topology(&spec, src.n..=src.n);
    if !errors.is_empty() {
        let list: Vec<String> = errors.iter().map(ToString::to_string).collect();
        bail!("topology is invalid: {}", list.join("; "));
    }
    let resolved = spec.resolve(src.n).context("topology cannot be evaluated")?;
    Ok((program, resolved))
}

fn emit(out: &mut impl Write, format: Format, value: &Value, text: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<()> {
    match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(value)?)?,
        Format::Text => text(out)?,
    }
    Ok(())
}

fn verdict_text(v: &Verdict, w: &mut dyn Write) -> io::Result<()> {
    match v {
        Verdict::Ok {
            states_visited,
            terminal_states,
        } => writeln!(w, "ok: {states_visited} states, {terminal_states} terminal"),
        Verdict::BoundExceeded { states_visited } => writeln!(w, "bound exceeded after {states_visited} states"),
        Verdict::DeadlockFound { trace } => {
            writeln!(w, "deadlock after {} steps:", trace.steps.len())?;
            writeln!(w, "  {}", steps_line(trace))
        }
        Verdict::ViolationFound { trace, violations } => {
            writeln!(w, "violation after {} steps:", trace.steps.len())?;
            for v in violations {
                writeln!(w, "  {v}")?;
            }
            writeln!(w, "  {}", steps_line(trace))
        }
    }
}

fn steps_line(trace: &Trace) -> String {
    trace.steps.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")
}

fn cmd_explore(a: &ExploreArgs, format: Format, out: &mut impl Write) -> Result<u8> {
    let (program, spec) = load(&a.source)?;
    let mut opts = ExploreOptions {
        monitor: a.monitor,
        compress_local: !a.no_compress,
        parallelism: if a.sequential {
            Parallelism::Sequential
        } else {
            Parallelism::Auto
        },
        record_graph: a.dot.is_some(),
        ..ExploreOptions::default()
    };
    opts.bounds.max_states = a.max_states;
    opts.bounds.max_depth = a.max_depth;
    opts.bounds.free_buffer_policy = match a.free_buffer {
        FreePolicy::Eager => FreeBufferPolicy::Eager,
        FreePolicy::Explore => FreeBufferPolicy::Explore,
        FreePolicy::Never => FreeBufferPolicy::Never,
    };
    let started = Instant::now();
    let ex = explorer::explore(&program, &spec, a.source.n, &opts)?;
    let elapsed = started.elapsed();
    if let (Some(path), Some(graph)) = (&a.dot, &ex.graph) {
        fs::write(path, graph.to_dot()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let confluent = ex.terminal_outcomes.len() <= 1;
    let value = json!({
        "verdict": ex.verdict,
        "terminal_outcomes": ex.terminal_outcomes.len(),
        "confluent": confluent,
        "lemma_failures": ex.lemma_failures,
        "crosscheck_failures": ex.crosscheck_failures,
        "elapsed_ms": elapsed.as_millis() as u64,
    });
    emit(out, format, &value, |w| {
        verdict_text(&ex.verdict, w)?;
        writeln!(w, "terminal outcomes: {}", ex.terminal_outcomes.len())?;
        for f in &ex.lemma_failures {
            writeln!(w, "lemma failure: {f:?}")?;
        }
        Ok(())
    })?;
    let clean = ex.verdict.is_ok() && confluent && ex.lemma_failures.is_empty() && ex.crosscheck_failures == 0;
    Ok(if clean { 0 } else { NEGATIVE })
}

/// `stuck` is a state where only buffer frees remain but the processes do
/// not fall into the blocked classes, which happens once an axiom is broken.
fn classify(s: &GlobalState, spec: &Resolved) -> &'static str {
    if s.is_terminated() {
        "terminated"
    } else if is_deadlock(s, spec) {
        "deadlock"
    } else if enabled_transitions(s, spec).is_ok_and(|en| en.iter().all(|t| t.rule == Rule::FreeBuffer)) {
        "stuck"
    } else {
        "running"
    }
}

fn cmd_run(a: &RunArgs, format: Format, out: &mut impl Write) -> Result<u8> {
    let (program, spec) = load(&a.source)?;
    let run = explorer::run_schedule(&program, &spec, a.source.n, a.seed, a.monitor, a.max_depth)?;
    let final_class = classify(&run.final_state, &spec);
    let envs: Vec<&_> = run.final_state.procs.iter().map(|p| &p.env).collect();
    let value = json!({
        "verdict": run.verdict,
        "trace": run.trace,
        "final": final_class,
        "final_envs": envs,
    });
    emit(out, format, &value, |w| {
        verdict_text(&run.verdict, w)?;
        writeln!(w, "final state ({final_class}):")?;
        write!(w, "{}", run.final_state)
    })?;
    Ok(if run.verdict.is_ok() { 0 } else { NEGATIVE })
}

fn build_benchmark(a: &BenchArgs) -> Result<Benchmark> {
    Ok(match a.benchmark {
        BenchName::Convection => {
            if a.ny.is_some() || a.tolerance.is_some() || a.rhs.is_some() {
                bail!("convection takes only --nx and --nt");
            }
            let d = ConvectionConfig::default();
            let nx = a.nx.unwrap_or(d.nx);
            let nt = a.nt.unwrap_or(d.nt);
            Benchmark::Convection(if nx == d.nx {
                ConvectionConfig { nt, ..d }
            } else {
                ConvectionConfig::with_size(nx, nt)
            })
        }
        BenchName::Poisson => {
            let d = PoissonConfig::default();
            let nx = a.nx.unwrap_or(d.nx);
            let mut cfg = PoissonConfig::new(nx, a.ny.unwrap_or(nx), a.nt.unwrap_or(d.iters));
            cfg.tolerance = a.tolerance;
            if let Some(path) = &a.rhs {
                let mut file = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
                let arr = read_binary(&mut file)?;
                if (arr.rows(), arr.cols()) != (cfg.ny, cfg.nx) {
                    bail!("right-hand side is {}x{}, grid is {}x{}", arr.rows(), arr.cols(), cfg.ny, cfg.nx);
                }
                cfg = cfg.with_rhs(arr.to_vec()?)?;
            }
            Benchmark::Poisson(cfg)
        }
        BenchName::Heat => {
            if a.tolerance.is_some() || a.rhs.is_some() {
                bail!("heat takes only --nx, --ny and --nt");
            }
            let d = HeatConfig::default();
            let nx = a.nx.unwrap_or(d.nx);
            Benchmark::Heat(HeatConfig::new(nx, a.ny.unwrap_or(nx), a.nt.unwrap_or(d.nt)))
        }
    })
}

fn write_solution(s: &Solution, a: &BenchArgs) -> Result<()> {
    if let Some(path) = &a.output {
        let mut f = io::BufWriter::new(fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        if path.extension().is_some_and(|e| e == "csv") {
            write_csv(&mut f, s.cols, &s.data)?;
        } else {
            write_binary(&mut f, s.rows, s.cols, &s.data)?;
        }
        f.flush()?;
    }
    if let Some(path) = &a.gnuplot {
        let mut f = io::BufWriter::new(fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?);
        let sx = 1.0 / (s.cols.max(2) - 1) as f64;
        let sy = 1.0 / (s.rows.max(2) - 1) as f64;
        for i in 0..s.rows {
            for j in 0..s.cols {
                writeln!(f, "{} {} {}", j as f64 * sx, i as f64 * sy, s.data[i * s.cols + j])?;
            }
            writeln!(f)?;
        }
        f.flush()?;
    }
    Ok(())
}

/// A runtime failure is a finding about the program, not a usage error.
fn runtime_failure(e: BenchError, format: Format, out: &mut impl Write) -> Result<u8> {
    if let BenchError::Config(_) = e {
        return Err(e.into());
    }
    let value = json!({ "passed": false, "error": e });
    emit(out, format, &value, |w| writeln!(w, "failed: {e}"))?;
    Ok(NEGATIVE)
}

fn cmd_bench(a: &BenchArgs, format: Format, out: &mut impl Write) -> Result<u8> {
    let bench = build_benchmark(a)?;
    let n = a.n;
    bench.validate(n)?;
    let sequential = bench.sequential();
    let started = Instant::now();
    let mut digests = BTreeSet::new();
    let mut extra = json!({});
    let parallel = match a.mode {
        Mode::Workers => {
            let cfg = ThreadsConfig {
                eager_bytes: a.eager_bytes,
                timeout: Duration::from_secs(a.timeout),
            };
            match bench.run_threads(n, cfg) {
                Ok(s) => s,
                Err(e) => return runtime_failure(e, format, out),
            }
        }
        Mode::Sim if a.exhaustive => {
            let ex = match bench.explore_sim(n, ExhaustiveLimits::default()) {
                Ok(ex) => ex,
                Err(e) => return runtime_failure(e, format, out),
            };
            extra = json!({ "exploration": ex });
            if ex.outcomes.len() != 1 || !ex.exhaustive {
                let value = json!({ "passed": false, "exploration": ex });
                emit(out, format, &value, |w| {
                    writeln!(w, "schedules disagree or search incomplete: {} outcomes", ex.outcomes.len())
                })?;
                return Ok(NEGATIVE);
            }
            match bench.run_sim(n, &mut RandomScheduler::new(a.seed)) {
                Ok(s) => s,
                Err(e) => return runtime_failure(e, format, out),
            }
        }
        Mode::Sim => {
            let spec = Arc::new(bench.runtime_spec(n)?);
            let mut first = None;
            for k in 0..a.schedules.max(1) {
                let seed = a.seed.wrapping_add(k);
                match bench.run_sim_with(spec.clone(), n, &mut RandomScheduler::new(seed)) {
                    Ok(s) => {
                        digests.insert(s.digest());
                        first.get_or_insert(s);
                    }
                    Err(e) => return runtime_failure(e, format, out),
                }
            }
            first.expect("at least one schedule")
        }
    };
    let elapsed = started.elapsed();
    let report = bench::compare(bench.name(), n, &parallel, &sequential)?;
    let confluent = digests.len() <= 1;
    let passed = report.passed() && confluent;
    write_solution(&parallel, a)?;
    let value = json!({
        "benchmark": bench.name(),
        "ranks": n,
        "mode": format!("{:?}", a.mode).to_lowercase(),
        "schedules": if a.mode == Mode::Sim && !a.exhaustive { a.schedules.max(1) } else { 1 },
        "distinct_outcomes": digests.len().max(1),
        "report": report,
        "passed": passed,
        "elapsed_ms": elapsed.as_millis() as u64,
        "extra": extra,
    });
    emit(out, format, &value, |w| {
        writeln!(w, "{} on {n} ranks ({:?})", bench.name(), a.mode)?;
        writeln!(
            w,
            "grid: {} (max deviation {:e}{})",
            if report.grid.passed { "bitwise equal" } else { "DIFFERENT" },
            report.grid.max_deviation,
            report.grid.first_mismatch.map(|i| format!(", first mismatch at {i}")).unwrap_or_default()
        )?;
        if let Some(r) = &report.residual {
            writeln!(
                w,
                "residual: {} (relative deviation {:e})",
                if r.passed { "within tolerance" } else { "OUT OF TOLERANCE" },
                r.max_deviation
            )?;
        }
        if !confluent {
            writeln!(w, "schedules produced {} different results", digests.len())?;
        }
        Ok(())
    })?;
    Ok(if a.check && !passed { NEGATIVE } else { 0 })
}

fn load_trace(path: &Path) -> Result<Trace> {
    let v: Value = serde_json::from_str(&read(path)?).with_context(|| format!("{} is not JSON", path.display()))?;
    let candidate = if v.get("initial").is_some() {
        v
    } else if let Some(t) = v.get("trace").or_else(|| v.get("verdict").and_then(|d| d.get("trace"))) {
        t.clone()
    } else {
        bail!("{} holds no trace", path.display());
    };
    serde_json::from_value(candidate).with_context(|| format!("{} holds a malformed trace", path.display()))
}

fn cmd_trace(a: &TraceArgs, format: Format, out: &mut impl Write) -> Result<u8> {
    let trace = load_trace(&a.trace)?;
    let spec = load_spec(&a.spec)?;
    let n = trace.initial.size();
    let resolved = spec.resolve(n).context("topology cannot be evaluated")?;
    let (states, error) = trace.replay_prefix(&resolved);
    let violations = if error.is_none() {
        monitor_trace(&trace, &resolved).unwrap_or_default()
    } else {
        Vec::new()
    };
    let last = states.last().expect("initial state");
    let final_class = classify(last, &resolved);
    let last_index = states.len() - 1;
    let shown: Vec<usize> = (0..states.len())
        .filter(|&k| !a.fold_local || k == 0 || k == last_index || !trace.steps[k - 1].rule.is_local())
        .collect();
    let arrows: Vec<String> = shown
        .windows(2)
        .map(|w| trace.steps[w[0]..w[1]].iter().map(ToString::to_string).collect::<Vec<_>>().join(", "))
        .collect();
    let boxes: Vec<&GlobalState> = shown.iter().map(|&k| &states[k]).collect();
    let value = json!({
        "valid": error.is_none(),
        "states": boxes,
        "arrows": arrows,
        "steps": trace.steps,
        "error": error,
        "violations": violations,
        "final": final_class,
    });
    emit(out, format, &value, |w| {
        for (k, s) in boxes.iter().enumerate() {
            if k > 0 {
                writeln!(w, "    |  {}", arrows[k - 1])?;
                writeln!(w, "    v")?;
            }
            writeln!(w, "State {k}")?;
            write!(w, "{s}")?;
        }
        if let Some(e) = &error {
            writeln!(w, "invalid: {e}")?;
        }
        for v in &violations {
            writeln!(w, "violation: {v}")?;
        }
        writeln!(w, "final: {final_class}")
    })?;
    Ok(if error.is_none() { 0 } else { NEGATIVE })
}

fn cmd_validate(a: &ValidateArgs, format: Format, out: &mut impl Write) -> Result<u8> {
    let spec = load_spec(&a.spec)?;
    if a.min_n > a.max_n {
        bail!("--min-n exceeds --max-n");
    }
    let errors = validate_topology(&spec, a.min_n..=a.max_n);
    let warnings = topology_warnings(&spec, a.min_n..=a.max_n);
    let value = json!({ "valid": errors.is_empty(), "errors": errors, "warnings": warnings });
    emit(out, format, &value, |w| {
        for e in &errors {
            writeln!(w, "error: {e}")?;
        }
        for x in &warnings {
            writeln!(w, "warning: {x:?}")?;
        }
        writeln!(w, "{}", if errors.is_empty() { "valid" } else { "invalid" })
    })?;
    Ok(if errors.is_empty() { 0 } else { NEGATIVE })
}

fn cmd_model(a: &ModelArgs, out: &mut impl Write) -> Result<u8> {
    let m = model(a.benchmark, a.steps);
    fs::create_dir_all(&a.out_dir)?;
    let program = a.out_dir.join(format!("{}.program.json", m.name));
    let spec = a.out_dir.join(format!("{}.spec.json", m.name));
    fs::write(&program, serde_json::to_string_pretty(&m.program)?)?;
    fs::write(&spec, m.spec.to_json()?)?;
    writeln!(out, "{}\n{}", program.display(), spec.display())?;
    Ok(0)
}
