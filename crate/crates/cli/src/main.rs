//! `nars`: command-line driver for joint architecture and recipe search.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime
//! failure. Errors are also written to stderr as one JSON line.

use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use nars::cost::cost;
use nars::engine::{
    build_pool, derive_seed, export_csv, pool_hash, prepare_pool, read_space_source, run_evolve,
    run_nars, run_search, stage1_pretrain, write_results, PoolFile, ResultBundle, RunConfig,
    SearchState, Stage1Config, Stage2Summary,
};
use nars::predictor::FitReport;
use nars::space::{Domain, Genome, SearchSpaceDef};

#[derive(Parser)]
#[command(
    name = "nars",
    version,
    about = "Joint neural architecture and training-recipe search"
)]
struct Cli {
    /// Log progress (-v) or everything (-vv) to stderr.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the parameter grids of a space and its cardinality.
    SpaceInfo {
        /// Space file, or builtin:fbnetv3 / builtin:baseline / builtin:toy.
        space: String,
        #[arg(long)]
        json: bool,
    },
    /// Draw a quasi-random candidate pool with cost labels.
    Pool {
        #[arg(long)]
        space: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep only candidates whose FLOPs fall in LOW:HIGH.
        #[arg(long, value_parser = parse_window)]
        flop_window: Option<(u64, u64)>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Pretrain a predictor on a pool's FLOP and parameter counts.
    Pretrain {
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Stages 1 and 2; resumes from the run's checkpoint when present.
    Search(RunArgs),
    /// Stage 3 for every constraint set, from a finished stage-2 checkpoint.
    Evolve {
        #[command(flatten)]
        run: RunArgs,
        /// Defaults to the checkpoint in the run's output directory.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// The full pipeline.
    Run {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        force: bool,
    },
    /// Per-layer FLOPs and parameters of a fixed architecture.
    Cost {
        /// Space file whose architecture fields are all fixed.
        arch: String,
        #[arg(long)]
        csv: bool,
    },
    /// CSV of every ranked candidate in a run's results.
    Export {
        results_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    parallelism: Option<usize>,
}

struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl Failure {
    fn usage(message: impl Display) -> Self {
        Failure {
            code: 2,
            kind: "usage",
            message: message.to_string(),
        }
    }
}

impl From<nars::Error> for Failure {
    fn from(e: nars::Error) -> Self {
        use nars::Error as E;
        let (code, kind) = match &e {
            E::Parse { .. } | E::RangeInversion { .. } | E::UnknownBlock { .. } => (2, "parse"),
            E::Validation { .. } => (2, "validation"),
            E::InvalidArgument(_) => (2, "invalid_argument"),
            E::LayoutMismatch { .. } => (2, "layout_mismatch"),
            E::Io { .. } => (3, "io"),
            E::Json(_) => (3, "json"),
            E::Protocol { .. } => (3, "protocol"),
            E::Evaluator(_) => (3, "evaluator"),
            E::Stage { .. } => (3, "stage"),
            _ => (3, "runtime"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

/// Input files that cannot be read are a usage error, not a runtime one.
fn input<T>(r: nars::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| match e {
        nars::Error::Io { .. } | nars::Error::Json(_) => Failure {
            kind: "input",
            ..Failure::usage(e)
        },
        other => other.into(),
    })
}

fn parse_window(s: &str) -> Result<(u64, u64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LOW:HIGH")?;
    let lo: u64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: u64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    if lo > hi {
        return Err(format!("empty window {lo}:{hi}"));
    }
    Ok((lo, hi))
}

fn refuse_overwrite(path: &Path, force: bool) -> CmdResult {
    if path.exists() && !force {
        return Err(Failure::usage(format!(
            "{} already exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn domain(d: &Domain, scale: Option<f64>) -> String {
    let show = |v: i64| match scale {
        Some(s) => format!("{}", v as f64 / s),
        None => v.to_string(),
    };
    match d {
        Domain::Fixed(v) => show(*v),
        Domain::Range(r) => format!("{}..={} step {}", show(r.low), show(r.high), show(r.step)),
        Domain::Choice(c) => format!(
            "[{}]",
            c.iter().map(|&v| show(v)).collect::<Vec<_>>().join(", ")
        ),
    }
}

fn space_info(spec: &str, as_json: bool) -> CmdResult {
    let space = input(read_space_source(spec).and_then(|s| SearchSpaceDef::load(&s)))?;
    let card = space.cardinality();
    if as_json {
        let genes: Vec<_> = space
            .genes()
            .iter()
            .map(|g| json!({ "name": g.name, "values": g.values }))
            .collect();
        let doc = json!({
            "name": space.name,
            "stages": space.stages.len(),
            "genes": genes,
            "arch_log10": card.arch_log10,
            "recipe_log10": card.recipe_log10,
        });
        println!("{doc:#}");
        return Ok(());
    }
    println!("space {}: {} stages", space.name, space.stages.len());
    println!("resolution {}", domain(&space.resolution, None));
    println!(
        "{:<6} {:<7} {:<10} {:<26} {:<22} {:<14} {:>2} {:>3} act",
        "stage", "block", "k", "e", "c", "n", "s", "se"
    );
    for (i, st) in space.stages.iter().enumerate() {
        let e = &st.expansion;
        let exp = if e.tied {
            domain(&e.first, Some(100.0))
        } else {
            format!(
                "{} / {}",
                domain(&e.first, Some(100.0)),
                domain(&e.rest, Some(100.0))
            )
        };
        println!(
            "{:<6} {:<7} {:<10} {:<26} {:<22} {:<14} {:>2} {:>3} {:?}",
            i,
            st.block.to_string(),
            domain(&st.kernel, None),
            exp,
            domain(&st.channels, None),
            domain(&st.depth, None),
            st.stride,
            if st.se { "Y" } else { "N" },
            st.activation
        );
    }
    let r = &space.recipe;
    println!("recipe");
    println!("  lr       {}", domain(&r.lr, None));
    println!(
        "  optim    {:?} (SGD lr x{})",
        r.optimizer, r.sgd_lr_multiplier
    );
    println!("  ema      {:?}", r.ema);
    println!("  p        {}", domain(&r.dropout, None));
    println!("  d        {}", domain(&r.stochastic_depth, None));
    println!("  m        {}", domain(&r.mixup, None));
    println!("  wd       {}", domain(&r.weight_decay, None));
    println!("architecture log10 {:.6}", card.arch_log10);
    println!("recipe log10 {:.6}", card.recipe_log10);
    Ok(())
}

fn pool(
    spec: &str,
    n: usize,
    seed: u64,
    window: Option<(u64, u64)>,
    out: &Path,
    force: bool,
) -> CmdResult {
    if n == 0 {
        return Err(Failure::usage("--n must be at least 1"));
    }
    refuse_overwrite(out, force)?;
    let source = input(read_space_source(spec))?;
    let space = SearchSpaceDef::load(&source)?;
    let entries = build_pool(
        &space,
        n,
        derive_seed(seed, "pool", 0),
        window,
        &Default::default(),
    );
    let file = PoolFile::new(&source, &space, &entries, seed, n, window);
    nars::io::write_json(out, &file)?;
    println!(
        "wrote {} candidates ({} requested) to {}, hash {}",
        entries.len(),
        n,
        out.display(),
        file.hash
    );
    Ok(())
}

fn pretrain(
    pool_path: &Path,
    seed: u64,
    epochs: Option<usize>,
    out: &Path,
    force: bool,
) -> CmdResult {
    refuse_overwrite(out, force)?;
    let file: PoolFile = input(nars::io::read_json(pool_path))?;
    let (space, entries) = input(file.restore())?;
    if entries.is_empty() {
        return Err(Failure::usage("pool file holds no candidates"));
    }
    let mut cfg = Stage1Config::default();
    if let Some(e) = epochs {
        cfg.pretrain.epochs = e;
    }
    let (net, report) = stage1_pretrain(&space, &entries, &cfg, seed)?;
    net.save(out)?;
    let report: Option<FitReport> = report;
    println!("{:#}", json!(report));
    Ok(())
}

fn load_config(args: &RunArgs) -> Result<RunConfig, Failure> {
    let mut cfg = input(RunConfig::load(&args.config))?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.output_dir {
        cfg.output_dir = d.clone();
    }
    if let Some(p) = args.parallelism {
        cfg.parallelism = p;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Failure {
        code: 3,
        kind: "io",
        message: format!("cannot create {}: {e}", cfg.output_dir.display()),
    })?;
    Ok(cfg)
}

fn print_results(bundle: &ResultBundle) {
    for r in &bundle.results {
        match r.report.results.first() {
            Some(best) => println!(
                "{}: {} candidates, best predicted {:.4} at {} flops, {} params",
                r.constraints,
                r.report.results.len(),
                best.score,
                best.flops,
                best.params
            ),
            None => println!("{}: no candidates", r.constraints),
        }
    }
}

fn search(args: &RunArgs) -> CmdResult {
    let cfg = load_config(args)?;
    let (_, _, state, _) = run_search(&cfg)?;
    println!("{:#}", json!(Stage2Summary::of(&state)));
    Ok(())
}

fn evolve(args: &RunArgs, checkpoint: Option<&Path>, force: bool) -> CmdResult {
    let cfg = load_config(args)?;
    if cfg.constraints.is_empty() {
        return Err(Failure::usage("the config lists no constraint sets"));
    }
    let layout = cfg.layout();
    refuse_overwrite(&layout.results(), force)?;
    let path = checkpoint.map_or_else(|| layout.checkpoint(), Path::to_path_buf);
    let state = input(SearchState::load(&path))?;
    if !state.is_complete(&cfg.stage2) {
        return Err(Failure::usage(format!(
            "{} stopped after iteration {} of {}; run `search` first",
            path.display(),
            state.iteration,
            cfg.stage2.iterations
        )));
    }
    let (space, entries, _) = prepare_pool(&cfg)?;
    if state.pool_hash != pool_hash(&entries) {
        return Err(Failure::usage(format!(
            "{} was produced from a different pool",
            path.display()
        )));
    }
    let stage1 = nars::io::read_json(&layout.root.join("stage1-report.json")).unwrap_or(None);
    let bundle = run_evolve(&cfg, &space, &entries, &state, stage1)?;
    write_results(&cfg, &bundle, true)?;
    print_results(&bundle);
    Ok(())
}

fn run(args: &RunArgs, force: bool) -> CmdResult {
    let cfg = load_config(args)?;
    if cfg.constraints.is_empty() {
        return Err(Failure::usage("the config lists no constraint sets"));
    }
    refuse_overwrite(&cfg.layout().results(), force)?;
    let bundle = run_nars(&cfg)?;
    write_results(&cfg, &bundle, true)?;
    print_results(&bundle);
    Ok(())
}

fn cost_cmd(spec: &str, csv: bool) -> CmdResult {
    let space = input(read_space_source(spec).and_then(|s| SearchSpaceDef::load(&s)))?;
    if let Some(g) = space.genes().iter().find(|g| !g.is_recipe()) {
        return Err(Failure::usage(format!(
            "architecture parameter `{}` is not fixed ({} choices)",
            g.name,
            g.len()
        )));
    }
    let arch = space.decode(&Genome(vec![0; space.genes().len()])).arch;
    let report = cost(&arch);
    if csv {
        print!("{}", report.to_csv());
    } else {
        println!("{report}");
    }
    Ok(())
}

fn export(dir: &Path, out: Option<&Path>) -> CmdResult {
    let bundle: ResultBundle = input(nars::io::read_json(&dir.join("results.json")))?;
    let text = export_csv(&bundle);
    match out {
        Some(path) => nars::io::write_atomic(path, text.as_bytes())?,
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| Failure {
                code: 3,
                kind: "io",
                message: e.to_string(),
            })?,
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CmdResult {
    match cli.command {
        Command::SpaceInfo { space, json } => space_info(&space, json),
        Command::Pool {
            space,
            n,
            seed,
            flop_window,
            out,
            force,
        } => pool(&space, n, seed, flop_window, &out, force),
        Command::Pretrain {
            pool,
            seed,
            epochs,
            out,
            force,
        } => pretrain(&pool, seed, epochs, &out, force),
        Command::Search(args) => search(&args),
        Command::Evolve {
            run,
            checkpoint,
            force,
        } => evolve(&run, checkpoint.as_deref(), force),
        Command::Run { run: args, force } => run(&args, force),
        Command::Cost { arch, csv } => cost_cmd(&arch, csv),
        Command::Export { results_dir, out } => export(&results_dir, out.as_deref()),
    }
}

fn report(f: &Failure) -> ExitCode {
    let record = json!({ "error": { "kind": f.kind, "message": f.message, "exit_code": f.code } });
    eprintln!("{record}");
    ExitCode::from(f.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&Failure::usage(e.to_string().trim_end())),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => report(&f),
    }
}
