use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lcbp::bench::{format_summary, run_method, run_suite, summarize, write_records, Family, Method, RunOptions, SuiteConfig, SuiteFile};
use lcbp::cavity::CavityMethod;
use lcbp::exact::exact_marginals;
use lcbp::io::{factor_graph_to_string, format_value, load_factor_graph};
use lcbp::models::{gen_k_factor, gen_regular_spin, spin_to_factor_graph, CouplingType, KFactorSpec, RegularSpinSpec};
use lcbp::{Error, FactorTable, Result};

#[derive(Parser)]
#[command(name = "lcbp", version, about = "Loop-corrected belief propagation on discrete factor graphs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a random instance
    Gen(GenArgs),
    /// Print exact single-variable marginals
    Exact {
        /// Factor graph file
        input: PathBuf,
    },
    /// Run one method on one instance and print its marginals
    Run(RunArgs),
    /// Run a benchmark suite and write a CSV of per-instance results
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, default_value = "regular")]
    family: Family,
    #[arg(long, default_value_t = 50)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    d: usize,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 50)]
    m: usize,
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long, default_value_t = 2.0)]
    theta: f64,
    #[arg(long, default_value = "mixed")]
    couplings: CouplingType,
    /// Build a k-factor hypertree (needs n - 1 = m (k - 1))
    #[arg(long)]
    tree: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Factor graph output; stdout when neither output is given
    #[arg(long)]
    out: Option<PathBuf>,
    /// Pairwise spin model output (regular family only)
    #[arg(long)]
    pairwise: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Factor graph file
    input: PathBuf,
    #[arg(long, default_value = "lcbp")]
    method: Method,
    #[arg(long, default_value = "bp")]
    cavity_init: CavityMethod,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long, default_value_t = 10_000)]
    max_iter: usize,
    #[arg(long, default_value_t = 0.0)]
    damping: f64,
    /// Seed of the mean-field update order
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML suite file; command-line flags override its keys
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    couplings: Option<CouplingType>,
    /// A count ("16"), a range ("3..7") or a list ("1,4,9")
    #[arg(long)]
    seeds: Option<String>,
    /// Comma-separated method names
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    #[arg(long)]
    cavity_init: Option<CavityMethod>,
    #[arg(long)]
    threads: Option<usize>,
    /// Write 0 for every wall time so repeated runs are byte-identical
    #[arg(long)]
    no_timing: bool,
    /// CSV output; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

fn print_marginals(out: &mut impl Write, marginals: &[FactorTable]) -> io::Result<()> {
    for (i, m) in marginals.iter().enumerate() {
        write!(out, "{i}")?;
        for &p in m.values() {
            write!(out, " {}", format_value(p))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn gen(a: GenArgs) -> Result<()> {
    let (g, manifest, pairwise) = match a.family {
        Family::Regular => {
            let spec = RegularSpinSpec {
                n: a.n,
                d: a.d,
                beta: a.beta,
                theta: a.theta,
                coupling: a.couplings,
                seed: a.seed,
            };
            let model = gen_regular_spin(&spec)?;
            (spin_to_factor_graph(&model), spec.manifest(), Some(model))
        }
        Family::Kfactor => {
            let spec = KFactorSpec {
                n: a.n,
                m: a.m,
                k: a.k,
                beta: a.beta,
                seed: a.seed,
                tree: a.tree,
            };
            (gen_k_factor(&spec)?, spec.manifest(), None)
        }
    };
    let header = vec![format!("manifest {manifest}")];
    if let Some(path) = &a.pairwise {
        let model = pairwise.ok_or_else(|| Error::Domain("--pairwise needs the regular family".into()))?;
        fs::write(path, format!("# manifest {manifest}\n{}", model.to_text()))?;
    }
    match &a.out {
        Some(path) => fs::write(path, factor_graph_to_string(&g, &header))?,
        None if a.pairwise.is_none() => io::stdout().write_all(factor_graph_to_string(&g, &header).as_bytes())?,
        None => {}
    }
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let g = load_factor_graph(&a.input)?;
    let opts = RunOptions {
        tol: a.tol,
        max_iter: a.max_iter,
        damping: a.damping,
        cavity_init: a.cavity_init,
        seed: a.seed,
        ..RunOptions::default()
    };
    let res = run_method(&g, a.method, &opts)?;
    let mut out = io::stdout().lock();
    writeln!(out, "# method {} converged {} iterations {}", a.method, res.converged, res.iterations)?;
    print_marginals(&mut out, &res.marginals)?;
    if !res.converged {
        eprintln!("warning: {} did not converge within {} iterations", a.method, a.max_iter);
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut cfg = SuiteConfig::default();
    if let Some(path) = &a.config {
        SuiteFile::parse(&fs::read_to_string(path)?)?.apply(&mut cfg)?;
    }
    let overlay = SuiteFile {
        n: a.n,
        d: a.d,
        k: a.k,
        m: a.m,
        beta: a.beta,
        theta: a.theta,
        seeds: a.seeds,
        threads: a.threads,
        ..SuiteFile::default()
    };
    overlay.apply(&mut cfg)?;
    if let Some(f) = a.family {
        cfg.family = f;
    }
    if let Some(c) = a.couplings {
        cfg.couplings = c;
    }
    if let Some(ms) = a.methods {
        cfg.methods = ms;
    }
    if let Some(c) = a.cavity_init {
        cfg.run.cavity_init = c;
    }
    if a.no_timing {
        cfg.timing = false;
    }
    let output = run_suite(&cfg)?;
    match &a.out {
        Some(path) => write_records(fs::File::create(path)?, &output.records)?,
        None => write_records(io::stdout().lock(), &output.records)?,
    }
    let mut err = io::stderr().lock();
    write!(err, "{}", format_summary(&summarize(&output.records)))?;
    for s in &output.skipped {
        writeln!(err, "skipped seed {}: {}", s.seed, s.reason)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.cmd {
        Cmd::Gen(a) => gen(a),
        Cmd::Exact { input } => load_factor_graph(&input)
            .and_then(|g| exact_marginals(&g))
            .and_then(|r| Ok(print_marginals(&mut io::stdout().lock(), &r.marginals)?)),
        Cmd::Run(a) => run(a),
        Cmd::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
