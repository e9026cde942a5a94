//! Method dispatch, error measurement and the benchmark suite.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bp::{bp_beliefs, run_bp, run_mean_field, BpOptions, MfOptions};
use crate::cavity::{init_cavities, CavityMethod, ClampOptions, DEFAULT_BLANKET_GUARD};
use crate::cumulant::{run_lcbp_cum, run_lcbp_cum_lin, CumOptions, CumulantState, PairwiseBinaryModel};
use crate::error::{Error, Result};
use crate::exact::exact_marginals;
use crate::graph::FactorGraph;
use crate::loopcorrect::{run_lc, LcOptions};
use crate::models::{gen_k_factor, gen_regular_spin, spin_to_factor_graph, CouplingType, KFactorSpec, RegularSpinSpec};
use crate::table::FactorTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Mf,
    Bp,
    Lcbp,
    LcbpCum,
    LcbpCumLin,
    Exact,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Mf => "mf",
            Method::Bp => "bp",
            Method::Lcbp => "lcbp",
            Method::LcbpCum => "lcbp-cum",
            Method::LcbpCumLin => "lcbp-cum-lin",
            Method::Exact => "exact",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mf" => Ok(Method::Mf),
            "bp" => Ok(Method::Bp),
            "lcbp" => Ok(Method::Lcbp),
            "lcbp-cum" => Ok(Method::LcbpCum),
            "lcbp-cum-lin" => Ok(Method::LcbpCumLin),
            "exact" => Ok(Method::Exact),
            other => Err(Error::domain(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RunOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    /// Cavity initialization for the loop-corrected methods.
    pub cavity_init: CavityMethod,
    /// Seed of the mean-field update order.
    pub seed: u64,
    pub blanket_guard: u128,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.0,
            cavity_init: CavityMethod::Clamped(crate::cavity::CavityEngine::Bp),
            seed: 0,
            blanket_guard: DEFAULT_BLANKET_GUARD,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MethodOutput {
    pub marginals: Vec<FactorTable>,
    pub converged: bool,
    pub iterations: usize,
}

fn clamp_options(opts: &RunOptions) -> ClampOptions {
    ClampOptions {
        tol: opts.tol,
        max_iter: opts.max_iter,
        damping: opts.damping,
        seed: opts.seed,
        guard: opts.blanket_guard,
    }
}

/// Runs one method. The cumulant variants need the graph to be a binary
/// pairwise model; it is recovered from the factors.
pub fn run_method(g: &FactorGraph, method: Method, opts: &RunOptions) -> Result<MethodOutput> {
    match method {
        Method::Exact => Ok(MethodOutput {
            marginals: exact_marginals(g)?.marginals,
            converged: true,
            iterations: 0,
        }),
        Method::Bp => {
            let bo = BpOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                damping: opts.damping,
            };
            let (msgs, rep) = run_bp(g, &bo)?;
            Ok(MethodOutput {
                marginals: bp_beliefs(g, &msgs)?.vars,
                converged: rep.converged,
                iterations: rep.iterations,
            })
        }
        Method::Mf => {
            let mo = MfOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                seed: opts.seed,
            };
            let (b, rep) = run_mean_field(g, &mo)?;
            Ok(MethodOutput {
                marginals: b,
                converged: rep.converged,
                iterations: rep.iterations,
            })
        }
        Method::Lcbp => {
            let cav = init_cavities(g, opts.cavity_init, &clamp_options(opts))?;
            let lo = LcOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                damping: opts.damping,
            };
            let res = run_lc(g, &cav, &lo)?;
            Ok(MethodOutput {
                marginals: res.beliefs,
                converged: res.report.converged && cav.all_converged(),
                iterations: res.report.iterations,
            })
        }
        Method::LcbpCum | Method::LcbpCumLin => {
            let model = PairwiseBinaryModel::from_factor_graph(g)?;
            let cav = init_cavities(g, opts.cavity_init, &clamp_options(opts))?;
            let init = CumulantState::from_cavities(&model, &cav)?;
            let co = CumOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                damping: opts.damping,
            };
            let res = if method == Method::LcbpCum {
                run_lcbp_cum(&model, &init, &co)?
            } else {
                run_lcbp_cum_lin(&model, &init, &co)?
            };
            Ok(MethodOutput {
                marginals: res.marginals(),
                converged: res.report.converged && cav.all_converged(),
                iterations: res.report.iterations,
            })
        }
    }
}

/// max over i and x_i of |b_i(x_i) − P(x_i)|.
pub fn max_linf_error(approx: &[FactorTable], exact: &[FactorTable]) -> Result<f64> {
    if approx.len() != exact.len() {
        return Err(Error::domain(format!("{} approximate marginals against {} exact ones", approx.len(), exact.len())));
    }
    let mut worst: f64 = 0.0;
    for (a, e) in approx.iter().zip(exact) {
        worst = worst.max(a.max_abs_diff(e)?);
    }
    Ok(worst)
}

/// One row of the benchmark CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRecord {
    pub seed: u64,
    pub family: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub d_or_k: usize,
    pub beta: f64,
    pub theta: f64,
    pub method: String,
    pub converged: bool,
    pub iterations: usize,
    pub wall_seconds: f64,
    /// NaN when the method failed outright.
    pub max_error: f64,
    #[serde(skip)]
    pub notes: String,
}

pub fn write_records(w: impl Write, records: &[BenchmarkRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for r in records {
        wr.serialize(r).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn records_to_csv(records: &[BenchmarkRecord]) -> String {
    let mut buf = Vec::new();
    write_records(&mut buf, records).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

pub fn read_records(r: impl Read) -> Result<Vec<BenchmarkRecord>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(csv_err))
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            msg: format!("{other:?}"),
        },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Regular,
    Kfactor,
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Family::Regular),
            "kfactor" => Ok(Family::Kfactor),
            other => Err(Error::domain(format!("unknown family {other:?}"))),
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Regular => "regular",
            Family::Kfactor => "kfactor",
        })
    }
}

/// Seeds given as a count `16` (meaning 0..16), a range `a..b`, or a
/// comma-separated list.
pub fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::domain(format!("cannot read seeds from {s:?}"));
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let a: u64 = a.trim().parse().map_err(|_| bad())?;
        let b: u64 = b.trim().parse().map_err(|_| bad())?;
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return s.split(',').map(|x| x.trim().parse().map_err(|_| bad())).collect();
    }
    let n: u64 = s.parse().map_err(|_| bad())?;
    Ok((0..n).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteConfig {
    pub family: Family,
    pub n: usize,
    pub d: usize,
    pub k: usize,
    /// Number of factors for the k-factor family.
    pub m: usize,
    pub beta: f64,
    pub theta: f64,
    pub couplings: CouplingType,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub run: RunOptions,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
    /// Record wall-clock times; when false every time is written as 0.
    pub timing: bool,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            family: Family::Regular,
            n: 50,
            d: 3,
            k: 3,
            m: 50,
            beta: 0.5,
            theta: 2.0,
            couplings: CouplingType::Mixed,
            seeds: (0..16).collect(),
            methods: vec![Method::Bp, Method::Lcbp],
            run: RunOptions::default(),
            threads: None,
            timing: true,
        }
    }
}

/// The file form of a suite configuration; every key is optional.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteFile {
    pub family: Option<String>,
    pub n: Option<usize>,
    pub d: Option<usize>,
    pub k: Option<usize>,
    pub m: Option<usize>,
    pub beta: Option<f64>,
    pub theta: Option<f64>,
    pub couplings: Option<String>,
    pub seeds: Option<String>,
    pub methods: Option<Vec<String>>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    pub damping: Option<f64>,
    pub cavity_init: Option<String>,
    pub threads: Option<usize>,
    pub timing: Option<bool>,
}

impl SuiteFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
            msg: e.message().to_string(),
        })
    }

    /// Overlays the keys present in the file onto `cfg`.
    pub fn apply(&self, cfg: &mut SuiteConfig) -> Result<()> {
        if let Some(f) = &self.family {
            cfg.family = f.parse()?;
        }
        macro_rules! copy {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { cfg.$field = v; })*};
        }
        copy!(n, d, k, m, beta, theta);
        if let Some(c) = &self.couplings {
            cfg.couplings = c.parse()?;
        }
        if let Some(s) = &self.seeds {
            cfg.seeds = parse_seeds(s)?;
        }
        if let Some(ms) = &self.methods {
            cfg.methods = ms.iter().map(|m| m.parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = self.tol {
            cfg.run.tol = v;
        }
        if let Some(v) = self.max_iter {
            cfg.run.max_iter = v;
        }
        if let Some(v) = self.damping {
            cfg.run.damping = v;
        }
        if let Some(c) = &self.cavity_init {
            cfg.run.cavity_init = c.parse()?;
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if let Some(t) = self.timing {
            cfg.timing = t;
        }
        Ok(())
    }
}

impl SuiteConfig {
    pub fn regular_spec(&self, seed: u64) -> RegularSpinSpec {
        RegularSpinSpec {
            n: self.n,
            d: self.d,
            beta: self.beta,
            theta: self.theta,
            coupling: self.couplings,
            seed,
        }
    }

    pub fn kfactor_spec(&self, seed: u64) -> KFactorSpec {
        KFactorSpec {
            n: self.n,
            m: self.m,
            k: self.k,
            beta: self.beta,
            seed,
            tree: false,
        }
    }

    /// The factor graph of one instance.
    pub fn instance(&self, seed: u64) -> Result<FactorGraph> {
        match self.family {
            Family::Regular => Ok(spin_to_factor_graph(&gen_regular_spin(&self.regular_spec(seed))?)),
            Family::Kfactor => gen_k_factor(&self.kfactor_spec(seed)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Skipped {
    pub seed: u64,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOutput {
    /// Ordered by seed, then by the configured method order.
    pub records: Vec<BenchmarkRecord>,
    pub skipped: Vec<Skipped>,
}

fn run_instance(cfg: &SuiteConfig, seed: u64) -> std::result::Result<Vec<BenchmarkRecord>, Skipped> {
    let skip = |e: Error| Skipped {
        seed,
        reason: e.to_string(),
    };
    let g = cfg.instance(seed).map_err(skip)?;
    let exact = exact_marginals(&g).map_err(skip)?;
    let (family, d_or_k, theta) = match cfg.family {
        Family::Regular => ("regular", cfg.d, cfg.theta),
        Family::Kfactor => ("kfactor", cfg.k, 0.0),
    };
    let opts = RunOptions { seed, ..cfg.run };
    let mut out = Vec::with_capacity(cfg.methods.len());
    for &method in &cfg.methods {
        let start = Instant::now();
        let result = run_method(&g, method, &opts);
        let wall = if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 };
        let mut rec = BenchmarkRecord {
            seed,
            family: family.to_string(),
            n: cfg.n,
            d_or_k,
            beta: cfg.beta,
            theta,
            method: method.to_string(),
            converged: false,
            iterations: 0,
            wall_seconds: wall,
            max_error: f64::NAN,
            notes: String::new(),
        };
        match result {
            Ok(o) => {
                rec.converged = o.converged;
                rec.iterations = o.iterations;
                rec.max_error = max_linf_error(&o.marginals, &exact.marginals).map_err(skip)?;
            }
            Err(e) => rec.notes = e.to_string(),
        }
        out.push(rec);
    }
    Ok(out)
}

/// Runs every configured method on every seed's instance, comparing with
/// exact marginals computed once per instance. Instances whose exact
/// marginals are out of reach are skipped with the reason recorded.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteOutput> {
    if cfg.methods.is_empty() {
        return Err(Error::domain("no methods configured"));
    }
    let work = || -> Vec<_> { cfg.seeds.par_iter().map(|&s| run_instance(cfg, s)).collect() };
    let per_seed = match cfg.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::domain(e.to_string()))?
            .install(work),
        None => work(),
    };
    let mut out = SuiteOutput {
        records: Vec::new(),
        skipped: Vec::new(),
    };
    for r in per_seed {
        match r {
            Ok(recs) => out.records.extend(recs),
            Err(s) => out.skipped.push(s),
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub runs: usize,
    pub converged: usize,
    /// exp of the mean of ln(max_error) over converged runs.
    pub log_mean_error: Option<f64>,
    pub mean_seconds: f64,
}

impl MethodSummary {
    pub fn convergence_fraction(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.converged as f64 / self.runs as f64
        }
    }
}

/// Per-method convergence fraction and log-domain mean error, in order of
/// first appearance.
pub fn summarize(records: &[BenchmarkRecord]) -> Vec<MethodSummary> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&BenchmarkRecord>> = BTreeMap::new();
    for r in records {
        if !groups.contains_key(r.method.as_str()) {
            order.push(r.method.clone());
        }
        groups.entry(&r.method).or_default().push(r);
    }
    order
        .into_iter()
        .map(|m| {
            let rs = &groups[m.as_str()];
            let ok: Vec<f64> = rs.iter().filter(|r| r.converged && !r.max_error.is_nan()).map(|r| r.max_error).collect();
            let log_mean_error = (!ok.is_empty()).then(|| (ok.iter().map(|e| e.ln()).sum::<f64>() / ok.len() as f64).exp());
            MethodSummary {
                runs: rs.len(),
                converged: rs.iter().filter(|r| r.converged).count(),
                log_mean_error,
                mean_seconds: rs.iter().map(|r| r.wall_seconds).sum::<f64>() / rs.len() as f64,
                method: m,
            }
        })
        .collect()
}

pub fn format_summary(summary: &[MethodSummary]) -> String {
    let mut out = String::from("method           converged   log-mean max error   mean seconds\n");
    for s in summary {
        let err = s.log_mean_error.map_or("-".to_string(), |e| format!("{e:.3e}"));
        out.push_str(&format!(
            "{:<16} {:>3}/{:<3} {:>6.1}%   {:>12}   {:>12.4}\n",
            s.method,
            s.converged,
            s.runs,
            100.0 * s.convergence_fraction(),
            err,
            s.mean_seconds
        ));
    }
    out
}
