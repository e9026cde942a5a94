//! Cavity networks and initial approximations of cavity distributions.
//!
//! The cavity network of `i` drops `i` and every factor touching it. A
//! cavity distribution is the marginal of that network on the blanket ∂i,
//! and the clamped initializers estimate it one blanket state at a time as
//! `Z⁰(s) ∝ exp(−F(s))`, where `F(s)` is some free energy of the cavity
//! network with ∂i clamped to `s`.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use rayon::prelude::*;

use crate::bp::{bethe_free_energy, bp_beliefs, mean_field_free_energy, run_bp, run_mean_field, BpOptions, MfOptions};
use crate::error::{Error, Result};
use crate::exact::log_partition;
use crate::graph::{FactorGraph, Subgraph};
use crate::io::{read_table_block, write_table_block, Tokens};
use crate::table::{num_states, unlinear_index, FactorTable};

/// Default cap on the number of blanket states enumerated per variable.
pub const DEFAULT_BLANKET_GUARD: u128 = 1 << 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CavityEngine {
    Bp,
    Mf,
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CavityMethod {
    Uniform,
    Clamped(CavityEngine),
}

impl fmt::Display for CavityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CavityMethod::Uniform => "uniform",
            CavityMethod::Clamped(CavityEngine::Bp) => "bp",
            CavityMethod::Clamped(CavityEngine::Mf) => "mf",
            CavityMethod::Clamped(CavityEngine::Exact) => "exact",
        })
    }
}

impl FromStr for CavityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CavityMethod::Uniform),
            "bp" | "bp-clamp" => Ok(CavityMethod::Clamped(CavityEngine::Bp)),
            "mf" | "mf-clamp" => Ok(CavityMethod::Clamped(CavityEngine::Mf)),
            "exact" => Ok(CavityMethod::Clamped(CavityEngine::Exact)),
            other => Err(Error::domain(format!("unknown cavity initialization {other:?}"))),
        }
    }
}

/// One table per variable over its blanket, normalized to sum 1.
#[derive(Clone, Debug, PartialEq)]
pub struct CavitySet {
    pub tables: Vec<FactorTable>,
    pub method: CavityMethod,
    /// Blanket states (linear indices) whose clamped run did not converge.
    pub nonconverged: Vec<Vec<usize>>,
    /// Engine runs performed per variable.
    pub runs: Vec<usize>,
}

impl CavitySet {
    pub fn all_converged(&self) -> bool {
        self.nonconverged.iter().all(|v| v.is_empty())
    }

    pub fn total_runs(&self) -> usize {
        self.runs.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClampOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Passed to BP runs only.
    pub damping: f64,
    /// Base seed for mean-field update orders.
    pub seed: u64,
    pub guard: u128,
}

impl Default for ClampOptions {
    fn default() -> Self {
        ClampOptions {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.0,
            seed: 0,
            guard: DEFAULT_BLANKET_GUARD,
        }
    }
}

/// The graph without `i` and without the factors that contain `i`.
/// Remaining variables are renumbered; `ids` maps them back.
pub fn cavity_network(g: &FactorGraph, i: usize) -> Result<Subgraph> {
    g.check_var(i)?;
    g.reduce(|fi| !g.factor(fi).contains(i), &[], &[i])
}

/// The cavity network of `i` with the blanket clamped to `states`, listed
/// in the order of `g.blanket(i)`.
pub fn clamped_cavity(g: &FactorGraph, i: usize, states: &[usize]) -> Result<Subgraph> {
    g.check_var(i)?;
    let blanket = g.blanket(i);
    if states.len() != blanket.len() {
        return Err(Error::domain(format!(
            "variable {i} has {} blanket variables, got {} states",
            blanket.len(),
            states.len()
        )));
    }
    let evidence: Vec<(usize, usize)> = blanket.iter().copied().zip(states.iter().copied()).collect();
    g.reduce(|fi| !g.factor(fi).contains(i), &evidence, &[i])
}

fn blanket_size(g: &FactorGraph, i: usize) -> u128 {
    g.blanket(i).iter().map(|&j| g.cardinality(j) as u128).product()
}

/// Uniform tables over every blanket.
pub fn init_uniform(g: &FactorGraph) -> Result<CavitySet> {
    let tables = (0..g.num_vars())
        .map(|i| {
            let b = g.blanket(i).to_vec();
            let cards = g.cards_of(&b);
            num_states(&cards).ok_or_else(|| Error::capacity(format!("blanket of variable {i}"), blanket_size(g, i), usize::MAX as u128))?;
            FactorTable::uniform(b, cards)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = g.num_vars();
    Ok(CavitySet {
        tables,
        method: CavityMethod::Uniform,
        nonconverged: vec![Vec::new(); n],
        runs: vec![0; n],
    })
}

/// Free energy of a clamped network, `None` when it has no support.
fn clamped_free_energy(net: &FactorGraph, engine: CavityEngine, opts: &ClampOptions, seed: u64) -> Result<(Option<f64>, bool)> {
    match engine {
        CavityEngine::Bp => {
            let bo = BpOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                damping: opts.damping,
            };
            let (msgs, rep) = match run_bp(net, &bo) {
                Ok(r) => r,
                Err(Error::Degenerate(_)) => return Ok((None, true)),
                Err(e) => return Err(e),
            };
            let beliefs = match bp_beliefs(net, &msgs) {
                Ok(b) => b,
                Err(Error::Degenerate(_)) => return Ok((None, rep.converged)),
                Err(e) => return Err(e),
            };
            let f = bethe_free_energy(net, &beliefs);
            Ok((f.is_finite().then_some(f), rep.converged))
        }
        CavityEngine::Mf => {
            let mo = MfOptions {
                tol: opts.tol,
                max_iter: opts.max_iter,
                seed,
            };
            let (b, rep) = run_mean_field(net, &mo)?;
            Ok((Some(mean_field_free_energy(net, &b)?), rep.converged))
        }
        CavityEngine::Exact => match log_partition(net) {
            Ok(lz) => Ok((Some(-lz), true)),
            Err(Error::Degenerate(_)) => Ok((None, true)),
            Err(e) => Err(e),
        },
    }
}

fn clamp_one(g: &FactorGraph, i: usize, engine: CavityEngine, opts: &ClampOptions) -> Result<(FactorTable, Vec<usize>, usize)> {
    let blanket = g.blanket(i).to_vec();
    let cards = g.cards_of(&blanket);
    let needed = blanket_size(g, i);
    if needed > opts.guard {
        return Err(Error::capacity(format!("blanket states of variable {i}"), needed, opts.guard));
    }
    let size = needed as usize;
    let mut neg_f = vec![f64::NEG_INFINITY; size];
    let mut nonconverged = Vec::new();
    for (s, slot) in neg_f.iter_mut().enumerate() {
        let states = unlinear_index(&cards, s);
        let net = clamped_cavity(g, i, &states)?;
        let seed = opts.seed ^ ((i as u64) << 32) ^ s as u64;
        let (f, converged) = clamped_free_energy(&net.graph, engine, opts, seed)?;
        if !converged {
            nonconverged.push(s);
        }
        if let Some(f) = f {
            *slot = -f;
        }
    }
    let shift = neg_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return Err(Error::degenerate(format!("every blanket state of variable {i} has zero support")));
    }
    let values: Vec<f64> = neg_f.iter().map(|&x| (x - shift).exp()).collect();
    let table = FactorTable::from_parts(blanket, cards, values).normalize()?;
    Ok((table, nonconverged, size))
}

/// Clamped cavity initialization. Variables are processed in parallel; the
/// result does not depend on the number of threads.
pub fn init_clamped(g: &FactorGraph, engine: CavityEngine, opts: &ClampOptions) -> Result<CavitySet> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if let Some(i) = (0..g.num_vars()).find(|&i| blanket_size(g, i) > opts.guard) {
        return Err(Error::capacity(format!("blanket states of variable {i}"), blanket_size(g, i), opts.guard));
    }
    let per_var = (0..g.num_vars())
        .into_par_iter()
        .map(|i| clamp_one(g, i, engine, opts))
        .collect::<Result<Vec<_>>>()?;
    let mut set = CavitySet {
        tables: Vec::with_capacity(per_var.len()),
        method: CavityMethod::Clamped(engine),
        nonconverged: Vec::with_capacity(per_var.len()),
        runs: Vec::with_capacity(per_var.len()),
    };
    for (t, nc, runs) in per_var {
        set.tables.push(t);
        set.nonconverged.push(nc);
        set.runs.push(runs);
    }
    Ok(set)
}

/// Dispatches on the method tag.
pub fn init_cavities(g: &FactorGraph, method: CavityMethod, opts: &ClampOptions) -> Result<CavitySet> {
    match method {
        CavityMethod::Uniform => init_uniform(g),
        CavityMethod::Clamped(e) => init_clamped(g, e, opts),
    }
}

/// Serializes a cavity set: the method tag and variable count, then for
/// every variable its id followed by a table block.
pub fn cavity_set_to_string(set: &CavitySet) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", set.method, set.tables.len());
    for (i, t) in set.tables.iter().enumerate() {
        let _ = writeln!(out, "\n{i}");
        write_table_block(&mut out, t);
    }
    out
}

/// Reads a cavity set written by [`cavity_set_to_string`] and checks it
/// against the graph it is meant for.
pub fn parse_cavity_set(text: &str, g: &FactorGraph) -> Result<CavitySet> {
    let mut tok = Tokens::new(text);
    let (line, tag) = tok.next_str("cavity method")?;
    let method: CavityMethod = tag.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("unknown cavity method {tag:?}"),
    })?;
    let n: usize = tok.next("number of variables")?;
    if n != g.num_vars() {
        return Err(Error::Parse {
            line,
            msg: format!("cache holds {n} variables, graph has {}", g.num_vars()),
        });
    }
    let mut tables = Vec::with_capacity(n);
    for i in 0..n {
        let line = tok.line();
        let id: usize = tok.next("variable id")?;
        let t = read_table_block(&mut tok)?;
        if id != i || t.vars() != g.blanket(i) || t.cards() != g.cards_of(g.blanket(i)).as_slice() {
            return Err(Error::Parse {
                line,
                msg: format!("entry {id} does not match the blanket of variable {i}"),
            });
        }
        tables.push(t);
    }
    if !tok.is_done() {
        return Err(Error::Parse {
            line: tok.line(),
            msg: "trailing content in cavity cache".into(),
        });
    }
    Ok(CavitySet {
        tables,
        method,
        nonconverged: vec![Vec::new(); n],
        runs: vec![0; n],
    })
}
