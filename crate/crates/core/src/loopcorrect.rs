//! Loop-corrected belief propagation.
//!
//! For every variable `i` and factor `Y ∋ i` an error factor φ over `Y∖i`
//! multiplies the initial cavity table Z⁰ of `i`. The error factors are
//! iterated to a fixed point by a geometric mean over the neighbours of
//! `i` in `Y`, and the corrected single-variable beliefs are read off the
//! local products over Δi.

use crate::bp::ConvergenceReport;
use crate::cavity::CavitySet;
use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::table::FactorTable;

/// φ⁽ˉⁱ⁾_Y for every variable `i` and every factor `Y ∈ N(i)`, stored per
/// variable in the order of `g.nbv(i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorFactorSet {
    pub tables: Vec<Vec<FactorTable>>,
}

impl ErrorFactorSet {
    pub fn uniform(g: &FactorGraph) -> Self {
        let tables = (0..g.num_vars())
            .map(|i| {
                g.nbv(i)
                    .iter()
                    .map(|&fi| {
                        let f = g.factor(fi);
                        let vars: Vec<usize> = f.vars().iter().copied().filter(|&v| v != i).collect();
                        FactorTable::uniform(vars.clone(), g.cards_of(&vars)).expect("factor scope is valid")
                    })
                    .collect()
            })
            .collect();
        ErrorFactorSet { tables }
    }

    pub fn get(&self, g: &FactorGraph, i: usize, fi: usize) -> &FactorTable {
        let k = g.nbv(i).binary_search(&fi).expect("factor contains variable");
        &self.tables[i][k]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LcOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight λ in `φ_old^λ · φ_update^(1−λ)`.
    pub damping: f64,
}

impl Default for LcOptions {
    fn default() -> Self {
        LcOptions {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoopCorrectedResult {
    /// Improved cavity tables Z⁰ ∏ φ over ∂i, normalized.
    pub cavities: Vec<FactorTable>,
    /// Local beliefs over Δi.
    pub q: Vec<FactorTable>,
    pub beliefs: Vec<FactorTable>,
    pub phi: ErrorFactorSet,
    pub report: ConvergenceReport,
    /// Number of updates in which a vanishing denominator entry was zeroed.
    pub zeroed_updates: usize,
}

/// Product over Δi of Z⁰⁽ˉⁱ⁾, of ψ_I for I ∈ N(i) other than `skip_psi`, and
/// of φ⁽ˉⁱ⁾_I for I ∈ N(i) other than `skip_phi`.
fn local_product(
    g: &FactorGraph,
    z0: &FactorTable,
    phi: &ErrorFactorSet,
    i: usize,
    skip_psi: Option<usize>,
    skip_phi: Option<usize>,
) -> Result<FactorTable> {
    let delta = g.delta(i).to_vec();
    let cards = g.cards_of(&delta);
    let mut tabs: Vec<&FactorTable> = Vec::with_capacity(2 * g.nbv(i).len() + 1);
    tabs.push(z0);
    for (k, &fi) in g.nbv(i).iter().enumerate() {
        if Some(fi) != skip_psi {
            tabs.push(g.factor(fi));
        }
        if Some(fi) != skip_phi {
            tabs.push(&phi.tables[i][k]);
        }
    }
    FactorTable::product_over(delta, cards, &tabs)
}

fn check_cavities(g: &FactorGraph, cav: &CavitySet) -> Result<()> {
    if cav.tables.len() != g.num_vars() {
        return Err(Error::domain(format!(
            "cavity set covers {} variables, graph has {}",
            cav.tables.len(),
            g.num_vars()
        )));
    }
    for (i, t) in cav.tables.iter().enumerate() {
        if t.vars() != g.blanket(i) {
            return Err(Error::domain(format!("cavity table of variable {i} is not over its blanket")));
        }
    }
    Ok(())
}

/// One error-factor update. Returns the new φ⁽ˉⁱ⁾_Y and whether some
/// denominator entries vanished (those outputs are set to zero).
pub fn lc_update(g: &FactorGraph, cav: &CavitySet, phi: &ErrorFactorSet, i: usize, y: usize) -> Result<(FactorTable, bool)> {
    g.check_var(i)?;
    if g.nbv(i).binary_search(&y).is_err() {
        return Err(Error::domain(format!("factor {y} does not contain variable {i}")));
    }
    let keep: Vec<usize> = g.factor(y).vars().iter().copied().filter(|&v| v != i).collect();
    if keep.is_empty() {
        return Ok((FactorTable::scalar(1.0), false));
    }
    let keep_cards = g.cards_of(&keep);
    let n = keep.len() as f64;

    // geometric mean of the neighbours' views, in the log domain
    let mut log_num = vec![0.0; keep_cards.iter().product()];
    for &j in &keep {
        let t = local_product(g, &cav.tables[j], phi, j, Some(y), None)?.marginalize(&keep);
        let s = t.sum();
        if !(s > 0.0) {
            return Err(Error::degenerate(format!(
                "numerator of the update of variable {i}, factor {y} vanishes for neighbour {j}"
            )));
        }
        for (acc, &v) in log_num.iter_mut().zip(t.values()) {
            *acc += if v > 0.0 { (v / s).ln() / n } else { f64::NEG_INFINITY };
        }
    }

    let den = local_product(g, &cav.tables[i], phi, i, Some(y), Some(y))?.marginalize(&keep);
    let dmax = den.max_value();
    if !(dmax > 0.0) {
        return Err(Error::degenerate(format!("denominator of the update of variable {i}, factor {y} vanishes")));
    }
    let mut zeroed = false;
    let values: Vec<f64> = log_num
        .iter()
        .zip(den.values())
        .map(|(&ln, &d)| {
            if d > 0.0 {
                ln.exp() / (d / dmax)
            } else {
                zeroed = true;
                0.0
            }
        })
        .collect();
    let out = FactorTable::from_parts(keep, keep_cards, values)
        .normalize()
        .map_err(|_| Error::degenerate(format!("update of variable {i}, factor {y} vanishes")))?;
    Ok((out, zeroed))
}

/// Local beliefs Q_i over Δi and single-variable beliefs b_i.
pub fn lc_beliefs(g: &FactorGraph, cav: &CavitySet, phi: &ErrorFactorSet) -> Result<(Vec<FactorTable>, Vec<FactorTable>)> {
    check_cavities(g, cav)?;
    let mut qs = Vec::with_capacity(g.num_vars());
    let mut bs = Vec::with_capacity(g.num_vars());
    for i in 0..g.num_vars() {
        let q = local_product(g, &cav.tables[i], phi, i, None, None)?
            .normalize()
            .map_err(|_| Error::degenerate(format!("local belief of variable {i} vanishes")))?;
        bs.push(q.marginalize(&[i]));
        qs.push(q);
    }
    Ok((qs, bs))
}

fn max_change(a: &[FactorTable], b: &[FactorTable]) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.values().iter().zip(y.values()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn damp(old: &FactorTable, new: FactorTable, lambda: f64) -> Result<FactorTable> {
    if lambda == 0.0 {
        return Ok(new);
    }
    let values = old
        .values()
        .iter()
        .zip(new.values())
        .map(|(&o, &u)| if o > 0.0 && u > 0.0 { o.powf(lambda) * u.powf(1.0 - lambda) } else { 0.0 })
        .collect();
    FactorTable::from_parts(new.vars().to_vec(), new.cards().to_vec(), values)
        .normalize()
        .map_err(|_| Error::degenerate("damped error factor vanishes"))
}

/// Sequential sweeps over variables and their factors in ascending order,
/// starting from uniform error factors.
pub fn run_lc(g: &FactorGraph, cav: &CavitySet, opts: &LcOptions) -> Result<LoopCorrectedResult> {
    run_lc_from(g, cav, ErrorFactorSet::uniform(g), opts)
}

/// As [`run_lc`], starting from the given error factors.
pub fn run_lc_from(g: &FactorGraph, cav: &CavitySet, mut phi: ErrorFactorSet, opts: &LcOptions) -> Result<LoopCorrectedResult> {
    check_cavities(g, cav)?;
    if !(opts.tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::domain(format!("damping must lie in [0, 1), got {}", opts.damping)));
    }
    let (_, mut beliefs) = lc_beliefs(g, cav, &phi)?;
    let mut report = ConvergenceReport {
        converged: false,
        iterations: 0,
        final_delta: f64::INFINITY,
    };
    let mut zeroed_updates = 0;
    while report.iterations < opts.max_iter {
        for i in 0..g.num_vars() {
            for (k, &y) in g.nbv(i).iter().enumerate() {
                let (upd, zeroed) = lc_update(g, cav, &phi, i, y)?;
                zeroed_updates += zeroed as usize;
                phi.tables[i][k] = damp(&phi.tables[i][k], upd, opts.damping)?;
            }
        }
        report.iterations += 1;
        let (_, nb) = lc_beliefs(g, cav, &phi)?;
        report.final_delta = max_change(&beliefs, &nb);
        beliefs = nb;
        if report.final_delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    let (q, beliefs) = lc_beliefs(g, cav, &phi)?;
    let cavities = (0..g.num_vars())
        .map(|i| {
            let b = g.blanket(i).to_vec();
            let mut tabs: Vec<&FactorTable> = phi.tables[i].iter().collect();
            tabs.push(&cav.tables[i]);
            FactorTable::product_over(b.clone(), g.cards_of(&b), &tabs)?
                .normalize()
                .map_err(|_| Error::degenerate(format!("improved cavity of variable {i} vanishes")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LoopCorrectedResult {
        cavities,
        q,
        beliefs,
        phi,
        report,
        zeroed_updates,
    })
}
