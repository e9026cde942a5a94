//! Sum-product belief propagation, mean field, and their free energies.
//!
//! Messages live in the linear domain and are renormalized after every
//! update. Both solvers stop when no single-variable belief moves by more
//! than `tol` (in ℓ∞) over one sweep.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::table::FactorTable;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub converged: bool,
    /// Number of sweeps performed.
    pub iterations: usize,
    /// ℓ∞ change of the single-variable beliefs over the last sweep.
    pub final_delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BpOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the old message in `(1 - λ)·update + λ·old`.
    pub damping: f64,
}

impl Default for BpOptions {
    fn default() -> Self {
        BpOptions {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.0,
        }
    }
}

impl BpOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::domain(format!("tolerance must be positive, got {}", self.tol)));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::domain(format!("damping must lie in [0, 1), got {}", self.damping)));
        }
        Ok(())
    }
}

/// Messages on every edge, indexed by factor and by position of the
/// variable inside that factor's scope.
#[derive(Clone, Debug, PartialEq)]
pub struct MessageSet {
    pub var_to_fac: Vec<Vec<Vec<f64>>>,
    pub fac_to_var: Vec<Vec<Vec<f64>>>,
}

impl MessageSet {
    pub fn uniform(g: &FactorGraph) -> Self {
        let msgs: Vec<Vec<Vec<f64>>> = g
            .factors()
            .iter()
            .map(|f| f.cards().iter().map(|&c| vec![1.0 / c as f64; c]).collect())
            .collect();
        MessageSet {
            var_to_fac: msgs.clone(),
            fac_to_var: msgs,
        }
    }

    fn position(g: &FactorGraph, fi: usize, i: usize) -> usize {
        g.nbf(fi).binary_search(&i).expect("variable belongs to factor")
    }

    /// μ_{I→i}
    pub fn factor_to_var(&self, g: &FactorGraph, fi: usize, i: usize) -> &[f64] {
        &self.fac_to_var[fi][Self::position(g, fi, i)]
    }

    /// μ_{i→I}
    pub fn var_to_factor(&self, g: &FactorGraph, i: usize, fi: usize) -> &[f64] {
        &self.var_to_fac[fi][Self::position(g, fi, i)]
    }
}

/// Single-variable and factor beliefs.
#[derive(Clone, Debug)]
pub struct Beliefs {
    pub vars: Vec<FactorTable>,
    pub factors: Vec<FactorTable>,
}

fn normalize_in_place(v: &mut [f64], what: impl FnOnce() -> String) -> Result<()> {
    let s: f64 = v.iter().sum();
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::degenerate(format!("{} has total {s}", what())));
    }
    v.iter_mut().for_each(|x| *x /= s);
    Ok(())
}

/// Σ over the entries of a table, weighting each entry by the incoming
/// vectors of every position except `k`, accumulated onto the state of
/// position `k`.
pub(crate) fn contract_except(values: &[f64], cards: &[usize], incoming: &[&[f64]], k: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let n = cards.len();
    let mut digits = vec![0usize; n];
    for &val in values {
        let mut w = val;
        if w != 0.0 {
            for m in 0..n {
                if m != k {
                    w *= incoming[m][digits[m]];
                }
            }
            out[digits[k]] += w;
        }
        for m in 0..n {
            digits[m] += 1;
            if digits[m] < cards[m] {
                break;
            }
            digits[m] = 0;
        }
    }
}

fn update_var_to_fac(g: &FactorGraph, msgs: &mut MessageSet, fi: usize) -> Result<()> {
    for (k, &j) in g.nbf(fi).iter().enumerate() {
        let c = g.cardinality(j);
        let mut m = vec![1.0; c];
        for &other in g.nbv(j) {
            if other == fi {
                continue;
            }
            let incoming = &msgs.fac_to_var[other][MessageSet::position(g, other, j)];
            for (x, &y) in m.iter_mut().zip(incoming) {
                *x *= y;
            }
        }
        normalize_in_place(&mut m, || format!("message from variable {j} to factor {fi}"))?;
        msgs.var_to_fac[fi][k] = m;
    }
    Ok(())
}

fn variable_belief(g: &FactorGraph, msgs: &MessageSet, i: usize) -> Result<Vec<f64>> {
    let mut b = vec![1.0; g.cardinality(i)];
    for &fi in g.nbv(i) {
        let m = msgs.factor_to_var(g, fi, i);
        for (x, &y) in b.iter_mut().zip(m) {
            *x *= y;
        }
        // keep the running product away from underflow
        let s: f64 = b.iter().sum();
        if s > 0.0 {
            b.iter_mut().for_each(|x| *x /= s);
        }
    }
    normalize_in_place(&mut b, || format!("belief of variable {i}"))?;
    Ok(b)
}

fn max_change(old: &[Vec<f64>], new: &[Vec<f64>]) -> f64 {
    old.iter()
        .zip(new)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max)
}

/// Runs sum-product BP from uniform messages. Each sweep visits the factors
/// in order, refreshing the incoming variable-to-factor messages and then
/// every outgoing factor-to-variable message.
pub fn run_bp(g: &FactorGraph, opts: &BpOptions) -> Result<(MessageSet, ConvergenceReport)> {
    opts.validate()?;
    let mut msgs = MessageSet::uniform(g);
    let mut beliefs: Vec<Vec<f64>> = g.cards().iter().map(|&c| vec![1.0 / c as f64; c]).collect();
    let mut report = ConvergenceReport {
        converged: false,
        iterations: 0,
        final_delta: f64::INFINITY,
    };
    let lambda = opts.damping;
    let mut scratch = Vec::new();
    while report.iterations < opts.max_iter {
        for fi in 0..g.num_factors() {
            update_var_to_fac(g, &mut msgs, fi)?;
            let f = g.factor(fi);
            let incoming: Vec<&[f64]> = msgs.var_to_fac[fi].iter().map(|v| v.as_slice()).collect();
            let mut updated = Vec::with_capacity(f.vars().len());
            for (k, &c) in f.cards().iter().enumerate() {
                scratch.resize(c, 0.0);
                contract_except(f.values(), f.cards(), &incoming, k, &mut scratch);
                let mut m = scratch.clone();
                normalize_in_place(&mut m, || format!("message from factor {fi} to variable {}", f.vars()[k]))?;
                updated.push(m);
            }
            for (k, mut m) in updated.into_iter().enumerate() {
                if lambda > 0.0 {
                    for (x, &old) in m.iter_mut().zip(&msgs.fac_to_var[fi][k]) {
                        *x = (1.0 - lambda) * *x + lambda * old;
                    }
                    normalize_in_place(&mut m, || format!("damped message from factor {fi}"))?;
                }
                msgs.fac_to_var[fi][k] = m;
            }
        }
        report.iterations += 1;
        let new_beliefs = (0..g.num_vars())
            .map(|i| variable_belief(g, &msgs, i))
            .collect::<Result<Vec<_>>>()?;
        report.final_delta = max_change(&beliefs, &new_beliefs);
        beliefs = new_beliefs;
        if report.final_delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    for fi in 0..g.num_factors() {
        update_var_to_fac(g, &mut msgs, fi)?;
    }
    Ok((msgs, report))
}

/// b_i ∝ ∏ μ_{I→i} and b_I ∝ ψ_I ∏ μ_{k→I}.
pub fn bp_beliefs(g: &FactorGraph, msgs: &MessageSet) -> Result<Beliefs> {
    let vars = (0..g.num_vars())
        .map(|i| Ok(FactorTable::from_parts(vec![i], vec![g.cardinality(i)], variable_belief(g, msgs, i)?)))
        .collect::<Result<Vec<_>>>()?;
    let mut factors = Vec::with_capacity(g.num_factors());
    for (fi, f) in g.factors().iter().enumerate() {
        let mut b = f.clone();
        let n = f.vars().len();
        let mut digits = vec![0usize; n];
        for v in b.values_mut() {
            for m in 0..n {
                *v *= msgs.var_to_fac[fi][m][digits[m]];
            }
            for m in 0..n {
                digits[m] += 1;
                if digits[m] < f.cards()[m] {
                    break;
                }
                digits[m] = 0;
            }
        }
        factors.push(
            b.normalize()
                .map_err(|_| Error::degenerate(format!("belief of factor {fi} vanishes")))?,
        );
    }
    Ok(Beliefs { vars, factors })
}

fn entropy_term(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// F = Σ_I Σ b_I ln(b_I/ψ_I) + Σ_i (1 − |N(i)|) Σ b_i ln b_i.
/// Returns +∞ when a factor belief puts mass where its factor is zero.
pub fn bethe_free_energy(g: &FactorGraph, beliefs: &Beliefs) -> f64 {
    let mut f = 0.0;
    for (psi, b) in g.factors().iter().zip(&beliefs.factors) {
        for (&p, &q) in psi.values().iter().zip(b.values()) {
            if q > 0.0 {
                if p <= 0.0 {
                    return f64::INFINITY;
                }
                f += q * (q.ln() - p.ln());
            }
        }
    }
    for (i, b) in beliefs.vars.iter().enumerate() {
        let weight = 1.0 - g.nbv(i).len() as f64;
        if weight != 0.0 {
            f += weight * b.values().iter().map(|&p| entropy_term(p)).sum::<f64>();
        }
    }
    f
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Seed of the random sequential update order.
    pub seed: u64,
}

impl Default for MfOptions {
    fn default() -> Self {
        MfOptions {
            tol: 1e-9,
            max_iter: 10_000,
            seed: 0,
        }
    }
}

fn log_factors(g: &FactorGraph) -> Result<Vec<FactorTable>> {
    g.factors()
        .iter()
        .enumerate()
        .map(|(fi, f)| {
            if f.values().iter().any(|&v| v <= 0.0) {
                Err(Error::domain(format!("mean field needs strictly positive factors; factor {fi} has a zero")))
            } else {
                Ok(f.map(f64::ln))
            }
        })
        .collect()
}

/// Fully factorized variational approximation with a seeded random
/// sequential update order and no damping.
pub fn run_mean_field(g: &FactorGraph, opts: &MfOptions) -> Result<(Vec<FactorTable>, ConvergenceReport)> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let logs = log_factors(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut b: Vec<Vec<f64>> = g.cards().iter().map(|&c| vec![1.0 / c as f64; c]).collect();
    let mut order: Vec<usize> = (0..g.num_vars()).collect();
    let mut report = ConvergenceReport {
        converged: false,
        iterations: 0,
        final_delta: f64::INFINITY,
    };
    let mut scratch = Vec::new();
    while report.iterations < opts.max_iter {
        let before = b.clone();
        order.shuffle(&mut rng);
        for &i in &order {
            let mut field = vec![0.0; g.cardinality(i)];
            for &fi in g.nbv(i) {
                let lf = &logs[fi];
                let k = lf.vars().binary_search(&i).expect("variable in factor");
                let incoming: Vec<&[f64]> = lf.vars().iter().map(|&v| b[v].as_slice()).collect();
                scratch.resize(field.len(), 0.0);
                contract_except(lf.values(), lf.cards(), &incoming, k, &mut scratch);
                for (x, &y) in field.iter_mut().zip(&scratch) {
                    *x += y;
                }
            }
            let m = field.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut bi: Vec<f64> = field.iter().map(|&x| (x - m).exp()).collect();
            normalize_in_place(&mut bi, || format!("mean field belief of {i}"))?;
            b[i] = bi;
        }
        report.iterations += 1;
        report.final_delta = max_change(&before, &b);
        if report.final_delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    let tables = b
        .into_iter()
        .enumerate()
        .map(|(i, v)| FactorTable::from_parts(vec![i], vec![g.cardinality(i)], v))
        .collect();
    Ok((tables, report))
}

/// Variational free energy −Σ_I E_b[ln ψ_I] − Σ_i H(b_i) of a factorized
/// distribution. Requires strictly positive factors.
pub fn mean_field_free_energy(g: &FactorGraph, beliefs: &[FactorTable]) -> Result<f64> {
    let logs = log_factors(g)?;
    let mut f = 0.0;
    for lf in &logs {
        let n = lf.vars().len();
        let mut digits = vec![0usize; n];
        for &v in lf.values() {
            let mut w = 1.0;
            for m in 0..n {
                w *= beliefs[lf.vars()[m]].values()[digits[m]];
            }
            f -= w * v;
            for m in 0..n {
                digits[m] += 1;
                if digits[m] < lf.cards()[m] {
                    break;
                }
                digits[m] = 0;
            }
        }
    }
    for b in beliefs {
        f += b.values().iter().map(|&p| entropy_term(p)).sum::<f64>();
    }
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::brute_force;
    use rand::Rng;

    fn t(vars: Vec<usize>, cards: Vec<usize>, vals: Vec<f64>) -> FactorTable {
        FactorTable::new(vars, cards, vals).unwrap()
    }

    fn random_tree(rng: &mut ChaCha8Rng, n: usize, coupling: f64) -> FactorGraph {
        let mut fs = Vec::new();
        for v in 0..n {
            fs.push(t(vec![v], vec![2], vec![rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)]));
        }
        for v in 1..n {
            let u = rng.random_range(0..v);
            let j: f64 = rng.random_range(-coupling..coupling);
            fs.push(t(vec![u, v], vec![2, 2], vec![j.exp(), (-j).exp(), (-j).exp(), j.exp()]));
        }
        FactorGraph::from_factors(fs).unwrap()
    }

    fn loopy(rng: &mut ChaCha8Rng) -> FactorGraph {
        let mut fs = Vec::new();
        for v in 0..5 {
            fs.push(t(vec![v], vec![2], vec![rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)]));
        }
        for (a, b) in [(0, 1), (1, 2), (2, 3), (0, 3), (1, 4), (2, 4)] {
            let vals = (0..4).map(|_| rng.random_range(0.5..2.0)).collect();
            fs.push(t(vec![a, b], vec![2, 2], vals));
        }
        FactorGraph::from_factors(fs).unwrap()
    }

    #[test]
    fn exact_on_trees_and_bethe_equals_log_z() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [2, 5, 9] {
            let g = random_tree(&mut rng, n, 1.0);
            let (msgs, rep) = run_bp(&g, &BpOptions::default()).unwrap();
            assert!(rep.converged);
            let b = bp_beliefs(&g, &msgs).unwrap();
            let ex = brute_force(&g).unwrap();
            for i in 0..n {
                assert!(b.vars[i].max_abs_diff(&ex.marginals[i]).unwrap() < 1e-8);
            }
            let f = bethe_free_energy(&g, &b);
            assert!(((-f) - ex.log_z).abs() / ex.log_z.abs().max(1.0) < 1e-8);
        }
    }

    #[test]
    fn single_factor_beliefs() {
        let g = FactorGraph::from_factors(vec![t(vec![0, 1], vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0])]).unwrap();
        let (msgs, _) = run_bp(&g, &BpOptions::default()).unwrap();
        let b = bp_beliefs(&g, &msgs).unwrap();
        let ex = brute_force(&g).unwrap();
        for i in 0..2 {
            assert!(b.vars[i].max_abs_diff(&ex.marginals[i]).unwrap() < 1e-12);
        }
        // F = −ln Σψ for a single factor
        assert!((bethe_free_energy(&g, &b) + 21f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_factors_give_uniform_messages() {
        let g = FactorGraph::from_factors(vec![
            FactorTable::constant(vec![0, 1], vec![2, 2], 3.0).unwrap(),
            FactorTable::constant(vec![1, 2], vec![2, 2], 3.0).unwrap(),
            FactorTable::constant(vec![0, 2], vec![2, 2], 3.0).unwrap(),
        ])
        .unwrap();
        let (msgs, rep) = run_bp(&g, &BpOptions::default()).unwrap();
        assert!(rep.converged);
        assert_eq!(rep.iterations, 1);
        for m in msgs.fac_to_var.iter().chain(&msgs.var_to_fac).flatten() {
            assert!(m.iter().all(|&x| (x - 0.5).abs() < 1e-15));
        }
    }

    #[test]
    fn isolated_variable_and_uniform_binary() {
        let g = FactorGraph::from_factors(vec![t(vec![0], vec![2], vec![1.0, 3.0])]).unwrap();
        let (msgs, _) = run_bp(&g, &BpOptions::default()).unwrap();
        let b = bp_beliefs(&g, &msgs).unwrap();
        assert_eq!(b.vars[0].values(), &[0.25, 0.75]);

        let u = FactorGraph::from_factors(vec![t(vec![0], vec![2], vec![1.0, 1.0])]).unwrap();
        let (msgs, _) = run_bp(&u, &BpOptions::default()).unwrap();
        let b = bp_beliefs(&u, &msgs).unwrap();
        assert!((bethe_free_energy(&u, &b) + 2f64.ln()).abs() < 1e-15);

        // no factor at all: entropy of the free variable
        let free = FactorGraph::new(vec![2], vec![]).unwrap();
        let (msgs, _) = run_bp(&free, &BpOptions::default()).unwrap();
        let b = bp_beliefs(&free, &msgs).unwrap();
        assert!((bethe_free_energy(&free, &b) + 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_consistency_and_damping() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = loopy(&mut rng);
        let (msgs, rep) = run_bp(&g, &BpOptions::default()).unwrap();
        assert!(rep.converged);
        let b = bp_beliefs(&g, &msgs).unwrap();
        for (fi, bf) in b.factors.iter().enumerate() {
            for &i in g.nbf(fi) {
                let m = bf.marginalize(&[i]);
                assert!(m.max_abs_diff(&b.vars[i]).unwrap() < 1e-7);
            }
        }
        for m in msgs.fac_to_var.iter().chain(&msgs.var_to_fac).flatten() {
            assert!((m.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let damped = BpOptions {
            damping: 0.5,
            ..BpOptions::default()
        };
        let (dm, drep) = run_bp(&g, &damped).unwrap();
        assert!(drep.converged);
        let db = bp_beliefs(&g, &dm).unwrap();
        for i in 0..g.num_vars() {
            assert!(db.vars[i].max_abs_diff(&b.vars[i]).unwrap() < 1e-6);
        }
    }

    #[test]
    fn zero_support_is_degenerate() {
        let g = FactorGraph::from_factors(vec![
            t(vec![0], vec![2], vec![1.0, 0.0]),
            t(vec![0], vec![2], vec![0.0, 1.0]),
        ])
        .unwrap();
        assert!(matches!(run_bp(&g, &BpOptions::default()), Err(Error::Degenerate(_))));
    }

    #[test]
    fn bethe_infinite_where_factor_is_zero() {
        let g = FactorGraph::from_factors(vec![t(vec![0], vec![2], vec![0.0, 1.0])]).unwrap();
        let bad = Beliefs {
            vars: vec![t(vec![0], vec![2], vec![0.5, 0.5])],
            factors: vec![t(vec![0], vec![2], vec![0.5, 0.5])],
        };
        assert_eq!(bethe_free_energy(&g, &bad), f64::INFINITY);
    }

    #[test]
    fn rejects_bad_options() {
        let g = FactorGraph::new(vec![2], vec![]).unwrap();
        let bad = BpOptions { tol: 0.0, ..BpOptions::default() };
        assert!(run_bp(&g, &bad).is_err());
        let bad = BpOptions { damping: 1.0, ..BpOptions::default() };
        assert!(run_bp(&g, &bad).is_err());
    }

    #[test]
    fn mean_field_cases() {
        // unary factors only: exact
        let g = FactorGraph::from_factors(vec![
            t(vec![0], vec![2], vec![1.0, 3.0]),
            t(vec![1], vec![3], vec![1.0, 2.0, 5.0]),
        ])
        .unwrap();
        let (b, rep) = run_mean_field(&g, &MfOptions::default()).unwrap();
        assert!(rep.converged);
        let ex = brute_force(&g).unwrap();
        for i in 0..2 {
            assert!(b[i].max_abs_diff(&ex.marginals[i]).unwrap() < 1e-9);
        }
        // MF free energy equals −ln Z when the target factorizes
        assert!((mean_field_free_energy(&g, &b).unwrap() + ex.log_z).abs() < 1e-12);

        // weakly coupled tree
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let tree = random_tree(&mut rng, 8, 0.01);
        let (b, rep) = run_mean_field(&tree, &MfOptions::default()).unwrap();
        assert!(rep.converged);
        let ex = brute_force(&tree).unwrap();
        for i in 0..8 {
            assert!(b[i].max_abs_diff(&ex.marginals[i]).unwrap() < 1e-2);
        }

        // uniform model
        let u = FactorGraph::from_factors(vec![FactorTable::constant(vec![0, 1], vec![2, 2], 2.0).unwrap()]).unwrap();
        let (b, _) = run_mean_field(&u, &MfOptions::default()).unwrap();
        assert!(b.iter().all(|t| t.values().iter().all(|&p| (p - 0.5).abs() < 1e-15)));

        let z = FactorGraph::from_factors(vec![t(vec![0], vec![2], vec![0.0, 1.0])]).unwrap();
        assert!(matches!(run_mean_field(&z, &MfOptions::default()), Err(Error::Domain(_))));
    }
}
