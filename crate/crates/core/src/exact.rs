//! Exact single-variable marginals and partition functions.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::table::{aligned_strides, for_each_aligned, union_scope, FactorTable};

/// Largest joint state space [`brute_force`] will enumerate.
pub const MAX_ENUMERATION: u128 = 1 << 24;
/// Largest intermediate table [`variable_elimination`] will build.
pub const MAX_TABLE: u128 = 1 << 24;

#[derive(Clone, Debug)]
pub struct ExactResult {
    /// Normalized marginal over `{i}` for every variable.
    pub marginals: Vec<FactorTable>,
    /// Natural log of the partition function.
    pub log_z: f64,
}

/// Rescales a factor to unit maximum, returning the table and ln(max).
fn rescale(f: &FactorTable) -> Result<(FactorTable, f64)> {
    let m = f.max_value();
    if m <= 0.0 {
        return Err(Error::degenerate("a factor is identically zero, Z = 0"));
    }
    Ok((f.map(|v| v / m), m.ln()))
}

/// Marginals by enumerating every joint state.
pub fn brute_force(g: &FactorGraph) -> Result<ExactResult> {
    let n = g.num_vars();
    let states: u128 = g.cards().iter().map(|&c| c as u128).product();
    if states > MAX_ENUMERATION {
        return Err(Error::capacity("joint state space", states, MAX_ENUMERATION));
    }
    let all: Vec<usize> = (0..n).collect();
    let mut log_scale = 0.0;
    let mut scaled = Vec::with_capacity(g.num_factors());
    for f in g.factors() {
        let (t, s) = rescale(f)?;
        log_scale += s;
        scaled.push(t);
    }
    let mut strides: Vec<Vec<usize>> = scaled
        .iter()
        .map(|t| aligned_strides(&all, t.vars(), t.cards()))
        .collect();
    // one unit-stride walker per variable reads back its current state
    for v in 0..n {
        let mut s = vec![0; n];
        s[v] = 1;
        strides.push(s);
    }
    let nf = scaled.len();
    let mut marg: Vec<Vec<f64>> = g.cards().iter().map(|&c| vec![0.0; c]).collect();
    let mut z = 0.0;
    for_each_aligned(g.cards(), &strides, |_, offs| {
        let mut p = 1.0;
        for (t, &o) in scaled.iter().zip(&offs[..nf]) {
            p *= t.values()[o];
        }
        if p != 0.0 {
            z += p;
            for (m, &s) in marg.iter_mut().zip(&offs[nf..]) {
                m[s] += p;
            }
        }
    });
    if !(z > 0.0) {
        return Err(Error::degenerate("partition function is zero"));
    }
    let marginals = marg
        .into_iter()
        .enumerate()
        .map(|(v, m)| FactorTable::from_parts(vec![v], vec![g.cardinality(v)], m.iter().map(|x| x / z).collect()))
        .collect();
    Ok(ExactResult {
        marginals,
        log_z: z.ln() + log_scale,
    })
}

/// Min-fill elimination order over every variable except `keep`, with ties
/// broken by the lowest id. Returns the order and the size of the largest
/// table formed while eliminating.
pub fn min_fill_order(g: &FactorGraph, keep: Option<usize>) -> (Vec<usize>, u128) {
    let n = g.num_vars();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for f in g.factors() {
        for &a in f.vars() {
            for &b in f.vars() {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    let mut alive: BTreeSet<usize> = (0..n).filter(|&v| Some(v) != keep).collect();
    let mut order = Vec::with_capacity(alive.len());
    let mut largest: u128 = 1;
    while !alive.is_empty() {
        let mut best = None;
        for &v in &alive {
            let nb: Vec<usize> = adj[v].iter().copied().collect();
            let mut fill = 0usize;
            for (k, &a) in nb.iter().enumerate() {
                for &b in &nb[k + 1..] {
                    if !adj[a].contains(&b) {
                        fill += 1;
                    }
                }
            }
            if best.is_none_or(|(f, _)| fill < f) {
                best = Some((fill, v));
            }
            if fill == 0 {
                break;
            }
        }
        let (_, v) = best.expect("alive is non-empty");
        let nb: Vec<usize> = adj[v].iter().copied().collect();
        let size: u128 = nb.iter().map(|&u| g.cardinality(u) as u128).product::<u128>() * g.cardinality(v) as u128;
        largest = largest.max(size);
        for (k, &a) in nb.iter().enumerate() {
            adj[a].remove(&v);
            for &b in &nb[k + 1..] {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        adj[v].clear();
        alive.remove(&v);
        order.push(v);
    }
    (order, largest)
}

/// Eliminates every variable except `keep`; returns the product of what is
/// left (over `{keep}` or a scalar) and the log of the scale factors pulled
/// out along the way.
fn eliminate(g: &FactorGraph, keep: Option<usize>) -> Result<(FactorTable, f64)> {
    let (order, largest) = min_fill_order(g, keep);
    if largest > MAX_TABLE {
        return Err(Error::capacity("variable elimination table", largest, MAX_TABLE));
    }
    let mut log_scale = 0.0;
    let mut pool: Vec<FactorTable> = Vec::with_capacity(g.num_factors());
    for f in g.factors() {
        let (t, s) = rescale(f)?;
        log_scale += s;
        pool.push(t);
    }
    for v in order {
        let (bucket, rest): (Vec<FactorTable>, Vec<FactorTable>) = pool.into_iter().partition(|t| t.contains(v));
        pool = rest;
        if bucket.is_empty() {
            // a variable in no factor contributes its number of states
            log_scale += (g.cardinality(v) as f64).ln();
            continue;
        }
        let (mut vars, mut cards) = (Vec::new(), Vec::new());
        for t in &bucket {
            (vars, cards) = union_scope(&vars, &cards, t.vars(), t.cards())?;
        }
        let refs: Vec<&FactorTable> = bucket.iter().collect();
        let keep_vars: Vec<usize> = vars.iter().copied().filter(|&u| u != v).collect();
        let summed = FactorTable::product_over(vars, cards, &refs)?.marginalize(&keep_vars);
        let (t, s) = rescale(&summed)?;
        log_scale += s;
        pool.push(t);
    }
    let mut result = match keep {
        Some(k) => FactorTable::constant(vec![k], vec![g.cardinality(k)], 1.0)?,
        None => FactorTable::scalar(1.0),
    };
    for t in &pool {
        result = result.multiply(t)?;
    }
    Ok((result, log_scale))
}

/// Normalized marginal of `target`.
pub fn variable_elimination(g: &FactorGraph, target: usize) -> Result<FactorTable> {
    g.check_var(target)?;
    let (t, _) = eliminate(g, Some(target))?;
    t.normalize()
        .map_err(|_| Error::degenerate("partition function is zero"))
}

/// ln Z by eliminating every variable.
pub fn log_partition(g: &FactorGraph) -> Result<f64> {
    let (t, s) = eliminate(g, None)?;
    let z = t.values()[0];
    if !(z > 0.0) {
        return Err(Error::degenerate("partition function is zero"));
    }
    Ok(z.ln() + s)
}

/// All marginals by one elimination per variable, plus ln Z.
pub fn exact_marginals(g: &FactorGraph) -> Result<ExactResult> {
    let log_z = log_partition(g)?;
    let marginals = (0..g.num_vars())
        .map(|v| variable_elimination(g, v))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExactResult { marginals, log_z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(vars: Vec<usize>, cards: Vec<usize>, vals: &[f64]) -> FactorTable {
        FactorTable::new(vars, cards, vals.to_vec()).unwrap()
    }

    fn random_pairwise(rng: &mut ChaCha8Rng, n: usize, edges: &[(usize, usize)]) -> FactorGraph {
        let mut fs = Vec::new();
        for v in 0..n {
            fs.push(table(vec![v], vec![2], &[rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)]));
        }
        for &(a, b) in edges {
            let vals: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..3.0)).collect();
            fs.push(table(vec![a, b], vec![2, 2], &vals));
        }
        FactorGraph::from_factors(fs).unwrap()
    }

    #[test]
    fn single_factor_marginal() {
        let g = FactorGraph::from_factors(vec![table(vec![0, 1], vec![2, 2], &[1.0, 2.0, 3.0, 4.0])]).unwrap();
        let r = brute_force(&g).unwrap();
        assert!((r.marginals[0].values()[0] - 0.4).abs() < 1e-15);
        assert!((r.marginals[0].values()[1] - 0.6).abs() < 1e-15);
        assert!((r.log_z - 10f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn isolated_uniform_variables() {
        let g = FactorGraph::new(vec![2, 3, 4], vec![]).unwrap();
        let r = brute_force(&g).unwrap();
        for (v, m) in r.marginals.iter().enumerate() {
            let c = g.cardinality(v) as f64;
            assert!(m.values().iter().all(|&p| (p - 1.0 / c).abs() < 1e-15));
        }
        assert!((r.log_z - 24f64.ln()).abs() < 1e-12);
        let m = variable_elimination(&g, 1).unwrap();
        assert!(m.values().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        assert!((log_partition(&g).unwrap() - 24f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn disconnected_components_match_per_component() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_pairwise(&mut rng, 6, &[(0, 1), (1, 2), (0, 2), (3, 4), (4, 5)]);
        let full = brute_force(&g).unwrap();
        let mut log_z = 0.0;
        for comp in g.connected_components() {
            let sub = g.induced(&comp).unwrap();
            let r = brute_force(&sub.graph).unwrap();
            log_z += r.log_z;
            for (k, &old) in sub.ids.iter().enumerate() {
                let a = r.marginals[k].values();
                let b = full.marginals[old].values();
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        assert!((log_z - full.log_z).abs() < 1e-10);
        assert!((log_partition(&g).unwrap() - full.log_z).abs() < 1e-10);
    }

    #[test]
    fn chain_and_tree_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let chain = random_pairwise(&mut rng, 3, &[(0, 1), (1, 2)]);
        let tree_edges: Vec<(usize, usize)> = (1..10).map(|v| (rng.random_range(0..v), v)).collect();
        let tree = random_pairwise(&mut rng, 10, &tree_edges);
        for g in [chain, tree] {
            let bf = brute_force(&g).unwrap();
            for v in 0..g.num_vars() {
                let ve = variable_elimination(&g, v).unwrap();
                assert!(ve.max_abs_diff(&bf.marginals[v]).unwrap() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_partition_function() {
        let g = FactorGraph::from_factors(vec![
            table(vec![0], vec![2], &[1.0, 0.0]),
            table(vec![0], vec![2], &[0.0, 1.0]),
        ])
        .unwrap();
        assert!(matches!(brute_force(&g), Err(Error::Degenerate(_))));
        assert!(matches!(variable_elimination(&g, 0), Err(Error::Degenerate(_))));
        assert!(matches!(log_partition(&g), Err(Error::Degenerate(_))));
    }

    #[test]
    fn capacity_guards() {
        let g = FactorGraph::new(vec![2; 25], vec![]).unwrap();
        assert!(matches!(brute_force(&g), Err(Error::Capacity { .. })));
        // a dense clique over 25 variables built from pair factors
        let mut clique = Vec::new();
        for a in 0..25 {
            for b in a + 1..25 {
                clique.push(FactorTable::constant(vec![a, b], vec![2, 2], 1.0).unwrap());
            }
        }
        let g = FactorGraph::from_factors(clique).unwrap();
        assert!(matches!(variable_elimination(&g, 0), Err(Error::Capacity { .. })));
    }

    #[test]
    fn min_fill_prefers_leaves_and_low_ids() {
        let g = FactorGraph::from_factors(vec![
            table(vec![0, 1], vec![2, 2], &[1.0; 4]),
            table(vec![1, 2], vec![2, 2], &[1.0; 4]),
            table(vec![2, 3], vec![2, 2], &[1.0; 4]),
        ])
        .unwrap();
        let (order, largest) = min_fill_order(&g, Some(2));
        assert_eq!(order, vec![0, 1, 3]);
        assert_eq!(largest, 4);
    }
}
