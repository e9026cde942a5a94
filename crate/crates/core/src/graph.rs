//! Factor graphs: variables, factors and the neighbourhood indices used by
//! every inference routine.

use std::collections::BTreeMap;

use petgraph::unionfind::UnionFind;

use crate::error::{Error, Result};
use crate::table::FactorTable;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Variable {
    pub id: usize,
    pub cardinality: usize,
}

/// Bipartite variable/factor structure. Variables are numbered `0..n`;
/// factors are addressed by their position in the factor list, so several
/// factors may share a scope.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorGraph {
    cards: Vec<usize>,
    factors: Vec<FactorTable>,
    nbv: Vec<Vec<usize>>,
    delta: Vec<Vec<usize>>,
    blanket: Vec<Vec<usize>>,
}

/// A graph derived from another one by removing variables, together with
/// the original id of each remaining variable.
#[derive(Clone, Debug)]
pub struct Subgraph {
    pub graph: FactorGraph,
    /// `ids[new] = old`
    pub ids: Vec<usize>,
}

impl Subgraph {
    /// New id of an original variable, if it survived.
    pub fn new_id(&self, old: usize) -> Option<usize> {
        self.ids.binary_search(&old).ok()
    }
}

impl FactorGraph {
    pub fn new(cards: Vec<usize>, factors: Vec<FactorTable>) -> Result<Self> {
        if let Some(pos) = cards.iter().position(|&c| c == 0) {
            return Err(Error::domain(format!("variable {pos} has cardinality 0")));
        }
        let n = cards.len();
        let mut nbv = vec![Vec::new(); n];
        for (fi, f) in factors.iter().enumerate() {
            for (&v, &c) in f.vars().iter().zip(f.cards()) {
                if v >= n {
                    return Err(Error::domain(format!("factor {fi} uses unknown variable {v}")));
                }
                if cards[v] != c {
                    return Err(Error::domain(format!(
                        "factor {fi} gives variable {v} cardinality {c}, expected {}",
                        cards[v]
                    )));
                }
                nbv[v].push(fi);
            }
        }
        let mut delta = Vec::with_capacity(n);
        let mut blanket = Vec::with_capacity(n);
        for (i, fs) in nbv.iter().enumerate() {
            let mut d: Vec<usize> = fs.iter().flat_map(|&fi| factors[fi].vars().iter().copied()).collect();
            d.push(i);
            d.sort_unstable();
            d.dedup();
            blanket.push(d.iter().copied().filter(|&v| v != i).collect());
            delta.push(d);
        }
        Ok(FactorGraph {
            cards,
            factors,
            nbv,
            delta,
            blanket,
        })
    }

    /// Infers the variable set from the factors: ids must cover `0..=max`.
    pub fn from_factors(factors: Vec<FactorTable>) -> Result<Self> {
        let mut cards: BTreeMap<usize, usize> = BTreeMap::new();
        for f in &factors {
            for (&v, &c) in f.vars().iter().zip(f.cards()) {
                if let Some(&prev) = cards.get(&v) {
                    if prev != c {
                        return Err(Error::domain(format!(
                            "variable {v} appears with cardinalities {prev} and {c}"
                        )));
                    }
                }
                cards.insert(v, c);
            }
        }
        let n = cards.keys().next_back().map_or(0, |&m| m + 1);
        if cards.len() != n {
            let missing = (0..n).find(|v| !cards.contains_key(v)).unwrap_or(0);
            return Err(Error::domain(format!(
                "variable ids are not contiguous: {missing} is not used by any factor"
            )));
        }
        FactorGraph::new(cards.into_values().collect(), factors)
    }

    pub fn num_vars(&self) -> usize {
        self.cards.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn variables(&self) -> impl Iterator<Item = Variable> + '_ {
        self.cards
            .iter()
            .enumerate()
            .map(|(id, &cardinality)| Variable { id, cardinality })
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn cardinality(&self, i: usize) -> usize {
        self.cards[i]
    }

    pub fn factors(&self) -> &[FactorTable] {
        &self.factors
    }

    pub fn factor(&self, fi: usize) -> &FactorTable {
        &self.factors[fi]
    }

    /// Factors containing variable `i` (N(i)), ascending.
    pub fn nbv(&self, i: usize) -> &[usize] {
        &self.nbv[i]
    }

    /// Variables of factor `fi`, ascending.
    pub fn nbf(&self, fi: usize) -> &[usize] {
        self.factors[fi].vars()
    }

    /// All variables sharing a factor with `i`, including `i` itself.
    pub fn delta(&self, i: usize) -> &[usize] {
        &self.delta[i]
    }

    /// Markov blanket of `i`: `delta(i)` without `i`.
    pub fn blanket(&self, i: usize) -> &[usize] {
        &self.blanket[i]
    }

    pub fn cards_of(&self, vars: &[usize]) -> Vec<usize> {
        vars.iter().map(|&v| self.cards[v]).collect()
    }

    pub(crate) fn check_var(&self, i: usize) -> Result<()> {
        if i >= self.num_vars() {
            return Err(Error::domain(format!(
                "unknown variable {i} (graph has {} variables)",
                self.num_vars()
            )));
        }
        Ok(())
    }

    /// Unnormalized joint value ∏ψ at a full assignment.
    pub fn joint_value(&self, states: &[usize]) -> f64 {
        let mut p = 1.0;
        let mut buf = Vec::new();
        for f in &self.factors {
            buf.clear();
            buf.extend(f.vars().iter().map(|&v| states[v]));
            p *= f.get(&buf);
        }
        p
    }

    /// Removes variables and factors. Factors for which `keep_factor` is
    /// false are dropped; variables in `evidence` are clamped (every kept
    /// factor is sliced) and removed; variables in `drop_vars` are removed
    /// and must not occur in any kept factor. Surviving variables are
    /// renumbered in order.
    pub fn reduce(
        &self,
        keep_factor: impl Fn(usize) -> bool,
        evidence: &[(usize, usize)],
        drop_vars: &[usize],
    ) -> Result<Subgraph> {
        let n = self.num_vars();
        let mut removed = vec![false; n];
        let mut clamp = vec![None; n];
        for &(v, s) in evidence {
            self.check_var(v)?;
            if s >= self.cards[v] {
                return Err(Error::domain(format!(
                    "state {s} of variable {v} out of range (cardinality {})",
                    self.cards[v]
                )));
            }
            removed[v] = true;
            clamp[v] = Some(s);
        }
        for &v in drop_vars {
            self.check_var(v)?;
            removed[v] = true;
        }
        let mut new_id = vec![usize::MAX; n];
        let mut ids = Vec::new();
        for v in 0..n {
            if !removed[v] {
                new_id[v] = ids.len();
                ids.push(v);
            }
        }
        let mut factors = Vec::new();
        for (fi, f) in self.factors.iter().enumerate() {
            if !keep_factor(fi) {
                continue;
            }
            let mut t = f.clone();
            for &v in f.vars() {
                if let Some(s) = clamp[v] {
                    t = t.slice(v, s)?;
                } else if removed[v] {
                    return Err(Error::domain(format!(
                        "variable {v} removed while factor {fi} still uses it"
                    )));
                }
            }
            let vars: Vec<usize> = t.vars().iter().map(|&v| new_id[v]).collect();
            let cards = t.cards().to_vec();
            let values = t.values().to_vec();
            factors.push(FactorTable::from_parts(vars, cards, values));
        }
        let cards = ids.iter().map(|&v| self.cards[v]).collect();
        Ok(Subgraph {
            graph: FactorGraph::new(cards, factors)?,
            ids,
        })
    }

    /// Slices every factor containing `i` at `x_i = s` and removes `i`.
    /// Variables above `i` shift down by one.
    pub fn clamp_variable(&self, i: usize, s: usize) -> Result<Subgraph> {
        self.reduce(|_| true, &[(i, s)], &[])
    }

    /// Clamps several variables at once.
    pub fn clamp(&self, evidence: &[(usize, usize)]) -> Result<Subgraph> {
        self.reduce(|_| true, evidence, &[])
    }

    /// Multiplies together factors that share exactly the same scope. The
    /// merged factor takes the position of the first one.
    pub fn merge_duplicate_scopes(&self) -> FactorGraph {
        let mut first: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut merged: Vec<FactorTable> = Vec::new();
        for f in &self.factors {
            match first.get(f.vars()) {
                Some(&pos) => {
                    merged[pos] = merged[pos].multiply(f).expect("same scope");
                }
                None => {
                    first.insert(f.vars().to_vec(), merged.len());
                    merged.push(f.clone());
                }
            }
        }
        FactorGraph::new(self.cards.clone(), merged).expect("merging keeps the graph valid")
    }

    /// Connected components as ascending variable lists, ordered by their
    /// smallest member.
    pub fn connected_components(&self) -> Vec<Vec<usize>> {
        let n = self.num_vars();
        let mut uf = UnionFind::<usize>::new(n);
        for f in &self.factors {
            if let Some((&a, rest)) = f.vars().split_first() {
                for &b in rest {
                    uf.union(a, b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        let mut root_min: BTreeMap<usize, usize> = BTreeMap::new();
        for v in 0..n {
            let r = uf.find(v);
            let key = *root_min.entry(r).or_insert(v);
            groups.entry(key).or_default().push(v);
        }
        groups.into_values().collect()
    }

    /// Keeps only the given variables (ascending) and the factors lying
    /// entirely inside them.
    pub fn induced(&self, vars: &[usize]) -> Result<Subgraph> {
        let mut inside = vec![false; self.num_vars()];
        for &v in vars {
            self.check_var(v)?;
            inside[v] = true;
        }
        let drop: Vec<usize> = (0..self.num_vars()).filter(|&v| !inside[v]).collect();
        self.reduce(|fi| self.factors[fi].vars().iter().all(|&v| inside[v]), &[], &drop)
    }

    /// Number of independent cycles of the bipartite factor graph
    /// (edges − nodes + components). Factors with an empty scope are ignored.
    pub fn cycle_rank(&self) -> usize {
        let n = self.num_vars();
        let mut uf = UnionFind::<usize>::new(n + self.factors.len());
        let mut edges = 0usize;
        let mut nodes = n;
        for (fi, f) in self.factors.iter().enumerate() {
            if f.is_scalar() {
                continue;
            }
            nodes += 1;
            for &v in f.vars() {
                edges += 1;
                uf.union(n + fi, v);
            }
        }
        let mut roots: Vec<usize> = (0..n).map(|v| uf.find(v)).collect();
        roots.sort_unstable();
        roots.dedup();
        edges + roots.len() - nodes
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::unlinear_index;

    fn pair(a: usize, b: usize, vals: [f64; 4]) -> FactorTable {
        FactorTable::new(vec![a, b], vec![2, 2], vals.to_vec()).unwrap()
    }

    #[test]
    fn neighbourhoods() {
        let g = FactorGraph::from_factors(vec![
            pair(0, 1, [1.0; 4]),
            pair(1, 2, [1.0; 4]),
            FactorTable::new(vec![1], vec![2], vec![1.0, 2.0]).unwrap(),
        ])
        .unwrap();
        assert_eq!(g.nbv(1), &[0, 1, 2]);
        assert_eq!(g.delta(1), &[0, 1, 2]);
        assert_eq!(g.blanket(1), &[0, 2]);
        assert_eq!(g.blanket(0), &[1]);
        for i in 0..g.num_vars() {
            for &fi in g.nbv(i) {
                assert!(g.nbf(fi).contains(&i));
            }
        }
        for fi in 0..g.num_factors() {
            for &i in g.nbf(fi) {
                assert!(g.nbv(i).contains(&fi));
            }
        }
    }

    #[test]
    fn rejects_gaps_and_card_conflicts() {
        let f = FactorTable::new(vec![0, 2], vec![2, 2], vec![1.0; 4]).unwrap();
        assert!(FactorGraph::from_factors(vec![f]).is_err());
        let a = FactorTable::new(vec![0], vec![2], vec![1.0; 2]).unwrap();
        let b = FactorTable::new(vec![0], vec![3], vec![1.0; 3]).unwrap();
        assert!(FactorGraph::from_factors(vec![a, b]).is_err());
    }

    #[test]
    fn clamp_slices_pair_factor() {
        let g = FactorGraph::from_factors(vec![pair(0, 1, [1.0, 2.0, 3.0, 4.0])]).unwrap();
        let sub = g.clamp_variable(0, 1).unwrap();
        assert_eq!(sub.ids, vec![1]);
        assert_eq!(sub.graph.num_vars(), 1);
        assert_eq!(sub.graph.factor(0).vars(), &[0]);
        assert_eq!(sub.graph.factor(0).values(), &[2.0, 4.0]);
    }

    #[test]
    fn clamp_isolated_variable_keeps_factors() {
        let g = FactorGraph::new(vec![2, 2, 3], vec![pair(0, 1, [1.0, 2.0, 3.0, 4.0])]).unwrap();
        let sub = g.clamp_variable(2, 1).unwrap();
        assert_eq!(sub.graph.num_vars(), 2);
        assert_eq!(sub.graph.factors(), g.factors());
        assert!(g.clamp_variable(5, 0).is_err());
        assert!(g.clamp_variable(2, 3).is_err());
    }

    #[test]
    fn clamp_everything_gives_joint_value() {
        let g = FactorGraph::from_factors(vec![
            pair(0, 1, [1.0, 2.0, 3.0, 4.0]),
            pair(1, 2, [0.5, 1.5, 2.5, 3.5]),
            FactorTable::new(vec![2], vec![2], vec![0.3, 0.7]).unwrap(),
        ])
        .unwrap();
        for idx in 0..8 {
            let st = unlinear_index(g.cards(), idx);
            let ev: Vec<(usize, usize)> = st.iter().copied().enumerate().collect();
            let sub = g.clamp(&ev).unwrap();
            assert_eq!(sub.graph.num_vars(), 0);
            let prod: f64 = sub.graph.factors().iter().map(|f| f.values()[0]).product();
            assert!((prod - g.joint_value(&st)).abs() < 1e-12);
        }
    }

    #[test]
    fn components_and_cycles() {
        let g = FactorGraph::from_factors(vec![
            pair(0, 1, [1.0; 4]),
            pair(1, 2, [1.0; 4]),
            pair(0, 2, [1.0; 4]),
            pair(3, 4, [1.0; 4]),
        ])
        .unwrap();
        assert_eq!(g.connected_components(), vec![vec![0, 1, 2], vec![3, 4]]);
        assert_eq!(g.cycle_rank(), 1);
        let tree = FactorGraph::from_factors(vec![pair(0, 1, [1.0; 4]), pair(1, 2, [1.0; 4])]).unwrap();
        assert_eq!(tree.cycle_rank(), 0);
        // two factors over the same pair form a loop of four nodes
        let dup = FactorGraph::from_factors(vec![pair(0, 1, [1.0; 4]), pair(0, 1, [2.0; 4])]).unwrap();
        assert_eq!(dup.cycle_rank(), 1);
        let merged = dup.merge_duplicate_scopes();
        assert_eq!(merged.num_factors(), 1);
        assert_eq!(merged.factor(0).values(), &[2.0; 4]);
    }
}
