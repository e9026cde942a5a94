//! Dense factor tables over ordered sets of discrete variables.
//!
//! A table stores one value per joint state of its variables. Variables are
//! kept in strictly ascending id order and the flat layout puts the
//! lowest-id variable on the fastest-changing index: the state
//! `(s_0, s_1, ..., s_{n-1})` lives at `s_0 + c_0 * (s_1 + c_1 * (...))`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Assignment of states to variable ids.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct JointState(BTreeMap<usize, usize>);

impl JointState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, var: usize, state: usize) {
        self.0.insert(var, state);
    }

    pub fn get(&self, var: usize) -> Option<usize> {
        self.0.get(&var).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.0.iter().map(|(&v, &s)| (v, s))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<(usize, usize)> for JointState {
    fn from_iter<T: IntoIterator<Item = (usize, usize)>>(iter: T) -> Self {
        JointState(iter.into_iter().collect())
    }
}

/// Flat offset of `state` in a table over `vars` with cardinalities `cards`.
pub fn linear_index(vars: &[usize], cards: &[usize], state: &JointState) -> Result<usize> {
    if vars.len() != cards.len() {
        return Err(Error::domain("vars and cards differ in length"));
    }
    let mut index = 0;
    let mut stride = 1;
    for (&v, &c) in vars.iter().zip(cards) {
        let s = state
            .get(v)
            .ok_or_else(|| Error::domain(format!("assignment does not cover variable {v}")))?;
        if s >= c {
            return Err(Error::domain(format!(
                "state {s} of variable {v} out of range (cardinality {c})"
            )));
        }
        index += s * stride;
        stride *= c;
    }
    Ok(index)
}

/// Inverse of [`linear_index`]: per-position states for a flat offset.
pub fn unlinear_index(cards: &[usize], mut index: usize) -> Vec<usize> {
    cards
        .iter()
        .map(|&c| {
            let s = index % c;
            index /= c;
            s
        })
        .collect()
}

pub(crate) fn num_states(cards: &[usize]) -> Option<usize> {
    cards.iter().try_fold(1usize, |acc, &c| acc.checked_mul(c))
}

/// Strides of a sub-table laid over the variable order of `scope`. Scope
/// variables missing from the sub-table get stride 0.
pub(crate) fn aligned_strides(scope: &[usize], sub_vars: &[usize], sub_cards: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; scope.len()];
    let mut stride = 1;
    let mut pos = 0;
    for (&v, &c) in sub_vars.iter().zip(sub_cards) {
        while pos < scope.len() && scope[pos] < v {
            pos += 1;
        }
        if pos < scope.len() && scope[pos] == v {
            strides[pos] = stride;
        }
        stride *= c;
    }
    strides
}

/// Walks every joint state of `cards` in layout order and hands `f` the flat
/// index together with the matching offset into each aligned sub-table.
pub(crate) fn for_each_aligned(
    cards: &[usize],
    strides: &[Vec<usize>],
    mut f: impl FnMut(usize, &[usize]),
) {
    let total: usize = cards.iter().product();
    let n = cards.len();
    let mut digits = vec![0usize; n];
    let mut offsets = vec![0usize; strides.len()];
    for idx in 0..total {
        f(idx, &offsets);
        let mut k = 0;
        while k < n {
            digits[k] += 1;
            for (off, st) in offsets.iter_mut().zip(strides) {
                *off += st[k];
            }
            if digits[k] < cards[k] {
                break;
            }
            for (off, st) in offsets.iter_mut().zip(strides) {
                *off -= st[k] * cards[k];
            }
            digits[k] = 0;
            k += 1;
        }
    }
}

/// Sorted union of two ascending scopes with cardinality agreement checks.
pub(crate) fn union_scope(
    a_vars: &[usize],
    a_cards: &[usize],
    b_vars: &[usize],
    b_cards: &[usize],
) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut vars = Vec::with_capacity(a_vars.len() + b_vars.len());
    let mut cards = Vec::with_capacity(vars.capacity());
    let (mut i, mut j) = (0, 0);
    while i < a_vars.len() || j < b_vars.len() {
        if j == b_vars.len() || (i < a_vars.len() && a_vars[i] < b_vars[j]) {
            vars.push(a_vars[i]);
            cards.push(a_cards[i]);
            i += 1;
        } else if i == a_vars.len() || b_vars[j] < a_vars[i] {
            vars.push(b_vars[j]);
            cards.push(b_cards[j]);
            j += 1;
        } else {
            if a_cards[i] != b_cards[j] {
                return Err(Error::domain(format!(
                    "variable {} has cardinality {} in one table and {} in another",
                    a_vars[i], a_cards[i], b_cards[j]
                )));
            }
            vars.push(a_vars[i]);
            cards.push(a_cards[i]);
            i += 1;
            j += 1;
        }
    }
    Ok((vars, cards))
}

/// Dense non-negative table over an ascending list of variables.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorTable {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl FactorTable {
    pub fn new(vars: Vec<usize>, cards: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if vars.len() != cards.len() {
            return Err(Error::domain("vars and cards differ in length"));
        }
        if vars.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain(format!("factor variables {vars:?} not strictly ascending")));
        }
        if let Some(&c) = cards.iter().find(|&&c| c == 0) {
            return Err(Error::domain(format!("cardinality {c} < 1")));
        }
        let n = num_states(&cards).ok_or_else(|| Error::domain("table size overflows"))?;
        if values.len() != n {
            return Err(Error::domain(format!(
                "table over cards {cards:?} needs {n} values, got {}",
                values.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::domain(format!("factor value {v} is not a finite non-negative number")));
        }
        Ok(FactorTable { vars, cards, values })
    }

    /// Builds a table without re-validating; callers guarantee the invariants.
    pub(crate) fn from_parts(vars: Vec<usize>, cards: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), cards.iter().product::<usize>());
        debug_assert!(vars.windows(2).all(|w| w[0] < w[1]));
        FactorTable { vars, cards, values }
    }

    pub fn scalar(value: f64) -> Self {
        FactorTable::from_parts(Vec::new(), Vec::new(), vec![value])
    }

    /// Table holding `value` at every state.
    pub fn constant(vars: Vec<usize>, cards: Vec<usize>, value: f64) -> Result<Self> {
        let n = num_states(&cards).ok_or_else(|| Error::domain("table size overflows"))?;
        FactorTable::new(vars, cards, vec![value; n])
    }

    /// Normalized uniform table.
    pub fn uniform(vars: Vec<usize>, cards: Vec<usize>) -> Result<Self> {
        let n = num_states(&cards).ok_or_else(|| Error::domain("table size overflows"))?;
        FactorTable::new(vars, cards, vec![1.0 / n as f64; n])
    }

    /// Builds a table by evaluating `f` on every joint state. `vars` may be in
    /// any order; `f` receives states in that same order. The stored table is
    /// re-laid out over the ascending variable order.
    pub fn from_fn(vars: &[usize], cards: &[usize], mut f: impl FnMut(&[usize]) -> f64) -> Result<Self> {
        if vars.len() != cards.len() {
            return Err(Error::domain("vars and cards differ in length"));
        }
        let mut order: Vec<usize> = (0..vars.len()).collect();
        order.sort_by_key(|&k| vars[k]);
        let sorted_vars: Vec<usize> = order.iter().map(|&k| vars[k]).collect();
        let sorted_cards: Vec<usize> = order.iter().map(|&k| cards[k]).collect();
        let n = num_states(&sorted_cards).ok_or_else(|| Error::domain("table size overflows"))?;
        let mut caller_states = vec![0usize; vars.len()];
        let mut values = Vec::with_capacity(n);
        for idx in 0..n {
            let states = unlinear_index(&sorted_cards, idx);
            for (pos, &k) in order.iter().enumerate() {
                caller_states[k] = states[pos];
            }
            values.push(f(&caller_states));
        }
        FactorTable::new(sorted_vars, sorted_cards, values)
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn cards(&self) -> &[usize] {
        &self.cards
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn contains(&self, var: usize) -> bool {
        self.vars.binary_search(&var).is_ok()
    }

    pub fn cardinality_of(&self, var: usize) -> Option<usize> {
        self.vars.binary_search(&var).ok().map(|p| self.cards[p])
    }

    /// Value at a state given positionally (one state per entry of `vars()`).
    pub fn get(&self, states: &[usize]) -> f64 {
        let mut idx = 0;
        let mut stride = 1;
        for (&s, &c) in states.iter().zip(&self.cards) {
            idx += s * stride;
            stride *= c;
        }
        self.values[idx]
    }

    pub fn value_at(&self, state: &JointState) -> Result<f64> {
        Ok(self.values[linear_index(&self.vars, &self.cards, state)?])
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Pointwise product over the union of both scopes.
    pub fn multiply(&self, other: &FactorTable) -> Result<FactorTable> {
        let (vars, cards) = union_scope(&self.vars, &self.cards, &other.vars, &other.cards)?;
        FactorTable::product_over(vars, cards, &[self, other])
    }

    /// Product of `tables` broadcast over the given scope. Every table's
    /// variables must lie inside the scope with matching cardinalities.
    pub fn product_over(vars: Vec<usize>, cards: Vec<usize>, tables: &[&FactorTable]) -> Result<FactorTable> {
        for t in tables {
            for (&v, &c) in t.vars.iter().zip(&t.cards) {
                match vars.binary_search(&v) {
                    Ok(p) if cards[p] == c => {}
                    Ok(p) => {
                        return Err(Error::domain(format!(
                            "variable {v} has cardinality {c} in a table but {} in the scope",
                            cards[p]
                        )))
                    }
                    Err(_) => return Err(Error::domain(format!("variable {v} outside product scope"))),
                }
            }
        }
        let n = num_states(&cards).ok_or_else(|| Error::domain("table size overflows"))?;
        let strides: Vec<Vec<usize>> = tables
            .iter()
            .map(|t| aligned_strides(&vars, &t.vars, &t.cards))
            .collect();
        let mut values = vec![0.0; n];
        for_each_aligned(&cards, &strides, |idx, offs| {
            let mut p = 1.0;
            for (t, &o) in tables.iter().zip(offs) {
                p *= t.values[o];
            }
            values[idx] = p;
        });
        Ok(FactorTable::from_parts(vars, cards, values))
    }

    /// Sums out every variable not in `keep`. Ids in `keep` that the table
    /// does not contain are ignored.
    pub fn marginalize(&self, keep: &[usize]) -> FactorTable {
        let mut out_vars = Vec::new();
        let mut out_cards = Vec::new();
        for (&v, &c) in self.vars.iter().zip(&self.cards) {
            if keep.contains(&v) {
                out_vars.push(v);
                out_cards.push(c);
            }
        }
        if out_vars.len() == self.vars.len() {
            return self.clone();
        }
        let strides = vec![aligned_strides(&self.vars, &out_vars, &out_cards)];
        let mut values = vec![0.0; out_cards.iter().product()];
        for_each_aligned(&self.cards, &strides, |idx, offs| {
            values[offs[0]] += self.values[idx];
        });
        FactorTable::from_parts(out_vars, out_cards, values)
    }

    pub fn normalize(&self) -> Result<FactorTable> {
        let z = self.sum();
        if !(z > 0.0 && z.is_finite()) {
            return Err(Error::degenerate(format!(
                "cannot normalize table over {:?} with total {z}",
                self.vars
            )));
        }
        Ok(self.map(|v| v / z))
    }

    /// Slice at `var = state`; the variable leaves the scope and values are
    /// not renormalized. Tables not containing `var` are returned unchanged.
    pub fn slice(&self, var: usize, state: usize) -> Result<FactorTable> {
        let Ok(pos) = self.vars.binary_search(&var) else {
            return Ok(self.clone());
        };
        if state >= self.cards[pos] {
            return Err(Error::domain(format!(
                "state {state} of variable {var} out of range (cardinality {})",
                self.cards[pos]
            )));
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        let inner: usize = self.cards[..pos].iter().product();
        let outer: usize = self.cards[pos + 1..].iter().product();
        let card = self.cards[pos];
        let mut values = Vec::with_capacity(inner * outer);
        for o in 0..outer {
            let base = (o * card + state) * inner;
            values.extend_from_slice(&self.values[base..base + inner]);
        }
        Ok(FactorTable::from_parts(vars, cards, values))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> FactorTable {
        FactorTable::from_parts(
            self.vars.clone(),
            self.cards.clone(),
            self.values.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Largest absolute entrywise difference; both tables must share a scope.
    pub fn max_abs_diff(&self, other: &FactorTable) -> Result<f64> {
        if self.vars != other.vars || self.cards != other.cards {
            return Err(Error::domain("tables have different scopes"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn js(pairs: &[(usize, usize)]) -> JointState {
        pairs.iter().copied().collect()
    }

    #[test]
    fn linear_index_examples() {
        assert_eq!(linear_index(&[0, 1], &[2, 2], &js(&[(0, 0), (1, 0)])).unwrap(), 0);
        assert_eq!(linear_index(&[0, 1], &[2, 3], &js(&[(0, 1), (1, 2)])).unwrap(), 5);
        // enumerate the 6 states of (x2, x5) with x2 fastest and locate (2, 1)
        let mut order = Vec::new();
        for s5 in 0..2 {
            for s2 in 0..3 {
                order.push((s2, s5));
            }
        }
        let pos = order.iter().position(|&p| p == (2, 1)).unwrap();
        assert_eq!(pos, 5);
        assert_eq!(linear_index(&[2, 5], &[3, 2], &js(&[(2, 2), (5, 1)])).unwrap(), pos);
    }

    #[test]
    fn linear_index_rejects_out_of_range() {
        assert!(matches!(
            linear_index(&[0], &[2], &js(&[(0, 2)])),
            Err(Error::Domain(_))
        ));
        assert!(linear_index(&[0, 1], &[2, 2], &js(&[(0, 0)])).is_err());
    }

    #[test]
    fn multiply_examples() {
        let a = FactorTable::new(vec![0], vec![2], vec![1.0, 2.0]).unwrap();
        let b = FactorTable::new(vec![0], vec![2], vec![3.0, 5.0]).unwrap();
        assert_eq!(a.multiply(&b).unwrap().values(), &[3.0, 10.0]);

        let c = FactorTable::scalar(7.0);
        assert_eq!(a.multiply(&c).unwrap().values(), &[7.0, 14.0]);

        let d = FactorTable::new(vec![1], vec![2], vec![3.0, 5.0]).unwrap();
        let ad = a.multiply(&d).unwrap();
        assert_eq!(ad.vars(), &[0, 1]);
        // brute force over the four joint states, x0 fastest
        let mut expect = Vec::new();
        for x1 in 0..2 {
            for x0 in 0..2 {
                expect.push(a.values()[x0] * d.values()[x1]);
            }
        }
        assert_eq!(ad.values(), expect.as_slice());
        assert_eq!(ad.values(), &[3.0, 6.0, 5.0, 10.0]);
    }

    #[test]
    fn multiply_rejects_card_mismatch() {
        let a = FactorTable::new(vec![0], vec![2], vec![1.0, 2.0]).unwrap();
        let b = FactorTable::new(vec![0], vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(a.multiply(&b), Err(Error::Domain(_))));
    }

    #[test]
    fn marginalize_examples() {
        let t = FactorTable::new(vec![0, 1], vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.marginalize(&[0]).values(), &[4.0, 6.0]);
        assert_eq!(t.marginalize(&[1]).values(), &[3.0, 7.0]);
        assert_eq!(t.marginalize(&[0, 1]), t);
        let s = t.marginalize(&[]);
        assert!(s.is_scalar());
        assert_eq!(s.values(), &[10.0]);
    }

    #[test]
    fn normalize_examples() {
        let t = FactorTable::new(vec![0], vec![2], vec![2.0, 2.0]).unwrap();
        assert_eq!(t.normalize().unwrap().values(), &[0.5, 0.5]);
        let t = FactorTable::new(vec![0], vec![2], vec![0.0, 4.0]).unwrap();
        assert_eq!(t.normalize().unwrap().values(), &[0.0, 1.0]);
        let t = FactorTable::new(vec![0, 1], vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let n = t.normalize().unwrap();
        for (a, b) in n.values().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-15);
        }
        let z = FactorTable::new(vec![0], vec![2], vec![0.0, 0.0]).unwrap();
        assert!(matches!(z.normalize(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn slice_example() {
        let t = FactorTable::new(vec![0, 1], vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        // [a,b,c,d] clamp x0 = 1 -> [b,d]
        assert_eq!(t.slice(0, 1).unwrap().values(), &[2.0, 4.0]);
        assert_eq!(t.slice(1, 0).unwrap().values(), &[1.0, 2.0]);
        assert!(t.slice(0, 2).is_err());
    }

    #[test]
    fn from_fn_reorders_scope() {
        let t = FactorTable::from_fn(&[3, 1], &[2, 3], |s| (s[0] * 10 + s[1]) as f64).unwrap();
        assert_eq!(t.vars(), &[1, 3]);
        assert_eq!(t.get(&[2, 1]), 12.0);
        assert_eq!(t.get(&[0, 1]), 10.0);
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(FactorTable::new(vec![1, 0], vec![2, 2], vec![1.0; 4]).is_err());
        assert!(FactorTable::new(vec![0], vec![2], vec![1.0; 3]).is_err());
        assert!(FactorTable::new(vec![0], vec![2], vec![1.0, -1.0]).is_err());
        assert!(FactorTable::new(vec![0], vec![0], vec![]).is_err());
    }

    fn arb_table() -> impl Strategy<Value = FactorTable> {
        prop::collection::btree_map(0usize..8, 1usize..4, 0..5).prop_flat_map(|m| {
            let vars: Vec<usize> = m.keys().copied().collect();
            let cards: Vec<usize> = m.values().copied().collect();
            let n: usize = cards.iter().product();
            prop::collection::vec(0.0f64..10.0, n)
                .prop_map(move |vals| FactorTable::new(vars.clone(), cards.clone(), vals).unwrap())
        })
    }

    proptest! {
        #[test]
        fn index_round_trip(cards in prop::collection::vec(1usize..5, 0..6), seed in any::<u64>()) {
            let vars: Vec<usize> = (0..cards.len()).map(|k| 2 * k + 1).collect();
            let total: usize = cards.iter().product();
            let idx = (seed as usize) % total;
            let states = unlinear_index(&cards, idx);
            let js: JointState = vars.iter().copied().zip(states.iter().copied()).collect();
            prop_assert_eq!(linear_index(&vars, &cards, &js).unwrap(), idx);
        }

        #[test]
        fn marginalization_commutes(t in arb_table(), mask1 in any::<u8>(), mask2 in any::<u8>()) {
            let k12: Vec<usize> = t.vars().iter().copied().filter(|v| (mask1 | mask2) >> v & 1 == 1).collect();
            let k1: Vec<usize> = t.vars().iter().copied().filter(|v| mask1 >> v & 1 == 1).collect();
            let two_step = t.marginalize(&k12).marginalize(&k1);
            let direct = t.marginalize(&k1);
            let scale = t.sum().max(1.0);
            prop_assert!(two_step.max_abs_diff(&direct).unwrap() <= 1e-12 * scale);
            prop_assert!((t.marginalize(&[]).sum() - t.sum()).abs() <= 1e-12 * scale);
        }

        #[test]
        fn product_sum_two_ways(a in arb_table(), b in arb_table()) {
            // cardinality conflicts are legitimate errors; only compare consistent pairs
            if let Ok(p) = a.multiply(&b) {
                let total = p.marginalize(&[]).values()[0];
                // independent route: explicit enumeration over the union scope
                let mut direct = 0.0;
                for idx in 0..p.len() {
                    let st = unlinear_index(p.cards(), idx);
                    let js: JointState = p.vars().iter().copied().zip(st).collect();
                    direct += a.value_at(&js).unwrap() * b.value_at(&js).unwrap();
                }
                prop_assert!((total - direct).abs() <= 1e-12 * direct.abs().max(1e-300));
            }
        }
    }
}
