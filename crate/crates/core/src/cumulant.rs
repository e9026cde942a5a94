//! Cumulant-based loop corrections for binary pairwise models.
//!
//! Spins use the encoding state 0 ↦ −1, state 1 ↦ +1. For each variable
//! `i` the cavity distribution on ∂i is summarized by its singleton
//! moments M⁽ⁱ⁾_j and pair cumulants C⁽ⁱ⁾_jk; higher cumulants are dropped,
//! so every moment M⁽ⁱ⁾_A is a sum over partitions of A into blocks of size
//! one and two. The singleton moments are then solved from consistency
//! equations between neighbouring cavities, either in full or linearized
//! to first order in the pair cumulants.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::bp::ConvergenceReport;
use crate::cavity::CavitySet;
use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::io::{format_value, Tokens};
use crate::table::FactorTable;

/// Largest set over which subset sums are enumerated.
pub const DEFAULT_SUBSET_GUARD: usize = 20;

/// Ising model `P(x) ∝ exp(Σ θ_i x_i + Σ_{i<j} J_ij x_i x_j)`, x ∈ {−1, +1}.
#[derive(Clone, Debug, PartialEq)]
pub struct PairwiseBinaryModel {
    theta: Vec<f64>,
    couplings: BTreeMap<(usize, usize), f64>,
    adj: Vec<Vec<usize>>,
}

impl PairwiseBinaryModel {
    pub fn new(n: usize) -> Self {
        PairwiseBinaryModel {
            theta: vec![0.0; n],
            couplings: BTreeMap::new(),
            adj: vec![Vec::new(); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self, i: usize) -> f64 {
        self.theta[i]
    }

    pub fn thetas(&self) -> &[f64] {
        &self.theta
    }

    pub fn set_theta(&mut self, i: usize, value: f64) -> Result<()> {
        self.check(i)?;
        if !value.is_finite() {
            return Err(Error::domain(format!("field of spin {i} is not finite")));
        }
        self.theta[i] = value;
        Ok(())
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.num_vars() {
            return Err(Error::domain(format!("spin {i} out of range (N = {})", self.num_vars())));
        }
        Ok(())
    }

    /// Sets J_ij = J_ji. An edge with zero coupling is still an edge.
    pub fn set_coupling(&mut self, i: usize, j: usize, value: f64) -> Result<()> {
        self.check(i)?;
        self.check(j)?;
        if i == j {
            return Err(Error::domain(format!("self-coupling on spin {i}")));
        }
        if !value.is_finite() {
            return Err(Error::domain(format!("coupling ({i}, {j}) is not finite")));
        }
        let key = (i.min(j), i.max(j));
        if self.couplings.insert(key, value).is_none() {
            for (a, b) in [(i, j), (j, i)] {
                let pos = self.adj[a].binary_search(&b).unwrap_err();
                self.adj[a].insert(pos, b);
            }
        }
        Ok(())
    }

    pub fn coupling(&self, i: usize, j: usize) -> Option<f64> {
        self.couplings.get(&(i.min(j), i.max(j))).copied()
    }

    /// Edges `(i, j, J_ij)` with `i < j`, ascending.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.couplings.iter().map(|(&(i, j), &v)| (i, j, v))
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adj[i]
    }

    /// Unary factor `[e^{−θ}, e^{θ}]` for every spin, then one factor
    /// `[e^J, e^{−J}, e^{−J}, e^J]` per edge in ascending order.
    pub fn to_factor_graph(&self) -> FactorGraph {
        let mut fs = Vec::with_capacity(self.num_vars() + self.couplings.len());
        for (i, &h) in self.theta.iter().enumerate() {
            fs.push(FactorTable::from_parts(vec![i], vec![2], vec![(-h).exp(), h.exp()]));
        }
        for (i, j, v) in self.edges() {
            let (p, m) = (v.exp(), (-v).exp());
            fs.push(FactorTable::from_parts(vec![i, j], vec![2, 2], vec![p, m, m, p]));
        }
        FactorGraph::new(vec![2; self.num_vars()], fs).expect("pairwise model yields a valid graph")
    }

    /// Reads fields and couplings off a graph of binary variables with
    /// strictly positive factors on at most two variables.
    pub fn from_factor_graph(g: &FactorGraph) -> Result<Self> {
        let mut m = PairwiseBinaryModel::new(g.num_vars());
        if let Some(i) = (0..g.num_vars()).find(|&i| g.cardinality(i) != 2) {
            return Err(Error::domain(format!("variable {i} is not binary")));
        }
        let mut theta = vec![0.0; g.num_vars()];
        let mut couplings: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (fi, f) in g.factors().iter().enumerate() {
            if f.values().iter().any(|&v| v <= 0.0) {
                return Err(Error::domain(format!("factor {fi} has a zero entry")));
            }
            let l: Vec<f64> = f.values().iter().map(|v| v.ln()).collect();
            match f.vars() {
                [] => {}
                &[i] => theta[i] += (l[1] - l[0]) / 2.0,
                &[i, j] => {
                    // layout: (−,−), (+,−), (−,+), (+,+) with i fastest
                    theta[i] += (l[1] + l[3] - l[0] - l[2]) / 4.0;
                    theta[j] += (l[2] + l[3] - l[0] - l[1]) / 4.0;
                    *couplings.entry((i, j)).or_insert(0.0) += (l[0] + l[3] - l[1] - l[2]) / 4.0;
                }
                vars => {
                    return Err(Error::domain(format!("factor {fi} has {} variables", vars.len())));
                }
            }
        }
        for (i, h) in theta.into_iter().enumerate() {
            m.set_theta(i, h)?;
        }
        for ((i, j), v) in couplings {
            m.set_coupling(i, j, v)?;
        }
        Ok(m)
    }

    /// Text form: `N n`, then `theta i v` per spin and `J i j v` per edge.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "N {}", self.num_vars());
        for (i, &h) in self.theta.iter().enumerate() {
            let _ = writeln!(out, "theta {i} {}", format_value(h));
        }
        for (i, j, v) in self.edges() {
            let _ = writeln!(out, "J {i} {j} {}", format_value(v));
        }
        out
    }

    /// Parses the text form. The `N` line is optional; field lines may be
    /// tagged `theta`, `θ` or `h`. Unlisted fields are zero.
    pub fn parse(text: &str) -> Result<Self> {
        let mut tok = Tokens::new(text);
        let mut n: Option<usize> = None;
        let mut fields = Vec::new();
        let mut edges = Vec::new();
        while !tok.is_done() {
            let (line, tag) = tok.next_str("record tag")?;
            match tag {
                "N" => {
                    if n.is_some() {
                        return Err(Error::Parse { line, msg: "N given twice".into() });
                    }
                    n = Some(tok.next("spin count")?);
                }
                "theta" | "θ" | "h" => fields.push((line, tok.next::<usize>("spin index")?, tok.next::<f64>("field value")?)),
                "J" => edges.push((
                    line,
                    tok.next::<usize>("spin index")?,
                    tok.next::<usize>("spin index")?,
                    tok.next::<f64>("coupling value")?,
                )),
                other => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("unknown record {other:?}"),
                    })
                }
            }
        }
        let inferred = fields
            .iter()
            .map(|f| f.1 + 1)
            .chain(edges.iter().map(|e| e.1.max(e.2) + 1))
            .max()
            .unwrap_or(0);
        let n = n.unwrap_or(inferred);
        let mut m = PairwiseBinaryModel::new(n);
        let wrap = |line: usize| move |e: Error| Error::Parse { line, msg: e.to_string() };
        for (line, i, v) in fields {
            m.set_theta(i, v).map_err(wrap(line))?;
        }
        for (line, i, j, v) in edges {
            if m.coupling(i, j).is_some() {
                return Err(Error::Parse {
                    line,
                    msg: format!("coupling ({i}, {j}) given twice"),
                });
            }
            m.set_coupling(i, j, v).map_err(wrap(line))?;
        }
        Ok(m)
    }
}

/// Moments E[∏_{k∈A} x_k] of a table over binary variables for every
/// subset A of its scope, indexed by bitmask over scope positions.
pub fn moments_from_cavity_table(z: &FactorTable) -> Result<Vec<f64>> {
    if let Some(pos) = z.cards().iter().position(|&c| c != 2) {
        return Err(Error::domain(format!("variable {} is not binary", z.vars()[pos])));
    }
    let total = z.sum();
    if !(total > 0.0) {
        return Err(Error::degenerate("cavity table sums to zero"));
    }
    let mut v: Vec<f64> = z.values().iter().map(|x| x / total).collect();
    let n = z.vars().len();
    for k in 0..n {
        let bit = 1 << k;
        for idx in 0..v.len() {
            if idx & bit == 0 {
                let (a, b) = (v[idx], v[idx | bit]);
                v[idx] = a + b;
                v[idx | bit] = b - a;
            }
        }
    }
    Ok(v)
}

/// Inverts `M_A = Σ_{partitions} ∏ C_E` over all subsets (bitmask indexed),
/// using `C_A = M_A − Σ_{B ∋ min A, B ⊊ A} C_B M_{A∖B}`.
pub fn cumulants_from_moments(moments: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; moments.len()];
    for a in 1..moments.len() {
        let low = a & a.wrapping_neg();
        let rest = a ^ low;
        let mut acc = moments[a];
        // proper subsets B of A containing the lowest element
        let mut sub = rest;
        loop {
            let b = sub | low;
            if b != a {
                acc -= c[b] * moments[a ^ b];
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
        c[a] = acc;
    }
    c
}

/// Moment of the positions `a` when only singleton and pair cumulants are
/// kept: `M_A = C_a M_{A∖a} + Σ_{b ∈ A∖a} C_ab M_{A∖{a,b}}`, a = min A.
pub fn part2_moment(a: &[usize], singles: &[f64], pairs: &[Vec<f64>]) -> f64 {
    let mut sorted = a.to_vec();
    sorted.sort_unstable();
    part2_rec(&sorted, singles, pairs)
}

fn part2_rec(a: &[usize], m: &[f64], c: &[Vec<f64>]) -> f64 {
    let Some((&first, rest)) = a.split_first() else {
        return 1.0;
    };
    let mut total = m[first] * part2_rec(rest, m, c);
    for (idx, &b) in rest.iter().enumerate() {
        let cab = c[first][b];
        if cab != 0.0 {
            let mut without: Vec<usize> = rest.to_vec();
            without.remove(idx);
            total += cab * part2_rec(&without, m, c);
        }
    }
    total
}

/// Part₂ moments of every subset of `set` (positions), indexed by bitmask
/// over `set`.
fn part2_all(set: &[usize], m: &[f64], c: &[Vec<f64>]) -> Vec<f64> {
    let n = set.len();
    let mut out = vec![0.0; 1 << n];
    out[0] = 1.0;
    for mask in 1usize..(1 << n) {
        let a = mask.trailing_zeros() as usize;
        let rest = mask & (mask - 1);
        let mut v = m[set[a]] * out[rest];
        let mut r = rest;
        while r != 0 {
            let b = r.trailing_zeros() as usize;
            r &= r - 1;
            let cab = c[set[a]][set[b]];
            if cab != 0.0 {
                v += cab * out[rest & !(1 << b)];
            }
        }
        out[mask] = v;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parity {
    Even,
    Odd,
}

/// Per-variable cavity statistics: singleton moments M⁽ⁱ⁾_j, pair
/// cumulants C⁽ⁱ⁾_jk and t_ij = tanh J_ij, all indexed by position in ∂i.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantState {
    pub blankets: Vec<Vec<usize>>,
    pub m: Vec<Vec<f64>>,
    pub c: Vec<Vec<Vec<f64>>>,
    pub t: Vec<Vec<f64>>,
}

impl CumulantState {
    /// Zero magnetizations and zero pair cumulants.
    pub fn zero(model: &PairwiseBinaryModel) -> Self {
        let blankets: Vec<Vec<usize>> = (0..model.num_vars()).map(|i| model.neighbors(i).to_vec()).collect();
        let t = blankets
            .iter()
            .enumerate()
            .map(|(i, b)| b.iter().map(|&j| model.coupling(i, j).expect("neighbour").tanh()).collect())
            .collect();
        CumulantState {
            m: blankets.iter().map(|b| vec![0.0; b.len()]).collect(),
            c: blankets.iter().map(|b| vec![vec![0.0; b.len()]; b.len()]).collect(),
            blankets,
            t,
        }
    }

    /// Singleton moments and pair cumulants of the given cavity tables,
    /// whose scopes must be the neighbourhoods of the model.
    pub fn from_cavities(model: &PairwiseBinaryModel, cav: &CavitySet) -> Result<Self> {
        let mut st = CumulantState::zero(model);
        if cav.tables.len() != model.num_vars() {
            return Err(Error::domain("cavity set does not match the model"));
        }
        for (i, z) in cav.tables.iter().enumerate() {
            if z.vars() != st.blankets[i].as_slice() {
                return Err(Error::domain(format!("cavity table of spin {i} is not over its neighbours")));
            }
            let mom = moments_from_cavity_table(z)?;
            let n = st.blankets[i].len();
            for a in 0..n {
                st.m[i][a] = mom[1 << a];
            }
            for a in 0..n {
                for b in 0..n {
                    if a != b {
                        st.c[i][a][b] = mom[(1 << a) | (1 << b)] - mom[1 << a] * mom[1 << b];
                    }
                }
            }
        }
        Ok(st)
    }

    fn pos(&self, i: usize, j: usize) -> usize {
        self.blankets[i].binary_search(&j).expect("neighbour")
    }

    pub fn cavity_magnetization(&self, i: usize, j: usize) -> f64 {
        self.m[i][self.pos(i, j)]
    }

    pub fn pair_cumulant(&self, i: usize, j: usize, k: usize) -> f64 {
        self.c[i][self.pos(i, j)][self.pos(i, k)]
    }

    /// t_{iA} for positions A in ∂i.
    pub fn t_product(&self, i: usize, a: &[usize]) -> f64 {
        a.iter().map(|&k| self.t[i][k]).product()
    }

    /// Σ_{A ⊆ S, |A| of the given parity} t_{iA} M⁽ⁱ⁾_{A∪B}, with S and B
    /// given as positions in ∂i and moments from the Part₂ expansion.
    pub fn parity_weighted_sum(&self, i: usize, s: &[usize], parity: Parity, attach: &[usize]) -> Result<f64> {
        if s.len() > DEFAULT_SUBSET_GUARD {
            return Err(Error::capacity("subset sum", 1u128 << s.len().min(127), 1u128 << DEFAULT_SUBSET_GUARD));
        }
        let mut total = 0.0;
        for mask in 0usize..(1 << s.len()) {
            let odd = mask.count_ones() % 2 == 1;
            if odd != (parity == Parity::Odd) {
                continue;
            }
            let mut a: Vec<usize> = (0..s.len()).filter(|&k| mask >> k & 1 == 1).map(|k| s[k]).collect();
            let t = self.t_product(i, &a);
            a.extend_from_slice(attach);
            total += t * part2_moment(&a, &self.m[i], &self.c[i]);
        }
        Ok(total)
    }

    /// (Σ_+, Σ_−) over subsets of the positions `s` with nothing attached.
    fn even_odd(&self, i: usize, s: &[usize]) -> Result<(f64, f64)> {
        if s.len() > DEFAULT_SUBSET_GUARD {
            return Err(Error::capacity(
                format!("neighbourhood subsets of spin {i}"),
                1u128 << s.len().min(127),
                1u128 << DEFAULT_SUBSET_GUARD,
            ));
        }
        let moments = part2_all(s, &self.m[i], &self.c[i]);
        let (mut even, mut odd) = (0.0, 0.0);
        let mut tprod = vec![1.0; moments.len()];
        for mask in 0..moments.len() {
            if mask > 0 {
                let low = mask.trailing_zeros() as usize;
                tprod[mask] = tprod[mask & (mask - 1)] * self.t[i][s[low]];
            }
            if mask.count_ones() % 2 == 0 {
                even += tprod[mask] * moments[mask];
            } else {
                odd += tprod[mask] * moments[mask];
            }
        }
        Ok((even, odd))
    }

    /// `[tanh θ Σ_+ + Σ_−] / [Σ_+ + tanh θ Σ_−]` over the positions `s`.
    fn ratio(&self, i: usize, th: f64, s: &[usize], what: impl FnOnce() -> String) -> Result<f64> {
        let (e, o) = self.even_odd(i, s)?;
        let den = e + th * o;
        let v = (th * e + o) / den;
        if den == 0.0 || !v.is_finite() {
            return Err(Error::degenerate(format!("vanishing denominator in {}", what())));
        }
        Ok(v)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CumOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the old value in `λ·old + (1 − λ)·update`.
    pub damping: f64,
}

impl Default for CumOptions {
    fn default() -> Self {
        CumOptions {
            tol: 1e-9,
            max_iter: 10_000,
            damping: 0.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CumulantResult {
    pub magnetizations: Vec<f64>,
    pub state: CumulantState,
    pub report: ConvergenceReport,
}

impl CumulantResult {
    /// Marginals as binary tables `[P(−1), P(+1)]`.
    pub fn marginals(&self) -> Vec<FactorTable> {
        self.magnetizations
            .iter()
            .enumerate()
            .map(|(i, &m)| FactorTable::from_parts(vec![i], vec![2], vec![(1.0 - m) / 2.0, (1.0 + m) / 2.0]))
            .collect()
    }
}

fn check_state(model: &PairwiseBinaryModel, st: &CumulantState) -> Result<()> {
    if st.blankets.len() != model.num_vars() || (0..model.num_vars()).any(|i| st.blankets[i] != model.neighbors(i)) {
        return Err(Error::domain("cumulant state does not match the model"));
    }
    Ok(())
}

fn positions_without(n: usize, skip: &[usize]) -> Vec<usize> {
    (0..n).filter(|k| !skip.contains(k)).collect()
}

/// Expectation of x_j with ψ_ij removed, from the cavity moments of j.
fn k_term(model: &PairwiseBinaryModel, st: &CumulantState, j: usize, i: usize) -> Result<f64> {
    let pi = st.pos(j, i);
    let s = positions_without(st.blankets[j].len(), &[pi]);
    st.ratio(j, model.theta(j).tanh(), &s, || format!("cavity of spin {j} without {i}"))
}

/// Σ_k t_ik C⁽ⁱ⁾_jk [tanh θ_i Σ_+ + Σ_−](∂i∖{j,k}) / [Σ_+ + tanh θ_i Σ_−](∂i∖j).
fn correction_term(model: &PairwiseBinaryModel, st: &CumulantState, i: usize, j: usize) -> Result<f64> {
    let pj = st.pos(i, j);
    let n = st.blankets[i].len();
    let th = model.theta(i).tanh();
    let mut total = 0.0;
    let mut den: Option<f64> = None;
    for pk in 0..n {
        if pk == pj || st.c[i][pj][pk] == 0.0 || st.t[i][pk] == 0.0 {
            continue;
        }
        let d = match den {
            Some(d) => d,
            None => {
                let (e, o) = st.even_odd(i, &positions_without(n, &[pj]))?;
                let d = e + th * o;
                if d == 0.0 || !d.is_finite() {
                    return Err(Error::degenerate(format!("vanishing denominator for pair ({i}, {j})")));
                }
                den = Some(d);
                d
            }
        };
        let (e, o) = st.even_odd(i, &positions_without(n, &[pj, pk]))?;
        total += st.t[i][pk] * st.c[i][pj][pk] * (th * e + o) / d;
    }
    Ok(total)
}

/// `B_ij − K_ji` maximized over ordered pairs: how far a state is from
/// satisfying the full consistency equations.
pub fn consistency_residual(model: &PairwiseBinaryModel, st: &CumulantState) -> Result<f64> {
    check_state(model, st)?;
    let mut worst: f64 = 0.0;
    for i in 0..model.num_vars() {
        for (pj, &j) in st.blankets[i].iter().enumerate() {
            let b = st.m[i][pj] + correction_term(model, st, i, j)?;
            worst = worst.max((b - k_term(model, st, j, i)?).abs());
        }
    }
    Ok(worst)
}

fn validate(opts: &CumOptions) -> Result<()> {
    if !(opts.tol > 0.0) {
        return Err(Error::domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if !(0.0..1.0).contains(&opts.damping) {
        return Err(Error::domain(format!("damping must lie in [0, 1), got {}", opts.damping)));
    }
    Ok(())
}

fn iterate(
    model: &PairwiseBinaryModel,
    mut st: CumulantState,
    opts: &CumOptions,
    update: impl Fn(&CumulantState, usize, usize) -> Result<f64>,
) -> Result<(CumulantState, ConvergenceReport)> {
    validate(opts)?;
    check_state(model, &st)?;
    let mut report = ConvergenceReport {
        converged: false,
        iterations: 0,
        final_delta: f64::INFINITY,
    };
    while report.iterations < opts.max_iter {
        let mut delta: f64 = 0.0;
        for i in 0..model.num_vars() {
            for pj in 0..st.blankets[i].len() {
                let j = st.blankets[i][pj];
                let raw = update(&st, i, j)?;
                if !raw.is_finite() {
                    return Err(Error::degenerate(format!("update of M({i})_{j} is not finite")));
                }
                let old = st.m[i][pj];
                let new = (opts.damping * old + (1.0 - opts.damping) * raw).clamp(-1.0, 1.0);
                delta = delta.max((new - old).abs());
                st.m[i][pj] = new;
            }
        }
        report.iterations += 1;
        report.final_delta = delta;
        if delta < opts.tol {
            report.converged = true;
            break;
        }
    }
    Ok((st, report))
}

/// Solves the full consistency equations for the cavity magnetizations,
/// starting from `init`, then evaluates every M_i over its whole
/// neighbourhood.
pub fn run_lcbp_cum(model: &PairwiseBinaryModel, init: &CumulantState, opts: &CumOptions) -> Result<CumulantResult> {
    let (state, report) = iterate(model, init.clone(), opts, |st, i, j| {
        Ok(k_term(model, st, j, i)? - correction_term(model, st, i, j)?)
    })?;
    let magnetizations = (0..model.num_vars())
        .map(|i| {
            let all: Vec<usize> = (0..state.blankets[i].len()).collect();
            state.ratio(i, model.theta(i).tanh(), &all, || format!("magnetization of spin {i}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CumulantResult {
        magnetizations,
        state,
        report,
    })
}

/// T⁽ⁱ⁾_A = tanh(θ_i + Σ_{k ∈ ∂i∖A} atanh(t_ik M⁽ⁱ⁾_k)), A given as positions.
pub fn t_field(model: &PairwiseBinaryModel, st: &CumulantState, i: usize, excluded: &[usize]) -> f64 {
    let mut h = model.theta(i);
    for k in 0..st.blankets[i].len() {
        if !excluded.contains(&k) {
            h += (st.t[i][k] * st.m[i][k]).atanh();
        }
    }
    h.tanh()
}

/// Γ coefficient of the pair (l1, l2) at spin j with positions `excluded`
/// already left out of T.
fn gamma(model: &PairwiseBinaryModel, st: &CumulantState, j: usize, excluded: &[usize], l1: usize, l2: usize) -> f64 {
    let mut wider = excluded.to_vec();
    wider.extend([l1, l2]);
    let t_wide = t_field(model, st, j, &wider);
    let t_base = t_field(model, st, j, excluded);
    let a1 = st.t[j][l1] * st.m[j][l1];
    let a2 = st.t[j][l2] * st.m[j][l2];
    (t_wide - t_base) / (1.0 + a1 * a2 + a1 * t_wide + a2 * t_wide)
}

fn lin_update(model: &PairwiseBinaryModel, st: &CumulantState, i: usize, j: usize) -> f64 {
    let pi = st.pos(j, i);
    let pj = st.pos(i, j);
    let mut v = t_field(model, st, j, &[pi]);
    for pl in 0..st.blankets[i].len() {
        let c = st.c[i][pj][pl];
        if pl == pj || c == 0.0 {
            continue;
        }
        let t_jl = t_field(model, st, i, &[pj, pl]);
        let omega = t_jl / (1.0 + st.t[i][pl] * st.m[i][pl] * t_jl);
        v -= omega * st.t[i][pl] * c;
    }
    let n = st.blankets[j].len();
    for l1 in 0..n {
        for l2 in l1 + 1..n {
            let c = st.c[j][l1][l2];
            if l1 == pi || l2 == pi || c == 0.0 {
                continue;
            }
            v += gamma(model, st, j, &[pi], l1, l2) * st.t[j][l1] * st.t[j][l2] * c;
        }
    }
    v
}

/// The consistency equations linearized in the pair cumulants, and the
/// matching first-order final magnetizations.
pub fn run_lcbp_cum_lin(model: &PairwiseBinaryModel, init: &CumulantState, opts: &CumOptions) -> Result<CumulantResult> {
    let (state, report) = iterate(model, init.clone(), opts, |st, i, j| Ok(lin_update(model, st, i, j)))?;
    let magnetizations = (0..model.num_vars())
        .map(|j| {
            let n = state.blankets[j].len();
            let mut m = t_field(model, &state, j, &[]);
            for l1 in 0..n {
                for l2 in l1 + 1..n {
                    let c = state.c[j][l1][l2];
                    if c != 0.0 {
                        m += gamma(model, &state, j, &[], l1, l2) * state.t[j][l1] * state.t[j][l2] * c;
                    }
                }
            }
            if m.is_finite() {
                Ok(m.clamp(-1.0, 1.0))
            } else {
                Err(Error::degenerate(format!("magnetization of spin {j} is not finite")))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CumulantResult {
        magnetizations,
        state,
        report,
    })
}
