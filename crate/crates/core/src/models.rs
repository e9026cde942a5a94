//! Random instance families and the noisy-OR chain decomposition.
//!
//! All generators draw from a ChaCha8 stream seeded with `seed_from_u64`.
//! Regular spin models draw the graph first, then the fields in variable
//! order, then one coupling per edge in ascending edge order.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cumulant::PairwiseBinaryModel;
use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::table::FactorTable;

/// Attempts before a generator gives up.
pub const RESTART_BUDGET: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CouplingType {
    Mixed,
    Attractive,
}

impl fmt::Display for CouplingType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CouplingType::Mixed => "mixed",
            CouplingType::Attractive => "attractive",
        })
    }
}

impl FromStr for CouplingType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(CouplingType::Mixed),
            "attractive" => Ok(CouplingType::Attractive),
            other => Err(Error::domain(format!("unknown coupling type {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularSpinSpec {
    pub n: usize,
    pub d: usize,
    /// Inverse temperature β.
    pub beta: f64,
    /// Relative field strength Θ.
    pub theta: f64,
    pub coupling: CouplingType,
    pub seed: u64,
}

impl RegularSpinSpec {
    /// Standard deviation of the coupling distribution (before taking the
    /// absolute value in the attractive case).
    pub fn coupling_sd(&self) -> f64 {
        let d = self.d as f64;
        match self.coupling {
            CouplingType::Mixed => self.beta * (1.0 / (d - 1.0).sqrt()).atanh(),
            CouplingType::Attractive => self.beta * (1.0 / (d - 1.0)).atanh(),
        }
    }

    pub fn manifest(&self) -> String {
        format!(
            "family=regular N={} d={} beta={} theta={} couplings={} seed={}",
            self.n, self.d, self.beta, self.theta, self.coupling, self.seed
        )
    }
}

/// Edges of a random simple d-regular graph, sorted, from the
/// configuration model with full restart on self-loops or repeated edges.
pub fn random_regular_graph(n: usize, d: usize, rng: &mut impl Rng) -> Result<Vec<(usize, usize)>> {
    if d >= n.max(1) || (n * d) % 2 == 1 {
        return Err(Error::domain(format!("no simple {d}-regular graph on {n} vertices")));
    }
    let mut stubs: Vec<usize> = (0..n).flat_map(|v| std::iter::repeat_n(v, d)).collect();
    'attempt: for _ in 0..RESTART_BUDGET {
        stubs.shuffle(rng);
        let mut edges: Vec<(usize, usize)> = stubs.chunks(2).map(|p| (p[0].min(p[1]), p[0].max(p[1]))).collect();
        edges.sort_unstable();
        for (k, &(a, b)) in edges.iter().enumerate() {
            if a == b || (k > 0 && edges[k - 1] == (a, b)) {
                continue 'attempt;
            }
        }
        return Ok(edges);
    }
    Err(Error::Generation(format!(
        "no simple {d}-regular graph on {n} vertices after {RESTART_BUDGET} attempts"
    )))
}

pub fn gen_regular_spin(spec: &RegularSpinSpec) -> Result<PairwiseBinaryModel> {
    if !(spec.beta >= 0.0 && spec.theta >= 0.0) {
        return Err(Error::domain("beta and theta must be non-negative"));
    }
    let sd_j = spec.coupling_sd();
    if !sd_j.is_finite() {
        return Err(Error::domain(format!(
            "coupling scale is infinite for d = {} with {} couplings",
            spec.d, spec.coupling
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let edges = random_regular_graph(spec.n, spec.d, &mut rng)?;
    let mut model = PairwiseBinaryModel::new(spec.n);
    let sd_h = spec.beta * spec.theta;
    for i in 0..spec.n {
        let z: f64 = rng.sample(StandardNormal);
        model.set_theta(i, sd_h * z)?;
    }
    for (a, b) in edges {
        let z: f64 = rng.sample(StandardNormal);
        let j = match spec.coupling {
            CouplingType::Mixed => sd_j * z,
            CouplingType::Attractive => (sd_j * z).abs(),
        };
        model.set_coupling(a, b, j)?;
    }
    Ok(model)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KFactorSpec {
    pub n: usize,
    /// Number of factors.
    pub m: usize,
    pub k: usize,
    pub beta: f64,
    pub seed: u64,
    /// Build a random hypertree instead (needs N − 1 = M(k − 1)).
    pub tree: bool,
}

impl KFactorSpec {
    pub fn manifest(&self) -> String {
        format!(
            "family=kfactor N={} M={} k={} beta={} seed={}{}",
            self.n,
            self.m,
            self.k,
            self.beta,
            self.seed,
            if self.tree { " tree" } else { "" }
        )
    }
}

fn hypertree_scopes(spec: &KFactorSpec, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..spec.n).collect();
    order.shuffle(rng);
    let mut placed = 1;
    let mut scopes = Vec::with_capacity(spec.m);
    for _ in 0..spec.m {
        let anchor = order[rng.random_range(0..placed)];
        let mut s = vec![anchor];
        s.extend_from_slice(&order[placed..placed + spec.k - 1]);
        placed += spec.k - 1;
        s.sort_unstable();
        scopes.push(s);
    }
    scopes
}

fn scopes_connected(n: usize, scopes: &[Vec<usize>]) -> bool {
    let mut uf = petgraph::unionfind::UnionFind::<usize>::new(n);
    let mut covered = vec![false; n];
    for s in scopes {
        for &v in s {
            covered[v] = true;
            uf.union(s[0], v);
        }
    }
    covered.iter().all(|&c| c) && (1..n).all(|v| uf.equiv(0, v))
}

/// M binary factors on k distinct variables each, entries exp(β z) with
/// z standard normal, redrawn until the factor graph is connected.
pub fn gen_k_factor(spec: &KFactorSpec) -> Result<FactorGraph> {
    if spec.k == 0 || spec.k > spec.n || spec.m == 0 {
        return Err(Error::domain(format!("need 1 ≤ k ≤ N and M ≥ 1, got k={} N={} M={}", spec.k, spec.n, spec.m)));
    }
    if !(spec.beta >= 0.0) {
        return Err(Error::domain("beta must be non-negative"));
    }
    if spec.k > 24 {
        return Err(Error::capacity("factor table entries", 1u128 << spec.k.min(127), 1 << 24));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scopes = if spec.tree {
        if spec.n - 1 != spec.m * (spec.k - 1) {
            return Err(Error::domain(format!(
                "a hypertree needs N − 1 = M(k − 1), got N={} M={} k={}",
                spec.n, spec.m, spec.k
            )));
        }
        hypertree_scopes(spec, &mut rng)
    } else {
        let mut found = None;
        for _ in 0..RESTART_BUDGET {
            let scopes: Vec<Vec<usize>> = (0..spec.m)
                .map(|_| {
                    let mut s = index::sample(&mut rng, spec.n, spec.k).into_vec();
                    s.sort_unstable();
                    s
                })
                .collect();
            if scopes_connected(spec.n, &scopes) {
                found = Some(scopes);
                break;
            }
        }
        found.ok_or_else(|| Error::Generation(format!("no connected instance after {RESTART_BUDGET} attempts")))?
    };
    let factors = scopes
        .into_iter()
        .map(|s| {
            let vals = (0..1usize << spec.k)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    (spec.beta * z).exp()
                })
                .collect();
            FactorTable::new(s, vec![2; spec.k], vals)
        })
        .collect::<Result<Vec<_>>>()?;
    FactorGraph::new(vec![2; spec.n], factors)
}

pub fn spin_to_factor_graph(model: &PairwiseBinaryModel) -> FactorGraph {
    model.to_factor_graph()
}

/// Factors of a noisy-OR conditional and the dummy variables they use.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyOrChain {
    pub factors: Vec<FactorTable>,
    pub dummies: Vec<usize>,
}

fn noisy_or_table(out: usize, inputs: &[(usize, f64)], leak: f64) -> Result<FactorTable> {
    let mut vars = vec![out];
    vars.extend(inputs.iter().map(|p| p.0));
    let cards = vec![2; vars.len()];
    FactorTable::from_fn(&vars, &cards, |st| {
        let off: f64 = (1.0 - leak) * inputs.iter().zip(&st[1..]).map(|(&(_, q), &y)| if y == 1 { q } else { 1.0 }).product::<f64>();
        if st[0] == 0 {
            off
        } else {
            1.0 - off
        }
    })
}

/// Splits `P(x = 0 | y) = (1 − leak) ∏ (1 − p_k)^{y_k}` into factors of at
/// most three variables. Each dummy s_k is the noisy OR of the parents
/// after y_k, and enters its parent factor as a deterministic cause. Dummies
/// are numbered from `first_dummy` upward.
pub fn noisy_or_decompose(child: usize, parents: &[usize], leak: f64, probs: &[f64], first_dummy: usize) -> Result<NoisyOrChain> {
    if parents.len() != probs.len() {
        return Err(Error::domain("one probability per parent is required"));
    }
    if let Some(p) = std::iter::once(&leak).chain(probs).find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::domain(format!("probability {p} outside [0, 1]")));
    }
    let m = parents.len();
    let inhibit: Vec<(usize, f64)> = parents.iter().zip(probs).map(|(&v, &p)| (v, 1.0 - p)).collect();
    if m <= 2 {
        return Ok(NoisyOrChain {
            factors: vec![noisy_or_table(child, &inhibit, leak)?],
            dummies: Vec::new(),
        });
    }
    let dummies: Vec<usize> = (first_dummy..first_dummy + m - 2).collect();
    let mut factors = Vec::with_capacity(m - 1);
    let mut out = child;
    let mut top_leak = leak;
    for (k, &d) in dummies.iter().enumerate() {
        factors.push(noisy_or_table(out, &[inhibit[k], (d, 0.0)], top_leak)?);
        out = d;
        top_leak = 0.0;
    }
    factors.push(noisy_or_table(out, &inhibit[m - 2..], 0.0)?);
    Ok(NoisyOrChain { factors, dummies })
}
