//! Plain-text factor graph format.
//!
//! ```text
//! F                      number of factors
//!                        blank line
//! n                      variables in factor
//! i_1 ... i_n            variable ids
//! c_1 ... c_n            cardinalities
//! nnz                    number of listed entries
//! k v                    nnz lines: linear index and value
//! ```
//!
//! Factor blocks are separated by blank lines, lines starting with `#` are
//! comments, and unlisted entries are zero. Linear indices use the first
//! listed variable as the fastest-changing digit. Values are written in the
//! shortest form that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::FactorGraph;
use crate::table::{num_states, unlinear_index, FactorTable};

/// Whitespace tokens of a text file with comment lines stripped, each
/// tagged with its 1-based line number.
pub(crate) struct Tokens {
    items: Vec<(usize, String)>,
    pos: usize,
    last_line: usize,
}

impl Tokens {
    pub(crate) fn new(text: &str) -> Self {
        let mut items = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            if line.trim_start().starts_with('#') {
                continue;
            }
            items.extend(line.split_whitespace().map(|t| (ln + 1, t.to_string())));
        }
        let last_line = text.lines().count();
        Tokens { items, pos: 0, last_line }
    }

    pub(crate) fn is_done(&self) -> bool {
        self.pos >= self.items.len()
    }

    pub(crate) fn line(&self) -> usize {
        self.items.get(self.pos).map_or(self.last_line, |t| t.0)
    }

    pub(crate) fn next_str(&mut self, what: &str) -> Result<(usize, &str)> {
        match self.items.get(self.pos) {
            Some((ln, tok)) => {
                self.pos += 1;
                Ok((*ln, tok.as_str()))
            }
            None => Err(Error::Parse {
                line: self.last_line,
                msg: format!("unexpected end of input, expected {what}"),
            }),
        }
    }

    pub(crate) fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let (line, tok) = self.next_str(what)?;
        tok.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("expected {what}, found {tok:?}"),
        })
    }
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

/// Reads one factor block. Variables listed out of order are re-laid out
/// over the ascending order.
pub(crate) fn read_table_block(tok: &mut Tokens) -> Result<FactorTable> {
    let start = tok.line();
    let n: usize = tok.next("number of variables")?;
    let ids: Vec<usize> = (0..n).map(|_| tok.next("variable id")).collect::<Result<_>>()?;
    let cards: Vec<usize> = (0..n).map(|_| tok.next("cardinality")).collect::<Result<_>>()?;
    if let Some(&c) = cards.iter().find(|&&c| c == 0) {
        return Err(parse_err(start, format!("cardinality {c} < 1")));
    }
    let mut sorted = ids.clone();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(parse_err(start, format!("repeated variable in factor scope {ids:?}")));
    }
    let size = num_states(&cards).ok_or_else(|| parse_err(start, "table size overflows"))?;
    let nnz: usize = tok.next("number of nonzero entries")?;
    let mut raw = vec![0.0; size];
    let mut seen = vec![false; size];
    for _ in 0..nnz {
        let line = tok.line();
        let k: usize = tok.next("entry index")?;
        let v: f64 = tok.next("entry value")?;
        if k >= size {
            return Err(parse_err(line, format!("entry index {k} out of range (table size {size})")));
        }
        if seen[k] {
            return Err(parse_err(line, format!("entry index {k} listed twice")));
        }
        if !(v.is_finite() && v >= 0.0) {
            return Err(parse_err(line, format!("entry value {v} is not a finite non-negative number")));
        }
        seen[k] = true;
        raw[k] = v;
    }
    if ids.windows(2).all(|w| w[0] < w[1]) {
        return FactorTable::new(ids, cards, raw).map_err(|e| parse_err(start, e.to_string()));
    }
    // listed order differs from ascending: index with the file's layout
    FactorTable::from_fn(&ids, &cards, |st| {
        let mut idx = 0;
        let mut stride = 1;
        for (&s, &c) in st.iter().zip(&cards) {
            idx += s * stride;
            stride *= c;
        }
        raw[idx]
    })
    .map_err(|e| parse_err(start, e.to_string()))
}

pub(crate) fn write_table_block(out: &mut String, t: &FactorTable) {
    let join = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
    let _ = writeln!(out, "{}", t.vars().len());
    let _ = writeln!(out, "{}", join(t.vars()));
    let _ = writeln!(out, "{}", join(t.cards()));
    let nnz = t.values().iter().filter(|&&v| v != 0.0).count();
    let _ = writeln!(out, "{nnz}");
    for (k, &v) in t.values().iter().enumerate() {
        if v != 0.0 {
            let _ = writeln!(out, "{k} {}", format_value(v));
        }
    }
}

/// Shortest decimal form that parses back to the same bits.
pub fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn parse_factor_graph(text: &str) -> Result<FactorGraph> {
    let mut tok = Tokens::new(text);
    let f: usize = tok.next("number of factors")?;
    let mut factors = Vec::with_capacity(f);
    for _ in 0..f {
        factors.push(read_table_block(&mut tok)?);
    }
    if !tok.is_done() {
        return Err(parse_err(tok.line(), "trailing content after last factor"));
    }
    FactorGraph::from_factors(factors).map_err(|e| match e {
        Error::Domain(msg) => parse_err(1, msg),
        other => other,
    })
}

pub fn read_factor_graph(mut reader: impl BufRead) -> Result<FactorGraph> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    parse_factor_graph(&text)
}

/// Serializes a graph. Variables not used by any factor get an all-ones
/// unary factor so that their cardinality survives the round trip.
pub fn factor_graph_to_string(g: &FactorGraph, header: &[String]) -> String {
    let mut out = String::new();
    for h in header {
        let _ = writeln!(out, "# {h}");
    }
    let isolated: Vec<usize> = (0..g.num_vars()).filter(|&v| g.nbv(v).is_empty()).collect();
    let _ = writeln!(out, "{}", g.num_factors() + isolated.len());
    for f in g.factors() {
        out.push('\n');
        write_table_block(&mut out, f);
    }
    for v in isolated {
        out.push('\n');
        let t = FactorTable::constant(vec![v], vec![g.cardinality(v)], 1.0).expect("valid cardinality");
        write_table_block(&mut out, &t);
    }
    out
}

pub fn write_factor_graph(mut w: impl Write, g: &FactorGraph, header: &[String]) -> io::Result<()> {
    w.write_all(factor_graph_to_string(g, header).as_bytes())
}

pub fn load_factor_graph(path: impl AsRef<Path>) -> Result<FactorGraph> {
    parse_factor_graph(&fs::read_to_string(path)?)
}

pub fn save_factor_graph(path: impl AsRef<Path>, g: &FactorGraph, header: &[String]) -> Result<()> {
    fs::write(path, factor_graph_to_string(g, header))?;
    Ok(())
}

/// Every joint state of a table, for callers that want to print full tables.
pub fn table_rows(t: &FactorTable) -> impl Iterator<Item = (Vec<usize>, f64)> + '_ {
    (0..t.len()).map(move |k| (unlinear_index(t.cards(), k), t.values()[k]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "\
# two factors
2

2
0 1
2 2
3
0 1
1 0.5
3 2

1
1
2
2
0 0.25
1 0.75
";

    #[test]
    fn parses_sample() {
        let g = parse_factor_graph(SAMPLE).unwrap();
        assert_eq!(g.num_vars(), 2);
        assert_eq!(g.factor(0).values(), &[1.0, 0.5, 0.0, 2.0]);
        assert_eq!(g.factor(1).values(), &[0.25, 0.75]);
    }

    #[test]
    fn writes_sample_bit_exact() {
        let g = parse_factor_graph(SAMPLE).unwrap();
        let text = factor_graph_to_string(&g, &["two factors".to_string()]);
        let expected = "# two factors\n2\n\n2\n0 1\n2 2\n3\n0 1.0\n1 0.5\n3 2.0\n\n1\n1\n2\n2\n0 0.25\n1 0.75\n";
        assert_eq!(text, expected);
        assert_eq!(factor_graph_to_string(&parse_factor_graph(&text).unwrap(), &["two factors".into()]), text);
    }

    #[test]
    fn unsorted_scope_is_relaid() {
        let text = "1\n\n2\n1 0\n2 3\n6\n0 1\n1 2\n2 3\n3 4\n4 5\n5 6\n";
        let g = parse_factor_graph(text).unwrap();
        let f = g.factor(0);
        assert_eq!(f.vars(), &[0, 1]);
        assert_eq!(f.cards(), &[3, 2]);
        // file index k = x1 + 2*x0
        for x0 in 0..3 {
            for x1 in 0..2 {
                assert_eq!(f.get(&[x0, x1]), (x1 + 2 * x0 + 1) as f64);
            }
        }
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(parse_factor_graph("1\n\n1\n0\n2\n1\n5 1.0\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_factor_graph("1\n\n1\n0\n2\n1\n0 -1\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_factor_graph("2\n\n1\n0\n2\n0\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_factor_graph("1\n\n1\n0\n2\n0\nextra"), Err(Error::Parse { .. })));
        assert!(matches!(parse_factor_graph("1\n\n2\n0 0\n2 2\n0\n"), Err(Error::Parse { .. })));
        // variable 1 never used
        assert!(matches!(parse_factor_graph("1\n\n1\n2\n2\n0\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn isolated_variables_survive() {
        let f = FactorTable::new(vec![0], vec![2], vec![1.0, 3.0]).unwrap();
        let g = FactorGraph::new(vec![2, 3], vec![f]).unwrap();
        let back = parse_factor_graph(&factor_graph_to_string(&g, &[])).unwrap();
        assert_eq!(back.cards(), &[2, 3]);
    }

    proptest! {
        #[test]
        fn round_trip(vals in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1e6, 1e-300f64..1e-200], 12)) {
            let a = FactorTable::new(vec![0, 2], vec![2, 3], vals[..6].to_vec()).unwrap();
            let b = FactorTable::new(vec![1, 2], vec![2, 3], vals[6..].to_vec()).unwrap();
            let g = FactorGraph::from_factors(vec![a, b]).unwrap();
            let text = factor_graph_to_string(&g, &[]);
            let back = parse_factor_graph(&text).unwrap();
            prop_assert_eq!(&back, &g);
            prop_assert_eq!(factor_graph_to_string(&back, &[]), text);
        }
    }
}
