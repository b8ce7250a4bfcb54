//! Site adjacency graphs, hop distances and distance-decay correlation.

use std::collections::{BTreeSet, HashMap, VecDeque};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;

/// Undirected simple graph over named sites. Edges are stored as index
/// pairs `(a, b)` with `a < b`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialGraph {
    site_ids: Vec<String>,
    edges: BTreeSet<(usize, usize)>,
}

impl SpatialGraph {
    pub fn new(site_ids: Vec<String>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for id in &site_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Graph(format!("duplicate site id {id}")));
            }
        }
        Ok(Self { site_ids, edges: BTreeSet::new() })
    }

    pub fn from_edges<S: AsRef<str>>(site_ids: Vec<String>, edges: &[(S, S)]) -> Result<Self> {
        let mut g = Self::new(site_ids)?;
        for (a, b) in edges {
            g.add_edge(a.as_ref(), b.as_ref())?;
        }
        Ok(g)
    }

    /// Rook-adjacency lattice with sites named `r{row}c{col}` in row-major
    /// order.
    pub fn lattice(rows: usize, cols: usize) -> Self {
        let ids = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| format!("r{r}c{c}")))
            .collect();
        let mut edges = BTreeSet::new();
        for r in 0..rows {
            for c in 0..cols {
                let i = r * cols + c;
                if c + 1 < cols {
                    edges.insert((i, i + 1));
                }
                if r + 1 < rows {
                    edges.insert((i, i + cols));
                }
            }
        }
        Self { site_ids: ids, edges }
    }

    pub fn add_edge(&mut self, a: &str, b: &str) -> Result<()> {
        let ia = self.index_of(a).ok_or_else(|| Error::Graph(format!("unknown site {a}")))?;
        let ib = self.index_of(b).ok_or_else(|| Error::Graph(format!("unknown site {b}")))?;
        if ia == ib {
            return Err(Error::Graph(format!("self-loop on site {a}")));
        }
        if !self.edges.insert((ia.min(ib), ia.max(ib))) {
            return Err(Error::Graph(format!("duplicate edge {a} {b}")));
        }
        Ok(())
    }

    pub fn site_ids(&self) -> &[String] {
        &self.site_ids
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str)> {
        self.edges
            .iter()
            .map(|&(a, b)| (self.site_ids[a].as_str(), self.site_ids[b].as_str()))
    }

    pub fn n_sites(&self) -> usize {
        self.site_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.site_ids.iter().position(|s| s == id)
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n_sites()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    fn bfs(adj: &[Vec<usize>], source: usize) -> Vec<Option<u32>> {
        let mut dist = vec![None; adj.len()];
        dist[source] = Some(0);
        let mut queue = VecDeque::from([source]);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap();
            for &w in &adj[v] {
                if dist[w].is_none() {
                    dist[w] = Some(dv + 1);
                    queue.push_back(w);
                }
            }
        }
        dist
    }

    /// Connected components as lists of site ids, in site order.
    pub fn components(&self) -> Vec<Vec<String>> {
        let adj = self.adjacency();
        let mut label = vec![usize::MAX; self.n_sites()];
        let mut comps: Vec<Vec<String>> = Vec::new();
        for s in 0..self.n_sites() {
            if label[s] != usize::MAX {
                continue;
            }
            let id = comps.len();
            let mut members = Vec::new();
            for (v, d) in Self::bfs(&adj, s).into_iter().enumerate() {
                if d.is_some() {
                    label[v] = id;
                    members.push(v);
                }
            }
            members.sort_unstable();
            comps.push(members.into_iter().map(|v| self.site_ids[v].clone()).collect());
        }
        comps
    }

    /// Accepts only non-empty connected graphs.
    pub fn validate(&self) -> Result<()> {
        if self.site_ids.is_empty() {
            return Err(Error::Graph("graph has no sites".into()));
        }
        let comps = self.components();
        if comps.len() > 1 {
            let listed: Vec<String> =
                comps.iter().map(|c| format!("{{{}}}", c.join(","))).collect();
            return Err(Error::Graph(format!(
                "graph is disconnected with {} components: {}",
                comps.len(),
                listed.join(" ")
            )));
        }
        Ok(())
    }

    /// All-pairs hop counts by breadth-first search from every site.
    pub fn distance_matrix(&self) -> Result<DistanceMatrix> {
        self.validate()?;
        let n = self.n_sites();
        let adj = self.adjacency();
        let mut d = vec![0u32; n * n];
        for s in 0..n {
            for (t, dist) in Self::bfs(&adj, s).into_iter().enumerate() {
                d[s * n + t] = dist.expect("validated graph is connected");
            }
        }
        Ok(DistanceMatrix { n, d })
    }

    /// Parses an edge list: one `a b` pair per line, `#` comments and blank
    /// lines ignored. Sites not in `site_ids` are appended in order of first
    /// appearance so that they can carry paths between listed sites.
    pub fn parse_edge_list(text: &str, site_ids: &[String]) -> Result<Self> {
        let mut ids: Vec<String> = site_ids.to_vec();
        let mut index: HashMap<String, usize> =
            ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        if index.len() != ids.len() {
            return Err(Error::Graph("duplicate site ids in dataset".into()));
        }
        let mut pairs = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 2 {
                return Err(Error::Parse {
                    line: lineno + 1,
                    message: format!("expected two site ids, found {}", fields.len()),
                });
            }
            for f in &fields {
                if !index.contains_key(*f) {
                    index.insert(f.to_string(), ids.len());
                    ids.push(f.to_string());
                }
            }
            pairs.push((lineno + 1, fields[0].to_string(), fields[1].to_string()));
        }
        let mut g = Self::new(ids)?;
        for (line, a, b) in pairs {
            g.add_edge(&a, &b).map_err(|e| Error::Parse { line, message: e.to_string() })?;
        }
        Ok(g)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (a, b) in self.edges() {
            out.push_str(a);
            out.push(' ');
            out.push_str(b);
            out.push('\n');
        }
        out
    }
}

/// Symmetric matrix of graph hop counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<u32>,
}

impl DistanceMatrix {
    pub fn from_rows(rows: Vec<Vec<u32>>) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument("distance matrix must be square".into()));
        }
        let d: Vec<u32> = rows.into_iter().flatten().collect();
        let m = Self { n, d };
        for i in 0..n {
            if m.get(i, i) != 0 {
                return Err(Error::InvalidArgument("distance matrix diagonal must be zero".into()));
            }
            for j in 0..i {
                if m.get(i, j) != m.get(j, i) || m.get(i, j) == 0 {
                    return Err(Error::InvalidArgument(format!(
                        "distance entries ({i},{j}) must be symmetric and positive"
                    )));
                }
            }
        }
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.d[i * self.n + j]
    }

    pub fn max(&self) -> u32 {
        self.d.iter().copied().max().unwrap_or(0)
    }

    /// Restriction to the given site indices, in that order.
    pub fn submatrix(&self, keep: &[usize]) -> Self {
        let n = keep.len();
        let mut d = Vec::with_capacity(n * n);
        for &i in keep {
            for &j in keep {
                d.push(self.get(i, j));
            }
        }
        Self { n, d }
    }

    pub fn rows(&self) -> Vec<Vec<u32>> {
        self.d.chunks(self.n.max(1)).map(|r| r.to_vec()).collect()
    }
}

/// `exp(-gamma * d) + nugget * I`.
pub fn correlation_matrix(d: &DistanceMatrix, gamma: f64, nugget: f64) -> Result<DMatrix<f64>> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument(format!("decay must be non-negative, got {gamma}")));
    }
    if !(nugget >= 0.0) || !nugget.is_finite() {
        return Err(Error::InvalidArgument(format!("nugget must be non-negative, got {nugget}")));
    }
    // hop counts are small integers, so tabulate the kernel once
    let table: Vec<f64> = (0..=d.max()).map(|h| (-gamma * h as f64).exp()).collect();
    let n = d.len();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        table[d.get(i, j) as usize] + if i == j { nugget } else { 0.0 }
    }))
}

/// Correlation matrix together with its Cholesky factor.
#[derive(Debug, Clone)]
pub struct FactoredCorrelation {
    pub gamma: f64,
    pub matrix: DMatrix<f64>,
    pub chol: Cholesky,
}

impl FactoredCorrelation {
    pub fn new(d: &DistanceMatrix, gamma: f64, nugget: f64) -> Result<Self> {
        let matrix = correlation_matrix(d, gamma, nugget)?;
        let chol = Cholesky::new(&matrix).map_err(|e| {
            Error::Numerical(format!(
                "correlation matrix with decay {gamma} and nugget {nugget} is not positive definite ({e}); increase the nugget"
            ))
        })?;
        Ok(Self { gamma, matrix, chol })
    }
}
