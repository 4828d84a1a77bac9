//! Graphs and diffusion operators.
//!
//! Skeleton graphs are small (tens of vertices), so everything is dense
//! `f64` matrices.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayBase, Data, Dimension};

use crate::error::{Error, Result};

/// Edge list of the packaged 21-joint hand skeleton.
pub const HAND_SKELETON_EDGES: &str = include_str!("../assets/hand21.edges");

/// Undirected, unweighted graph without isolated vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: Array2<f64>,
}

impl Graph {
    /// Validates a symmetric, non-negative, zero-diagonal adjacency matrix
    /// in which every vertex has at least one neighbour.
    pub fn new(adjacency: Array2<f64>) -> Result<Self> {
        let (rows, cols) = adjacency.dim();
        if rows == 0 || rows != cols {
            return Err(Error::InvalidGraph(format!(
                "adjacency must be square and non-empty, got {rows}x{cols}"
            )));
        }
        for i in 0..rows {
            if adjacency[[i, i]] != 0.0 {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {i}")));
            }
            for j in 0..rows {
                let w = adjacency[[i, j]];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!(
                        "entry ({i},{j}) = {w} is not a non-negative weight"
                    )));
                }
                if w != adjacency[[j, i]] {
                    return Err(Error::InvalidGraph(format!(
                        "adjacency is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        if let Some(v) = adjacency.rows().into_iter().position(|r| r.sum() <= 0.0) {
            return Err(Error::IsolatedVertex(v));
        }
        Ok(Graph { adjacency })
    }

    pub fn from_edges(n_vertices: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Array2::zeros((n_vertices, n_vertices));
        for &(i, j) in edges {
            if i >= n_vertices || j >= n_vertices {
                return Err(Error::InvalidGraph(format!(
                    "edge ({i},{j}) out of range for {n_vertices} vertices"
                )));
            }
            if i == j {
                return Err(Error::InvalidGraph(format!("self-loop at vertex {i}")));
            }
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
        Graph::new(a)
    }

    /// Parses an edge list: `#` comments, an optional `vertices N` line and
    /// one `i j` pair per line. Without a `vertices` line the vertex count is
    /// one more than the largest index.
    pub fn parse_edge_list(text: &str, origin: &str) -> Result<Self> {
        let mut declared = None;
        let mut edges = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |reason: String| Error::Parse {
                path: origin.to_string(),
                line: lineno + 1,
                reason,
            };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if tokens[0] == "vertices" {
                let n = tokens
                    .get(1)
                    .and_then(|t| t.parse::<usize>().ok())
                    .ok_or_else(|| parse_err("expected `vertices <count>`".into()))?;
                declared = Some(n);
                continue;
            }
            if tokens.len() != 2 {
                return Err(parse_err(format!("expected two vertex indices, got `{line}`")));
            }
            let i = tokens[0]
                .parse::<usize>()
                .map_err(|e| parse_err(e.to_string()))?;
            let j = tokens[1]
                .parse::<usize>()
                .map_err(|e| parse_err(e.to_string()))?;
            edges.push((i, j));
        }
        let inferred = edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0);
        Graph::from_edges(declared.unwrap_or(inferred), &edges)
    }

    /// The packaged 21-joint hand skeleton.
    pub fn hand_skeleton() -> Self {
        Graph::parse_edge_list(HAND_SKELETON_EDGES, "hand21.edges")
            .expect("packaged skeleton is valid")
    }

    pub fn n_vertices(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &Array2<f64> {
        &self.adjacency
    }

    pub fn degrees(&self) -> Vec<f64> {
        self.adjacency.rows().into_iter().map(|r| r.sum()).collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&w| w != 0.0).count() / 2
    }

    /// Two-colouring of the vertices, or `None` if the graph has an odd cycle.
    pub fn bipartition(&self) -> Option<Vec<bool>> {
        let n = self.n_vertices();
        let mut colour: Vec<Option<bool>> = vec![None; n];
        for start in 0..n {
            if colour[start].is_some() {
                continue;
            }
            colour[start] = Some(false);
            let mut queue = VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                let cv = colour[v].unwrap();
                for u in 0..n {
                    if self.adjacency[[v, u]] == 0.0 {
                        continue;
                    }
                    match colour[u] {
                        None => {
                            colour[u] = Some(!cv);
                            queue.push_back(u);
                        }
                        Some(cu) if cu == cv => return None,
                        Some(_) => {}
                    }
                }
            }
        }
        Some(colour.into_iter().map(|c| c.unwrap()).collect())
    }
}

/// Path graph on `t` vertices: consecutive frames are connected.
pub fn line_graph(t: usize) -> Result<Graph> {
    if t < 2 {
        return Err(Error::InvalidSize(format!(
            "a temporal line graph needs at least 2 frames, got {t}"
        )));
    }
    let edges: Vec<_> = (0..t - 1).map(|i| (i, i + 1)).collect();
    Graph::from_edges(t, &edges)
}

/// Random spanning tree on `n` vertices plus each remaining edge with
/// probability `extra_edge_prob`. Always connected.
pub fn random_connected_graph<R: rand::Rng>(n: usize, extra_edge_prob: f64, rng: &mut R) -> Result<Graph> {
    if n < 2 {
        return Err(Error::InvalidSize(format!("a connected graph needs 2 vertices, got {n}")));
    }
    let mut edges = Vec::new();
    for v in 1..n {
        edges.push((rng.random_range(0..v), v));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !edges.contains(&(i, j)) && rng.random_bool(extra_edge_prob) {
                edges.push((i, j));
            }
        }
    }
    Graph::from_edges(n, &edges)
}

/// Row-stochastic shift matrix with its dyadic powers `P^(2^k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovShift {
    powers: Vec<Array2<f64>>,
}

impl MarkovShift {
    /// Wraps a row-stochastic matrix. Rows must sum to one within `1e-12`
    /// and entries must lie in `[0, 1]`.
    pub fn from_matrix(p: Array2<f64>) -> Result<Self> {
        let (r, c) = p.dim();
        if r == 0 || r != c {
            return Err(Error::Shape(format!("shift must be square, got {r}x{c}")));
        }
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::Precondition("shift entries must lie in [0, 1]".into()));
        }
        let dev = max_row_sum_deviation(&p);
        if dev > 1e-12 {
            return Err(Error::Precondition(format!(
                "shift rows must sum to one (deviation {dev:e})"
            )));
        }
        Ok(MarkovShift { powers: vec![p] })
    }

    pub fn p(&self) -> &Array2<f64> {
        &self.powers[0]
    }

    pub fn dim(&self) -> usize {
        self.powers[0].nrows()
    }

    /// `P^(2^k)`, if it has been computed.
    pub fn power(&self, k: usize) -> Option<&Array2<f64>> {
        self.powers.get(k)
    }

    pub fn powers(&self) -> &[Array2<f64>] {
        &self.powers
    }

    /// Largest `k` for which `P^(2^k)` is available.
    pub fn max_scale(&self) -> usize {
        self.powers.len() - 1
    }

    /// Populates `P^(2^0) .. P^(2^j_max)` by repeated squaring.
    pub fn dyadic_powers(self, j_max: usize) -> Result<Self> {
        if j_max == 0 {
            return Err(Error::InvalidSize("j_max must be at least 1".into()));
        }
        let p = self.powers.into_iter().next().expect("shift has P^1");
        Ok(MarkovShift {
            powers: dyadic_chain(p, j_max),
        })
    }
}

/// Lazy random walk `P = (I + D^-1 A) / 2`.
pub fn lazy_random_walk(g: &Graph) -> MarkovShift {
    let n = g.n_vertices();
    let degrees = g.degrees();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let walk = g.adjacency[[i, j]] / degrees[i];
            p[[i, j]] = 0.5 * (if i == j { 1.0 } else { 0.0 } + walk);
        }
    }
    MarkovShift { powers: vec![p] }
}

/// `[Q_0, .., Q_j_max]` with `Q_0 = p` and `Q_{k+1} = Q_k * Q_k`.
pub fn dyadic_chain(p: Array2<f64>, j_max: usize) -> Vec<Array2<f64>> {
    let mut powers = Vec::with_capacity(j_max + 1);
    powers.push(p);
    for k in 0..j_max {
        let q = powers[k].dot(&powers[k]);
        powers.push(q);
    }
    powers
}

/// Square root of the sum of squared entries over the whole array.
pub fn frobenius_norm<S, D>(a: &ArrayBase<S, D>) -> f64
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Largest `|row sum - 1|` over all rows.
pub fn max_row_sum_deviation(p: &Array2<f64>) -> f64 {
    p.rows()
        .into_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max)
}
