//! Binary incidence hypergraphs and kNN hyperedge construction.

use std::io::Write;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Hypergraph over vertices `0..n` with binary incidence `H` (n × |E|).
///
/// Member lists and degree caches are derived from `H` at construction and never
/// drift from it: the type has no mutating methods.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypergraph {
    num_vertices: usize,
    /// `edges[e]` is `N_v(e)`, sorted ascending.
    edges: Vec<Vec<usize>>,
    /// `vertex_edges[v]` is `N_e(v)`, sorted ascending.
    vertex_edges: Vec<Vec<usize>>,
}

impl Hypergraph {
    /// Builds from hyperedge member lists. Members are deduplicated; empty edges and
    /// out-of-range vertices are rejected.
    pub fn from_edges(num_vertices: usize, edges: Vec<Vec<usize>>) -> Result<Self> {
        let mut vertex_edges = vec![Vec::new(); num_vertices];
        let mut normalized = Vec::with_capacity(edges.len());
        for (e, mut members) in edges.into_iter().enumerate() {
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                return Err(Error::Structure(format!("hyperedge {e} is empty")));
            }
            if let Some(&v) = members.iter().find(|&&v| v >= num_vertices) {
                return Err(Error::Structure(format!(
                    "hyperedge {e} references vertex {v} but n = {num_vertices}"
                )));
            }
            for &v in &members {
                vertex_edges[v].push(e);
            }
            normalized.push(members);
        }
        Ok(Self {
            num_vertices,
            edges: normalized,
            vertex_edges,
        })
    }

    /// Builds from a dense incidence matrix whose entries must be exactly 0 or 1.
    pub fn from_incidence(h: &Tensor) -> Result<Self> {
        let mut edges = vec![Vec::new(); h.cols()];
        for v in 0..h.rows() {
            for (e, &x) in h.row(v).iter().enumerate() {
                if x == 1.0 {
                    edges[e].push(v);
                } else if x != 0.0 {
                    return Err(Error::Structure(format!(
                        "incidence entry ({v}, {e}) = {x} is not binary"
                    )));
                }
            }
        }
        Self::from_edges(h.rows(), edges)
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Vertices of hyperedge `e`, ascending.
    pub fn edge(&self, e: usize) -> &[usize] {
        &self.edges[e]
    }

    pub fn edges(&self) -> &[Vec<usize>] {
        &self.edges
    }

    /// `|N_e(v)|` for every vertex.
    pub fn vertex_degrees(&self) -> Vec<usize> {
        self.vertex_edges.iter().map(Vec::len).collect()
    }

    /// `|N_v(e)|` for every hyperedge.
    pub fn edge_degrees(&self) -> Vec<usize> {
        self.edges.iter().map(Vec::len).collect()
    }

    pub fn contains(&self, v: usize, e: usize) -> bool {
        self.edges[e].binary_search(&v).is_ok()
    }

    /// Dense 0/1 incidence matrix.
    pub fn incidence(&self) -> Tensor {
        let mut h = Tensor::zeros(self.num_vertices, self.edges.len());
        for (e, members) in self.edges.iter().enumerate() {
            for &v in members {
                h.set(v, e, 1.0);
            }
        }
        h
    }

    /// `(N_v(e) for each e, N_e(v) for each v)`, all lists ascending.
    pub fn inter_neighbors(&self) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
        (self.edges.clone(), self.vertex_edges.clone())
    }

    /// `D_e⁻¹ Hᵀ` (|E| × n): row `e` averages the members of hyperedge `e`.
    pub fn vertex_to_edge_mean(&self) -> Tensor {
        let mut m = Tensor::zeros(self.edges.len(), self.num_vertices);
        for (e, members) in self.edges.iter().enumerate() {
            let w = 1.0 / members.len() as f64;
            for &v in members {
                m.set(e, v, w);
            }
        }
        m
    }

    /// `D_v⁻¹ H` (n × |E|): row `v` averages the hyperedges containing `v`.
    pub fn edge_to_vertex_mean(&self) -> Result<Tensor> {
        let mut m = Tensor::zeros(self.num_vertices, self.edges.len());
        for (v, incident) in self.vertex_edges.iter().enumerate() {
            if incident.is_empty() {
                return Err(Error::Structure(format!("vertex {v} belongs to no hyperedge")));
            }
            let w = 1.0 / incident.len() as f64;
            for &e in incident {
                m.set(v, e, w);
            }
        }
        Ok(m)
    }

    /// Keeps only the listed hyperedges, in the given order.
    pub fn select_edges(&self, keep: &[usize]) -> Result<Self> {
        let edges = keep
            .iter()
            .map(|&e| {
                self.edges
                    .get(e)
                    .cloned()
                    .ok_or_else(|| Error::Structure(format!("no hyperedge {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_edges(self.num_vertices, edges)
    }

    /// Writes `H` as CSV, one row per vertex with 0/1 entries.
    pub fn write_incidence_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let h = self.incidence();
        for v in 0..h.rows() {
            let row: Vec<&str> = h
                .row(v)
                .iter()
                .map(|&x| if x == 1.0 { "1" } else { "0" })
                .collect();
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// One hyperedge per vertex: the vertex plus its `k` nearest neighbours by
/// Euclidean distance, ties broken by ascending vertex index.
pub fn build_knn_hyperedges(x: &Tensor, k: usize) -> Result<Hypergraph> {
    let n = x.rows();
    if n == 0 {
        return Err(Error::Parameter("kNN construction needs at least one vertex".into()));
    }
    if k >= n {
        return Err(Error::Parameter(format!(
            "k = {k} neighbours requested but only {n} vertices"
        )));
    }
    if !x.is_finite() {
        return Err(Error::Data("features contain non-finite values".into()));
    }

    let mut edges = Vec::with_capacity(n);
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(n);
    for v in 0..n {
        candidates.clear();
        let xv = x.row(v);
        candidates.extend((0..n).filter(|&u| u != v).map(|u| {
            let d2: f64 = xv.iter().zip(x.row(u)).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, u)
        }));
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut members = Vec::with_capacity(k + 1);
        members.push(v);
        members.extend(candidates.iter().take(k).map(|&(_, u)| u));
        edges.push(members);
    }
    Hypergraph::from_edges(n, edges)
}

/// Column-wise concatenation `H_1 ‖ H_2 ‖ …` over a shared vertex set.
pub fn concat_hypergraphs(graphs: &[Hypergraph]) -> Result<Hypergraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Parameter("cannot concatenate zero hypergraphs".into()))?;
    let n = first.num_vertices;
    if let Some(g) = graphs.iter().find(|g| g.num_vertices != n) {
        return Err(Error::Structure(format!(
            "vertex counts differ: {n} vs {}",
            g.num_vertices
        )));
    }
    let edges = graphs.iter().flat_map(|g| g.edges.iter().cloned()).collect();
    Hypergraph::from_edges(n, edges)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sets(g: &Hypergraph) -> Vec<Vec<usize>> {
        g.edges().to_vec()
    }

    #[test]
    fn knn_line_with_tie() {
        let x = Tensor::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let g = build_knn_hyperedges(&x, 1).unwrap();
        assert_eq!(sets(&g), vec![vec![0, 1], vec![0, 1], vec![1, 2]]);
        assert_eq!(g.edge_degrees(), vec![2, 2, 2]);
    }

    #[test]
    fn knn_zero_neighbours_gives_singletons() {
        let x = Tensor::from_rows(&[[0.3, 1.0], [2.0, 0.0], [5.0, 5.0]]).unwrap();
        let g = build_knn_hyperedges(&x, 0).unwrap();
        assert_eq!(sets(&g), vec![vec![0], vec![1], vec![2]]);
    }

    #[test]
    fn knn_identical_rows_break_ties_by_index() {
        let x = Tensor::filled(4, 3, 0.7);
        let g = build_knn_hyperedges(&x, 2).unwrap();
        assert_eq!(
            sets(&g),
            vec![vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 2], vec![0, 1, 3]]
        );
    }

    #[test]
    fn knn_rejects_bad_inputs() {
        let x = Tensor::zeros(3, 1);
        assert!(matches!(build_knn_hyperedges(&x, 3), Err(Error::Parameter(_))));
        let bad = Tensor::new(2, 1, vec![0.0, f64::INFINITY]).unwrap();
        assert!(matches!(build_knn_hyperedges(&bad, 1), Err(Error::Data(_))));
        assert!(build_knn_hyperedges(&Tensor::zeros(0, 1), 0).is_err());
    }

    #[test]
    fn concat_examples() {
        let x = Tensor::from_rows(&[[0.0], [1.0], [3.0]]).unwrap();
        let a = build_knn_hyperedges(&x, 1).unwrap();
        let b = build_knn_hyperedges(&x, 0).unwrap();
        assert_eq!(concat_hypergraphs(std::slice::from_ref(&a)).unwrap(), a);

        let ab = concat_hypergraphs(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(ab.num_edges(), 6);
        let mut expected = sets(&a);
        expected.extend(sets(&b));
        assert_eq!(sets(&ab), expected);

        let aa = concat_hypergraphs(&[a.clone(), a.clone()]).unwrap();
        let doubled: Vec<usize> = a.vertex_degrees().iter().map(|d| 2 * d).collect();
        assert_eq!(aa.vertex_degrees(), doubled);
    }

    #[test]
    fn concat_rejects_mismatched_vertex_sets() {
        let a = Hypergraph::from_edges(2, vec![vec![0, 1]]).unwrap();
        let b = Hypergraph::from_edges(3, vec![vec![0, 2]]).unwrap();
        assert!(matches!(concat_hypergraphs(&[a, b]), Err(Error::Structure(_))));
        assert!(concat_hypergraphs(&[]).is_err());
    }

    #[test]
    fn inter_neighbors_read_off_incidence() {
        let h = Tensor::from_rows(&[[1.0], [1.0]]).unwrap();
        let g = Hypergraph::from_incidence(&h).unwrap();
        let (nv, ne) = g.inter_neighbors();
        assert_eq!(nv, vec![vec![0, 1]]);
        assert_eq!(ne, vec![vec![0], vec![0]]);
    }

    #[test]
    fn empty_column_is_rejected() {
        let h = Tensor::from_rows(&[[1.0, 0.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(Hypergraph::from_incidence(&h), Err(Error::Structure(_))));
        let frac = Tensor::from_rows(&[[0.5]]).unwrap();
        assert!(matches!(Hypergraph::from_incidence(&frac), Err(Error::Structure(_))));
    }

    #[test]
    fn isolated_vertex_has_no_mean_operator() {
        let g = Hypergraph::from_edges(3, vec![vec![0, 1]]).unwrap();
        assert!(g.edge_to_vertex_mean().is_err());
    }

    #[test]
    fn incidence_csv_export() {
        let g = Hypergraph::from_edges(2, vec![vec![0, 1], vec![1]]).unwrap();
        let mut buf = Vec::new();
        g.write_incidence_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "1,0\n1,1\n");
    }

    fn features(max_n: usize) -> impl Strategy<Value = Tensor> {
        (2..max_n, 1usize..4).prop_flat_map(|(n, d)| {
            proptest::collection::vec(-5.0f64..5.0, n * d)
                .prop_map(move |v| Tensor::new(n, d, v).unwrap())
        })
    }

    fn random_graph() -> impl Strategy<Value = Hypergraph> {
        (1usize..8).prop_flat_map(|n| {
            proptest::collection::vec(proptest::collection::vec(0..n, 1..=n), 1..6)
                .prop_map(move |edges| Hypergraph::from_edges(n, edges).unwrap())
        })
    }

    proptest! {
        #[test]
        fn knn_structure(x in features(12), k_seed in 0usize..100) {
            let k = k_seed % x.rows();
            let g = build_knn_hyperedges(&x, k).unwrap();
            prop_assert_eq!(g.num_edges(), x.rows());
            for v in 0..x.rows() {
                prop_assert!(g.contains(v, v));
                prop_assert_eq!(g.edge(v).len(), k + 1);
            }
            let h = g.incidence();
            let degs = g.vertex_degrees();
            for v in 0..h.rows() {
                prop_assert_eq!(h.row(v).iter().sum::<f64>() as usize, degs[v]);
            }
        }

        #[test]
        fn knn_is_permutation_equivariant(x in features(10), shift in 1usize..10, k_seed in 0usize..10) {
            let n = x.rows();
            let k = k_seed % n;
            // relabel vertex v as perm[v]
            let perm: Vec<usize> = (0..n).map(|v| (v + shift) % n).collect();
            let mut px = Tensor::zeros(n, x.cols());
            for v in 0..n {
                for c in 0..x.cols() {
                    px.set(perm[v], c, x.get(v, c));
                }
            }
            let mut dists = Vec::new();
            for a in 0..n {
                for b in a + 1..n {
                    dists.push(x.row(a).iter().zip(x.row(b)).map(|(p, q)| (p - q) * (p - q)).sum::<f64>());
                }
            }
            dists.sort_by(f64::total_cmp);
            prop_assume!(dists.windows(2).all(|w| w[0] != w[1]));

            let g = build_knn_hyperedges(&x, k).unwrap();
            let pg = build_knn_hyperedges(&px, k).unwrap();
            for v in 0..n {
                let mut mapped: Vec<usize> = g.edge(v).iter().map(|&u| perm[u]).collect();
                mapped.sort_unstable();
                prop_assert_eq!(pg.edge(perm[v]), &mapped[..]);
            }
        }

        #[test]
        fn concat_is_associative(a in random_graph(), seed in 0usize..5) {
            let n = a.num_vertices();
            let b = Hypergraph::from_edges(n, vec![(0..n).collect()]).unwrap();
            let c = Hypergraph::from_edges(n, vec![vec![seed % n]]).unwrap();
            let left = concat_hypergraphs(&[concat_hypergraphs(&[a.clone(), b.clone()]).unwrap(), c.clone()]).unwrap();
            let right = concat_hypergraphs(&[a, concat_hypergraphs(&[b, c]).unwrap()]).unwrap();
            prop_assert_eq!(left.incidence(), right.incidence());
        }

        #[test]
        fn inter_neighbors_round_trip(g in random_graph()) {
            let (nv, ne) = g.inter_neighbors();
            let h = g.incidence();
            let rebuilt = Hypergraph::from_edges(g.num_vertices(), nv).unwrap();
            prop_assert_eq!(rebuilt.incidence(), h.clone());
            for (v, incident) in ne.iter().enumerate() {
                for e in 0..h.cols() {
                    prop_assert_eq!(incident.contains(&e), h.get(v, e) == 1.0);
                }
            }
        }
    }
}
