//! Levi-graph construction: discourse relations become explicit vertices so
//! that message passing only needs a closed set of six edge types.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DiscourseRelation, Edu, RelationLabel};

/// The six edge types. For a relation (a, r, b) reified as vertex v:
/// a -> v is default-in, v -> b default-out, b -> v reverse-in,
/// v -> a reverse-out. Every vertex carries a self edge, and the scenario
/// vertex connects to every other vertex in both directions with global
/// edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EdgeKind {
    DefaultIn,
    DefaultOut,
    ReverseIn,
    ReverseOut,
    SelfLoop,
    Global,
}

impl EdgeKind {
    pub const COUNT: usize = 6;

    pub const ALL: [EdgeKind; 6] = [
        EdgeKind::DefaultIn,
        EdgeKind::DefaultOut,
        EdgeKind::ReverseIn,
        EdgeKind::ReverseOut,
        EdgeKind::SelfLoop,
        EdgeKind::Global,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&e| e == self).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Vertex {
    /// A rule condition. `doc_rank` is the retrieval rank of its document,
    /// `edu_id` the EDU index within that document.
    Edu { doc_rank: usize, edu_id: usize },
    /// A reified discourse relation.
    Relation { doc_rank: usize, label: RelationLabel },
    /// The single global user-scenario vertex.
    Scenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeviGraph {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<Edge>,
}

impl LeviGraph {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn scenario_index(&self) -> usize {
        self.vertices
            .iter()
            .position(|v| matches!(v, Vertex::Scenario))
            .expect("graph always has a scenario vertex")
    }

    /// Indices of EDU vertices, in construction order.
    pub fn edu_vertex_indices(&self) -> Vec<usize> {
        self.vertices
            .iter()
            .enumerate()
            .filter(|(_, v)| matches!(v, Vertex::Edu { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Incoming neighbor lists per edge kind: `adj[kind][p]` lists the
    /// source vertices of kind-`kind` edges arriving at `p`.
    pub fn incoming_by_kind(&self) -> Vec<Vec<Vec<usize>>> {
        let mut adj = vec![vec![Vec::new(); self.vertices.len()]; EdgeKind::COUNT];
        for e in &self.edges {
            adj[e.kind.index()][e.to].push(e.from);
        }
        adj
    }
}

/// Build one Levi graph over all retrieved documents. Each document
/// contributes its EDU and relation vertices; the single scenario vertex is
/// shared by all of them.
pub fn build_levi_graph(docs: &[(Vec<Edu>, Vec<DiscourseRelation>)]) -> Result<LeviGraph> {
    if docs.is_empty() || docs.iter().any(|(edus, _)| edus.is_empty()) {
        return Err(Error::InvalidArgument(
            "levi graph needs at least one document with at least one EDU".into(),
        ));
    }

    let mut vertices = Vec::new();
    let mut edges = Vec::new();

    for (doc_rank, (edus, relations)) in docs.iter().enumerate() {
        let edu_base = vertices.len();
        let edu_index = |edu_id: usize| -> Option<usize> {
            edus.iter().position(|e| e.edu_id == edu_id).map(|p| edu_base + p)
        };
        for edu in edus {
            vertices.push(Vertex::Edu {
                doc_rank,
                edu_id: edu.edu_id,
            });
        }
        for rel in relations {
            let (Some(a), Some(b)) = (edu_index(rel.source_edu), edu_index(rel.target_edu)) else {
                return Err(Error::InvalidArgument(format!(
                    "relation references unknown edu {} -> {}",
                    rel.source_edu, rel.target_edu
                )));
            };
            let v = vertices.len();
            vertices.push(Vertex::Relation {
                doc_rank,
                label: rel.relation,
            });
            edges.push(Edge { from: a, to: v, kind: EdgeKind::DefaultIn });
            edges.push(Edge { from: v, to: b, kind: EdgeKind::DefaultOut });
            edges.push(Edge { from: b, to: v, kind: EdgeKind::ReverseIn });
            edges.push(Edge { from: v, to: a, kind: EdgeKind::ReverseOut });
        }
    }

    let scenario = vertices.len();
    vertices.push(Vertex::Scenario);

    for v in 0..vertices.len() {
        edges.push(Edge { from: v, to: v, kind: EdgeKind::SelfLoop });
    }
    for v in 0..scenario {
        edges.push(Edge { from: scenario, to: v, kind: EdgeKind::Global });
        edges.push(Edge { from: v, to: scenario, kind: EdgeKind::Global });
    }

    Ok(LeviGraph { vertices, edges })
}
