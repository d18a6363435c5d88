use std::collections::HashMap;

use crate::error::{Error, Result};

/// Sentinel for a missing face on a boundary edge.
pub const NO_FACE: usize = usize::MAX;

/// An undirected edge with its (one or two) incident faces.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    /// Endpoints, smaller index first.
    pub vertices: [usize; 2],
    /// Incident faces; the second is [`NO_FACE`] on the boundary.
    pub faces: [usize; 2],
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.faces[1] == NO_FACE
    }
}

/// Compressed adjacency lists.
#[derive(Clone, Debug, Default)]
pub(crate) struct Adjacency {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Adjacency {
    fn from_lists(lists: Vec<Vec<usize>>) -> Self {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        offsets.push(0);
        let mut items = Vec::new();
        for list in lists {
            items.extend(list);
            offsets.push(items.len());
        }
        Adjacency { offsets, items }
    }

    pub(crate) fn get(&self, i: usize) -> &[usize] {
        &self.items[self.offsets[i]..self.offsets[i + 1]]
    }
}

/// Connectivity derived from a face list: edges, adjacency and the boundary loop.
#[derive(Clone, Debug)]
pub struct Topology {
    edges: Vec<Edge>,
    face_edges: Vec<[usize; 3]>,
    vertex_faces: Adjacency,
    vertex_neighbors: Adjacency,
    boundary: Vec<usize>,
    is_boundary: Vec<bool>,
}

impl Topology {
    /// Builds and validates the connectivity of a disk-topology triangle mesh.
    pub fn build(vertex_count: usize, faces: &[[usize; 3]]) -> Result<Self> {
        for (f, face) in faces.iter().enumerate() {
            for &v in face {
                if v >= vertex_count {
                    return Err(Error::InvalidFace {
                        face: f,
                        reason: format!("vertex index {v} out of range (vertex count {vertex_count})"),
                    });
                }
            }
            if face[0] == face[1] || face[1] == face[2] || face[0] == face[2] {
                return Err(Error::InvalidFace {
                    face: f,
                    reason: format!("repeated vertex in {face:?}"),
                });
            }
        }

        // Undirected incidence first, so that duplicated faces are reported as
        // non-manifold rather than as an orientation problem.
        let mut undirected: Vec<(usize, usize, usize)> = Vec::with_capacity(faces.len() * 3);
        for (f, face) in faces.iter().enumerate() {
            for k in 0..3 {
                let a = face[k];
                let b = face[(k + 1) % 3];
                undirected.push((a.min(b), a.max(b), f));
            }
        }
        undirected.sort_unstable();

        let mut edges: Vec<Edge> = Vec::new();
        let mut i = 0;
        while i < undirected.len() {
            let (a, b, f0) = undirected[i];
            let mut j = i + 1;
            while j < undirected.len() && undirected[j].0 == a && undirected[j].1 == b {
                j += 1;
            }
            match j - i {
                1 => edges.push(Edge {
                    vertices: [a, b],
                    faces: [f0, NO_FACE],
                }),
                2 => {
                    let f1 = undirected[i + 1].2;
                    if f0 == f1 {
                        return Err(Error::NonManifoldEdge(a, b));
                    }
                    edges.push(Edge {
                        vertices: [a, b],
                        faces: [f0, f1],
                    });
                }
                _ => return Err(Error::NonManifoldEdge(a, b)),
            }
            i = j;
        }

        let mut directed: HashMap<(usize, usize), usize> = HashMap::with_capacity(faces.len() * 3);
        for (f, face) in faces.iter().enumerate() {
            for k in 0..3 {
                let a = face[k];
                let b = face[(k + 1) % 3];
                if let Some(&other) = directed.get(&(a, b)) {
                    let mut x = faces[other];
                    let mut y = *face;
                    x.sort_unstable();
                    y.sort_unstable();
                    if x == y {
                        return Err(Error::NonManifoldEdge(a.min(b), a.max(b)));
                    }
                    return Err(Error::InconsistentOrientation(a.min(b), a.max(b)));
                }
                directed.insert((a, b), f);
            }
        }

        let edge_index: HashMap<(usize, usize), usize> = edges
            .iter()
            .enumerate()
            .map(|(e, edge)| ((edge.vertices[0], edge.vertices[1]), e))
            .collect();
        let face_edges: Vec<[usize; 3]> = faces
            .iter()
            .map(|face| {
                let mut fe = [0usize; 3];
                for (k, slot) in fe.iter_mut().enumerate() {
                    let a = face[(k + 1) % 3];
                    let b = face[(k + 2) % 3];
                    *slot = edge_index[&(a.min(b), a.max(b))];
                }
                fe
            })
            .collect();

        let mut vf: Vec<Vec<usize>> = vec![Vec::new(); vertex_count];
        for (f, face) in faces.iter().enumerate() {
            for &v in face {
                vf[v].push(f);
            }
        }
        let mut vn: Vec<Vec<usize>> = vec![Vec::new(); vertex_count];
        for e in &edges {
            vn[e.vertices[0]].push(e.vertices[1]);
            vn[e.vertices[1]].push(e.vertices[0]);
        }
        for list in &mut vn {
            list.sort_unstable();
        }

        // Boundary half-edges keep the orientation of their face.
        let mut next: Vec<usize> = vec![usize::MAX; vertex_count];
        let mut boundary_edge_count = 0usize;
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                if next[a] != usize::MAX {
                    return Err(Error::NonManifoldVertex(a));
                }
                next[a] = b;
                boundary_edge_count += 1;
            }
        }

        let euler = vertex_count as i64 - edges.len() as i64 + faces.len() as i64;
        let mut visited = vec![false; vertex_count];
        let mut loops: Vec<Vec<usize>> = Vec::new();
        for start in 0..vertex_count {
            if next[start] == usize::MAX || visited[start] {
                continue;
            }
            let mut lp = Vec::new();
            let mut v = start;
            while !visited[v] {
                visited[v] = true;
                lp.push(v);
                v = next[v];
                if v == usize::MAX {
                    return Err(Error::NonManifoldVertex(*lp.last().unwrap()));
                }
            }
            if v != start {
                return Err(Error::NonManifoldVertex(v));
            }
            loops.push(lp);
        }
        let loop_vertices: usize = loops.iter().map(Vec::len).sum();
        if loops.len() != 1 || euler != 1 || loop_vertices != boundary_edge_count {
            return Err(Error::NotADisk {
                loops: loops.len(),
                euler,
            });
        }
        // Loops are discovered from their smallest vertex, so the single loop
        // already starts at the smallest boundary index.
        let boundary = loops.pop().unwrap();
        let mut is_boundary = vec![false; vertex_count];
        for &v in &boundary {
            is_boundary[v] = true;
        }

        Ok(Topology {
            edges,
            face_edges,
            vertex_faces: Adjacency::from_lists(vf),
            vertex_neighbors: Adjacency::from_lists(vn),
            boundary,
            is_boundary,
        })
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// For each face, the edge opposite each corner.
    pub fn face_edges(&self) -> &[[usize; 3]] {
        &self.face_edges
    }

    pub fn vertex_faces(&self, v: usize) -> &[usize] {
        self.vertex_faces.get(v)
    }

    /// Sorted one-ring of `v`.
    pub fn neighbors(&self, v: usize) -> &[usize] {
        self.vertex_neighbors.get(v)
    }

    /// Boundary loop, counterclockwise, starting at its smallest vertex index.
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.is_boundary[v]
    }

    /// Faces adjacent to `face` across its interior edges.
    pub fn face_neighbors(&self, face: usize) -> impl Iterator<Item = usize> + '_ {
        self.face_edges[face].iter().filter_map(move |&e| {
            let [a, b] = self.edges[e].faces;
            if b == NO_FACE {
                None
            } else if a == face {
                Some(b)
            } else {
                Some(a)
            }
        })
    }
}
