//! Marching-cubes case table, generated once by tracing iso-contour cycles
//! over the cube faces.
//!
//! Corners are numbered by coordinate bits (bit 0 = x, bit 1 = y, bit 2 = z);
//! the 12 edges enumerate the corner pairs differing in one bit. For each of
//! the 256 inside/outside configurations, the crossed edges form closed cycles:
//! every crossed edge lies on exactly two faces and each face pairs its crossed
//! edges, resolving the 4-crossing (ambiguous) faces with a fixed rule that
//! keeps the inside corners separated. The rule depends only on the face's
//! corner signs, so adjacent cells always agree and closed level sets mesh
//! watertight. Cycles are fan-triangulated with outward (positive side)
//! orientation.

use std::sync::OnceLock;

/// Edge endpoints (corner indices) for the 12 cube edges.
pub const EDGE_CORNERS: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7), // x-aligned
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7), // y-aligned
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7), // z-aligned
];

/// Each face as its 4 corners in cyclic (quad) order.
const FACES: [[usize; 4]; 6] = [
    [0, 2, 6, 4], // x = 0
    [1, 3, 7, 5], // x = 1
    [0, 1, 5, 4], // y = 0
    [2, 3, 7, 6], // y = 1
    [0, 1, 3, 2], // z = 0
    [4, 5, 7, 6], // z = 1
];

/// Unit-cube coordinates of corner `c`.
pub fn corner_pos(c: usize) -> [f64; 3] {
    [
        (c & 1) as f64,
        ((c >> 1) & 1) as f64,
        ((c >> 2) & 1) as f64,
    ]
}

fn edge_index(a: usize, b: usize) -> usize {
    let (a, b) = if a < b { (a, b) } else { (b, a) };
    EDGE_CORNERS
        .iter()
        .position(|&(x, y)| (x, y) == (a, b))
        .expect("valid cube edge")
}

fn edge_midpoint(e: usize) -> [f64; 3] {
    let (a, b) = EDGE_CORNERS[e];
    let pa = corner_pos(a);
    let pb = corner_pos(b);
    [
        0.5 * (pa[0] + pb[0]),
        0.5 * (pa[1] + pb[1]),
        0.5 * (pa[2] + pb[2]),
    ]
}

/// Triangles (as edge-index triples) for one corner configuration.
fn triangulate_case(config: u8) -> Vec<[usize; 3]> {
    let inside = |c: usize| (config >> c) & 1 == 1;
    let crossed = |a: usize, b: usize| inside(a) != inside(b);

    // pair crossed edges on every face; each crossed edge collects exactly
    // two partners (one per adjacent face) forming closed cycles
    let mut links: [Vec<usize>; 12] = Default::default();
    for face in &FACES {
        let mut cuts = Vec::new();
        for k in 0..4 {
            let (a, b) = (face[k], face[(k + 1) % 4]);
            if crossed(a, b) {
                cuts.push((k, edge_index(a, b)));
            }
        }
        match cuts.len() {
            0 => {}
            2 => {
                links[cuts[0].1].push(cuts[1].1);
                links[cuts[1].1].push(cuts[0].1);
            }
            4 => {
                // alternating corners: connect the two cuts around each
                // inside corner so that inside regions stay separated
                for k in 0..4 {
                    if inside(face[k]) && !inside(face[(k + 1) % 4]) && !inside(face[(k + 3) % 4]) {
                        let e_prev = edge_index(face[(k + 3) % 4], face[k]);
                        let e_next = edge_index(face[k], face[(k + 1) % 4]);
                        links[e_prev].push(e_next);
                        links[e_next].push(e_prev);
                    }
                }
            }
            _ => unreachable!("a quad face has an even number of sign changes"),
        }
    }

    // walk the cycles
    let mut visited = [false; 12];
    let mut triangles = Vec::new();
    for start in 0..12 {
        if visited[start] || links[start].is_empty() {
            continue;
        }
        let mut cycle = vec![start];
        visited[start] = true;
        let mut prev = start;
        let mut cur = links[start][0];
        while cur != start {
            visited[cur] = true;
            cycle.push(cur);
            let next = if links[cur][0] == prev {
                links[cur][1]
            } else {
                links[cur][0]
            };
            prev = cur;
            cur = next;
        }
        orient_cycle(config, &mut cycle);
        for k in 1..cycle.len() - 1 {
            triangles.push([cycle[0], cycle[k], cycle[k + 1]]);
        }
    }
    triangles
}

/// Reverse the cycle if its normal points toward the inside corners.
fn orient_cycle(config: u8, cycle: &mut Vec<usize>) {
    let pts: Vec<[f64; 3]> = cycle.iter().map(|&e| edge_midpoint(e)).collect();
    // Newell normal
    let mut n = [0.0f64; 3];
    for i in 0..pts.len() {
        let a = pts[i];
        let b = pts[(i + 1) % pts.len()];
        n[0] += (a[1] - b[1]) * (a[2] + b[2]);
        n[1] += (a[2] - b[2]) * (a[0] + b[0]);
        n[2] += (a[0] - b[0]) * (a[1] + b[1]);
    }
    // reference direction: from inside corner mass toward outside corner mass
    let mut dir = [0.0f64; 3];
    for c in 0..8 {
        let p = corner_pos(c);
        let sign = if (config >> c) & 1 == 1 { -1.0 } else { 1.0 };
        for d in 0..3 {
            dir[d] += sign * (p[d] - 0.5);
        }
    }
    let dp: f64 = (0..3).map(|d| n[d] * dir[d]).sum();
    if dp < 0.0 {
        cycle.reverse();
    }
}

pub struct CaseTable {
    /// Per configuration: triangles as triples of edge indices.
    pub cases: Vec<Vec<[usize; 3]>>,
}

pub fn case_table() -> &'static CaseTable {
    static TABLE: OnceLock<CaseTable> = OnceLock::new();
    TABLE.get_or_init(|| CaseTable {
        cases: (0..=255u8).map(triangulate_case).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn test_empty_and_full_cases_have_no_triangles() {
        let t = case_table();
        assert!(t.cases[0].is_empty());
        assert!(t.cases[255].is_empty());
    }

    #[test]
    fn test_single_corner_case_is_one_triangle() {
        let t = case_table();
        for c in 0..8 {
            let config = 1u8 << c;
            assert_eq!(t.cases[config as usize].len(), 1, "corner {c}");
        }
    }

    #[test]
    fn test_complementary_cases_have_equal_triangle_counts() {
        let t = case_table();
        for cfg in 0..=255usize {
            assert_eq!(t.cases[cfg].len(), t.cases[255 - cfg].len());
        }
    }

    #[test]
    fn test_every_triangle_uses_crossed_edges_only() {
        let t = case_table();
        for cfg in 0..=255usize {
            let inside = |c: usize| (cfg >> c) & 1 == 1;
            for tri in &t.cases[cfg] {
                for &e in tri {
                    let (a, b) = EDGE_CORNERS[e];
                    assert!(inside(a) != inside(b), "config {cfg} uses uncrossed edge {e}");
                }
            }
        }
    }
}
