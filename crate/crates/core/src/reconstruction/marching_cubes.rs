//! Marching cubes over observed TSDF cells.
//!
//! The case table is derived at first use instead of being transcribed: for
//! each of the 256 sign configurations the crossed cube edges are linked face
//! by face into closed polygons, which are then fan-triangulated. Faces with
//! four crossings always separate their negative corners, a rule that depends
//! only on the face's own corner signs, so adjacent cells agree and the
//! surface has no cracks.

use std::collections::HashMap;
use std::sync::OnceLock;

use super::tsdf::TsdfVolume;
use super::TriangleMesh;
use crate::geometry::Vec3;

/// Corners are numbered by bits: x = bit 0, y = bit 1, z = bit 2.
fn corner_offset(c: usize) -> [usize; 3] {
    [c & 1, (c >> 1) & 1, (c >> 2) & 1]
}

/// The 12 edges as (corner, axis), corner being the endpoint with the lower coordinate.
fn edges() -> [(usize, usize); 12] {
    let mut out = [(0, 0); 12];
    let mut n = 0;
    for axis in 0..3 {
        for c in 0..8 {
            if c & (1 << axis) == 0 {
                out[n] = (c, axis);
                n += 1;
            }
        }
    }
    out
}

fn edge_id(a: usize, b: usize) -> usize {
    let (lo, hi) = (a.min(b), a.max(b));
    let axis = (lo ^ hi).trailing_zeros() as usize;
    edges().iter().position(|&e| e == (lo, axis)).expect("corners share an edge")
}

/// Polygons (as cyclic edge lists) for every sign configuration.
fn case_table() -> &'static [Vec<Vec<usize>>; 256] {
    static TABLE: OnceLock<[Vec<Vec<usize>>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(build_case))
}

fn build_case(case: usize) -> Vec<Vec<usize>> {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut links: [Vec<usize>; 12] = Default::default();
    let mut link = |a: usize, b: usize| {
        links[a].push(b);
        links[b].push(a);
    };
    for axis in 0..3 {
        let (u, v) = match axis {
            0 => (1, 2),
            1 => (0, 2),
            _ => (0, 1),
        };
        for side in 0..2 {
            let corners = [(0, 0), (1, 0), (1, 1), (0, 1)].map(|(a, b)| side << axis | a << u | b << v);
            let face_edges: [usize; 4] = std::array::from_fn(|i| edge_id(corners[i], corners[(i + 1) % 4]));
            let crossed: Vec<usize> = (0..4).filter(|&i| inside(corners[i]) != inside(corners[(i + 1) % 4])).collect();
            match crossed.len() {
                0 => {}
                2 => link(face_edges[crossed[0]], face_edges[crossed[1]]),
                4 => {
                    if inside(corners[0]) {
                        link(face_edges[3], face_edges[0]);
                        link(face_edges[1], face_edges[2]);
                    } else {
                        link(face_edges[0], face_edges[1]);
                        link(face_edges[2], face_edges[3]);
                    }
                }
                _ => unreachable!("a face has an even number of sign changes"),
            }
        }
    }
    let mut visited = [false; 12];
    let mut polygons = Vec::new();
    for start in 0..12 {
        if visited[start] || links[start].is_empty() {
            continue;
        }
        debug_assert_eq!(links[start].len(), 2);
        let mut poly = vec![start];
        visited[start] = true;
        let (mut prev, mut cur) = (start, links[start][0]);
        while cur != start {
            visited[cur] = true;
            poly.push(cur);
            let next = if links[cur][0] == prev { links[cur][1] } else { links[cur][0] };
            prev = cur;
            cur = next;
        }
        polygons.push(poly);
    }
    polygons
}

/// Extracts the zero level set from cells whose eight corners are all
/// observed (weight > 0). The mesh is welded along shared cell edges and
/// triangles are oriented with normals pointing toward positive distance.
pub fn extract_mesh(volume: &TsdfVolume) -> TriangleMesh {
    let table = case_table();
    let edge_list = edges();
    let [nx, ny, nz] = volume.dims();
    let distances = volume.distances();
    let weights = volume.weights();
    let voxel = volume.voxel_size();
    let mut mesh = TriangleMesh::default();
    let mut vertex_of: HashMap<usize, u32> = HashMap::new();
    let min_double_area = 1e-10 * voxel * voxel;

    for z in 0..nz.saturating_sub(1) {
        for y in 0..ny.saturating_sub(1) {
            for x in 0..nx.saturating_sub(1) {
                let mut d = [0f64; 8];
                let mut observed = true;
                let mut case = 0usize;
                for (c, slot) in d.iter_mut().enumerate() {
                    let [ox, oy, oz] = corner_offset(c);
                    let i = volume.index(x + ox, y + oy, z + oz);
                    if weights[i] <= 0.0 {
                        observed = false;
                        break;
                    }
                    *slot = distances[i] as f64;
                    if *slot < 0.0 {
                        case |= 1 << c;
                    }
                }
                if !observed || case == 0 || case == 255 {
                    continue;
                }
                let gradient = Vec3::new(
                    (0..8).map(|c| if c & 1 == 1 { d[c] } else { -d[c] }).sum(),
                    (0..8).map(|c| if c & 2 == 2 { d[c] } else { -d[c] }).sum(),
                    (0..8).map(|c| if c & 4 == 4 { d[c] } else { -d[c] }).sum(),
                );
                for poly in &table[case] {
                    let ids: Vec<u32> = poly
                        .iter()
                        .map(|&e| {
                            let (c, axis) = edge_list[e];
                            let [ox, oy, oz] = corner_offset(c);
                            let (gx, gy, gz) = (x + ox, y + oy, z + oz);
                            let key = volume.index(gx, gy, gz) * 3 + axis;
                            *vertex_of.entry(key).or_insert_with(|| {
                                let d0 = d[c];
                                let d1 = d[c | 1 << axis];
                                let t = d0 / (d0 - d1);
                                let mut p = volume.voxel_center(gx, gy, gz);
                                p[axis] += t * voxel;
                                mesh.vertices.push(p);
                                (mesh.vertices.len() - 1) as u32
                            })
                        })
                        .collect();
                    for i in 1..ids.len() - 1 {
                        let mut tri = [ids[0], ids[i], ids[i + 1]];
                        let [a, b, c] = tri.map(|v| mesh.vertices[v as usize]);
                        let n = (b - a).cross(&(c - a));
                        if n.norm() <= min_double_area {
                            continue;
                        }
                        if n.dot(&gradient) < 0.0 {
                            tri.swap(1, 2);
                        }
                        mesh.triangles.push(tri);
                    }
                }
            }
        }
    }
    mesh
}
