//! Density-grid evaluation, marching cubes at a fixed isovalue, vertex
//! colorization, sliding-window tile stitching, and OBJ/PLY export.

use crate::error::{Error, Result};
use crate::field::TriPlaneField;
use crate::math::{vec3, Vec3};
use crate::mc_tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRIANGLE_TABLE};
use rayon::prelude::*;
use std::collections::HashMap;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

/// Regular scalar grid of density samples. Values are stored x-fastest;
/// node (i, j, k) sits at `origin + cell * (i, j, k)`.
#[derive(Clone, Debug)]
pub struct DensityGrid {
    pub dims: [usize; 3],
    pub origin: Vec3,
    pub cell: f64,
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(dims: [usize; 3], origin: Vec3, cell: f64) -> DensityGrid {
        DensityGrid {
            dims,
            origin,
            cell,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.dims[1] + j) * self.dims[0] + i
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.idx(i, j, k)]
    }

    pub fn node_pos(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + vec3(i as f64, j as f64, k as f64) * self.cell
    }
}

/// Evaluate the field's density at the nodes of a res^3 lattice of voxel
/// centers spanning the effective cube. The sky plays no part here.
pub fn eval_density_grid(field: &TriPlaneField, res: usize) -> Result<DensityGrid> {
    if res < 2 {
        return Err(Error::InvalidConfig(format!(
            "density grid needs res >= 2, got {res}"
        )));
    }
    let half = field.extent.half();
    let cell = 2.0 * half / res as f64;
    let origin = vec3(-half + cell / 2.0, -half + cell / 2.0, -half + cell / 2.0);
    let mut grid = DensityGrid::new([res, res, res], origin, cell);
    let dims = grid.dims;
    let slabs: Vec<Vec<f64>> = (0..dims[2])
        .into_par_iter()
        .map(|k| {
            let mut slab = vec![0.0; dims[0] * dims[1]];
            let mut h = vec![0.0; field.channels];
            let mut cache = crate::field::DecodeCache::default();
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    let p = origin + vec3(i as f64, j as f64, k as f64) * cell;
                    field.sample_into(p, &mut h);
                    slab[j * dims[0] + i] = field.decoder.decode_density(&h, &mut cache);
                }
            }
            slab
        })
        .collect();
    for (k, slab) in slabs.into_iter().enumerate() {
        let base = k * dims[0] * dims[1];
        grid.values[base..base + slab.len()].copy_from_slice(&slab);
    }
    Ok(grid)
}

#[derive(Clone, Debug, Default)]
pub struct Mesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    /// Per-vertex rgb in [0,1]; empty for uncolored meshes.
    pub colors: Vec<[f64; 3]>,
}

impl Mesh {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }
}

fn triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    (b - a).cross(c - a).length() / 2.0
}

/// Extract the sigma = tau isosurface with the 256-case tables and linear
/// edge interpolation. Vertices are deduplicated through grid-edge keys so
/// closed surfaces come out watertight; triangles are wound so normals
/// descend the density gradient (outward).
pub fn marching_cubes(grid: &DensityGrid, tau: f64) -> Result<Mesh> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("isovalue {tau} must be > 0")));
    }
    let [nx, ny, nz] = grid.dims;
    let mut mesh = Mesh::default();
    // Canonical undirected grid-edge key: (lower node linear index, axis).
    let mut edge_vertices: HashMap<(usize, u8), u32> = HashMap::new();
    let node_index = |i: usize, j: usize, k: usize| (k * ny + j) * nx + i;

    for k in 0..nz.saturating_sub(1) {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let corner_vals: [f64; 8] = std::array::from_fn(|c| {
                    let [dx, dy, dz] = CORNER_OFFSETS[c];
                    grid.get(i + dx, j + dy, k + dz)
                });
                let mut case = 0usize;
                for (c, v) in corner_vals.iter().enumerate() {
                    if *v < tau {
                        case |= 1 << c;
                    }
                }
                if case == 0 || case == 255 {
                    continue;
                }
                let mut cell_edges = [u32::MAX; 12];
                let crossing = EDGE_TABLE[case];
                for (e, corners) in EDGE_CORNERS.iter().enumerate() {
                    if crossing & (1 << e) == 0 {
                        continue;
                    }
                    let (va, vb) = (corner_vals[corners[0]], corner_vals[corners[1]]);
                    let [ax, ay, az] = CORNER_OFFSETS[corners[0]];
                    let [bx, by, bz] = CORNER_OFFSETS[corners[1]];
                    let a = (i + ax, j + ay, k + az);
                    let b = (i + bx, j + by, k + bz);
                    let (lo, hi, lo_val, hi_val) = if (a.2, a.1, a.0) <= (b.2, b.1, b.0) {
                        (a, b, va, vb)
                    } else {
                        (b, a, vb, va)
                    };
                    let axis = if lo.0 != hi.0 {
                        0u8
                    } else if lo.1 != hi.1 {
                        1
                    } else {
                        2
                    };
                    let key = (node_index(lo.0, lo.1, lo.2), axis);
                    let vid = *edge_vertices.entry(key).or_insert_with(|| {
                        let denom = hi_val - lo_val;
                        let t = if denom.abs() < 1e-12 {
                            0.5
                        } else {
                            ((tau - lo_val) / denom).clamp(0.0, 1.0)
                        };
                        let pa = grid.node_pos(lo.0, lo.1, lo.2);
                        let pb = grid.node_pos(hi.0, hi.1, hi.2);
                        let id = mesh.vertices.len() as u32;
                        mesh.vertices.push(pa + (pb - pa) * t);
                        id
                    });
                    cell_edges[e] = vid;
                }
                let row = &TRIANGLE_TABLE[case];
                let mut t = 0;
                while t < row.len() && row[t] >= 0 {
                    let tri = [
                        cell_edges[row[t] as usize],
                        cell_edges[row[t + 1] as usize],
                        cell_edges[row[t + 2] as usize],
                    ];
                    t += 3;
                    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                        continue;
                    }
                    let area = triangle_area(
                        mesh.vertices[tri[0] as usize],
                        mesh.vertices[tri[1] as usize],
                        mesh.vertices[tri[2] as usize],
                    );
                    if area <= 1e-12 {
                        continue;
                    }
                    mesh.triangles.push(tri);
                }
            }
        }
    }
    Ok(mesh)
}

/// Attach per-vertex colors from the field under a fixed illumination code.
pub fn colorize(mesh: &mut Mesh, field: &TriPlaneField, code: &[f64]) {
    mesh.colors = mesh
        .vertices
        .par_iter()
        .map(|v| field.density_color_at(*v, code).1)
        .collect();
}

/// Merge per-tile density grids of fitted fields laid out on a regular
/// lattice with half-extent overlap (step = L_eff / 2); overlapping voxels
/// are averaged.
pub fn stitch_tiles(tiles: &[((i64, i64), &TriPlaneField)], res: usize) -> Result<DensityGrid> {
    if tiles.is_empty() {
        return Err(Error::InvalidConfig("no tiles to stitch".into()));
    }
    if res % 2 != 0 {
        return Err(Error::InvalidConfig(
            "stitching needs an even grid res so half-extent steps align".into(),
        ));
    }
    let extent = tiles[0].1.extent.effective();
    for (_, field) in tiles {
        if (field.extent.effective() - extent).abs() > 1e-9 {
            return Err(Error::ShapeMismatch(
                "stitched tiles must share one extent".into(),
            ));
        }
    }
    let step_cells = (res / 2) as i64;
    let min_i = tiles.iter().map(|((i, _), _)| *i).min().unwrap();
    let max_i = tiles.iter().map(|((i, _), _)| *i).max().unwrap();
    let min_j = tiles.iter().map(|((_, j), _)| *j).min().unwrap();
    let max_j = tiles.iter().map(|((_, j), _)| *j).max().unwrap();
    let nx = res + ((max_i - min_i) as usize) * res / 2;
    let ny = res + ((max_j - min_j) as usize) * res / 2;
    let nz = res;
    let half = extent / 2.0;
    let cell = extent / res as f64;
    let step_m = extent / 2.0;
    let origin = vec3(
        min_i as f64 * step_m - half + cell / 2.0,
        min_j as f64 * step_m - half + cell / 2.0,
        -half + cell / 2.0,
    );
    let mut sum = DensityGrid::new([nx, ny, nz], origin, cell);
    let mut count = vec![0u32; sum.values.len()];
    for ((ti, tj), field) in tiles {
        let tile_grid = eval_density_grid(field, res)?;
        let off_x = ((ti - min_i) * step_cells) as usize;
        let off_y = ((tj - min_j) * step_cells) as usize;
        for k in 0..res {
            for j in 0..res {
                for i in 0..res {
                    let dst = sum.idx(i + off_x, j + off_y, k);
                    sum.values[dst] += tile_grid.get(i, j, k);
                    count[dst] += 1;
                }
            }
        }
    }
    for (v, c) in sum.values.iter_mut().zip(&count) {
        if *c > 0 {
            *v /= *c as f64;
        }
    }
    Ok(sum)
}

/// OBJ with per-vertex colors as extended "v x y z r g b" lines.
pub fn save_obj(path: &Path, mesh: &Mesh) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let colored = mesh.colors.len() == mesh.vertices.len();
    for (i, v) in mesh.vertices.iter().enumerate() {
        if colored {
            let c = mesh.colors[i];
            writeln!(
                w,
                "v {} {} {} {} {} {}",
                v.x, v.y, v.z, c[0], c[1], c[2]
            )
            .map_err(|e| Error::io(path, e))?;
        } else {
            writeln!(w, "v {} {} {}", v.x, v.y, v.z).map_err(|e| Error::io(path, e))?;
        }
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Binary little-endian PLY with float positions and uchar colors.
pub fn save_ply(path: &Path, mesh: &Mesh) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let colored = mesh.colors.len() == mesh.vertices.len();
    let mut header = String::new();
    header.push_str("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", mesh.vertices.len()));
    header.push_str("property float x\nproperty float y\nproperty float z\n");
    if colored {
        header.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\n");
    }
    header.push_str(&format!("element face {}\n", mesh.triangles.len()));
    header.push_str("property list uchar int vertex_indices\nend_header\n");
    w.write_all(header.as_bytes()).map_err(|e| Error::io(path, e))?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        for coord in [v.x, v.y, v.z] {
            w.write_all(&(coord as f32).to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
        if colored {
            for c in mesh.colors[i] {
                w.write_all(&[(c.clamp(0.0, 1.0) * 255.0).round() as u8])
                    .map_err(|e| Error::io(path, e))?;
            }
        }
    }
    for t in &mesh.triangles {
        w.write_all(&[3u8]).map_err(|e| Error::io(path, e))?;
        for idx in t {
            w.write_all(&(*idx as i32).to_le_bytes())
                .map_err(|e| Error::io(path, e))?;
        }
    }
    Ok(())
}

/// Re-parser for the PLY layout written by [`save_ply`]; used to verify
/// exports byte-for-byte semantics.
pub fn load_ply(path: &Path) -> Result<Mesh> {
    let mut data = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut data)
        .map_err(|e| Error::io(path, e))?;
    let header_end = data
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| Error::parse(path, "missing end_header"))?
        + 11;
    let header = std::str::from_utf8(&data[..header_end])
        .map_err(|_| Error::parse(path, "non-utf8 header"))?;
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut colored = false;
    for line in header.lines() {
        if let Some(rest) = line.strip_prefix("element vertex ") {
            n_vertices = rest
                .parse()
                .map_err(|_| Error::parse(path, "bad vertex count"))?;
        } else if let Some(rest) = line.strip_prefix("element face ") {
            n_faces = rest
                .parse()
                .map_err(|_| Error::parse(path, "bad face count"))?;
        } else if line == "property uchar red" {
            colored = true;
        }
    }
    let mut mesh = Mesh::default();
    let mut off = header_end;
    let stride = 12 + if colored { 3 } else { 0 };
    if data.len() < off + n_vertices * stride {
        return Err(Error::parse(path, "truncated vertex data"));
    }
    for _ in 0..n_vertices {
        let mut coords = [0.0f64; 3];
        for c in coords.iter_mut() {
            *c = f32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as f64;
            off += 4;
        }
        mesh.vertices.push(vec3(coords[0], coords[1], coords[2]));
        if colored {
            mesh.colors.push([
                data[off] as f64 / 255.0,
                data[off + 1] as f64 / 255.0,
                data[off + 2] as f64 / 255.0,
            ]);
            off += 3;
        }
    }
    for _ in 0..n_faces {
        if data.len() < off + 13 {
            return Err(Error::parse(path, "truncated face data"));
        }
        if data[off] != 3 {
            return Err(Error::parse(path, "non-triangle face"));
        }
        off += 1;
        let mut tri = [0u32; 3];
        for t in tri.iter_mut() {
            *t = i32::from_le_bytes(data[off..off + 4].try_into().unwrap()) as u32;
            off += 4;
        }
        mesh.triangles.push(tri);
    }
    Ok(mesh)
}

/// Signed volume via the divergence theorem; positive for outward-oriented
/// closed meshes.
pub fn signed_volume(mesh: &Mesh) -> f64 {
    mesh.triangles
        .iter()
        .map(|t| {
            let a = mesh.vertices[t[0] as usize];
            let b = mesh.vertices[t[1] as usize];
            let c = mesh.vertices[t[2] as usize];
            a.dot(b.cross(c)) / 6.0
        })
        .sum()
}

/// Count of triangles sharing each undirected edge; watertight closed
/// meshes have every edge on exactly two triangles.
pub fn edge_incidence(mesh: &Mesh) -> HashMap<(u32, u32), usize> {
    let mut edges = HashMap::new();
    for t in &mesh.triangles {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let key = (a.min(b), a.max(b));
            *edges.entry(key).or_insert(0) += 1;
        }
    }
    edges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Decoder, SceneExtent};

    fn sphere_grid(res: usize, radius: f64, tau: f64) -> DensityGrid {
        // Linearly smoothed sphere: 2*tau at the center ramping through tau
        // exactly at |x - c| = radius.
        let half = radius * 2.0;
        let cell = 2.0 * half / res as f64;
        let origin = vec3(-half + cell / 2.0, -half + cell / 2.0, -half + cell / 2.0);
        let mut grid = DensityGrid::new([res, res, res], origin, cell);
        for k in 0..res {
            for j in 0..res {
                for i in 0..res {
                    let p = grid.node_pos(i, j, k);
                    let d = p.length();
                    let idx = grid.idx(i, j, k);
                    grid.values[idx] = (2.0 * tau * (1.0 - d / (2.0 * radius))).max(0.0);
                }
            }
        }
        grid
    }

    #[test]
    fn all_below_iso_gives_empty_mesh() {
        let grid = DensityGrid::new([8, 8, 8], Vec3::ZERO, 1.0);
        let mesh = marching_cubes(&grid, 1.0).unwrap();
        assert!(mesh.is_empty());
        assert!(mesh.triangles.is_empty());
    }

    #[test]
    fn single_interior_voxel_gives_closed_surface() {
        let mut grid = DensityGrid::new([5, 5, 5], Vec3::ZERO, 1.0);
        let idx = grid.idx(2, 2, 2);
        grid.values[idx] = 5.0;
        let mesh = marching_cubes(&grid, 1.0).unwrap();
        assert!(!mesh.is_empty());
        let edges = edge_incidence(&mesh);
        assert!(edges.values().all(|&c| c == 2), "watertight octahedron");
        let v = mesh.vertices.len() as i64;
        let e = edges.len() as i64;
        let f = mesh.triangles.len() as i64;
        assert_eq!(v - e + f, 2, "Euler characteristic of a sphere");
    }

    #[test]
    fn sphere_mesh_is_watertight_with_bounded_radial_error() {
        let (res, radius, tau) = (64, 5.0, 2.0);
        let grid = sphere_grid(res, radius, tau);
        let mesh = marching_cubes(&grid, tau).unwrap();
        assert!(!mesh.is_empty());
        let edges = edge_incidence(&mesh);
        assert!(edges.values().all(|&c| c == 2), "every edge in 2 triangles");
        let v = mesh.vertices.len() as i64;
        let e = edges.len() as i64;
        let f = mesh.triangles.len() as i64;
        assert_eq!(v - e + f, 2, "genus 0");
        let diag = grid.cell * 3f64.sqrt();
        for vert in &mesh.vertices {
            assert!(
                (vert.length() - radius).abs() <= diag,
                "vertex radius {} vs {radius}",
                vert.length()
            );
        }
        // Outward orientation: positive enclosed volume, close to the
        // analytic ball volume.
        let vol = signed_volume(&mesh);
        let expect = 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3);
        assert!(vol > 0.0, "normals must point outward (volume {vol})");
        assert!((vol - expect).abs() / expect < 0.05, "{vol} vs {expect}");
    }

    #[test]
    fn raising_isovalue_never_grows_the_sphere() {
        let grid = sphere_grid(48, 5.0, 2.0);
        let mut prev = f64::INFINITY;
        for tau in [1.0, 2.0, 3.0] {
            let mesh = marching_cubes(&grid, tau).unwrap();
            let vol = signed_volume(&mesh);
            assert!(vol <= prev + 1e-9, "tau {tau}: {vol} vs {prev}");
            prev = vol;
        }
    }

    #[test]
    fn density_grid_matches_field_lookup_bit_exactly() {
        let extent = SceneExtent::new(20.0, 16, 0).unwrap();
        let mut field = TriPlaneField::new(8, 2, Decoder::zeros(2, 4, 1), extent);
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        for plane in field.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        let grid = eval_density_grid(&field, 6).unwrap();
        for k in 0..6 {
            for j in 0..6 {
                for i in 0..6 {
                    let p = grid.node_pos(i, j, k);
                    assert_eq!(grid.get(i, j, k), field.density_at(p));
                }
            }
        }
    }

    #[test]
    fn res_two_grid_is_the_eight_corner_lattice() {
        let extent = SceneExtent::new(10.0, 16, 0).unwrap();
        let field = TriPlaneField::new(4, 2, Decoder::zeros(2, 4, 1), extent);
        let grid = eval_density_grid(&field, 2).unwrap();
        assert_eq!(grid.values.len(), 8);
        // Voxel centers at +-2.5 on each axis.
        assert_eq!(grid.node_pos(0, 0, 0), vec3(-2.5, -2.5, -2.5));
        assert_eq!(grid.node_pos(1, 1, 1), vec3(2.5, 2.5, 2.5));
        // Zero decoder: softplus(0) everywhere.
        for v in &grid.values {
            assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_field_gives_constant_grid() {
        let extent = SceneExtent::new(10.0, 16, 2).unwrap();
        let field = TriPlaneField::new(8, 2, Decoder::zeros(2, 4, 1), extent);
        let grid = eval_density_grid(&field, 5).unwrap();
        let first = grid.values[0];
        assert!(grid.values.iter().all(|v| *v == first));
    }

    #[test]
    fn colorize_stays_in_range_and_matches_field() {
        let extent = SceneExtent::new(10.0, 16, 0).unwrap();
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(14);
        let field = TriPlaneField::new(8, 2, Decoder::init(2, 4, 2, &mut rng), extent);
        let grid = sphere_grid(16, 2.0, 2.0);
        let mut mesh = marching_cubes(&grid, 2.0).unwrap();
        let code = vec![0.2, -0.3];
        colorize(&mut mesh, &field, &code);
        assert_eq!(mesh.colors.len(), mesh.vertices.len());
        for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
            assert!(c.iter().all(|x| (0.0..=1.0).contains(x)));
            assert_eq!(*c, field.density_color_at(*v, &code).1);
        }
    }

    #[test]
    fn stitch_of_identical_tiles_averages_to_either() {
        let extent = SceneExtent::new(16.0, 16, 0).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(15);
        let mut field = TriPlaneField::new(8, 2, Decoder::zeros(2, 4, 1), extent);
        for plane in field.planes.iter_mut() {
            for v in plane.iter_mut() {
                *v = rng.gen_range(-1.0..1.0);
            }
        }
        // The same field placed twice at the same lattice point.
        let merged = stitch_tiles(&[((0, 0), &field), ((0, 0), &field)], 8).unwrap();
        let single = eval_density_grid(&field, 8).unwrap();
        for (a, b) in merged.values.iter().zip(&single.values) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stitch_averages_in_the_overlap() {
        let extent = SceneExtent::new(16.0, 16, 0).unwrap();
        // Two constant fields with densities softplus-shifted to 2 and 4.
        let mut fa = TriPlaneField::new(8, 2, Decoder::zeros(2, 4, 1), extent);
        fa.decoder.density_b = crate::math::softplus_inverse(2.0);
        let mut fb = fa.clone();
        fb.decoder.density_b = crate::math::softplus_inverse(4.0);
        let merged = stitch_tiles(&[((0, 0), &fa), ((1, 0), &fb)], 8).unwrap();
        assert_eq!(merged.dims, [12, 8, 8]);
        // Left-only region: 2, overlap: 3, right-only: 4.
        assert!((merged.get(1, 3, 3) - 2.0).abs() < 1e-9);
        assert!((merged.get(6, 3, 3) - 3.0).abs() < 1e-9);
        assert!((merged.get(10, 3, 3) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn stitch_rejects_mismatched_extents() {
        let fa = TriPlaneField::new(
            8,
            2,
            Decoder::zeros(2, 4, 1),
            SceneExtent::new(16.0, 16, 0).unwrap(),
        );
        let fb = TriPlaneField::new(
            8,
            2,
            Decoder::zeros(2, 4, 1),
            SceneExtent::new(20.0, 16, 0).unwrap(),
        );
        assert!(stitch_tiles(&[((0, 0), &fa), ((1, 0), &fb)], 8).is_err());
    }

    #[test]
    fn exports_roundtrip_and_handle_empty_meshes() {
        let dir = tempfile::tempdir().unwrap();
        let empty = Mesh::default();
        save_obj(&dir.path().join("empty.obj"), &empty).unwrap();
        save_ply(&dir.path().join("empty.ply"), &empty).unwrap();
        let back = load_ply(&dir.path().join("empty.ply")).unwrap();
        assert!(back.is_empty());

        let grid = sphere_grid(24, 4.0, 2.0);
        let mut mesh = marching_cubes(&grid, 2.0).unwrap();
        mesh.colors = mesh
            .vertices
            .iter()
            .map(|v| [0.5 + 0.1 * v.x.sin(), 0.4, 0.6])
            .collect();
        let ply = dir.path().join("sphere.ply");
        save_ply(&ply, &mesh).unwrap();
        let back = load_ply(&ply).unwrap();
        assert_eq!(back.vertices.len(), mesh.vertices.len());
        assert_eq!(back.triangles, mesh.triangles);
        for (a, b) in mesh.vertices.iter().zip(&back.vertices) {
            assert!((a.x - b.x).abs() < 1e-6);
            assert!((a.y - b.y).abs() < 1e-6);
            assert!((a.z - b.z).abs() < 1e-6);
        }
        for (a, b) in mesh.colors.iter().zip(&back.colors) {
            for ch in 0..3 {
                assert!((a[ch] - b[ch]).abs() <= 0.5 / 255.0 + 1e-9);
            }
        }

        let obj = dir.path().join("sphere.obj");
        save_obj(&obj, &mesh).unwrap();
        let text = std::fs::read_to_string(&obj).unwrap();
        let first = text.lines().next().unwrap();
        assert!(first.starts_with("v "));
        assert_eq!(first.split_whitespace().count(), 7, "v x y z r g b");
        assert_eq!(
            text.lines().filter(|l| l.starts_with("f ")).count(),
            mesh.triangles.len()
        );
    }
}
