use super::maps::NO_FACE;
use super::{Camera, CameraPair, MapPair, NormalMap, VisBuffer};
use crate::geometry::TriMesh;

#[inline]
fn edge(ax: f64, ay: f64, bx: f64, by: f64, px: f64, py: f64) -> f64 {
    (bx - ax) * (py - ay) - (by - ay) * (px - ax)
}

/// `ceil` for values known to be small; negative inputs give 0.
#[inline]
fn ceil_nonneg(v: f64) -> usize {
    if v <= 0.0 {
        return 0;
    }
    let t = v as usize;
    if (t as f64) < v {
        t + 1
    } else {
        t
    }
}

/// Z-buffer rasterization of `mesh` into a camera-space normal map.
///
/// Each covered pixel holds the barycentric blend of the nearest face's
/// vertex normals, renormalized. Coverage is tested at pixel centres and
/// is inclusive on edges, so closed meshes leave no cracks; depth ties keep
/// the lower face index.
pub fn render_normal_map(mesh: &TriMesh, camera: &Camera) -> NormalMap {
    let (w, h) = (camera.width, camera.height);
    let mut map = NormalMap::blank(w, h);

    let screen: Vec<(f64, f64, f64)> = mesh.vertices().iter().map(|p| camera.project(p)).collect();
    for (f, &[a, b, c]) in mesh.faces().iter().enumerate() {
        let (x0, y0, z0) = screen[a];
        let (x1, y1, z1) = screen[b];
        let (x2, y2, z2) = screen[c];
        let area = edge(x0, y0, x1, y1, x2, y2);
        if area.abs() < 1e-18 || !area.is_finite() {
            continue;
        }
        let min_x = x0.min(x1).min(x2);
        let max_x = x0.max(x1).max(x2);
        let min_y = y0.min(y1).min(y2);
        let max_y = y0.max(y1).max(y2);
        if max_x < 0.5 || max_y < 0.5 || min_x > w as f64 - 0.5 || min_y > h as f64 - 0.5 {
            continue;
        }
        let ix0 = ceil_nonneg(min_x - 0.5);
        let ix1 = ((max_x - 0.5).floor() as i64).min(w as i64 - 1);
        let iy0 = ceil_nonneg(min_y - 0.5);
        let iy1 = ((max_y - 0.5).floor() as i64).min(h as i64 - 1);
        if ix1 < ix0 as i64 || iy1 < iy0 as i64 {
            continue;
        }
        let inv = 1.0 / area;
        // Barycentric weights are affine in the pixel centre; step them
        // along each row from an exact value at the row start.
        let (dx0, dx1, dx2) = ((y1 - y2) * inv, (y2 - y0) * inv, (y0 - y1) * inv);
        let cx0 = ix0 as f64 + 0.5;
        for py in iy0..=iy1 as usize {
            let cy = py as f64 + 0.5;
            let mut w0 = edge(x1, y1, x2, y2, cx0, cy) * inv;
            let mut w1 = edge(x2, y2, x0, y0, cx0, cy) * inv;
            let mut w2 = edge(x0, y0, x1, y1, cx0, cy) * inv;
            let row = py * w;
            for px in ix0..=ix1 as usize {
                if w0 >= 0.0 && w1 >= 0.0 && w2 >= 0.0 {
                    let z = w0 * z0 + w1 * z1 + w2 * z2;
                    let i = row + px;
                    if z > map.depth[i] {
                        map.depth[i] = z;
                        map.face[i] = f as u32;
                    }
                }
                w0 += dx0;
                w1 += dx1;
                w2 += dx2;
            }
        }
    }

    let normals = mesh.normals();
    for i in 0..w * h {
        let f = map.face[i];
        if f == NO_FACE {
            continue;
        }
        let [a, b, c] = mesh.faces()[f as usize];
        let (x0, y0, _) = screen[a];
        let (x1, y1, _) = screen[b];
        let (x2, y2, _) = screen[c];
        let (cx, cy) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
        let inv = 1.0 / edge(x0, y0, x1, y1, x2, y2);
        let w0 = edge(x1, y1, x2, y2, cx, cy) * inv;
        let w1 = edge(x2, y2, x0, y0, cx, cy) * inv;
        let w2 = edge(x0, y0, x1, y1, cx, cy) * inv;
        let n = normals[a] * w0 + normals[b] * w1 + normals[c] * w2;
        let len = n.norm();
        let n = if len > 1e-8 {
            n / len
        } else {
            mesh.face_normal(f as usize)
        };
        map.normals[i] = camera.rotate_normal(&n);
    }
    map
}

/// Front and back normal maps. Logs a warning when nothing is visible.
pub fn render_normal_maps(mesh: &TriMesh, cameras: &CameraPair) -> MapPair {
    let pair = MapPair {
        front: render_normal_map(mesh, &cameras.front),
        back: render_normal_map(mesh, &cameras.back),
    };
    if pair.is_blank() {
        log::warn!("mesh lies entirely outside the camera frustum");
    }
    pair
}

/// A face is visible iff it wins the depth test at one or more pixel
/// centres. Faces smaller than a pixel may therefore be reported hidden;
/// the result depends on raster resolution.
pub fn face_visibility(mesh: &TriMesh, camera: &Camera) -> VisBuffer {
    let map = render_normal_map(mesh, camera);
    let mut visible = vec![false; mesh.face_count()];
    for &f in &map.face {
        if f != NO_FACE {
            visible[f as usize] = true;
        }
    }
    VisBuffer { visible }
}
