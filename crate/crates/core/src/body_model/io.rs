//! Template serialization: binary tensor container plus JSON sidecar.
//!
//! Tensors, in order: `rest_vertices` f64 [N,3], `faces` u32 [F,3],
//! `parents` u32 [K] (root stored as `u32::MAX`), `skin_weights` f64 [N,K],
//! `shape_basis` f64 [N,3,B], `regressor_rows` u32 [nnz],
//! `regressor_cols` u32 [nnz], `regressor_weights` f64 [nnz]. Rest joints
//! are recomputed from the regressor on load.

use serde_json::json;
use std::path::Path;

use super::BodyTemplate;
use crate::container::TensorFile;
use crate::{Error, Point3, Result};

pub fn save_template(template: &BodyTemplate, path: impl AsRef<Path>) -> Result<()> {
    let n = template.vertex_count();
    let k = template.joint_count();
    let b = template.shape_dims();
    let mut file = TensorFile::with_meta(json!({
        "kind": "body_template",
        "vertices": n,
        "faces": template.faces().len(),
        "joints": k,
        "shape_dims": b,
    }));
    file.push_f64(
        "rest_vertices",
        &[n, 3],
        template.rest_vertices().iter().flat_map(|p| [p.x, p.y, p.z]).collect(),
    )?;
    file.push_u32(
        "faces",
        &[template.faces().len(), 3],
        template.faces().iter().flatten().map(|&i| i as u32).collect(),
    )?;
    file.push_u32(
        "parents",
        &[k],
        template
            .parents()
            .iter()
            .map(|p| p.map_or(u32::MAX, |p| p as u32))
            .collect(),
    )?;
    file.push_f64("skin_weights", &[n, k], template.skin_weights().to_vec())?;
    file.push_f64("shape_basis", &[n, 3, b], template.shape_basis().to_vec())?;
    let (mut rows, mut cols, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for (j, row) in template.joint_regressor().iter().enumerate() {
        for &(v, w) in row {
            rows.push(j as u32);
            cols.push(v as u32);
            weights.push(w);
        }
    }
    let nnz = rows.len();
    file.push_u32("regressor_rows", &[nnz], rows)?;
    file.push_u32("regressor_cols", &[nnz], cols)?;
    file.push_f64("regressor_weights", &[nnz], weights)?;
    file.write(path)
}

/// Loads a template written by [`save_template`] (or any external template
/// in the same layout) and re-validates it.
pub fn load_template(path: impl AsRef<Path>) -> Result<BodyTemplate> {
    let path = path.as_ref();
    let file = TensorFile::read(path)?;
    let bad = |msg: &str| Error::format(path, msg);
    let (shape, rest) = file.f64("rest_vertices")?;
    if shape.len() != 2 || shape[1] != 3 {
        return Err(bad("rest_vertices must be [N, 3]"));
    }
    let n = shape[0];
    let vertices: Vec<Point3> = rest
        .chunks_exact(3)
        .map(|c| Point3::new(c[0], c[1], c[2]))
        .collect();
    let (fshape, faces) = file.u32("faces")?;
    if fshape.len() != 2 || fshape[1] != 3 {
        return Err(bad("faces must be [F, 3]"));
    }
    let faces: Vec<[usize; 3]> = faces
        .chunks_exact(3)
        .map(|c| [c[0] as usize, c[1] as usize, c[2] as usize])
        .collect();
    let (_, parents) = file.u32("parents")?;
    let parents: Vec<Option<usize>> = parents
        .iter()
        .map(|&p| (p != u32::MAX).then_some(p as usize))
        .collect();
    let k = parents.len();
    let (wshape, skin) = file.f64("skin_weights")?;
    if wshape != [n, k] {
        return Err(bad("skin_weights must be [N, K]"));
    }
    let (bshape, basis) = file.f64("shape_basis")?;
    if bshape.len() != 3 || bshape[0] != n || bshape[1] != 3 {
        return Err(bad("shape_basis must be [N, 3, B]"));
    }
    let dims = bshape[2];
    let (_, rows) = file.u32("regressor_rows")?;
    let (_, cols) = file.u32("regressor_cols")?;
    let (_, weights) = file.f64("regressor_weights")?;
    if rows.len() != cols.len() || rows.len() != weights.len() {
        return Err(bad("regressor arrays differ in length"));
    }
    let mut regressor = vec![Vec::new(); k];
    for ((&j, &v), &w) in rows.iter().zip(cols).zip(weights) {
        let row = regressor
            .get_mut(j as usize)
            .ok_or_else(|| bad("regressor row out of range"))?;
        row.push((v as usize, w));
    }
    BodyTemplate::new(
        vertices,
        faces,
        parents,
        skin.to_vec(),
        basis.to_vec(),
        dims,
        regressor,
    )
}
