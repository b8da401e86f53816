//! File formats: ASCII mesh (`v x y z` / `f i j k`, 0-based), label
//! sidecar CSV, and the structured surface-grid listing.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{GeometryError, LabeledMesh, PartLabel, Point3, SurfaceGrid};

fn read_to_string(path: &Path) -> Result<String, GeometryError> {
    fs::read_to_string(path).map_err(|source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_atomic(path: &Path, contents: &str) -> Result<(), GeometryError> {
    let io_err = |source| GeometryError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(io_err)?;
    fs::rename(&tmp, path).map_err(io_err)
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> GeometryError {
    GeometryError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64, GeometryError> {
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid number `{tok}`")))
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize, GeometryError> {
    tok.parse()
        .map_err(|_| parse_err(path, line, format!("invalid index `{tok}`")))
}

/// Loads a mesh file, optionally attaching a label sidecar.
pub fn load_mesh(
    path: impl AsRef<Path>,
    labels_path: Option<&Path>,
) -> Result<LabeledMesh, GeometryError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut vertices: Vec<Point3> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut v = [0.0; 3];
                for c in &mut v {
                    let tok = toks
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "vertex needs 3 coordinates"))?;
                    *c = parse_f64(path, lineno, tok)?;
                }
                vertices.push(v);
            }
            Some("f") => {
                let mut f = [0usize; 3];
                for i in &mut f {
                    let tok = toks
                        .next()
                        .ok_or_else(|| parse_err(path, lineno, "face needs 3 vertex indices"))?;
                    *i = parse_usize(path, lineno, tok)?;
                }
                if toks.next().is_some() {
                    return Err(parse_err(path, lineno, "only triangle faces are supported"));
                }
                faces.push(f);
            }
            Some(other) => {
                return Err(parse_err(path, lineno, format!("unknown record `{other}`")));
            }
            None => unreachable!(),
        }
    }
    let labels = match labels_path {
        Some(lp) => Some(load_labels(lp)?),
        None => None,
    };
    LabeledMesh::new(vertices, faces, labels)
}

pub fn save_mesh(path: impl AsRef<Path>, mesh: &LabeledMesh) -> Result<(), GeometryError> {
    let mut out = String::new();
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v[0], v[1], v[2]).unwrap();
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0], f[1], f[2]).unwrap();
    }
    write_atomic(path.as_ref(), &out)
}

/// Label sidecar: CSV `face_index,label_id`, one row per face, any order.
pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<PartLabel>, GeometryError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut entries: Vec<(usize, PartLabel)> = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("face_index") {
            continue;
        }
        let (a, b) = line
            .split_once(',')
            .ok_or_else(|| parse_err(path, lineno, "expected `face_index,label_id`"))?;
        let face = parse_usize(path, lineno, a.trim())?;
        let id: u8 = b
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("invalid label id `{}`", b.trim())))?;
        entries.push((face, PartLabel::from_id(id)?));
    }
    entries.sort_by_key(|(face, _)| *face);
    for (expect, (face, _)) in entries.iter().enumerate() {
        if *face != expect {
            return Err(parse_err(
                path,
                0,
                format!("label rows must cover faces 0..n contiguously, missing face {expect}"),
            ));
        }
    }
    Ok(entries.into_iter().map(|(_, l)| l).collect())
}

pub fn save_labels(path: impl AsRef<Path>, labels: &[PartLabel]) -> Result<(), GeometryError> {
    let mut out = String::from("face_index,label_id\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{},{}", i, l.id()).unwrap();
    }
    write_atomic(path.as_ref(), &out)
}

/// Surface-grid listing: one `surface <id> <rows> <cols> [label]` header
/// per surface followed by rows*cols `p x y z` lines in row-major order.
pub fn load_surface_grids(path: impl AsRef<Path>) -> Result<Vec<SurfaceGrid>, GeometryError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    let mut grids = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((idx, raw)) = lines.next() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        if toks.next() != Some("surface") {
            return Err(parse_err(path, lineno, "expected `surface` header"));
        }
        let id = toks
            .next()
            .ok_or_else(|| parse_err(path, lineno, "surface header needs an id"))?
            .to_string();
        let rows = parse_usize(
            path,
            lineno,
            toks.next()
                .ok_or_else(|| parse_err(path, lineno, "surface header needs rows"))?,
        )?;
        let cols = parse_usize(
            path,
            lineno,
            toks.next()
                .ok_or_else(|| parse_err(path, lineno, "surface header needs cols"))?,
        )?;
        let true_label = match toks.next() {
            Some(name) => Some(
                PartLabel::from_name(name)
                    .ok_or_else(|| parse_err(path, lineno, format!("unknown label `{name}`")))?,
            ),
            None => None,
        };
        let mut points = Vec::with_capacity(rows * cols);
        while points.len() < rows * cols {
            let (pidx, praw) = lines
                .next()
                .ok_or_else(|| parse_err(path, lineno, "surface truncated"))?;
            let plineno = pidx + 1;
            let pline = praw.trim();
            if pline.is_empty() || pline.starts_with('#') {
                continue;
            }
            let mut ptoks = pline.split_whitespace();
            if ptoks.next() != Some("p") {
                return Err(parse_err(path, plineno, "expected `p x y z`"));
            }
            let mut p = [0.0; 3];
            for c in &mut p {
                let tok = ptoks
                    .next()
                    .ok_or_else(|| parse_err(path, plineno, "point needs 3 coordinates"))?;
                *c = parse_f64(path, plineno, tok)?;
            }
            points.push(p);
        }
        grids.push(SurfaceGrid::new(id, rows, cols, points, true_label)?);
    }
    Ok(grids)
}

pub fn save_surface_grids(
    path: impl AsRef<Path>,
    grids: &[SurfaceGrid],
) -> Result<(), GeometryError> {
    let mut out = String::new();
    for g in grids {
        match g.true_label {
            Some(l) => {
                writeln!(out, "surface {} {} {} {}", g.surface_id, g.rows, g.cols, l.name())
                    .unwrap()
            }
            None => writeln!(out, "surface {} {} {}", g.surface_id, g.rows, g.cols).unwrap(),
        }
        for p in &g.points {
            writeln!(out, "p {} {} {}", p[0], p[1], p[2]).unwrap();
        }
    }
    write_atomic(path.as_ref(), &out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn load_tetrahedron_with_labels() {
        let dir = tempdir().unwrap();
        let mesh_path = dir.path().join("tet.mesh");
        let label_path = dir.path().join("tet.labels.csv");
        fs::write(
            &mesh_path,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 0 2 1\nf 0 1 3\nf 0 3 2\nf 1 2 3\n",
        )
        .unwrap();
        fs::write(&label_path, "face_index,label_id\n0,0\n1,1\n2,2\n3,3\n").unwrap();
        let mesh = load_mesh(&mesh_path, Some(&label_path)).unwrap();
        assert_eq!(mesh.face_count(), 4);
        assert_eq!(
            mesh.face_labels.as_ref().unwrap()[3],
            PartLabel::Engine
        );
    }

    #[test]
    fn out_of_range_face_index_is_an_error() {
        let dir = tempdir().unwrap();
        let mesh_path = dir.path().join("bad.mesh");
        fs::write(&mesh_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nf 0 1 9\n").unwrap();
        let err = load_mesh(&mesh_path, None).unwrap_err();
        assert!(matches!(err, GeometryError::IndexOutOfRange { index: 9, .. }));
    }

    #[test]
    fn parse_error_carries_line_number() {
        let dir = tempdir().unwrap();
        let mesh_path = dir.path().join("bad.mesh");
        fs::write(&mesh_path, "v 0 0 0\nv 1 0 x\n").unwrap();
        let err = load_mesh(&mesh_path, None).unwrap_err();
        assert!(matches!(err, GeometryError::Parse { line: 2, .. }));
    }

    #[test]
    fn mesh_round_trip_is_bit_identical() {
        let dir = tempdir().unwrap();
        let mesh = LabeledMesh::new(
            vec![
                [0.1234567890123, -1.5e-7, 3.0],
                [1.0 / 3.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
            ],
            vec![[0, 1, 2]],
            None,
        )
        .unwrap();
        let p1 = dir.path().join("a.mesh");
        let p2 = dir.path().join("b.mesh");
        save_mesh(&p1, &mesh).unwrap();
        let reloaded = load_mesh(&p1, None).unwrap();
        assert_eq!(mesh, reloaded);
        save_mesh(&p2, &reloaded).unwrap();
        assert_eq!(fs::read(&p1).unwrap(), fs::read(&p2).unwrap());
    }

    #[test]
    fn surface_grid_round_trip() {
        let dir = tempdir().unwrap();
        let g = SurfaceGrid::new(
            "wing_0".into(),
            2,
            2,
            vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.5],
                [0.0, 1.0, -0.25],
                [1.0, 1.0, 1.0 / 3.0],
            ],
            Some(PartLabel::Wing),
        )
        .unwrap();
        let p = dir.path().join("grids.txt");
        save_surface_grids(&p, &[g.clone()]).unwrap();
        let loaded = load_surface_grids(&p).unwrap();
        assert_eq!(loaded, vec![g]);
    }
}
