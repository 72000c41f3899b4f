//! ASCII OFF reading and writing, plus the `i,j,length` edge-length override
//! format.

use std::io::Write;
use std::path::Path;

use super::TriangulatedManifold;
use crate::error::{Error, Result};

fn format_err(line: usize, msg: impl Into<String>) -> Error {
    Error::MeshFormat {
        line,
        msg: msg.into(),
    }
}

/// Parses an ASCII OFF triangle mesh. `#` starts a comment; faces must be
/// triangles (`3 i j k`, trailing per-face colour values are ignored).
pub fn parse_off(text: &str) -> Result<TriangulatedManifold> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (header_line, header) = lines.next().ok_or_else(|| format_err(1, "empty file"))?;
    let mut header_tokens = header.split_whitespace();
    if header_tokens.next() != Some("OFF") {
        return Err(format_err(header_line, "expected `OFF` header"));
    }
    let mut counts: Vec<&str> = header_tokens.collect();
    let mut counts_line = header_line;
    if counts.is_empty() {
        let (n, l) = lines
            .next()
            .ok_or_else(|| format_err(header_line, "missing element counts"))?;
        counts_line = n;
        counts = l.split_whitespace().collect();
    }
    if counts.len() < 2 {
        return Err(format_err(counts_line, "expected `n_vertices n_faces [n_edges]`"));
    }
    let parse_count = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| format_err(counts_line, format!("bad count `{s}`")))
    };
    let n_vertices = parse_count(counts[0])?;
    let n_faces = parse_count(counts[1])?;

    let mut positions = Vec::with_capacity(n_vertices);
    for _ in 0..n_vertices {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| format_err(0, "unexpected end of file in vertex list"))?;
        let coords: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse::<f64>().map_err(|_| format_err(ln, format!("bad coordinate `{t}`"))))
            .collect::<Result<_>>()?;
        if coords.len() != 3 {
            return Err(format_err(ln, "vertex needs three coordinates"));
        }
        positions.push([coords[0], coords[1], coords[2]]);
    }

    let mut triangles = Vec::with_capacity(n_faces);
    for _ in 0..n_faces {
        let (ln, l) = lines
            .next()
            .ok_or_else(|| format_err(0, "unexpected end of file in face list"))?;
        let mut tokens = l.split_whitespace();
        let arity: usize = tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| format_err(ln, "bad face vertex count"))?;
        if arity != 3 {
            return Err(format_err(ln, format!("non-triangular face with {arity} vertices")));
        }
        let mut tri = [0usize; 3];
        for slot in &mut tri {
            let t = tokens.next().ok_or_else(|| format_err(ln, "face has too few indices"))?;
            *slot = t
                .parse()
                .map_err(|_| format_err(ln, format!("bad vertex index `{t}`")))?;
        }
        triangles.push(tri);
    }
    if let Some((ln, _)) = lines.next() {
        log::debug!("ignoring trailing content from line {ln}");
    }
    TriangulatedManifold::from_positions(positions, triangles)
}

/// Reads an OFF mesh from disk. Disconnected meshes load with a warning.
pub fn load_mesh(path: &Path) -> Result<TriangulatedManifold> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mesh = parse_off(&text)?;
    let components = mesh.connected_components();
    if components > 1 {
        log::warn!("{}: mesh has {components} connected components", path.display());
    }
    Ok(mesh)
}

pub fn write_off(mesh: &TriangulatedManifold, mut w: impl Write) -> Result<()> {
    let positions = mesh
        .positions()
        .ok_or_else(|| Error::InvalidArgument("mesh has no embedding to write".into()))?;
    let io = |e| Error::io("<off output>", e);
    writeln!(w, "OFF").map_err(io)?;
    writeln!(w, "{} {} {}", mesh.n_vertices(), mesh.triangles().len(), mesh.n_edges()).map_err(io)?;
    for p in positions {
        writeln!(w, "{} {} {}", p[0], p[1], p[2]).map_err(io)?;
    }
    for t in mesh.triangles() {
        writeln!(w, "3 {} {} {}", t[0], t[1], t[2]).map_err(io)?;
    }
    Ok(())
}

/// Parses `i,j,length` rows. A non-numeric first row is taken as a header.
pub fn parse_edge_lengths(text: &str) -> Result<Vec<((usize, usize), f64)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed = (|| {
            if fields.len() != 3 {
                return None;
            }
            Some((
                (fields[0].parse().ok()?, fields[1].parse().ok()?),
                fields[2].parse::<f64>().ok()?,
            ))
        })();
        match parsed {
            Some(row) => out.push(row),
            None if idx == 0 && out.is_empty() => continue,
            None => {
                return Err(format_err(idx + 1, format!("expected `i,j,length`, got `{line}`")));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRIANGLE: &str = "OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n";

    #[test]
    fn single_triangle() {
        let m = parse_off(TRIANGLE).unwrap();
        assert_eq!(m.n_vertices(), 3);
        assert_eq!(m.triangles().len(), 1);
        assert_eq!(m.edge_length(0, 1), Some(1.0));
    }

    #[test]
    fn header_with_counts_and_comments() {
        let text = "# a comment\nOFF 3 1 3\n0 0 0 # origin\n1 0 0\n\n0 1 0\n3 0 1 2 255 0 0\n";
        let m = parse_off(text).unwrap();
        assert_eq!(m.triangles(), &[[0, 1, 2]]);
    }

    #[test]
    fn quad_face_rejected() {
        let text = "OFF\n4 1 0\n0 0 0\n1 0 0\n1 1 0\n0 1 0\n4 0 1 2 3\n";
        let err = parse_off(text).unwrap_err();
        assert!(matches!(err, Error::MeshFormat { line: 7, .. }), "{err}");
    }

    #[test]
    fn malformed_inputs() {
        assert!(parse_off("").is_err());
        assert!(parse_off("PLY\n").is_err());
        assert!(parse_off("OFF\n3 1\n0 0 0\n1 0 0\n").is_err());
        assert!(parse_off("OFF\n3 1\n0 0 0\n1 0 x\n0 1 0\n3 0 1 2\n").is_err());
        assert!(parse_off("OFF\n3 1\n0 0 0\n1 0 0\n0 1 0\n3 0 1 5\n").is_err());
    }

    #[test]
    fn write_then_parse() {
        let m = parse_off(TRIANGLE).unwrap();
        let mut buf = Vec::new();
        write_off(&m, &mut buf).unwrap();
        let back = parse_off(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.triangles(), m.triangles());
        assert_eq!(back.positions(), m.positions());
    }

    #[test]
    fn edge_length_csv() {
        let rows = parse_edge_lengths("i,j,length\n0,1,1.5\n2, 1, 0.25\n").unwrap();
        assert_eq!(rows, vec![((0, 1), 1.5), ((2, 1), 0.25)]);
        assert!(parse_edge_lengths("0,1,1.5\n0,1\n").is_err());
    }
}
