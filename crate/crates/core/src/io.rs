//! Artifact writers shared by the command-line tools: CSV tables, an
//! indexed text mesh format for external viewers, a raw binary array for
//! per-element frames, and deterministic JSON reports.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Matrix2, Vector2};

use crate::mesh::TriMesh;

/// Write a CSV table with the given header and float rows. Floats are
/// printed in shortest round-trip form, so re-runs produce identical bytes.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

/// Samples of a developed immersion: polar source coordinates and planar
/// image, as a CSV with columns r, phi, x, y.
pub fn write_developed_csv(path: &Path, samples: &[(f64, f64, Vector2<f64>)]) -> io::Result<()> {
    let rows: Vec<Vec<f64>> =
        samples.iter().map(|(r, phi, p)| vec![*r, *phi, p[0], p[1]]).collect();
    write_csv(path, &["r", "phi", "x", "y"], &rows)
}

/// Vertex positions of a configuration as CSV with columns index, x, y.
pub fn write_positions_csv(path: &Path, positions: &[Vector2<f64>]) -> io::Result<()> {
    let rows: Vec<Vec<f64>> =
        positions.iter().enumerate().map(|(i, p)| vec![i as f64, p[0], p[1]]).collect();
    write_csv(path, &["index", "x", "y"], &rows)
}

/// Indexed triangle-mesh text format: one `v x y` line per vertex followed
/// by one `f i j k` line per triangle (zero-based indices).
pub fn write_mesh_text(path: &Path, mesh: &TriMesh) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for v in &mesh.vertices {
        writeln!(w, "v {} {}", v[0], v[1])?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0], t[1], t[2])?;
    }
    w.flush()
}

/// Read the indexed triangle-mesh text format written by [`write_mesh_text`].
pub fn read_mesh_text(path: &Path) -> io::Result<TriMesh> {
    let r = BufReader::new(File::open(path)?);
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let bad = |line: &str| io::Error::new(io::ErrorKind::InvalidData, format!("bad line: {line}"));
    for line in r.lines() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let x: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(&line))?;
                let y: f64 = it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(&line))?;
                vertices.push(Vector2::new(x, y));
            }
            Some("f") => {
                let mut idx = [0usize; 3];
                for slot in idx.iter_mut() {
                    *slot =
                        it.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad(&line))?;
                }
                triangles.push(idx);
            }
            Some(_) => return Err(bad(&line)),
            None => {}
        }
    }
    Ok(TriMesh { vertices, triangles })
}

/// Per-element 2x2 frames as a flat binary array: row-major entries
/// (q11, q12, q21, q22) per element, little-endian 64-bit floats.
pub fn write_q_binary(path: &Path, q_elems: &[Matrix2<f64>]) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for q in q_elems {
        for v in [q[(0, 0)], q[(0, 1)], q[(1, 0)], q[(1, 1)]] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Read a binary frame array written by [`write_q_binary`].
pub fn read_q_binary(path: &Path) -> io::Result<Vec<Matrix2<f64>>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() % 32 != 0 {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame array length {} is not a multiple of 32", bytes.len()),
        ));
    }
    let mut out = Vec::with_capacity(bytes.len() / 32);
    for chunk in bytes.chunks_exact(32) {
        let mut e = [0.0_f64; 4];
        for (i, slot) in e.iter_mut().enumerate() {
            let mut b = [0u8; 8];
            b.copy_from_slice(&chunk[8 * i..8 * (i + 1)]);
            *slot = f64::from_le_bytes(b);
        }
        out.push(Matrix2::new(e[0], e[1], e[2], e[3]));
    }
    Ok(out)
}

/// Write a JSON report with stable key order (insertion order is preserved
/// by the serializer) and a trailing newline.
pub fn write_json_report<T: serde::Serialize>(path: &Path, report: &T) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
    writeln!(w)?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::annulus_mesh;

    #[test]
    fn mesh_text_round_trips() {
        let m = annulus_mesh(Vector2::zeros(), 0.1, 1.0, 4, 8).unwrap();
        let dir = std::env::temp_dir().join("disloclab-io-mesh");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("mesh.txt");
        write_mesh_text(&path, &m).unwrap();
        let back = read_mesh_text(&path).unwrap();
        assert_eq!(back.triangles, m.triangles);
        for (a, b) in back.vertices.iter().zip(&m.vertices) {
            assert!((a - b).norm() == 0.0, "vertex drifted through text round trip");
        }
    }

    #[test]
    fn q_binary_round_trips_bit_exact() {
        let qs = vec![
            Matrix2::new(1.0, 2.5e-13, -3.0, f64::MIN_POSITIVE),
            Matrix2::new(0.1, 0.2, 0.3, 0.4),
        ];
        let dir = std::env::temp_dir().join("disloclab-io-q");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("q.bin");
        write_q_binary(&path, &qs).unwrap();
        let back = read_q_binary(&path).unwrap();
        assert_eq!(back.len(), qs.len());
        for (a, b) in back.iter().zip(&qs) {
            assert_eq!(a, b);
        }
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 64);
    }

    #[test]
    fn csv_has_header_and_shortest_floats() {
        let dir = std::env::temp_dir().join("disloclab-io-csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        write_csv(&path, &["eps", "value"], &[vec![0.01, 1.5]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "eps,value\n0.01,1.5\n");
    }
}
