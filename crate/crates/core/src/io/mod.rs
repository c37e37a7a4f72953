//! Plain-text point/normal file formats, dataset manifests, and attention-map
//! export.
//!
//! Formats follow the PCPNet distribution layout: `<name>.xyz` holds one
//! `x y z` triple per line, `<name>.normals` is aligned line-for-line,
//! `<name>.pidx` optionally lists evaluation point indices, and split files
//! (`trainingset.txt` / `testset.txt`) name one shape per line. Malformed
//! content is always an error, never skipped.

pub mod synth;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::cloud::PointCloud;
use crate::{Error, Result};

fn parse_triple(path: &Path, lineno: usize, line: &str) -> Result<Option<Vector3<f64>>> {
    let trimmed = line.trim();
    if trimmed.is_empty() {
        return Ok(None);
    }
    let fields: Vec<&str> = trimmed.split_whitespace().collect();
    if fields.len() != 3 {
        return Err(Error::parse(
            path.display().to_string(),
            lineno,
            format!("expected 3 fields, got {}", fields.len()),
        ));
    }
    let mut v = [0.0f64; 3];
    for (i, f) in fields.iter().enumerate() {
        v[i] = f.parse().map_err(|_| {
            Error::parse(
                path.display().to_string(),
                lineno,
                format!("not a number: {:?}", f),
            )
        })?;
    }
    Ok(Some(Vector3::new(v[0], v[1], v[2])))
}

fn read_triples(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if let Some(v) = parse_triple(path, i + 1, &line)? {
            out.push(v);
        }
    }
    Ok(out)
}

/// Reads a whitespace-separated triples file as points; blank lines are
/// ignored.
pub fn read_xyz(path: &Path) -> Result<PointCloud> {
    Ok(PointCloud::new(read_triples(path)?))
}

/// Writes one point per line at 17 significant digits, enough for exact f64
/// round-trips.
pub fn write_xyz(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_vectors(path, cloud.points())
}

/// Reads a normals file; each triple is normalized on load. Inputs whose
/// length strays from 1 by more than 1e-3 are accepted with a warning.
pub fn read_normals(path: &Path) -> Result<Vec<Vector3<f64>>> {
    let raw = read_triples(path)?;
    let mut out = Vec::with_capacity(raw.len());
    for (i, n) in raw.into_iter().enumerate() {
        let len = n.norm();
        if len == 0.0 {
            return Err(Error::parse(
                path.display().to_string(),
                i + 1,
                "zero-length normal",
            ));
        }
        if (len - 1.0).abs() > 1e-3 {
            log::warn!(
                "{}:{}: normal length {} deviates from 1; renormalizing",
                path.display(),
                i + 1,
                len
            );
        }
        out.push(n / len);
    }
    Ok(out)
}

pub fn write_normals(path: &Path, normals: &[Vector3<f64>]) -> Result<()> {
    write_vectors(path, normals)
}

fn write_vectors(path: &Path, vs: &[Vector3<f64>]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for v in vs {
        writeln!(w, "{:.16e} {:.16e} {:.16e}", v.x, v.y, v.z)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    Ok(())
}

/// Reads whitespace-separated point indices.
pub fn read_pidx(path: &Path) -> Result<Vec<usize>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        for field in line.split_whitespace() {
            let idx: usize = field.parse().map_err(|_| {
                Error::parse(
                    path.display().to_string(),
                    i + 1,
                    format!("not an index: {:?}", field),
                )
            })?;
            out.push(idx);
        }
    }
    Ok(out)
}

/// One dataset shape: points plus aligned ground-truth normals, with an
/// optional evaluation-index file.
#[derive(Clone, Debug)]
pub struct ShapeEntry {
    pub name: String,
    pub xyz_path: PathBuf,
    pub normals_path: PathBuf,
    pub pidx_path: Option<PathBuf>,
}

/// Shapes listed by one split file; files are checked for existence at load.
#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub split: String,
    pub shapes: Vec<ShapeEntry>,
}

impl DatasetManifest {
    /// Reads `<root>/<split_file>` (one shape name per line) and resolves
    /// `<root>/<name>.xyz` / `.normals` / optional `.pidx`.
    pub fn load(root: &Path, split_file: &str) -> Result<Self> {
        let split_path = root.join(split_file);
        let file =
            File::open(&split_path).map_err(|e| Error::io(split_path.display().to_string(), e))?;
        let mut shapes = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(split_path.display().to_string(), e))?;
            let name = line.trim();
            if name.is_empty() {
                continue;
            }
            let xyz_path = root.join(format!("{}.xyz", name));
            let normals_path = root.join(format!("{}.normals", name));
            for p in [&xyz_path, &normals_path] {
                if !p.exists() {
                    return Err(Error::parse(
                        split_path.display().to_string(),
                        i + 1,
                        format!("listed file missing: {}", p.display()),
                    ));
                }
            }
            let pidx = root.join(format!("{}.pidx", name));
            shapes.push(ShapeEntry {
                name: name.to_string(),
                xyz_path,
                normals_path,
                pidx_path: pidx.exists().then_some(pidx),
            });
        }
        Ok(DatasetManifest {
            split: split_file.to_string(),
            shapes,
        })
    }
}

impl ShapeEntry {
    /// Loads points and normals, enforcing equal counts.
    pub fn load(&self) -> Result<PointCloud> {
        let cloud = read_xyz(&self.xyz_path)?;
        let normals = read_normals(&self.normals_path)?;
        if cloud.len() != normals.len() {
            return Err(Error::CountMismatch {
                path: self.normals_path.display().to_string(),
                points: cloud.len(),
                normals: normals.len(),
            });
        }
        PointCloud::with_normals(cloud.points().to_vec(), normals)
    }

    pub fn load_pidx(&self) -> Result<Option<Vec<usize>>> {
        match &self.pidx_path {
            Some(p) => Ok(Some(read_pidx(p)?)),
            None => Ok(None),
        }
    }
}

/// Writes stacked attention rows as a grayscale PGM (P2) image and a raw CSV
/// twin. Pixels scale linearly from [0, max] to [0, 255]; each image row is
/// one patch, nearest neighbour leftmost.
pub fn write_attention_map(rows: &[Vec<f64>], pgm_path: &Path, csv_path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no attention rows".into()));
    }
    let width = rows[0].len();
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidArgument(
            "attention rows differ in length".into(),
        ));
    }
    let max = rows
        .iter()
        .flat_map(|r| r.iter().copied())
        .fold(0.0f64, f64::max);

    let file = File::create(pgm_path).map_err(|e| Error::io(pgm_path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    writeln!(w, "P2\n{} {}\n255", width, rows.len())
        .map_err(|e| Error::io(pgm_path.display().to_string(), e))?;
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .map(|&v| {
                let px = if max > 0.0 {
                    (v / max * 255.0).round() as i64
                } else {
                    0
                };
                px.clamp(0, 255).to_string()
            })
            .collect();
        writeln!(w, "{}", line.join(" "))
            .map_err(|e| Error::io(pgm_path.display().to_string(), e))?;
    }

    let file = File::create(csv_path).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let mut w = BufWriter::new(file);
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| format!("{:.16e}", v)).collect();
        writeln!(w, "{}", line.join(","))
            .map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    }
    Ok(())
}

/// Reads a headerless comma-separated float matrix, e.g. the attention CSV
/// twin.
pub fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let file = File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path.display().to_string(), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| {
                    Error::parse(
                        path.display().to_string(),
                        i + 1,
                        format!("not a number: {:?}", f),
                    )
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        out.push(row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::fs;

    #[test]
    fn read_xyz_basic_and_blank_lines() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.xyz");
        fs::write(&p, "0 0 0\n\n1 2 3\n").unwrap();
        let cloud = read_xyz(&p).unwrap();
        assert_eq!(cloud.len(), 2);
        assert_eq!(cloud.points()[1], Vector3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn read_xyz_empty_file_gives_empty_cloud() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.xyz");
        fs::write(&p, "").unwrap();
        assert!(read_xyz(&p).unwrap().is_empty());
    }

    #[test]
    fn malformed_lines_rejected_with_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.xyz");
        fs::write(&p, "0 0 0\n1 2\n").unwrap();
        let err = read_xyz(&p).unwrap_err().to_string();
        assert!(err.contains(":2"), "{}", err);
        assert!(err.contains("3 fields"), "{}", err);

        fs::write(&p, "0 0 zebra\n").unwrap();
        let err = read_xyz(&p).unwrap_err().to_string();
        assert!(err.contains("not a number"), "{}", err);
    }

    #[test]
    fn xyz_round_trip_is_exact() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let points: Vec<Vector3<f64>> = (0..100)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1e6..1e6),
                    rng.random_range(-1e-6..1e-6),
                )
            })
            .collect();
        let cloud = PointCloud::new(points);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.xyz");
        write_xyz(&p, &cloud).unwrap();
        let back = read_xyz(&p).unwrap();
        assert_eq!(cloud.points(), back.points());
    }

    #[test]
    fn normals_renormalized_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.normals");
        fs::write(&p, "0 0 1\n0 0 2\n").unwrap();
        let ns = read_normals(&p).unwrap();
        assert_eq!(ns[0], Vector3::z());
        assert_eq!(ns[1], Vector3::z());

        fs::write(&p, "0 0 0\n").unwrap();
        let err = read_normals(&p).unwrap_err().to_string();
        assert!(err.contains("zero-length normal"), "{}", err);
    }

    #[test]
    fn scientific_notation_accepted() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.xyz");
        fs::write(&p, "1e-3 -2.5E2 3.25e+0\n").unwrap();
        let cloud = read_xyz(&p).unwrap();
        assert_eq!(cloud.points()[0], Vector3::new(1e-3, -250.0, 3.25));
    }

    #[test]
    fn pidx_parses_indices() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pidx");
        fs::write(&p, "5\n17\n0\n").unwrap();
        assert_eq!(read_pidx(&p).unwrap(), vec![5, 17, 0]);
        fs::write(&p, "5 x\n").unwrap();
        assert!(read_pidx(&p).is_err());
    }

    #[test]
    fn manifest_resolves_and_validates() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("trainingset.txt"), "shape_a\n\n").unwrap();
        fs::write(dir.path().join("shape_a.xyz"), "0 0 0\n1 0 0\n").unwrap();
        fs::write(dir.path().join("shape_a.normals"), "0 0 1\n0 0 1\n").unwrap();
        let m = DatasetManifest::load(dir.path(), "trainingset.txt").unwrap();
        assert_eq!(m.shapes.len(), 1);
        let cloud = m.shapes[0].load().unwrap();
        assert_eq!(cloud.len(), 2);
        assert!(m.shapes[0].load_pidx().unwrap().is_none());

        // Count mismatch between the pair is a load error.
        fs::write(dir.path().join("shape_a.normals"), "0 0 1\n").unwrap();
        let err = m.shapes[0].load().unwrap_err().to_string();
        assert!(err.contains("mismatch"), "{}", err);

        // Missing file is a manifest error.
        fs::write(dir.path().join("trainingset.txt"), "shape_b\n").unwrap();
        assert!(DatasetManifest::load(dir.path(), "trainingset.txt").is_err());
    }

    #[test]
    fn attention_map_pgm_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let pgm = dir.path().join("a.pgm");
        let csv = dir.path().join("a.csv");

        // Uniform rows: every pixel equal.
        let rows = vec![vec![0.2; 5]; 3];
        write_attention_map(&rows, &pgm, &csv).unwrap();
        let text = fs::read_to_string(&pgm).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("P2"));
        assert_eq!(lines.next(), Some("5 3"));
        assert_eq!(lines.next(), Some("255"));
        for line in lines {
            assert_eq!(line, "255 255 255 255 255");
        }

        // One-hot rows: single 255 per row.
        let rows = vec![vec![0.0, 1.0, 0.0], vec![1.0, 0.0, 0.0]];
        write_attention_map(&rows, &pgm, &csv).unwrap();
        let text = fs::read_to_string(&pgm).unwrap();
        let body: Vec<&str> = text.lines().skip(3).collect();
        assert_eq!(body, vec!["0 255 0", "255 0 0"]);

        // CSV twin round-trips.
        let back = read_matrix_csv(&csv).unwrap();
        for (a, b) in back.iter().flatten().zip(rows.iter().flatten()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn ragged_attention_rows_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = write_attention_map(
            &[vec![0.1, 0.2], vec![0.3]],
            &dir.path().join("x.pgm"),
            &dir.path().join("x.csv"),
        )
        .unwrap_err();
        assert!(err.to_string().contains("differ in length"));
    }
}
