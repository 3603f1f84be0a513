//! Point-cloud CSV format.
//!
//! One point per row: `p + 1` ambient coordinates on the sphere, `p` angles
//! on the torus. Values are written in scientific notation with 17
//! significant digits, which round-trips every finite `f64` exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{ManifoldKind, ManifoldPoint};

/// Formats one coordinate row.
pub(crate) fn format_row(coords: &[f64]) -> String {
    let cells: Vec<String> = coords.iter().map(|c| format!("{c:.16e}")).collect();
    cells.join(",")
}

/// Parses one coordinate row; `line_no` is 1-based and only used in errors.
pub(crate) fn parse_row(line: &str, expected: usize, line_no: usize) -> Result<Vec<f64>> {
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != expected {
        return Err(Error::Malformed(format!(
            "line {line_no}: expected {expected} fields, got {}",
            cells.len()
        )));
    }
    cells
        .iter()
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::Malformed(format!("line {line_no}: unparsable number {c:?}")))
        })
        .collect()
}

/// Writes points to CSV, one row per point.
pub fn write_points_csv<W: Write>(mut w: W, points: &[ManifoldPoint]) -> Result<()> {
    for point in points {
        writeln!(w, "{}", format_row(&point.coords))?;
    }
    Ok(())
}

/// Reads points from CSV, validating row shape and (on the sphere) unit
/// norms. Torus angles are accepted in any range and wrapped into
/// `[0, 2 pi)`. Empty lines are rejected; errors carry the line number.
pub fn read_points_csv<R: BufRead>(r: R, manifold: ManifoldKind) -> Result<Vec<ManifoldPoint>> {
    let mut points = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            return Err(Error::Malformed(format!("line {line_no}: empty row")));
        }
        let coords = parse_row(&line, manifold.ambient_dim(), line_no)?;
        let point = match manifold {
            ManifoldKind::Sphere { .. } => ManifoldPoint::new(manifold, coords)
                .map_err(|e| Error::Malformed(format!("line {line_no}: {e}")))?,
            ManifoldKind::Torus { .. } => crate::geometry::project(manifold, &coords)
                .map_err(|e| Error::Malformed(format!("line {line_no}: {e}")))?,
        };
        points.push(point);
    }
    Ok(points)
}

pub fn write_points_file(path: &Path, points: &[ManifoldPoint]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_points_csv(std::io::BufWriter::new(file), points)
}

pub fn read_points_file(path: &Path, manifold: ManifoldKind) -> Result<Vec<ManifoldPoint>> {
    let file = std::fs::File::open(path)?;
    read_points_csv(std::io::BufReader::new(file), manifold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::sample_uniform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for manifold in [ManifoldKind::Sphere { dim: 3 }, ManifoldKind::Torus { dim: 2 }] {
            let points: Vec<ManifoldPoint> = (0..64).map(|_| sample_uniform(manifold, &mut rng)).collect();
            let mut buf = Vec::new();
            write_points_csv(&mut buf, &points).unwrap();
            let back = read_points_csv(buf.as_slice(), manifold).unwrap();
            assert_eq!(points, back);
        }
    }

    #[test]
    fn malformed_rows_carry_line_numbers() {
        let manifold = ManifoldKind::Torus { dim: 2 };
        let data = "1.0,2.0\n3.0\n";
        let err = read_points_csv(data.as_bytes(), manifold).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let data = "1.0,2.0\n1.0,nope\n";
        let err = read_points_csv(data.as_bytes(), manifold).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");

        let sphere = ManifoldKind::Sphere { dim: 2 };
        let data = "1.0,0.0,0.0\n0.5,0.5,0.5\n";
        let err = read_points_csv(data.as_bytes(), sphere).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn torus_angles_are_wrapped_on_read() {
        let manifold = ManifoldKind::Torus { dim: 1 };
        let back = read_points_csv("4.71238898038469\n".as_bytes(), manifold).unwrap();
        assert!((back[0].coords[0] + 0.5 * crate::geometry::PI).abs() < 1e-15);
        // Canonical angles survive a read bit for bit.
        let back = read_points_csv("-1.5707963267948966\n".as_bytes(), manifold).unwrap();
        assert_eq!(back[0].coords[0], -1.5707963267948966);
    }
}
