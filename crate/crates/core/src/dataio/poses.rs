//! Trajectory text files: one `timestamp tx ty tz qx qy qz qw` line per
//! frame, world-to-camera, scalar-last unit quaternion.

use crate::error::{Error, Result};
use crate::geometry::Pose;
use nalgebra::Vector3;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

pub fn write_poses(path: &Path, samples: &[(f64, Pose)]) -> Result<()> {
    let mut out = String::new();
    out.push_str("# timestamp tx ty tz qx qy qz qw (world-to-camera, scalar-last quaternion)\n");
    for (ts, pose) in samples {
        let t = pose.translation;
        let (qx, qy, qz, qw) = pose.quaternion();
        writeln!(out, "{ts} {} {} {} {qx} {qy} {qz} {qw}", t.x, t.y, t.z)
            .expect("string write cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_poses(path: &Path) -> Result<Vec<(f64, Pose)>> {
    let text = fs::read_to_string(path)?;
    let mut samples = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let n = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 8 {
            return Err(Error::format(format!(
                "{}: line {n}: expected 8 fields, found {}",
                path.display(),
                fields.len()
            )));
        }
        let mut vals = [0.0f64; 8];
        for (i, tok) in fields.iter().enumerate() {
            vals[i] = tok.parse().map_err(|_| {
                Error::format(format!(
                    "{}: line {n}: field {} is not a number: {tok:?}",
                    path.display(),
                    i + 1
                ))
            })?;
        }
        let [ts, tx, ty, tz, qx, qy, qz, qw] = vals;
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if (norm - 1.0).abs() > 1e-3 {
            return Err(Error::format(format!(
                "{}: line {n}: quaternion norm {norm:.6} too far from 1",
                path.display()
            )));
        }
        let pose = Pose::from_quaternion(qx, qy, qz, qw, Vector3::new(tx, ty, tz))
            .map_err(|e| Error::format(format!("{}: line {n}: {e}", path.display())))?;
        samples.push((ts, pose));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line_parses_to_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        fs::write(&path, "0.0 0 0 0 0 0 0 1\n").unwrap();
        let samples = read_poses(&path).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].0, 0.0);
        let p = &samples[0].1;
        assert_eq!(p.rotation, nalgebra::Matrix3::identity());
        assert_eq!(p.translation, Vector3::zeros());
    }

    #[test]
    fn round_trip_rotation_1e6_translation_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        let mut samples = Vec::new();
        for k in 0..20 {
            let angle = 0.1 * k as f64;
            let axis = Vector3::new(1.0, 0.5 * k as f64, -0.3);
            let t = Vector3::new(0.1 * k as f64, -0.25, 1.0 / (k as f64 + 1.0));
            samples.push((k as f64 / 30.0, Pose::from_axis_angle(axis, angle, t)));
        }
        write_poses(&path, &samples).unwrap();
        let back = read_poses(&path).unwrap();
        assert_eq!(back.len(), samples.len());
        for ((ts_a, a), (ts_b, b)) in samples.iter().zip(&back) {
            assert_eq!(ts_a, ts_b);
            assert_eq!(a.translation, b.translation, "translation must round-trip exactly");
            let dev = (a.rotation - b.rotation).abs().max();
            assert!(dev < 1e-6, "rotation deviation {dev}");
        }
    }

    #[test]
    fn bad_quaternion_norm_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        fs::write(&path, "# header\n0.0 0 0 0 0 0 0 1\n0.033 0 0 0 0 0 0 0.9\n").unwrap();
        let err = read_poses(&path).unwrap_err().to_string();
        assert!(err.contains("line 3"), "error should cite line 3: {err}");
        assert!(err.contains("norm"), "error should mention the norm: {err}");
    }

    #[test]
    fn field_count_and_parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        fs::write(&path, "0.0 0 0 0 0 0 1\n").unwrap();
        let err = read_poses(&path).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("8 fields"), "{err}");

        fs::write(&path, "0.0 0 zero 0 0 0 0 1\n").unwrap();
        let err = read_poses(&path).unwrap_err().to_string();
        assert!(err.contains("line 1") && err.contains("not a number"), "{err}");
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        fs::write(&path, "# c\n\n0.0 1 2 3 0 0 0 1\n\n# tail\n").unwrap();
        let samples = read_poses(&path).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].1.translation, Vector3::new(1.0, 2.0, 3.0));
    }
}
