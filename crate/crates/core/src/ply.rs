//! ASCII PLY export with per-point correctness colors:
//! green for correct, red for incorrect, grey for ignored.

use crate::eval::Correctness;
use crate::pointcloud::PointCloud;
use std::fmt::Write;

pub const CORRECT_RGB: [u8; 3] = [0, 255, 0];
pub const INCORRECT_RGB: [u8; 3] = [255, 0, 0];
pub const IGNORED_RGB: [u8; 3] = [128, 128, 128];

pub fn color_of(flag: Correctness) -> [u8; 3] {
    match flag {
        Correctness::Correct => CORRECT_RGB,
        Correctness::Incorrect => INCORRECT_RGB,
        Correctness::Ignored => IGNORED_RGB,
    }
}

/// Formats like C's `%g`: six significant digits, trailing zeros removed,
/// scientific notation for exponents below -4 or at least 6.
pub fn format_g6(v: f64) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-4..6).contains(&exp) {
        let m = trim(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim(format!("{v:.decimals$}"))
    }
}

pub fn export_ply(cloud: &PointCloud, flags: &[Correctness]) -> Vec<u8> {
    assert_eq!(cloud.len(), flags.len(), "one flag per point");
    let mut s = String::with_capacity(128 + cloud.len() * 32);
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", cloud.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property float {p}");
    }
    for p in ["red", "green", "blue"] {
        let _ = writeln!(s, "property uchar {p}");
    }
    s.push_str("end_header\n");
    for (i, &f) in flags.iter().enumerate() {
        let [r, g, b] = color_of(f);
        let _ = writeln!(
            s,
            "{} {} {} {r} {g} {b}",
            format_g6(cloud.x()[i]),
            format_g6(cloud.y()[i]),
            format_g6(cloud.z()[i])
        );
    }
    s.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g6_formatting() {
        let cases = [
            (1.0, "1"),
            (2.5, "2.5"),
            (-3.0, "-3"),
            (0.1, "0.1"),
            (123456.7, "123457"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234, "1.234e-05"),
            (1.23456789, "1.23457"),
            (999999.5, "1e+06"),
            (0.0, "0"),
        ];
        for (v, want) in cases {
            assert_eq!(format_g6(v), want, "{v}");
        }
    }

    #[test]
    fn empty_cloud_header() {
        let out = String::from_utf8(export_ply(&PointCloud::new(), &[])).unwrap();
        assert!(out.contains("element vertex 0\n"));
        assert!(out.ends_with("end_header\n"));
    }

    #[test]
    fn single_correct_point() {
        let c = PointCloud::from_points(&[[1.0, 2.0, 3.0, 0.5]]).unwrap();
        let out = String::from_utf8(export_ply(&c, &[Correctness::Correct])).unwrap();
        assert_eq!(out.lines().last().unwrap(), "1 2 3 0 255 0");
    }
}
