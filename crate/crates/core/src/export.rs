//! Matrix dumps: CSV and binary greyscale PGM (P5, 8-bit).

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn rows_of(m: &Tensor) -> Result<(usize, usize)> {
    match m.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Config(format!("expected a matrix, got shape {s:?}"))),
    }
}

/// One line per row, comma separated, full precision.
pub fn matrix_csv(m: &Tensor) -> Result<String> {
    let (r, _) = rows_of(m)?;
    let mut out = String::new();
    for i in 0..r {
        let line: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
        let _ = writeln!(out, "{}", line.join(","));
    }
    Ok(out)
}

/// Pixel value `round(255·v)`; values are clamped to [0, 1] first and NaN
/// maps to 0.
pub fn matrix_pgm(m: &Tensor) -> Result<Vec<u8>> {
    let (r, c) = rows_of(m)?;
    let mut out = format!("P5\n{c} {r}\n255\n").into_bytes();
    out.extend(m.data().iter().map(|&v| {
        let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        (255.0 * v).round() as u8
    }));
    Ok(out)
}

/// Confusion counts normalised by row support; empty rows stay zero.
pub fn normalised_confusion(counts: &[Vec<usize>]) -> Tensor {
    let k = counts.len();
    let mut m = Tensor::zeros(&[k.max(1), k.max(1)]);
    for (t, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        if total == 0 {
            continue;
        }
        for (p, &n) in row.iter().enumerate() {
            m.set(&[t, p], n as f64 / total as f64);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_layout() {
        let m = Tensor::new(vec![2, 3], vec![0.0, 0.5, 1.0, 1.5, -1.0, f64::NAN]).unwrap();
        let bytes = matrix_pgm(&m).unwrap();
        let header = b"P5\n3 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(&bytes[header.len()..], &[0, 128, 255, 255, 0, 0]);
    }

    #[test]
    fn csv_rows() {
        let m = Tensor::new(vec![2, 2], vec![0.25, 1.0, 0.0, 0.5]).unwrap();
        assert_eq!(matrix_csv(&m).unwrap(), "0.25,1\n0,0.5\n");
        assert!(matrix_csv(&Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn confusion_rows_sum_to_one() {
        let m = normalised_confusion(&[vec![1, 3], vec![0, 0]]);
        assert_eq!(m.data(), &[0.25, 0.75, 0.0, 0.0]);
    }
}
