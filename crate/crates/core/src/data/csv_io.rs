use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Reads a rectangular numeric CSV table.
///
/// A first row containing any non-numeric cell is treated as a header.
/// Row numbers in errors are 1-based file lines.
pub fn load_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<Array2<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut values = Vec::new();
    let mut width: Option<usize> = None;
    let mut rows = 0;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1;
        let record = record.map_err(|e| Error::Csv {
            row: line,
            msg: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let parsed = match parsed {
            Ok(p) => p,
            Err(_) if i == 0 => continue,
            Err(_) => {
                let bad = record.iter().find(|c| c.parse::<f64>().is_err()).unwrap_or("");
                return Err(Error::Csv {
                    row: line,
                    msg: format!("non-numeric cell `{bad}`"),
                });
            }
        };
        match width {
            None => width = Some(parsed.len()),
            Some(w) if w != parsed.len() => {
                return Err(Error::Csv {
                    row: line,
                    msg: format!("expected {w} columns, found {}", parsed.len()),
                })
            }
            _ => {}
        }
        if let Some(v) = parsed.iter().find(|v| !v.is_finite()) {
            return Err(Error::Csv {
                row: line,
                msg: format!("non-finite value {v}"),
            });
        }
        values.extend(parsed);
        rows += 1;
    }
    let width = width.ok_or(Error::EmptyInput("csv file has no data rows"))?;
    Ok(Array2::from_shape_vec((rows, width), values).expect("rectangular"))
}

/// Writes `x` without a header using shortest round-trip decimals.
pub fn save_csv(path: impl AsRef<Path>, x: ArrayView2<f64>) -> Result<()> {
    save_csv_with_header(path, None, x)
}

pub fn save_csv_with_header(path: impl AsRef<Path>, header: Option<&[String]>, x: ArrayView2<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    write_csv(&mut w, header, x)?;
    w.flush()?;
    Ok(())
}

pub fn write_csv<W: Write>(w: &mut W, header: Option<&[String]>, x: ArrayView2<f64>) -> Result<()> {
    if let Some(h) = header {
        writeln!(w, "{}", h.join(","))?;
    }
    let mut line = String::new();
    for row in x.rows() {
        line.clear();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Array2::from_shape_fn((100, 6), |_| {
            rng.random::<f64>() * 10f64.powi(rng.random_range(-8..8)) - 0.5
        });
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        save_csv(&p, x.view()).unwrap();
        assert_eq!(load_csv(&p).unwrap(), x);
    }

    #[test]
    fn header_is_detected() {
        let x = parse_csv("a,b\n1,2\n3.5,-4e-3\n").unwrap();
        assert_eq!(x, ndarray::array![[1.0, 2.0], [3.5, -4e-3]]);
        let y = parse_csv("1,2\n3,4\n").unwrap();
        assert_eq!(y.dim(), (2, 2));
    }

    #[test]
    fn ragged_rows_name_the_row() {
        match parse_csv("a,b\n1,2\n3,4\n5\n") {
            Err(Error::Csv { row, .. }) => assert_eq!(row, 4),
            other => panic!("{other:?}"),
        }
        match parse_csv("1,2\nx,4\n") {
            Err(Error::Csv { row, msg }) => {
                assert_eq!(row, 2);
                assert!(msg.contains('x'));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_csv("a,b\n").is_err());
        assert!(parse_csv("1,NaN\n").is_err());
    }
}
