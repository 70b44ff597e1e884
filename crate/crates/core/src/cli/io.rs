//! CSV input and output.

use crate::error::{Error, Result};
use crate::model::BinarySeries;
use nalgebra::DMatrix;
use std::io::Write;
use std::path::Path;

/// Reads a binary series. Columns `y` or `y1..ym` hold the responses, `t` or
/// `time` are row labels and every other column is a numeric covariate.
pub fn read_series(path: &Path) -> Result<BinarySeries> {
    let file = std::fs::File::open(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    read_series_from(file)
}

pub fn read_series_from<R: std::io::Read>(reader: R) -> Result<BinarySeries> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut ycols: Vec<(usize, usize)> = Vec::new();
    let mut label = None;
    let mut xcols = Vec::new();
    for (i, h) in headers.iter().enumerate() {
        if h == "y" {
            ycols.push((1, i));
        } else if let Some(k) = h.strip_prefix('y').and_then(|s| s.parse::<usize>().ok()) {
            ycols.push((k, i));
        } else if h == "t" || h == "time" {
            label = Some(i);
        } else {
            xcols.push(i);
        }
    }
    ycols.sort_unstable();
    if ycols.is_empty() {
        return Err(Error::Validation("data file has no `y` or `y1..ym` column".into()));
    }
    if ycols.iter().enumerate().any(|(i, &(k, _))| k != i + 1) {
        return Err(Error::Validation("response columns must be `y` or `y1..ym` without gaps".into()));
    }
    let mut y = Vec::new();
    let mut labels = Vec::new();
    let mut x = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = row + 2;
        let mut yr = Vec::with_capacity(ycols.len());
        for &(_, c) in &ycols {
            let v = rec.get(c).unwrap_or("").trim();
            yr.push(match v {
                "0" => 0,
                "1" => 1,
                _ => {
                    return Err(Error::Validation(format!(
                        "line {line}, column `{}`: expected 0 or 1, found '{v}'",
                        headers[c]
                    )))
                }
            });
        }
        y.push(yr);
        if let Some(c) = label {
            labels.push(rec.get(c).unwrap_or("").to_string());
        }
        for &c in &xcols {
            let v = rec.get(c).unwrap_or("").trim();
            x.push(v.parse::<f64>().ok().filter(|f| f.is_finite()).ok_or_else(|| {
                Error::Validation(format!("line {line}, column `{}`: '{v}' is not a finite number", headers[c]))
            })?);
        }
    }
    let n = y.len();
    let mut s = BinarySeries::new(y)?;
    if label.is_some() {
        s.timestamps = Some(labels);
    }
    if !xcols.is_empty() {
        s.covariates = Some(DMatrix::from_row_slice(n, xcols.len(), &x));
        s.covariate_names = xcols.iter().map(|&c| headers[c].clone()).collect();
    }
    Ok(s)
}

/// Writes a series with the same column conventions `read_series` accepts.
pub fn write_series<W: Write>(out: W, s: &BinarySeries) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let m = s.m();
    let mut header = vec!["t".to_string()];
    if m == 1 {
        header.push("y".into());
    } else {
        header.extend((1..=m).map(|k| format!("y{k}")));
    }
    header.extend(s.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for t in 0..s.n() {
        let mut rec = vec![s.timestamps.as_ref().map_or_else(|| (t + 1).to_string(), |l| l[t].clone())];
        rec.extend(s.y[t].iter().map(u8::to_string));
        if let Some(x) = &s.covariates {
            rec.extend(x.row(t).iter().map(f64::to_string));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Generic table writer.
pub struct Table<W: Write> {
    w: csv::Writer<W>,
}

impl<W: Write> Table<W> {
    pub fn new(out: W, header: &[&str]) -> Result<Self> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        Ok(Self { w })
    }

    pub fn row(&mut self, fields: &[String]) -> Result<()> {
        self.w.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_with_covariates() {
        let text = "t,y,x\n2020-01-01,1,0.5\n2020-01-02,0,-1.25\n";
        let s = read_series_from(text.as_bytes()).unwrap();
        assert_eq!(s.y, vec![vec![1], vec![0]]);
        assert_eq!(s.covariate_names, vec!["x".to_string()]);
        assert_eq!(s.covariates.as_ref().unwrap()[(1, 0)], -1.25);
        let mut buf = Vec::new();
        write_series(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), text);
    }

    #[test]
    fn multivariate_columns_and_errors() {
        let s = read_series_from("y2,y1\n1,0\n0,0\n".as_bytes()).unwrap();
        assert_eq!(s.y, vec![vec![0, 1], vec![0, 0]]);
        assert!(read_series_from("y\n2\n".as_bytes()).is_err());
        assert!(read_series_from("x\n1\n".as_bytes()).is_err());
        assert!(read_series_from("y1,y3\n1,0\n".as_bytes()).is_err());
        assert!(read_series_from("y,x\n1,abc\n".as_bytes()).is_err());
    }
}
