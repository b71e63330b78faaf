//! CSV reading and writing for datasets.
//!
//! Header `y,a,z,l1,...,lp`, optionally followed by the latent columns
//! `u,y1,ym1` written by the simulator.

use std::path::Path;

use ivregime_core::{Dataset, Label, LatentDataset, Observation};

use crate::error::CliError;
use crate::fmt::num;

#[derive(Clone, Debug, PartialEq)]
pub struct CsvTable {
    pub data: Dataset,
    /// `(u, y1, ym1)` per row when the latent columns are present.
    pub latent: Option<Vec<(f64, f64, f64)>>,
}

fn fail(source: &str, reason: String) -> CliError {
    CliError::Format { path: source.to_string(), reason }
}

fn label(cell: &str, recode: bool) -> Option<Label> {
    match cell.trim() {
        "1" | "+1" => Some(Label::Pos),
        "-1" if !recode => Some(Label::Neg),
        "0" if recode => Some(Label::Neg),
        _ => None,
    }
}

/// Parses CSV text. Labels are `+1/-1`, or `1/0` when `recode` is set.
/// Rows are numbered from 1 after the header.
pub fn parse_csv(text: &str, recode: bool, source: &str) -> Result<CsvTable, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| fail(source, format!("unreadable header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    for (k, want) in ["y", "a", "z"].iter().enumerate() {
        if header.get(k).map(String::as_str) != Some(*want) {
            return Err(fail(source, format!("missing column `{want}` at position {}", k + 1)));
        }
    }
    let latent_cols = header.len() >= 6 && header[header.len() - 3..] == ["u", "y1", "ym1"];
    let p = header.len() - 3 - if latent_cols { 3 } else { 0 };
    if p == 0 {
        return Err(fail(source, "no covariate columns `l1`, `l2`, ...".into()));
    }
    for j in 0..p {
        let want = format!("l{}", j + 1);
        if header[3 + j] != want {
            return Err(fail(source, format!("missing column `{want}` (found `{}`)", header[3 + j])));
        }
    }
    let mut rows = Vec::new();
    let mut latent = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| fail(source, format!("row {row}: {e}")))?;
        if rec.len() != header.len() {
            return Err(fail(source, format!("row {row}: expected {} fields, found {}", header.len(), rec.len())));
        }
        let number = |k: usize| -> Result<f64, CliError> {
            let cell = rec[k].trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| fail(source, format!("row {row}, column {}: non-numeric value `{cell}`", header[k])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(fail(source, format!("row {row}, column {}: value is not finite", header[k])))
            }
        };
        let a = label(&rec[1], recode).ok_or_else(|| fail(source, format!("invalid treatment label at row {row}")))?;
        let z = label(&rec[2], recode).ok_or_else(|| fail(source, format!("invalid instrument label at row {row}")))?;
        let y = number(0)?;
        let l = (0..p).map(|j| number(3 + j)).collect::<Result<Vec<_>, _>>()?;
        rows.push(Observation::new(y, a, z, l));
        if latent_cols {
            latent.push((number(3 + p)?, number(4 + p)?, number(5 + p)?));
        }
    }
    let data = Dataset::new(rows).map_err(|e| fail(source, e.to_string()))?;
    Ok(CsvTable { data, latent: latent_cols.then_some(latent) })
}

pub fn read_csv(path: &Path, recode: bool) -> Result<CsvTable, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_csv(&text, recode, &path.display().to_string())
}

fn header(p: usize, latent: bool) -> String {
    let mut h = String::from("y,a,z");
    for j in 1..=p {
        h.push_str(&format!(",l{j}"));
    }
    if latent {
        h.push_str(",u,y1,ym1");
    }
    h.push('\n');
    h
}

fn push_row(out: &mut String, r: &Observation) {
    out.push_str(&num(r.y));
    out.push(',');
    out.push_str(&r.a.to_string());
    out.push(',');
    out.push_str(&r.z.to_string());
    for v in &r.l {
        out.push(',');
        out.push_str(&num(*v));
    }
}

pub fn write_dataset(ds: &Dataset) -> String {
    let mut out = header(ds.p(), false);
    for r in ds.rows() {
        push_row(&mut out, r);
        out.push('\n');
    }
    out
}

pub fn write_latent(latent: &LatentDataset) -> String {
    let ds = latent.observable();
    let mut out = header(ds.p(), true);
    for (i, r) in ds.rows().iter().enumerate() {
        push_row(&mut out, r);
        for v in [latent.u[i], latent.y_pos[i], latent.y_neg[i]] {
            out.push(',');
            out.push_str(&num(v));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_single_row() {
        let t = parse_csv("y,a,z,l1\n1.5,1,-1,0.2", false, "t").unwrap();
        let r = &t.data.rows()[0];
        assert_eq!((r.y, r.a, r.z, r.l.clone()), (1.5, Label::Pos, Label::Neg, vec![0.2]));
        assert!(t.latent.is_none());
    }

    #[test]
    fn bad_treatment_label() {
        let e = parse_csv("y,a,z,l1\n1.5,2,-1,0.2", false, "t").unwrap_err();
        assert!(e.to_string().contains("invalid treatment label at row 1"), "{e}");
    }

    #[test]
    fn recode_accepts_zero_one_only_when_asked() {
        assert!(parse_csv("y,a,z,l1\n1,0,1,0", false, "t").is_err());
        let t = parse_csv("y,a,z,l1\n1,0,1,0", true, "t").unwrap();
        assert_eq!(t.data.rows()[0].a, Label::Neg);
        assert!(parse_csv("y,a,z,l1\n1,-1,1,0", true, "t").is_err());
    }

    #[test]
    fn structural_errors_name_row_and_column() {
        let e = parse_csv("y,a,l1\n1,1,0", false, "t").unwrap_err().to_string();
        assert!(e.contains("missing column `z`"), "{e}");
        let e = parse_csv("y,a,z,l1\n1,1,1,abc", false, "t").unwrap_err().to_string();
        assert!(e.contains("row 1, column l1"), "{e}");
        let e = parse_csv("y,a,z,l1\n1,1,1,0\n1,1,1", false, "t").unwrap_err().to_string();
        assert!(e.contains("row 2"), "{e}");
    }

    #[test]
    fn round_trip_is_bitwise() {
        let ds = Dataset::new(vec![
            Observation::new(0.1 + 0.2, Label::Pos, Label::Neg, vec![1.0 / 3.0, -2.5e-7]),
            Observation::new(-1e300, Label::Neg, Label::Pos, vec![0.0, 123456789.12345679]),
        ])
        .unwrap();
        let back = parse_csv(&write_dataset(&ds), false, "t").unwrap().data;
        assert_eq!(back, ds);
    }
}
