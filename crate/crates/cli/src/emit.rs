//! CSV and JSON writers. Floats carry 17 significant digits; lines end in LF.

use std::fmt::Write as _;

use dirac_ibvp::discrete::Grid;
use dirac_ibvp::spinor::{norm_sqr, Spinor};
use serde::Serialize;

pub const CSV_HEADER: &str = "t,mode,x,re0,im0,re1,im1,energy_density";

/// One slice of physical fields, one per mode.
pub struct CsvSlice<'a> {
    pub t: f64,
    pub modes: &'a [i32],
    pub fields: &'a [Vec<Spinor>],
}

pub fn trajectory_csv(grid: &Grid, slices: &[CsvSlice]) -> String {
    let mut out = String::with_capacity(slices.len() * grid.nx() * 200);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in slices {
        for (k, f) in s.modes.iter().zip(s.fields) {
            for (j, v) in f.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{:.16e},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    s.t,
                    k,
                    grid.x(j),
                    v[0].re,
                    v[0].im,
                    v[1].re,
                    v[1].im,
                    norm_sqr(v)
                );
            }
        }
    }
    out
}

/// One parsed CSV row.
#[derive(Clone, Debug, PartialEq)]
pub struct CsvRow {
    pub t: f64,
    pub mode: i32,
    pub x: f64,
    pub psi: [f64; 4],
    pub energy_density: f64,
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => return Err(format!("unexpected header {other:?}")),
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 8 {
                return Err(format!("line {}: expected 8 columns", i + 2));
            }
            let f = |s: &str| s.parse::<f64>().map_err(|e| format!("line {}: {e}", i + 2));
            Ok(CsvRow {
                t: f(cols[0])?,
                mode: cols[1].parse().map_err(|e| format!("line {}: {e}", i + 2))?,
                x: f(cols[2])?,
                psi: [f(cols[3])?, f(cols[4])?, f(cols[5])?, f(cols[6])?],
                energy_density: f(cols[7])?,
            })
        })
        .collect()
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("summaries serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use dirac_ibvp::spinor::c;

    #[test]
    fn csv_roundtrip() {
        let grid = Grid::new(16, 1.0).unwrap();
        let f = grid.sample(|x| [c(x, -1.0 / 3.0), c(0.1, x * x)]);
        let text = trajectory_csv(&grid, &[CsvSlice { t: 0.25, modes: &[0], fields: std::slice::from_ref(&f) }]);
        assert!(!text.contains('\r'));
        let rows = parse_csv(&text).unwrap();
        assert_eq!(rows.len(), 16);
        for (r, v) in rows.iter().zip(&f) {
            assert_eq!(r.psi, [v[0].re, v[0].im, v[1].re, v[1].im]);
            assert_eq!(r.t, 0.25);
        }
    }
}
