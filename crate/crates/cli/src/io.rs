//! Text formats read and written by the CLI.
//!
//! Numbers are written with 17 significant digits so every value survives a
//! write/read cycle bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use sandwich::glam::NdArray;

use crate::CliError;

pub fn fmt_num(v: f64) -> String {
    format!("{v:.16e}")
}

fn parse_num(cell: &str, line: usize, path: &Path) -> Result<f64, CliError> {
    cell.trim().parse::<f64>().map_err(|_| {
        CliError::Input(format!(
            "{}:{line}: cannot parse {:?} as a number",
            path.display(),
            cell.trim()
        ))
    })
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let lines: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect();
    if lines.is_empty() {
        return Err(CliError::Input(format!("{}: file is empty", path.display())));
    }
    Ok(lines)
}

fn split(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn strip_prefix<'a>(cell: &'a str, prefix: &str) -> &'a str {
    cell.strip_prefix(prefix).unwrap_or(cell)
}

/// Gridded surface with its axis coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub values: DMatrix<f64>,
}

/// Header `x\z,z:<z₁>,...`; each row `x:<xᵢ>,<values>`.
pub fn read_grid(path: &Path) -> Result<Grid, CliError> {
    let lines = read_lines(path)?;
    let (hline, header) = &lines[0];
    let head = split(header);
    if head.len() < 2 {
        return Err(CliError::Input(format!(
            "{}:{hline}: header needs at least one z coordinate",
            path.display()
        )));
    }
    let z = head[1..]
        .iter()
        .map(|c| parse_num(strip_prefix(c, "z:"), *hline, path))
        .collect::<Result<Vec<_>, _>>()?;
    let mut x = Vec::new();
    let mut data = Vec::new();
    for (ln, line) in &lines[1..] {
        let cells = split(line);
        if cells.len() != z.len() + 1 {
            return Err(CliError::Input(format!(
                "{}:{ln}: expected {} fields, found {}",
                path.display(),
                z.len() + 1,
                cells.len()
            )));
        }
        x.push(parse_num(strip_prefix(cells[0], "x:"), *ln, path)?);
        for c in &cells[1..] {
            data.push(parse_num(c, *ln, path)?);
        }
    }
    if x.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    let values = DMatrix::from_row_slice(x.len(), z.len(), &data);
    Ok(Grid { x, z, values })
}

pub fn grid_csv(x: &[f64], z: &[f64], values: &DMatrix<f64>) -> String {
    let mut out = String::from("x\\z");
    for v in z {
        write!(out, ",z:{}", fmt_num(*v)).unwrap();
    }
    out.push('\n');
    for (i, xi) in x.iter().enumerate() {
        write!(out, "x:{}", fmt_num(*xi)).unwrap();
        for j in 0..z.len() {
            write!(out, ",{}", fmt_num(values[(i, j)])).unwrap();
        }
        out.push('\n');
    }
    out
}

/// `x,z,y` rows; a non-numeric first line is taken as a header.
pub fn read_scatter(path: &Path) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>), CliError> {
    let lines = read_lines(path)?;
    let skip = usize::from(split(&lines[0].1)[0].parse::<f64>().is_err());
    let (mut x, mut z, mut y) = (Vec::new(), Vec::new(), Vec::new());
    for (ln, line) in &lines[skip..] {
        let cells = split(line);
        if cells.len() != 3 {
            return Err(CliError::Input(format!(
                "{}:{ln}: expected 3 fields (x,z,y), found {}",
                path.display(),
                cells.len()
            )));
        }
        x.push(parse_num(cells[0], *ln, path)?);
        z.push(parse_num(cells[1], *ln, path)?);
        y.push(parse_num(cells[2], *ln, path)?);
    }
    if y.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok((x, z, y))
}

/// Header of grid points (optionally `t:`-prefixed), then one curve per row.
pub fn read_curves(path: &Path) -> Result<(Vec<f64>, DMatrix<f64>), CliError> {
    let lines = read_lines(path)?;
    let (hline, header) = &lines[0];
    let t = split(header)
        .iter()
        .map(|c| parse_num(strip_prefix(c, "t:"), *hline, path))
        .collect::<Result<Vec<_>, _>>()?;
    let mut data = Vec::new();
    for (ln, line) in &lines[1..] {
        let cells = split(line);
        if cells.len() != t.len() {
            return Err(CliError::Input(format!(
                "{}:{ln}: expected {} fields, found {}",
                path.display(),
                t.len(),
                cells.len()
            )));
        }
        for c in cells {
            data.push(parse_num(c, *ln, path)?);
        }
    }
    let n = data.len() / t.len();
    if n == 0 {
        return Err(CliError::Input(format!("{}: no curves", path.display())));
    }
    Ok((t.clone(), DMatrix::from_row_slice(n, t.len(), &data)))
}

/// Long format `x1,...,xd,value` covering a full tensor grid exactly once.
pub fn read_array(path: &Path) -> Result<(Vec<Vec<f64>>, NdArray), CliError> {
    let lines = read_lines(path)?;
    let skip = usize::from(split(&lines[0].1)[0].parse::<f64>().is_err());
    let width = split(&lines[skip.min(lines.len() - 1)].1).len();
    if width < 3 {
        return Err(CliError::Input(format!(
            "{}: need at least two coordinate columns and a value column",
            path.display()
        )));
    }
    let d = width - 1;
    let mut rows = Vec::new();
    for (ln, line) in &lines[skip..] {
        let cells = split(line);
        if cells.len() != width {
            return Err(CliError::Input(format!(
                "{}:{ln}: expected {width} fields, found {}",
                path.display(),
                cells.len()
            )));
        }
        let vals = cells
            .iter()
            .map(|c| parse_num(c, *ln, path))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((*ln, vals));
    }
    let mut coords: Vec<Vec<f64>> = vec![Vec::new(); d];
    for (_, r) in &rows {
        for (axis, c) in coords.iter_mut().enumerate() {
            c.push(r[axis]);
        }
    }
    for c in coords.iter_mut() {
        c.sort_by(f64::total_cmp);
        c.dedup();
    }
    let shape: Vec<usize> = coords.iter().map(Vec::len).collect();
    let total: usize = shape.iter().product();
    if total != rows.len() {
        return Err(CliError::Input(format!(
            "{}: {} rows do not form a full {shape:?} grid",
            path.display(),
            rows.len()
        )));
    }
    let mut data = vec![f64::NAN; total];
    let mut seen = vec![false; total];
    for (ln, r) in &rows {
        let mut offset = 0;
        let mut stride = 1;
        for axis in 0..d {
            let k = coords[axis]
                .binary_search_by(|v| v.total_cmp(&r[axis]))
                .expect("coordinate collected above");
            offset += k * stride;
            stride *= shape[axis];
        }
        if seen[offset] {
            return Err(CliError::Input(format!(
                "{}:{ln}: duplicate grid point",
                path.display()
            )));
        }
        seen[offset] = true;
        data[offset] = r[d];
    }
    let arr = NdArray::new(shape, data).map_err(|e| CliError::Input(e.to_string()))?;
    Ok((coords, arr))
}

pub fn array_csv(coords: &[Vec<f64>], values: &NdArray) -> String {
    let d = coords.len();
    let mut out = (1..=d).map(|k| format!("x{k}")).collect::<Vec<_>>().join(",");
    out.push_str(",value\n");
    let shape = values.shape();
    let mut idx = vec![0usize; d];
    for v in values.as_slice() {
        for (axis, &k) in idx.iter().enumerate() {
            write!(out, "{},", fmt_num(coords[axis][k])).unwrap();
        }
        writeln!(out, "{}", fmt_num(*v)).unwrap();
        // first axis fastest
        for axis in 0..d {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    out
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)
                .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        }
    }
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numeric(format!("cannot serialise summary: {e}")))?;
    text.push('\n');
    write_file(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        let x = vec![0.1, 1.0 / 3.0];
        let z = vec![0.2, 0.7, std::f64::consts::PI / 4.0];
        let v = DMatrix::from_fn(2, 3, |i, j| (i as f64 + 0.1).powf(j as f64 + 0.3) / 7.0);
        write_file(&p, &grid_csv(&x, &z, &v)).unwrap();
        let g = read_grid(&p).unwrap();
        assert_eq!(g.x, x);
        assert_eq!(g.z, z);
        assert_eq!(g.values, v);
    }

    #[test]
    fn array_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let coords = vec![vec![0.1, 0.5], vec![0.2, 0.4, 0.9], vec![0.3, 0.6]];
        let arr = NdArray::from_fn(vec![2, 3, 2], |i| (i[0] * 100 + i[1] * 10 + i[2]) as f64 / 3.0);
        write_file(&p, &array_csv(&coords, &arr)).unwrap();
        let (c, a) = read_array(&p).unwrap();
        assert_eq!(c, coords);
        assert_eq!(a, arr);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "x\\z,z:0.5\nx:0.5,1.0\nx:0.7,oops\n").unwrap();
        let err = read_grid(&p).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
        fs::write(&p, "").unwrap();
        assert!(read_grid(&p).unwrap_err().to_string().contains("empty"));
    }

    #[test]
    fn incomplete_array_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, "x1,x2,value\n0,0,1\n0,1,2\n1,0,3\n").unwrap();
        assert!(read_array(&p).is_err());
    }
}
