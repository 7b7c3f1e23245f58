//! Synthetic manifolds, CSV ingestion and train/test splitting.
//!
//! All generators draw their manifold parameters uniformly from a ChaCha8
//! stream seeded with the caller's seed, one parameter after another per
//! point, so a given `(n, seed)` always yields the same point cloud.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::stats::seeded_rng;

/// A sample of `N` points in `R^D`, optionally carrying one real label per
/// point (the generative parameter for synthetic data, used for coloring).
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    points: Array2<f64>,
    labels: Option<Array1<f64>>,
}

impl DataMatrix {
    /// Validates shape and finiteness. A zero-row matrix is accepted so that
    /// empty subsets (e.g. the second half of a full split) are representable;
    /// operations that need data reject it themselves.
    pub fn new(points: Array2<f64>, labels: Option<Array1<f64>>) -> Result<Self> {
        if points.ncols() == 0 {
            return Err(Error::Shape("data must have at least one column".into()));
        }
        if let Some(l) = &labels {
            if l.len() != points.nrows() {
                return Err(Error::Shape(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.nrows()
                )));
            }
        }
        for ((row, column), v) in points.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite { row, column });
            }
        }
        if let Some(l) = &labels {
            if let Some(row) = l.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row,
                    column: points.ncols(),
                });
            }
        }
        Ok(Self { points, labels })
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn labels(&self) -> Option<&Array1<f64>> {
        self.labels.as_ref()
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> DataMatrix {
        DataMatrix {
            points: self.points.select(Axis(0), indices),
            labels: self.labels.as_ref().map(|l| l.select(Axis(0), indices)),
        }
    }

    pub fn into_parts(self) -> (Array2<f64>, Option<Array1<f64>>) {
        (self.points, self.labels)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    SwissRoll,
    SCurve,
    Helix,
}

impl Manifold {
    pub const ALL: [Manifold; 3] = [Manifold::SwissRoll, Manifold::SCurve, Manifold::Helix];

    pub fn name(self) -> &'static str {
        match self {
            Manifold::SwissRoll => "swiss-roll",
            Manifold::SCurve => "s-curve",
            Manifold::Helix => "helix",
        }
    }

    pub fn generate(self, n: usize, seed: u64) -> Result<DataMatrix> {
        match self {
            Manifold::SwissRoll => generate_swiss_roll(n, seed),
            Manifold::SCurve => generate_s_curve(n, seed),
            Manifold::Helix => generate_helix(n, seed),
        }
    }
}

impl fmt::Display for Manifold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Manifold {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Manifold::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            Error::InvalidArgument(format!("unknown dataset `{s}` (expected swiss-roll, s-curve or helix)"))
        })
    }
}

pub fn swiss_roll_point(t: f64, h: f64) -> [f64; 3] {
    [t * t.cos(), h, t * t.sin()]
}

pub fn s_curve_point(t: f64, h: f64) -> [f64; 3] {
    // sign(0) = 0, unlike f64::signum
    let sign = if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    };
    [t.sin(), h, sign * (t.cos() - 1.0)]
}

pub fn helix_point(theta: f64) -> [f64; 3] {
    [theta.cos(), (2.0 * theta).sin(), (3.0 * theta).cos()]
}

fn generate<F>(n: usize, seed: u64, mut draw: F) -> Result<DataMatrix>
where
    F: FnMut(&mut crate::stats::Rng) -> ([f64; 3], f64),
{
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut rng = seeded_rng(seed);
    let mut points = Array2::zeros((n, 3));
    let mut labels = Array1::zeros(n);
    for i in 0..n {
        let (p, label) = draw(&mut rng);
        points.row_mut(i).assign(&Array1::from(p.to_vec()));
        labels[i] = label;
    }
    DataMatrix::new(points, Some(labels))
}

/// Uniform sample with `t` in `[3π/2, 9π/2)` and `h` in `[0, 21)`; labels are `t`.
pub fn generate_swiss_roll(n: usize, seed: u64) -> Result<DataMatrix> {
    generate(n, seed, |rng| {
        let t = 1.5 * PI + 3.0 * PI * rng.gen::<f64>();
        let h = 21.0 * rng.gen::<f64>();
        (swiss_roll_point(t, h), t)
    })
}

/// Uniform sample with `t` in `[-3π/2, 3π/2)` and `h` in `[0, 2)`; labels are `t`.
pub fn generate_s_curve(n: usize, seed: u64) -> Result<DataMatrix> {
    generate(n, seed, |rng| {
        let t = -1.5 * PI + 3.0 * PI * rng.gen::<f64>();
        let h = 2.0 * rng.gen::<f64>();
        (s_curve_point(t, h), t)
    })
}

/// Uniform sample with `θ` in `[0, 2π)`; labels are `θ`.
pub fn generate_helix(n: usize, seed: u64) -> Result<DataMatrix> {
    generate(n, seed, |rng| {
        let theta = 2.0 * PI * rng.gen::<f64>();
        (helix_point(theta), theta)
    })
}

/// Index sets of a uniform random partition of `0..n` into `n_a` and
/// `n - n_a` elements. Both sets are returned in ascending order.
pub fn split_indices(n: usize, n_a: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n_a == 0 || n_a > n {
        return Err(Error::InvalidArgument(format!("split size {n_a} must be in 1..={n}")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut seeded_rng(seed));
    let mut a = idx[..n_a].to_vec();
    let mut b = idx[n_a..].to_vec();
    a.sort_unstable();
    b.sort_unstable();
    Ok((a, b))
}

pub fn split(data: &DataMatrix, n_a: usize, seed: u64) -> Result<(DataMatrix, DataMatrix)> {
    let (a, b) = split_indices(data.len(), n_a, seed)?;
    Ok((data.select(&a), data.select(&b)))
}

/// Reads a comma-separated numeric table.
///
/// The first row is treated as a header when any of its cells fails to parse
/// as a number. `label_column` names a column (requires a header) to split
/// off as labels. Numbers are parsed with Rust's locale-independent parser.
pub fn load_csv(path: &Path, label_column: Option<&str>) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;

    let parse_err = |line: usize, column: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        msg,
    };

    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        rows.push(rec.map_err(|e| csv_error(path, e))?);
    }
    if rows.is_empty() {
        return Err(parse_err(1, 1, "file is empty".into()));
    }

    let header_present = rows[0].iter().any(|c| c.parse::<f64>().is_err());
    let header: Option<Vec<String>> = header_present.then(|| rows[0].iter().map(str::to_owned).collect());
    let body_start = usize::from(header_present);
    let width = rows[0].len();

    let label_idx = match label_column {
        None => None,
        Some(name) => {
            let h = header.as_ref().ok_or_else(|| {
                parse_err(
                    1,
                    1,
                    format!("label column `{name}` requested but the file has no header"),
                )
            })?;
            Some(
                h.iter()
                    .position(|c| c == name)
                    .ok_or_else(|| parse_err(1, 1, format!("no column named `{name}` in header")))?,
            )
        }
    };
    let d = width - usize::from(label_idx.is_some());
    if d == 0 {
        return Err(parse_err(1, 1, "no feature columns".into()));
    }

    let n = rows.len() - body_start;
    let mut points = Array2::zeros((n, d));
    let mut labels = label_idx.map(|_| Array1::zeros(n));
    for (r, rec) in rows[body_start..].iter().enumerate() {
        let line = r + body_start + 1;
        if rec.len() != width {
            return Err(parse_err(
                line,
                rec.len().min(width) + 1,
                format!("expected {width} fields, found {}", rec.len()),
            ));
        }
        let mut c_out = 0;
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, c + 1, format!("`{cell}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(line, c + 1, format!("`{cell}` is not finite")));
            }
            if Some(c) == label_idx {
                labels.as_mut().expect("label buffer")[r] = v;
            } else {
                points[[r, c_out]] = v;
                c_out += 1;
            }
        }
    }
    DataMatrix::new(points, labels)
}

/// Header names of a CSV file, or `None` if its first row is numeric.
pub fn csv_header(path: &Path) -> Result<Option<Vec<String>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    match reader.records().next() {
        None => Ok(None),
        Some(rec) => {
            let rec = rec.map_err(|e| csv_error(path, e))?;
            Ok(rec
                .iter()
                .any(|c| c.parse::<f64>().is_err())
                .then(|| rec.iter().map(str::to_owned).collect()))
        }
    }
}

/// Writes points with a header. Columns are named `{prefix}1..{prefix}D`,
/// followed by `label` when labels are present.
pub fn write_csv(path: &Path, data: &DataMatrix, prefix: &str) -> Result<()> {
    write_table(path, data.points(), data.labels(), prefix)
}

pub(crate) fn write_table(path: &Path, points: &Array2<f64>, labels: Option<&Array1<f64>>, prefix: &str) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::file(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let io = |e| Error::file(path, e);
    let mut header: Vec<String> = (1..=points.ncols()).map(|j| format!("{prefix}{j}")).collect();
    if labels.is_some() {
        header.push("label".into());
    }
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (i, row) in points.rows().into_iter().enumerate() {
        let mut cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        if let Some(l) = labels {
            cells.push(l[i].to_string());
        }
        writeln!(w, "{}", cells.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let (line, msg) = match e.position() {
        Some(p) => (p.line() as usize, e.to_string()),
        None => (0, e.to_string()),
    };
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::file(path, io),
        _ => Error::Parse {
            path: path.to_path_buf(),
            line,
            column: 0,
            msg,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn swiss_roll_shape_and_radius() {
        let d = generate_swiss_roll(2000, 7).unwrap();
        assert_eq!(d.points().dim(), (2000, 3));
        for row in d.points().rows() {
            let r = row[0].hypot(row[2]);
            assert!((1.5 * PI..4.5 * PI).contains(&r), "radius {r}");
            assert!((0.0..21.0).contains(&row[1]));
        }
    }

    #[test]
    fn single_point_height_range() {
        for seed in 0..20 {
            let d = generate_swiss_roll(1, seed).unwrap();
            assert_eq!(d.len(), 1);
            assert!((0.0..21.0).contains(&d.points()[[0, 1]]));
        }
    }

    #[test]
    fn zero_points_is_an_error() {
        for m in Manifold::ALL {
            assert!(matches!(m.generate(0, 1), Err(Error::EmptySample)));
        }
    }

    #[test]
    fn s_curve_origin() {
        assert_eq!(s_curve_point(0.0, 1.25), [0.0, 1.25, 0.0]);
    }

    #[test]
    fn helix_closed_forms() {
        assert_eq!(helix_point(0.0), [1.0, 0.0, 1.0]);
        let p = helix_point(PI / 2.0);
        for c in p {
            assert!(c.abs() < 1e-15, "{p:?}");
        }
    }

    #[test]
    fn labels_carry_parameter() {
        let d = generate_s_curve(50, 3).unwrap();
        let labels = d.labels().unwrap();
        for (row, &t) in d.points().rows().into_iter().zip(labels.iter()) {
            let p = s_curve_point(t, row[1]);
            assert_eq!(p, [row[0], row[1], row[2]]);
        }
    }

    #[test]
    fn manifold_names_round_trip() {
        for m in Manifold::ALL {
            assert_eq!(m.name().parse::<Manifold>().unwrap(), m);
        }
        assert!("torus".parse::<Manifold>().is_err());
    }

    #[test]
    fn split_sizes() {
        let d = generate_helix(2000, 1).unwrap();
        let (a, b) = split(&d, 1000, 9).unwrap();
        assert_eq!((a.len(), b.len()), (1000, 1000));
        let (a, b) = split(&d, 2000, 9).unwrap();
        assert_eq!((a.len(), b.len()), (2000, 0));
        assert_eq!(a, d);
        assert!(split(&d, 0, 9).is_err());
        assert!(split(&d, 2001, 9).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        assert_eq!(split_indices(100, 40, 5).unwrap(), split_indices(100, 40, 5).unwrap());
        assert_ne!(split_indices(100, 40, 5).unwrap(), split_indices(100, 40, 6).unwrap());
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn csv_with_header_and_label() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "x,y,label\n1,2,0.5\n3.5,-4e-1,1\n");
        let d = load_csv(&p, Some("label")).unwrap();
        assert_eq!(d.points(), &ndarray::array![[1.0, 2.0], [3.5, -0.4]]);
        assert_eq!(d.labels().unwrap(), &ndarray::array![0.5, 1.0]);
        let d = load_csv(&p, None).unwrap();
        assert_eq!(d.dim(), 3);
    }

    #[test]
    fn csv_without_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "a.csv", "1,2\n3,4\n");
        let d = load_csv(&p, None).unwrap();
        assert_eq!(d.points(), &ndarray::array![[1.0, 2.0], [3.0, 4.0]]);
        assert!(load_csv(&p, Some("label")).is_err());
    }

    #[test]
    fn csv_errors_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let ragged = write(&dir, "r.csv", "a,b\n1,2\n3\n");
        match load_csv(&ragged, None) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let bad = write(&dir, "b.csv", "a,b\n1,2\n3,x\n");
        match load_csv(&bad, None) {
            Err(Error::Parse { line, column, .. }) => assert_eq!((line, column), (3, 2)),
            other => panic!("{other:?}"),
        }
        let comma = write(&dir, "c.csv", "a,b\n1,2\n3,\"1,5\"\n");
        assert!(matches!(load_csv(&comma, None), Err(Error::Parse { .. })));
        let empty = write(&dir, "e.csv", "");
        assert!(matches!(load_csv(&empty, None), Err(Error::Parse { .. })));
        let nan = write(&dir, "n.csv", "1,2\nNaN,3\n");
        assert!(matches!(
            load_csv(&nan, None),
            Err(Error::Parse { line: 2, column: 1, .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let d = generate_swiss_roll(30, 2).unwrap();
        let p = dir.path().join("s.csv");
        write_csv(&p, &d, "x").unwrap();
        assert_eq!(load_csv(&p, Some("label")).unwrap(), d);
        assert_eq!(csv_header(&p).unwrap().unwrap(), vec!["x1", "x2", "x3", "label"]);
    }
}
