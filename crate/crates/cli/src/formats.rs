//! Text file formats.
//!
//! Floats are written with 17 significant digits, so every file read back
//! reproduces the stored values exactly.
//!
//! * point cloud CSV: header `x,y[,z][,w]`, one atom per row;
//! * grid file: optional `kind=density|histogram` line, then `d n1 … nd`,
//!   then `lo1 hi1 … lod hid`, then the cell values in row-major order
//!   (log-values for densities);
//! * Gaussian file: the mean on one line, then `d` covariance rows.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use wbary_core::gaussian::SpdMatrix;
use wbary_core::{BoxDomain, DiscreteMeasure, GaussianMeasure, GridDensity, GridHistogram, MeasureKind, RegularGrid};

use crate::error::{CliError, Result};

/// Weights within this distance of summing to one are kept verbatim.
const WEIGHT_SUM_TOL: f64 = 1e-12;

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputKind {
    PointCloudCsv,
    HistogramGrid,
    DensityGrid,
    GaussianTxt,
    PgmImage,
}

impl InputKind {
    pub const ALL: [InputKind; 5] = [
        InputKind::PointCloudCsv,
        InputKind::HistogramGrid,
        InputKind::DensityGrid,
        InputKind::GaussianTxt,
        InputKind::PgmImage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InputKind::PointCloudCsv => "pointcloud_csv",
            InputKind::HistogramGrid => "histogram_grid",
            InputKind::DensityGrid => "density_grid",
            InputKind::GaussianTxt => "gaussian_txt",
            InputKind::PgmImage => "pgm_image",
        }
    }
}

impl fmt::Display for InputKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|k| k.name()).collect();
                format!("unknown input kind `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Reads `path` as a measure of the given kind.
pub fn ingest(kind: InputKind, path: &Path) -> Result<MeasureKind> {
    Ok(match kind {
        InputKind::PointCloudCsv => MeasureKind::Discrete(read_point_cloud(path)?),
        InputKind::HistogramGrid => MeasureKind::Histogram(read_histogram(path)?),
        InputKind::DensityGrid => MeasureKind::Density(read_density(path)?),
        InputKind::GaussianTxt => MeasureKind::Gaussian(read_gaussian(path)?),
        InputKind::PgmImage => MeasureKind::Histogram(read_pgm(path)?),
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn parse_f64(tok: &str, path: &Path, line: usize) -> Result<f64> {
    match tok.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        Ok(_) => Err(CliError::parse(path, line, format!("non-finite value `{tok}`"))),
        Err(_) => Err(CliError::parse(path, line, format!("expected a number, found `{tok}`"))),
    }
}

/// Normalized measure from raw weights; weights that already sum to one are
/// kept as they are.
fn weighted_atoms(dim: usize, points: Vec<f64>, weights: Vec<f64>) -> wbary_core::Result<DiscreteMeasure> {
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() <= WEIGHT_SUM_TOL {
        DiscreteMeasure::new(dim, points, weights)
    } else {
        DiscreteMeasure::from_unnormalized(dim, points, weights)
    }
}

pub fn read_point_cloud(path: &Path) -> Result<DiscreteMeasure> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(file);
    let csv_error = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line() as usize);
        CliError::parse(path, line, e.to_string())
    };
    let header: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(str::to_owned).collect();
    let (dim, weighted) = match header.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        ["x", "y"] => (2, false),
        ["x", "y", "w"] => (2, true),
        ["x", "y", "z"] => (3, false),
        ["x", "y", "z", "w"] => (3, true),
        _ => {
            return Err(CliError::parse(
                path,
                1,
                format!("header must be x,y[,z][,w], found `{}`", header.join(",")),
            ))
        }
    };
    let width = dim + usize::from(weighted);
    let mut points = Vec::new();
    let mut weights = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(CliError::parse(
                path,
                line,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        for tok in record.iter().take(dim) {
            points.push(parse_f64(tok, path, line)?);
        }
        if weighted {
            let w = parse_f64(&record[dim], path, line)?;
            if w < 0.0 {
                return Err(CliError::parse(path, line, format!("negative weight {w}")));
            }
            weights.push(w);
        }
    }
    if points.is_empty() {
        return Err(CliError::input(path, "no atoms"));
    }
    let measure = if weighted {
        weighted_atoms(dim, points, weights)
    } else {
        DiscreteMeasure::uniform(dim, points)
    };
    measure.map_err(|e| CliError::input(path, e))
}

/// Writes atoms, with a weight column when `weights` is given.
pub fn write_point_cloud(path: &Path, dim: usize, points: &[f64], weights: Option<&[f64]>) -> Result<()> {
    let mut out = create(path)?;
    let names = ["x", "y", "z"];
    let mut header = names[..dim].join(",");
    if weights.is_some() {
        header.push_str(",w");
    }
    let mut body = header + "\n";
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let mut fields: Vec<String> = p.iter().map(|&v| fmt_f64(v)).collect();
        if let Some(w) = weights {
            fields.push(fmt_f64(w[i]));
        }
        body.push_str(&fields.join(","));
        body.push('\n');
    }
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn write_measure(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    write_point_cloud(path, m.dim(), m.points(), Some(m.weights()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridKind {
    Density,
    Histogram,
}

impl GridKind {
    fn name(self) -> &'static str {
        match self {
            GridKind::Density => "density",
            GridKind::Histogram => "histogram",
        }
    }
}

/// Grid and raw cell values of a grid file.
struct GridFile {
    grid: RegularGrid,
    values: Vec<f64>,
}

fn parse_grid_file(path: &Path, kind: GridKind) -> Result<GridFile> {
    let text = read_text(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .peekable();
    let eof = |what: &str| CliError::parse(path, text.lines().count() + 1, format!("missing {what}"));

    if let Some(&(line, l)) = lines.peek() {
        if let Some(stored) = l.strip_prefix("kind=") {
            if stored.trim() != kind.name() {
                return Err(CliError::parse(
                    path,
                    line,
                    format!("file holds a {}, expected a {}", stored.trim(), kind.name()),
                ));
            }
            lines.next();
        }
    }

    let (line, header) = lines.next().ok_or_else(|| eof("grid header `d n1 … nd`"))?;
    let ints = header
        .split_whitespace()
        .map(|t| {
            t.parse::<usize>()
                .map_err(|_| CliError::parse(path, line, format!("expected a positive integer, found `{t}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let dim = *ints.first().ok_or_else(|| CliError::parse(path, line, "empty grid header"))?;
    if !(2..=3).contains(&dim) || ints.len() != dim + 1 {
        return Err(CliError::parse(path, line, "grid header must be `d n1 … nd` with d = 2 or 3"));
    }
    let shape = ints[1..].to_vec();

    let (line, bounds) = lines.next().ok_or_else(|| eof("domain line `lo1 hi1 …`"))?;
    let bounds = bounds
        .split_whitespace()
        .map(|t| parse_f64(t, path, line))
        .collect::<Result<Vec<_>>>()?;
    if bounds.len() != 2 * dim {
        return Err(CliError::parse(path, line, format!("expected {} domain bounds, found {}", 2 * dim, bounds.len())));
    }
    let lo = bounds.iter().step_by(2).copied().collect();
    let hi = bounds.iter().skip(1).step_by(2).copied().collect();
    let grid = BoxDomain::new(lo, hi)
        .and_then(|domain| RegularGrid::new(domain, shape))
        .map_err(|e| CliError::parse(path, line, e.to_string()))?;

    let mut values = Vec::with_capacity(grid.len());
    let mut last_line = line;
    for (line, l) in lines {
        for tok in l.split_whitespace() {
            if values.len() == grid.len() {
                return Err(CliError::parse(path, line, format!("more than {} cell values", grid.len())));
            }
            values.push(parse_f64(tok, path, line)?);
        }
        last_line = line;
    }
    if values.len() != grid.len() {
        return Err(CliError::parse(
            path,
            last_line,
            format!("expected {} cell values, found {}", grid.len(), values.len()),
        ));
    }
    Ok(GridFile { grid, values })
}

pub fn read_histogram(path: &Path) -> Result<GridHistogram> {
    let GridFile { grid, values } = parse_grid_file(path, GridKind::Histogram)?;
    if let Some(i) = values.iter().position(|&w| w < 0.0) {
        return Err(CliError::input(path, format!("negative weight at cell {i}")));
    }
    let total: f64 = values.iter().sum();
    let hist = if (total - 1.0).abs() <= WEIGHT_SUM_TOL {
        GridHistogram::new(grid, values)
    } else {
        GridHistogram::from_unnormalized(grid, values)
    };
    hist.map_err(|e| CliError::input(path, e))
}

pub fn read_density(path: &Path) -> Result<GridDensity> {
    let GridFile { grid, values } = parse_grid_file(path, GridKind::Density)?;
    GridDensity::from_stored_log_values(grid, values).map_err(|e| CliError::input(path, e))
}

fn write_grid_file(path: &Path, kind: GridKind, grid: &RegularGrid, values: &[f64]) -> Result<()> {
    let mut out = create(path)?;
    let shape: Vec<String> = grid.shape().iter().map(|n| n.to_string()).collect();
    let bounds: Vec<String> = grid
        .domain()
        .lo()
        .iter()
        .zip(grid.domain().hi())
        .flat_map(|(&l, &h)| [fmt_f64(l), fmt_f64(h)])
        .collect();
    let mut body = format!("kind={}\n{} {}\n{}\n", kind.name(), grid.dim(), shape.join(" "), bounds.join(" "));
    for &v in values {
        body.push_str(&fmt_f64(v));
        body.push('\n');
    }
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

pub fn write_density(path: &Path, rho: &GridDensity) -> Result<()> {
    write_grid_file(path, GridKind::Density, rho.grid(), rho.log_values())
}

pub fn write_histogram(path: &Path, hist: &GridHistogram) -> Result<()> {
    write_grid_file(path, GridKind::Histogram, hist.grid(), hist.weights())
}

pub fn read_gaussian(path: &Path) -> Result<GaussianMeasure> {
    let text = read_text(path)?;
    let rows = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .map(|(line, l)| {
            l.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| parse_f64(t, path, line))
                .collect::<Result<Vec<_>>>()
                .map(|v| (line, v))
        })
        .collect::<Result<Vec<_>>>()?;
    let (line, mean) = rows.first().cloned().ok_or_else(|| CliError::parse(path, 1, "missing mean line"))?;
    let d = mean.len();
    if !(1..=5).contains(&d) {
        return Err(CliError::parse(path, line, format!("mean has {d} entries")));
    }
    if rows.len() != d + 1 {
        return Err(CliError::parse(
            path,
            rows.last().map_or(line, |r| r.0),
            format!("expected {d} covariance rows, found {}", rows.len() - 1),
        ));
    }
    for (line, row) in &rows[1..] {
        if row.len() != d {
            return Err(CliError::parse(path, *line, format!("covariance row has {} entries, expected {d}", row.len())));
        }
    }
    let cov = DMatrix::from_fn(d, d, |i, j| rows[i + 1].1[j]);
    let cov = SpdMatrix::new(cov).map_err(|e| CliError::input(path, format!("invalid covariance: {e}")))?;
    GaussianMeasure::new(mean, cov).map_err(|e| CliError::input(path, e))
}

pub fn write_gaussian(path: &Path, mean: &[f64], cov: &SpdMatrix) -> Result<()> {
    let mut out = create(path)?;
    let row = |v: &mut dyn Iterator<Item = f64>| v.map(fmt_f64).collect::<Vec<_>>().join(" ");
    let mut body = row(&mut mean.iter().copied()) + "\n";
    let m = cov.matrix();
    for i in 0..cov.dim() {
        body.push_str(&row(&mut m.row(i).iter().copied()));
        body.push('\n');
    }
    out.write_all(body.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::io(path, e))
}

/// Grayscale PGM (`P2` or `P5`) as a histogram on the unit square. Column
/// `c` maps to the first axis and row `r` (top first) to `1 − y`.
pub fn read_pgm(path: &Path) -> Result<GridHistogram> {
    let img = image::ImageReader::open(path)
        .map_err(|e| CliError::io(path, e))?
        .with_guessed_format()
        .map_err(|e| CliError::io(path, e))?;
    if img.format() != Some(image::ImageFormat::Pnm) {
        return Err(CliError::parse(path, 1, "not a PGM image"));
    }
    let img = img.decode().map_err(|e| CliError::parse(path, 1, e.to_string()))?;
    if !matches!(img.color(), image::ColorType::L8 | image::ColorType::L16) {
        return Err(CliError::parse(path, 1, format!("expected grayscale, found {:?}", img.color())));
    }
    let gray = img.into_luma16();
    let (w, h) = gray.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut weights = vec![0.0; w * h];
    for (c, r, px) in gray.enumerate_pixels() {
        let (c, r) = (c as usize, r as usize);
        weights[c * h + (h - 1 - r)] = f64::from(px.0[0]);
    }
    let grid = RegularGrid::new(BoxDomain::unit(2).map_err(|e| CliError::input(path, e))?, vec![w, h])
        .map_err(|e| CliError::input(path, e))?;
    GridHistogram::from_unnormalized(grid, weights).map_err(|e| CliError::input(path, e))
}
