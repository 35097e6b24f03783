//! Synthetic and file-backed scalar fields, lawnmower sampling plans and
//! noisy observation.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::error::GpError;
use crate::kernel::{kernel_matrix, Hyperparameters};
use crate::linalg::robust_cholesky;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("{path}: line {line}, column {column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("infeasible sampling geometry: {0}")]
    Geometry(String),
    #[error("cell ({col}, {row}) outside a {width}x{height} grid")]
    OutOfBounds { col: usize, row: usize, width: usize, height: usize },
    #[error(transparent)]
    Numeric(#[from] GpError),
}

/// Scalar field sampled at the centres of a regular grid.
///
/// `values` is row-major with row 0 the minimum-y row. Models see cell
/// `(col, row)` at normalized coordinates `(col / (width-1), row / (height-1))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    width: usize,
    height: usize,
    resolution: f64,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCell {
    pub col: usize,
    pub row: usize,
}

impl FieldGrid {
    pub fn new(width: usize, height: usize, resolution: f64, values: Vec<f64>) -> Result<Self, FieldError> {
        if width < 2 || height < 2 {
            return Err(FieldError::Geometry(format!("grid must be at least 2x2, got {width}x{height}")));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(FieldError::Geometry(format!("resolution must be positive, got {resolution}")));
        }
        if values.len() != width * height {
            return Err(FieldError::Geometry(format!(
                "expected {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(FieldError::Numeric(GpError::NonFinite("field values")));
        }
        Ok(Self { width, height, resolution, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, cell: GridCell) -> bool {
        cell.col < self.width && cell.row < self.height
    }

    pub fn value(&self, cell: GridCell) -> Result<f64, FieldError> {
        self.check(cell)?;
        Ok(self.values[cell.row * self.width + cell.col])
    }

    fn check(&self, cell: GridCell) -> Result<(), FieldError> {
        if self.contains(cell) {
            Ok(())
        } else {
            Err(FieldError::OutOfBounds { col: cell.col, row: cell.row, width: self.width, height: self.height })
        }
    }

    /// Model-facing coordinates in `[0, 1]²`.
    pub fn normalized(&self, cell: GridCell) -> [f64; 2] {
        [cell.col as f64 / (self.width - 1) as f64, cell.row as f64 / (self.height - 1) as f64]
    }

    /// Maps a native position (cell centres at `(i + 0.5) * resolution`) to
    /// normalized coordinates.
    pub fn native_to_normalized(&self, x: f64, y: f64) -> [f64; 2] {
        [
            (x / self.resolution - 0.5) / (self.width - 1) as f64,
            (y / self.resolution - 0.5) / (self.height - 1) as f64,
        ]
    }

    /// Normalized coordinates of every cell, row-major.
    pub fn normalized_inputs(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), 2, |i, d| {
            let c = GridCell { col: i % self.width, row: i / self.width };
            self.normalized(c)[d]
        })
    }

    pub fn truth(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }
}

fn axis_points(count: usize) -> DMatrix<f64> {
    DMatrix::from_fn(count, 1, |i, _| i as f64 / (count - 1) as f64)
}

/// Exact draw from the zero-mean SE-ARD GP over the normalized cell centres.
///
/// The kernel factorizes over the two axes, so the grid covariance is the
/// Kronecker product `K_y ⊗ K_x` and a draw is `L_y E L_xᵀ` with `E` standard
/// normal.
pub fn sample_gp_field(width: usize, height: usize, hp: &Hyperparameters, seed: u64) -> Result<FieldGrid, FieldError> {
    if width < 2 || height < 2 {
        return Err(FieldError::Geometry(format!("grid must be at least 2x2, got {width}x{height}")));
    }
    if hp.dim() != 2 {
        return Err(FieldError::Numeric(GpError::DimensionMismatch {
            context: "field hyperparameters",
            expected: 2,
            found: hp.dim(),
        }));
    }
    let hp_x = Hyperparameters::new(hp.signal_variance(), &[hp.lengthscale(0)], 1.0)?;
    let hp_y = Hyperparameters::new(1.0, &[hp.lengthscale(1)], 1.0)?;
    let lx = robust_cholesky(&kernel_matrix(&axis_points(width), &axis_points(width), &hp_x)?)?;
    let ly = robust_cholesky(&kernel_matrix(&axis_points(height), &axis_points(height), &hp_y)?)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut e = DMatrix::zeros(height, width);
    for r in 0..height {
        for c in 0..width {
            e[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    let v = ly.l() * e * lx.l().transpose();
    let values = (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).map(|(r, c)| v[(r, c)]).collect();
    FieldGrid::new(width, height, 1.0, values)
}

/// Boustrophedon path parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LawnmowerConfig {
    pub transects: usize,
    pub samples_per_transect: usize,
    pub batch_size: usize,
}

impl Default for LawnmowerConfig {
    fn default() -> Self {
        Self { transects: 44, samples_per_transect: 98, batch_size: 44 }
    }
}

/// Ordered waypoints, split into consecutive model-update batches.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingPlan {
    pub waypoints: Vec<GridCell>,
    pub batch_size: usize,
    pub noise_variance: f64,
}

impl SamplingPlan {
    pub fn batch_count(&self) -> usize {
        self.waypoints.len() / self.batch_size
    }

    pub fn batches(&self) -> impl Iterator<Item = &[GridCell]> {
        self.waypoints.chunks(self.batch_size)
    }
}

/// Alternating-direction horizontal transects, evenly spaced in rows, each
/// covering `samples_per_transect` adjacent cells centred across the grid.
pub fn lawnmower_plan(
    grid: &FieldGrid,
    config: LawnmowerConfig,
    noise_variance: f64,
) -> Result<SamplingPlan, FieldError> {
    let LawnmowerConfig { transects, samples_per_transect, batch_size } = config;
    if transects == 0 || samples_per_transect == 0 || batch_size == 0 {
        return Err(FieldError::Geometry("transects, samples and batch size must be positive".into()));
    }
    if transects > grid.height() || samples_per_transect > grid.width() {
        return Err(FieldError::Geometry(format!(
            "{transects} transects of {samples_per_transect} samples do not fit a {}x{} grid",
            grid.width(),
            grid.height()
        )));
    }
    let total = transects * samples_per_transect;
    if total % batch_size != 0 {
        return Err(FieldError::Geometry(format!("{total} samples do not split into batches of {batch_size}")));
    }
    if !(noise_variance >= 0.0) {
        return Err(FieldError::Geometry(format!("noise variance must be non-negative, got {noise_variance}")));
    }
    let offset = (grid.width() - samples_per_transect) / 2;
    let mut waypoints = Vec::with_capacity(total);
    for t in 0..transects {
        let row = if transects == 1 {
            grid.height() / 2
        } else {
            (t as f64 * (grid.height() - 1) as f64 / (transects - 1) as f64).round() as usize
        };
        let cols: Box<dyn Iterator<Item = usize>> = if t % 2 == 0 {
            Box::new(offset..offset + samples_per_transect)
        } else {
            Box::new((offset..offset + samples_per_transect).rev())
        };
        waypoints.extend(cols.map(|col| GridCell { col, row }));
    }
    Ok(SamplingPlan { waypoints, batch_size, noise_variance })
}

/// Field value at `cell` plus Gaussian noise.
pub fn observe(
    field: &FieldGrid,
    cell: GridCell,
    noise_variance: f64,
    rng: &mut impl rand::Rng,
) -> Result<f64, FieldError> {
    let f = field.value(cell)?;
    if noise_variance == 0.0 {
        return Ok(f);
    }
    let eps: f64 = StandardNormal.sample(rng);
    Ok(f + noise_variance.sqrt() * eps)
}

/// Observes every waypoint in order and returns one dataset per batch.
pub fn observe_plan(field: &FieldGrid, plan: &SamplingPlan, seed: u64) -> Result<Vec<Dataset>, FieldError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    plan.batches()
        .map(|cells| {
            let rows: Vec<Vec<f64>> = cells.iter().map(|&c| field.normalized(c).to_vec()).collect();
            let ys = cells
                .iter()
                .map(|&c| observe(field, c, plan.noise_variance, &mut rng))
                .collect::<Result<Vec<f64>, _>>()?;
            Ok(Dataset::from_rows(&rows, &ys)?)
        })
        .collect()
}

/// Reads `width,height,resolution` followed by `height` rows of `width` values.
pub fn load_grid_csv(path: impl AsRef<Path>) -> Result<FieldGrid, FieldError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| FieldError::Io { path: path.into(), source })?;
    let perr = |line: usize, column: usize, message: String| FieldError::Parse { path: path.into(), line, column, message };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| perr(1, 1, "missing header".into()))?;
    let fields: Vec<&str> = header.split(',').map(str::trim).collect();
    if fields.len() != 3 {
        return Err(perr(1, 1, format!("header needs width,height,resolution; got {header:?}")));
    }
    let width: usize = fields[0].parse().map_err(|_| perr(1, 1, format!("bad width {:?}", fields[0])))?;
    let height: usize = fields[1].parse().map_err(|_| perr(1, 2, format!("bad height {:?}", fields[1])))?;
    let resolution: f64 = fields[2].parse().map_err(|_| perr(1, 3, format!("bad resolution {:?}", fields[2])))?;

    let mut values = Vec::with_capacity(width * height);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        if rows > height {
            return Err(perr(line_no, 1, format!("more than {height} data rows")));
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != width {
            return Err(perr(line_no, cells.len().min(width) + 1, format!("expected {width} values, found {}", cells.len())));
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell
                .trim()
                .parse()
                .map_err(|_| perr(line_no, j + 1, format!("non-numeric cell {:?}", cell.trim())))?;
            if !v.is_finite() {
                return Err(perr(line_no, j + 1, format!("non-finite cell {:?}", cell.trim())));
            }
            values.push(v);
        }
    }
    if rows != height {
        return Err(perr(rows + 2, 1, format!("expected {height} data rows, found {rows}")));
    }
    FieldGrid::new(width, height, resolution, values)
}

pub fn write_grid_csv(field: &FieldGrid, path: impl AsRef<Path>) -> Result<(), FieldError> {
    let path = path.as_ref();
    let io = |source| FieldError::Io { path: path.into(), source };
    let mut out = fs::File::create(path).map_err(io)?;
    let mut text = format!("{},{},{}\n", field.width, field.height, field.resolution);
    for row in field.values.chunks(field.width) {
        let line: Vec<String> = row.iter().map(f64::to_string).collect();
        text.push_str(&line.join(","));
        text.push('\n');
    }
    out.write_all(text.as_bytes()).map_err(io)
}
