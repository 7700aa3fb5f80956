//! Feature maps, dense matrices and the seeded key/value projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::RngStream;
use crate::scalar::CompensatedSum;

/// Dense row-major `rows × cols` matrix of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let len = rows
            .checked_mul(cols)
            .ok_or(Error::DimensionOverflow("matrix shape"))?;
        Error::check_dim("matrix data length", len, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            Error::check_dim("matrix row length", cols, r.as_ref().len())?;
            data.extend_from_slice(r.as_ref());
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// `height × width × channels` grid, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::invalid(format!(
                "feature map dims must be positive, got {height}x{width}x{channels}"
            )));
        }
        let len = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .ok_or(Error::DimensionOverflow("feature map shape"))?;
        Error::check_dim("feature map data length", len, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature map"));
        }
        Ok(FeatureMap {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    /// Builds a map from `f(y, x, c)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        FeatureMap::new(height, width, channels, data)
    }

    /// Standard-normal entries rounded to `f32`, so the map survives the
    /// on-disk format unchanged.
    pub fn random(height: usize, width: usize, channels: usize, rng: &mut RngStream) -> Self {
        let data = (0..height * width * channels)
            .map(|_| rng.normal() as f32 as f64)
            .collect();
        FeatureMap {
            height,
            width,
            channels,
            data,
        }
    }

    /// Reinterprets a `pixels × channels` matrix as a map.
    pub fn from_matrix(height: usize, width: usize, m: Matrix) -> Result<Self> {
        Error::check_dim("feature map pixel count", height * width, m.rows())?;
        FeatureMap::new(height, width, m.cols(), m.into_vec())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f64] {
        self.pixel_at(y * self.width + x)
    }

    /// Pixel by flat index `y * width + x`.
    pub fn pixel_at(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn same_grid(&self, other: &FeatureMap) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Pixels as rows of a `(height·width) × channels` matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.n_pixels(),
            cols: self.channels,
            data: self.data.clone(),
        }
    }

    pub fn scale(&self, s: f64) -> FeatureMap {
        FeatureMap {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }

    /// Elementwise `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &FeatureMap, b: f64) -> Result<FeatureMap> {
        Error::check_dim("axpby height", self.height, other.height)?;
        Error::check_dim("axpby width", self.width, other.width)?;
        Error::check_dim("axpby channels", self.channels, other.channels)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(x, y)| a * x + b * y)
            .collect();
        FeatureMap::new(self.height, self.width, self.channels, data)
    }
}

/// Fixed per-pixel linear maps from input features to keys and values.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub key_weights: Matrix,
    pub value_weights: Matrix,
    pub seed: Option<u64>,
}

impl ProjectionParams {
    /// Gaussian weights with variance `1 / c_in`, drawn from `seed` (keys
    /// first, then values).
    pub fn seeded(c_in: usize, key_dim: usize, value_dim: usize, seed: u64) -> Self {
        let mut rng = RngStream::new(seed);
        let scale = 1.0 / (c_in as f64).sqrt();
        let mut draw = |cols: usize| {
            let data = (0..c_in * cols).map(|_| rng.normal() * scale).collect();
            Matrix {
                rows: c_in,
                cols,
                data,
            }
        };
        let key_weights = draw(key_dim);
        let value_weights = draw(value_dim);
        ProjectionParams {
            key_weights,
            value_weights,
            seed: Some(seed),
        }
    }

    pub fn identity(c: usize) -> Self {
        ProjectionParams {
            key_weights: Matrix::identity(c),
            value_weights: Matrix::identity(c),
            seed: None,
        }
    }

    pub fn from_weights(key_weights: Matrix, value_weights: Matrix) -> Result<Self> {
        Error::check_dim(
            "projection input channels",
            key_weights.rows(),
            value_weights.rows(),
        )?;
        Ok(ProjectionParams {
            key_weights,
            value_weights,
            seed: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.key_weights.rows()
    }

    pub fn key_dim(&self) -> usize {
        self.key_weights.cols()
    }

    pub fn value_dim(&self) -> usize {
        self.value_weights.cols()
    }
}

fn project(frame: &FeatureMap, weights: &Matrix) -> Result<FeatureMap> {
    let cin = weights.rows();
    let cout = weights.cols();
    let mut data = Vec::with_capacity(frame.n_pixels() * cout);
    for i in 0..frame.n_pixels() {
        let px = frame.pixel_at(i);
        for o in 0..cout {
            let mut acc = CompensatedSum::new();
            for (c, &v) in px.iter().enumerate().take(cin) {
                acc.add(v * weights.get(c, o));
            }
            data.push(acc.value());
        }
    }
    FeatureMap::new(frame.height(), frame.width(), cout, data)
}

/// Per-pixel key and value embeddings of `frame`.
pub fn encode_keys_values(
    frame: &FeatureMap,
    params: &ProjectionParams,
) -> Result<(FeatureMap, FeatureMap)> {
    Error::check_dim("projection input channels", params.input_dim(), frame.channels())?;
    Ok((
        project(frame, &params.key_weights)?,
        project(frame, &params.value_weights)?,
    ))
}
