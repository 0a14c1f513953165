//! Synthetic benchmark generators and dataset file formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, Domain};

/// Blobs: a square grid of unit Gaussians. `P` has identity covariance in
/// every blob, `Q` has correlation `(epsilon - 1) / (epsilon + 1)`, which makes
/// the eigenvalue ratio of its covariance equal to `epsilon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobsParams {
    pub epsilon: f64,
    pub grid_size: usize,
    pub spacing: f64,
    pub m: usize,
    pub seed: u64,
}

impl BlobsParams {
    pub fn new(epsilon: f64, m: usize, seed: u64) -> Self {
        Self {
            epsilon,
            grid_size: 5,
            spacing: 10.0,
            m,
            seed,
        }
    }

    pub fn correlation(&self) -> f64 {
        (self.epsilon - 1.0) / (self.epsilon + 1.0)
    }
}

fn draw_blobs(p: &BlobsParams, domain: Domain, rho: f64) -> Dataset {
    let mut rng = rng::stream(p.seed, domain, 0);
    let cross = (1.0 - rho * rho).sqrt();
    let mut data = Vec::with_capacity(2 * p.m);
    for _ in 0..p.m {
        let i = rng.random_range(0..p.grid_size) as f64;
        let j = rng.random_range(0..p.grid_size) as f64;
        let z1: f64 = rng.sample(StandardNormal);
        let z2: f64 = rng.sample(StandardNormal);
        // Cholesky factor of [[1, rho], [rho, 1]].
        data.push(p.spacing * i + z1);
        data.push(p.spacing * j + rho * z1 + cross * z2);
    }
    Dataset::new(p.m, 2, data).expect("blobs buffer has the right shape")
}

pub fn blobs_generate(p: &BlobsParams) -> Result<(Dataset, Dataset)> {
    if !(p.epsilon.is_finite() && p.epsilon >= 1.0) {
        return Err(Error::invalid(format!("blobs epsilon {} must be >= 1", p.epsilon)));
    }
    if p.m == 0 || p.grid_size == 0 {
        return Err(Error::invalid("blobs needs m >= 1 and grid_size >= 1"));
    }
    if !(p.spacing.is_finite() && p.spacing >= 0.0) {
        return Err(Error::invalid(format!("blobs spacing {} is not valid", p.spacing)));
    }
    Ok((draw_blobs(p, Domain::BlobsX, 0.0), draw_blobs(p, Domain::BlobsY, p.correlation())))
}

/// Standard Gaussian `X` against unit-variance Laplace `Y` (scale `1/sqrt 2`),
/// both zero mean, `d` dimensions.
pub fn gauss_vs_laplace(m: usize, d: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if m == 0 || d == 0 {
        return Err(Error::invalid("gauss-vs-laplace needs m >= 1 and d >= 1"));
    }
    let mut gx = rng::stream(seed, Domain::GaussX, 0);
    let x: Vec<f64> = (0..m * d).map(|_| gx.sample(StandardNormal)).collect();
    let mut ly = rng::stream(seed, Domain::LaplaceY, 0);
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    let y: Vec<f64> = (0..m * d)
        .map(|_| {
            // Inverse CDF on u in (-1/2, 1/2).
            let u: f64 = ly.random::<f64>() - 0.5;
            -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
        })
        .collect();
    Ok((Dataset::new(m, d, x)?, Dataset::new(m, d, y)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Bin,
}

impl DataFormat {
    /// `.bin` selects the binary format, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("bin") => DataFormat::Bin,
            _ => DataFormat::Csv,
        }
    }
}

const MAGIC: &[u8; 4] = b"MMD1";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

pub fn write_dataset(ds: &Dataset, path: &Path, format: DataFormat) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    match format {
        DataFormat::Bin => {
            w.write_all(MAGIC).map_err(io_err(path))?;
            w.write_all(&(ds.rows() as u64).to_le_bytes()).map_err(io_err(path))?;
            w.write_all(&(ds.dim() as u64).to_le_bytes()).map_err(io_err(path))?;
            for v in ds.as_slice() {
                w.write_all(&v.to_le_bytes()).map_err(io_err(path))?;
            }
        }
        DataFormat::Csv => {
            for row in ds.iter_rows() {
                let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
                writeln!(w, "{}", line.join(",")).map_err(io_err(path))?;
            }
        }
    }
    w.flush().map_err(io_err(path))
}

pub fn read_dataset(path: &Path, format: DataFormat) -> Result<Dataset> {
    match format {
        DataFormat::Bin => read_bin(path),
        DataFormat::Csv => read_csv(path),
    }
}

fn read_bin(path: &Path) -> Result<Dataset> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(io_err(path))?)
        .read_to_end(&mut bytes)
        .map_err(io_err(path))?;
    if bytes.is_empty() {
        return Err(Error::EmptyFile { path: path.into() });
    }
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic { path: path.into() });
    }
    if bytes.len() < 20 {
        return Err(Error::Truncated {
            path: path.into(),
            expected: 16,
            found: bytes.len() as u64 - 4,
        });
    }
    let word = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    let (rows, cols) = (word(4), word(12));
    let expected = rows.checked_mul(cols).and_then(|c| c.checked_mul(8));
    let payload = bytes.len() as u64 - 20;
    if expected != Some(payload) {
        return Err(Error::Truncated {
            path: path.into(),
            expected: expected.unwrap_or(u64::MAX),
            found: payload,
        });
    }
    let data: Vec<f64> = bytes[20..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if rows == 0 {
        return Err(Error::EmptyFile { path: path.into() });
    }
    Dataset::new(rows as usize, cols as usize, data).map_err(|e| Error::Malformed {
        path: path.into(),
        line: 0,
        message: e.to_string(),
    })
}

fn read_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(BufReader::new(file));
    let mut data = Vec::new();
    let mut dim = None;
    let mut rows = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            match e.into_kind() {
                csv::ErrorKind::Io(source) => Error::Io {
                    path: path.into(),
                    source,
                },
                other => Error::Malformed {
                    path: path.into(),
                    line,
                    message: format!("{other:?}"),
                },
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(rows as u64 + 1);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let expected = *dim.get_or_insert(record.len());
        if record.len() != expected {
            return Err(Error::RowLength {
                path: path.into(),
                line,
                expected,
                found: record.len(),
            });
        }
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Malformed {
                path: path.into(),
                line,
                message: format!("cannot parse {field:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Malformed {
                    path: path.into(),
                    line,
                    message: format!("non-finite value {field:?}"),
                });
            }
            data.push(v);
        }
        rows += 1;
    }
    match dim {
        None => Err(Error::EmptyFile { path: path.into() }),
        Some(d) => Dataset::new(rows, d, data),
    }
}
