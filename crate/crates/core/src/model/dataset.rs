use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Response vector plus an n×p covariate matrix stored row-major. The
/// intercept is not stored; models add it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    x: Vec<f64>,
    p: usize,
}

impl Dataset {
    pub fn new(y: Vec<f64>, x: Vec<f64>, p: usize) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Domain(
                "dataset must hold at least one observation".into(),
            ));
        }
        if x.len() != y.len() * p {
            return Err(Error::Domain(format!(
                "covariate matrix has {} cells, expected {} rows × {} columns",
                x.len(),
                y.len(),
                p
            )));
        }
        if let Some(i) = y.iter().chain(&x).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "data value",
                index: i % y.len(),
            });
        }
        Ok(Self { y, x, p })
    }

    pub fn from_rows(y: Vec<f64>, rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.len() != y.len() {
            return Err(Error::Domain(format!(
                "{} responses but {} covariate rows",
                y.len(),
                rows.len()
            )));
        }
        if let Some(r) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::Domain(format!(
                "covariate row {r} has inconsistent length"
            )));
        }
        Self::new(y, rows.concat(), p)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of covariates (excluding the intercept).
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y(&self, i: usize) -> f64 {
        self.y[i]
    }

    pub fn ys(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    /// The data point z_i = (y_i, x_i).
    pub fn z(&self, i: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.p + 1);
        z.push(self.y[i]);
        z.extend_from_slice(self.row(i));
        z
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut y = Vec::with_capacity(indices.len());
        let mut x = Vec::with_capacity(indices.len() * self.p);
        for &i in indices {
            if i >= self.n() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    n: self.n(),
                });
            }
            y.push(self.y[i]);
            x.extend_from_slice(self.row(i));
        }
        Self::new(y, x, self.p)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(crate::error::open(path.as_ref())?)
    }

    /// Reads `y,x1,...,xp` CSV with a header row.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let width = rdr
            .headers()
            .map_err(|e| Error::Parse {
                row: 1,
                msg: e.to_string(),
            })?
            .len();
        if width == 0 {
            return Err(Error::Parse {
                row: 1,
                msg: "empty header".into(),
            });
        }
        let mut y = Vec::new();
        let mut x = Vec::new();
        for (k, rec) in rdr.records().enumerate() {
            // header is row 1
            let row = k + 2;
            let rec = rec.map_err(|e| Error::Parse {
                row,
                msg: e.to_string(),
            })?;
            if rec.len() != width {
                return Err(Error::Parse {
                    row,
                    msg: format!("expected {width} columns, found {}", rec.len()),
                });
            }
            for (c, cell) in rec.iter().enumerate() {
                let v: f64 = cell.parse().map_err(|_| Error::Parse {
                    row,
                    msg: format!("column {} is not numeric: {cell:?}", c + 1),
                })?;
                if !v.is_finite() {
                    return Err(Error::Parse {
                        row,
                        msg: format!("column {} is not finite", c + 1),
                    });
                }
                if c == 0 {
                    y.push(v);
                } else {
                    x.push(v);
                }
            }
        }
        if y.is_empty() {
            return Err(Error::Parse {
                row: 2,
                msg: "no data rows".into(),
            });
        }
        Self::new(y, x, width - 1)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(crate::error::create(path.as_ref())?);
        self.to_writer(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn to_writer<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = vec!["y".to_string()];
        header.extend((1..=self.p).map(|j| format!("x{j}")));
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.n() {
            write!(w, "{}", self.y[i])?;
            for v in self.row(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Law for simulated covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CovariateLaw {
    StandardNormal,
    Uniform { lo: f64, hi: f64 },
}

impl Default for CovariateLaw {
    fn default() -> Self {
        CovariateLaw::StandardNormal
    }
}

/// Simulates y_i | x_i ~ Pois(exp(θ_0 + x_iᵀθ_{1..})); p = len(θ) - 1.
pub fn simulate_poisson(
    n: usize,
    theta: &DVector<f64>,
    law: CovariateLaw,
    seed: u64,
) -> Result<Dataset> {
    if n == 0 || theta.is_empty() {
        return Err(Error::Domain("need n >= 1 and a non-empty θ".into()));
    }
    let p = theta.len() - 1;
    let mut rng = rng::stream(seed, 0, Purpose::Auxiliary);
    let mut y = Vec::with_capacity(n);
    let mut x = Vec::with_capacity(n * p);
    for _ in 0..n {
        let mut eta = theta[0];
        for j in 0..p {
            let v = match law {
                CovariateLaw::StandardNormal => StandardNormal.sample(&mut rng),
                CovariateLaw::Uniform { lo, hi } => rng.random_range(lo..hi),
            };
            eta += theta[j + 1] * v;
            x.push(v);
        }
        let rate = eta.exp();
        let count = if rate > 0.0 {
            Poisson::new(rate)
                .map_err(|e| Error::Domain(format!("Poisson rate {rate}: {e}")))?
                .sample(&mut rng)
        } else {
            0.0
        };
        y.push(count);
    }
    Dataset::new(y, x, p)
}
