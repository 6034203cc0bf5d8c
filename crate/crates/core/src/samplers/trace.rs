use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Theta;

/// Per-iteration record of a chain. Row i holds the state after iteration
/// i + 1; the starting point is not included.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub sampler: &'static str,
    pub seed: u64,
    pub chain: u64,
    dim: usize,
    /// N × d, row-major
    draws: Vec<f64>,
    pub accept: Vec<bool>,
    /// The log-likelihood value (or estimate) attached to the current state.
    pub loglik_est: Vec<f64>,
    pub sign: Vec<i8>,
    /// Subsample-update acceptances (HMC-ECS only; empty otherwise).
    pub u_accept: Vec<bool>,
    /// Proposals rejected because their estimate was non-finite or zero.
    pub invalid_estimates: usize,
    /// HMC trajectories rejected for a non-finite or exploding energy error.
    pub divergences: usize,
    /// Total number of per-observation likelihood evaluations.
    pub evaluations: u64,
    pub wall_time_secs: f64,
}

impl ChainTrace {
    pub fn new(sampler: &'static str, seed: u64, chain: u64, dim: usize, capacity: usize) -> Self {
        Self {
            sampler,
            seed,
            chain,
            dim,
            draws: Vec::with_capacity(capacity * dim),
            accept: Vec::with_capacity(capacity),
            loglik_est: Vec::with_capacity(capacity),
            sign: Vec::with_capacity(capacity),
            u_accept: Vec::new(),
            invalid_estimates: 0,
            divergences: 0,
            evaluations: 0,
            wall_time_secs: 0.0,
        }
    }

    pub fn push(&mut self, theta: &Theta, accepted: bool, loglik: f64, sign: i8) {
        self.draws.extend_from_slice(theta.as_slice());
        self.accept.push(accepted);
        self.loglik_est.push(loglik);
        self.sign.push(sign);
    }

    pub fn len(&self) -> usize {
        self.accept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accept.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn draw(&self, i: usize) -> &[f64] {
        &self.draws[i * self.dim..(i + 1) * self.dim]
    }

    /// Coordinate j of every draw from `burn_in` on.
    pub fn coordinate(&self, j: usize, burn_in: usize) -> Vec<f64> {
        (burn_in.min(self.len())..self.len())
            .map(|i| self.draws[i * self.dim + j])
            .collect()
    }

    pub fn acceptance_rate(&self, burn_in: usize) -> f64 {
        rate(&self.accept[burn_in.min(self.len())..])
    }

    /// Fraction of post-burn-in iterations whose current sign is positive.
    pub fn sign_rate(&self, burn_in: usize) -> f64 {
        let s = &self.sign[burn_in.min(self.len())..];
        s.iter().filter(|&&v| v > 0).count() as f64 / s.len().max(1) as f64
    }

    pub fn u_acceptance_rate(&self) -> f64 {
        rate(&self.u_accept)
    }

    /// Columns `iter,theta_1..theta_d,accept,loglik_est,sign`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["iter".to_string()];
        header.extend((1..=self.dim).map(|j| format!("theta_{j}")));
        header.extend(["accept", "loglik_est", "sign"].map(String::from));
        out.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut row = vec![(i + 1).to_string()];
            row.extend(self.draw(i).iter().map(|v| v.to_string()));
            row.push(u8::from(self.accept[i]).to_string());
            row.push(self.loglik_est[i].to_string());
            row.push(self.sign[i].to_string());
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(crate::error::create(
            path.as_ref(),
        )?))
    }

    /// Reads the layout written by [`ChainTrace::write_csv`]. Run metadata
    /// (sampler, seed, counters) is not stored in the file and comes back empty.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers().map_err(|e| parse_err(1, e))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        let dim = cols.iter().filter(|c| c.starts_with("theta_")).count();
        let expected: Vec<String> = std::iter::once("iter".to_string())
            .chain((1..=dim).map(|j| format!("theta_{j}")))
            .chain(["accept", "loglik_est", "sign"].map(String::from))
            .collect();
        if cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::Parse {
                row: 1,
                msg: format!("expected header {}", expected.join(",")),
            });
        }
        let mut trace = ChainTrace::new("unknown", 0, 0, dim, 0);
        for (k, rec) in rdr.records().enumerate() {
            let row = k + 2;
            let rec = rec.map_err(|e| parse_err(row, e))?;
            let num = |j: usize| -> Result<f64> {
                rec[j].trim().parse::<f64>().map_err(|_| Error::Parse {
                    row,
                    msg: format!("column {} is not a number: {:?}", cols[j], &rec[j]),
                })
            };
            let theta = Theta::from_iterator(dim, (1..=dim).map(num).collect::<Result<Vec<_>>>()?);
            let accept = match rec[dim + 1].trim() {
                "0" => false,
                "1" => true,
                other => {
                    return Err(Error::Parse {
                        row,
                        msg: format!("accept must be 0 or 1, got {other:?}"),
                    })
                }
            };
            let sign = match rec[dim + 3].trim() {
                "-1" => -1,
                "0" => 0,
                "1" => 1,
                other => {
                    return Err(Error::Parse {
                        row,
                        msg: format!("sign must be -1, 0 or 1, got {other:?}"),
                    })
                }
            };
            trace.push(&theta, accept, num(dim + 2)?, sign);
        }
        Ok(trace)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(crate::error::open(path.as_ref())?))
    }
}

fn parse_err(row: usize, e: csv::Error) -> Error {
    let row = e.position().map_or(row, |p| p.line() as usize);
    Error::Parse {
        row,
        msg: e.to_string(),
    }
}

fn rate(v: &[bool]) -> f64 {
    v.iter().filter(|&&a| a).count() as f64 / v.len().max(1) as f64
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Domain(format!("csv: {other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let mut t = ChainTrace::new("mh", 1, 0, 2, 2);
        t.push(&Theta::from_vec(vec![0.5, -1.0]), true, -3.25, 1);
        t.push(&Theta::from_vec(vec![0.5, -1.0]), false, -3.25, -1);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            "iter,theta_1,theta_2,accept,loglik_est,sign\n1,0.5,-1,1,-3.25,1\n2,0.5,-1,0,-3.25,-1\n"
        );
        assert_eq!(t.acceptance_rate(0), 0.5);
        assert_eq!(t.sign_rate(1), 0.0);
        assert_eq!(t.coordinate(1, 1), vec![-1.0]);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let mut t = ChainTrace::new("unknown", 0, 0, 3, 3);
        t.push(
            &Theta::from_vec(vec![0.1 + 0.2, -1e-300, 7.0]),
            true,
            -1234.5678901234567,
            1,
        );
        t.push(
            &Theta::from_vec(vec![f64::MIN_POSITIVE, 3.0, -0.0]),
            false,
            -1.0 / 3.0,
            -1,
        );
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = ChainTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn malformed_rows_name_the_row() {
        let bad = "iter,theta_1,accept,loglik_est,sign\n1,0.5,1,-2,1\n2,abc,1,-2,1\n";
        match ChainTrace::read_csv(bad.as_bytes()) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 3),
            other => panic!("expected a parse error, got {other:?}"),
        }
        let bad = "iter,theta_1,accept,loglik_est\n";
        assert!(matches!(
            ChainTrace::read_csv(bad.as_bytes()),
            Err(Error::Parse { row: 1, .. })
        ));
    }
}
