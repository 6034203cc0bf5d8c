//! Versioned binary serialization of control-variate caches.
//!
//! Layout, all little-endian: magic `SMCV`, format version (u32), kind
//! (u8: 1 parameter-expanded, 2 data-expanded), Taylor order (u8), n, d and
//! K (u64 each; K = 0 for parameter-expanded), then the kind's payload.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::param::{packed_len, PerObservation};
use super::{ControlVariates, DataExpandedCache, ParamExpandedCache, TaylorOrder};
use crate::error::{Error, Result};
use crate::model::Theta;

const MAGIC: &[u8; 4] = b"SMCV";
const VERSION: u32 = 1;
const KIND_PARAM: u8 = 1;
const KIND_DATA: u8 = 2;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        for x in v {
            self.0.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }
    fn usizes(&mut self, v: &[usize]) -> Result<()> {
        for &x in v {
            self.u64(x as u64)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::CacheFormat("truncated cache file".into()),
            _ => Error::Io(e),
        })?;
        Ok(b)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?)
            .map_err(|_| Error::CacheFormat("length does not fit in memory".into()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n)
            .map(|_| Ok(f64::from_le_bytes(self.bytes()?)))
            .collect()
    }
    fn usizes(&mut self, n: usize) -> Result<Vec<usize>> {
        (0..n).map(|_| self.len()).collect()
    }
}

impl ControlVariates {
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut w = Writer(w);
        w.0.write_all(MAGIC)?;
        w.u32(VERSION)?;
        match self {
            ControlVariates::Param(c) => {
                let d = c.theta_star.len();
                w.u8(KIND_PARAM)?;
                w.u8(c.order.as_u8())?;
                w.u64(c.n as u64)?;
                w.u64(d as u64)?;
                w.u64(0)?;
                w.f64s(c.theta_star.as_slice())?;
                w.f64s(&[c.sum_ell])?;
                w.f64s(c.sum_grad.as_slice())?;
                w.f64s(c.sum_hess.as_slice())?;
                match &c.per_obs {
                    Some(p) => {
                        w.u8(1)?;
                        w.f64s(&p.ell)?;
                        w.f64s(&p.grad)?;
                        w.f64s(&p.hess)?;
                    }
                    None => w.u8(0)?,
                }
            }
            ControlVariates::Data(c) => {
                w.u8(KIND_DATA)?;
                w.u8(c.order.as_u8())?;
                w.u64(c.n as u64)?;
                w.u64(c.dim as u64)?;
                w.u64(c.k() as u64)?;
                w.f64s(&c.centroids)?;
                w.usizes(&c.assignment)?;
                w.usizes(&c.counts)?;
                w.f64s(&c.first_moments)?;
                w.f64s(&c.second_moments)?;
            }
            other => {
                return Err(Error::Unsupported(format!(
                    "control variates of kind '{}' have no cache to save",
                    other.label()
                )))
            }
        }
        Ok(w.0.flush()?)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader(r);
        if &r.bytes::<4>()? != MAGIC {
            return Err(Error::CacheFormat("bad magic bytes".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CacheFormat(format!(
                "unsupported cache version {version}"
            )));
        }
        let kind = r.u8()?;
        let order = TaylorOrder::from_u8(r.u8()?)
            .map_err(|_| Error::CacheFormat("bad Taylor order".into()))?;
        let n = r.len()?;
        let d = r.len()?;
        let k = r.len()?;
        let cv = match kind {
            KIND_PARAM => {
                let theta_star = Theta::from_vec(r.f64s(d)?);
                let sum_ell = r.f64s(1)?[0];
                let sum_grad = Theta::from_vec(r.f64s(d)?);
                let sum_hess = DMatrix::from_vec(d, d, r.f64s(d * d)?);
                let per_obs = match r.u8()? {
                    0 => None,
                    1 => Some(PerObservation {
                        ell: r.f64s(n)?,
                        grad: r.f64s(n * d)?,
                        hess: r.f64s(n * packed_len(d))?,
                    }),
                    _ => return Err(Error::CacheFormat("bad storage flag".into())),
                };
                ControlVariates::Param(ParamExpandedCache {
                    theta_star,
                    order,
                    n,
                    sum_ell,
                    sum_grad,
                    sum_hess,
                    per_obs,
                })
            }
            KIND_DATA => {
                let centroids = r.f64s(k * d)?;
                let assignment = r.usizes(n)?;
                let counts = r.usizes(k)?;
                if assignment.iter().any(|&c| c >= k) || counts.iter().sum::<usize>() != n {
                    return Err(Error::CacheFormat(
                        "inconsistent centroid assignment".into(),
                    ));
                }
                ControlVariates::Data(DataExpandedCache {
                    order,
                    n,
                    dim: d,
                    centroids,
                    assignment,
                    counts,
                    first_moments: r.f64s(k * d)?,
                    second_moments: r.f64s(k * d * d)?,
                })
            }
            other => return Err(Error::CacheFormat(format!("unknown cache kind {other}"))),
        };
        let mut rest = [0u8; 1];
        if r.0.read(&mut rest)? != 0 {
            return Err(Error::CacheFormat("trailing bytes after payload".into()));
        }
        Ok(cv)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(crate::error::create(path.as_ref())?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(crate::error::open(path.as_ref())?))
    }
}
