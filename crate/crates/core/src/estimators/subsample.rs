//! The auxiliary variable u: which observations enter an estimate, and how
//! it moves between iterations.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::special::std_normal_cdf;

/// How a proposed subsample relates to the current one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dependence {
    Independent,
    /// Correlated pseudo-marginal: AR(1) move of Gaussian index codes.
    Cpm {
        phi: f64,
    },
    /// Block pseudo-marginal: refresh one of `blocks` groups per proposal.
    Bpm {
        blocks: usize,
    },
}

impl Dependence {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Dependence::Independent => Ok(()),
            Dependence::Cpm { phi } => {
                if (0.0..1.0).contains(&phi) {
                    Ok(())
                } else {
                    Err(Error::config(
                        "dependence.phi",
                        format!("need 0 ≤ φ < 1, got {phi}"),
                    ))
                }
            }
            Dependence::Bpm { blocks } => {
                if blocks >= 1 {
                    Ok(())
                } else {
                    Err(Error::config(
                        "dependence.blocks",
                        "need at least one block",
                    ))
                }
            }
        }
    }
}

/// λ outer blocks, block l holding X_l ∼ Pois(1) mini-batches of m_b
/// indices each.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockPoissonDraw {
    pub m_b: usize,
    pub batches: Vec<Vec<Vec<usize>>>,
}

impl BlockPoissonDraw {
    pub fn draw(n: usize, lambda: usize, m_b: usize, rng: &mut impl Rng) -> Result<Self> {
        if lambda == 0 {
            return Err(Error::config(
                "block_poisson.lambda",
                "λ must be at least 1",
            ));
        }
        if m_b == 0 {
            return Err(Error::config(
                "block_poisson.m_b",
                "mini-batch size must be at least 1",
            ));
        }
        let batches = (0..lambda).map(|_| outer_block(n, m_b, rng)).collect();
        Ok(Self { m_b, batches })
    }

    pub fn lambda(&self) -> usize {
        self.batches.len()
    }

    /// Number of mini-batches over all outer blocks, Σ_l X_l.
    pub fn batch_count(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

fn outer_block(n: usize, m_b: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let count: f64 = Poisson::new(1.0).expect("unit rate").sample(rng);
    (0..count as usize)
        .map(|_| uniform_indices(n, m_b, rng))
        .collect()
}

fn uniform_indices(n: usize, m: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..m).map(|_| rng.random_range(0..n)).collect()
}

/// Observation coded by a standard normal variate: ⌊n Φ(u)⌋, clamped to
/// the last index.
pub fn cpm_index(u: f64, n: usize) -> usize {
    ((n as f64 * std_normal_cdf(u)).floor() as usize).min(n - 1)
}

/// Half-open slot range of block `g` when `len` slots are split into `groups`
/// nearly equal contiguous blocks.
pub fn block_range(len: usize, groups: usize, g: usize) -> std::ops::Range<usize> {
    (g * len / groups)..((g + 1) * len / groups)
}

#[derive(Debug, Clone, PartialEq)]
pub enum SubsampleState {
    /// m indices drawn uniformly with replacement.
    Srs {
        indices: Vec<usize>,
    },
    Cpm {
        gaussians: Vec<f64>,
        indices: Vec<usize>,
    },
    Bpm {
        indices: Vec<usize>,
        blocks: usize,
    },
    BlockPoisson {
        draw: BlockPoissonDraw,
        groups: usize,
    },
}

impl SubsampleState {
    /// A fresh subsample of size m for the given dependence scheme.
    pub fn draw(dependence: &Dependence, n: usize, m: usize, rng: &mut impl Rng) -> Result<Self> {
        dependence.validate()?;
        if m == 0 {
            return Err(Error::config("m", "subsample size must be at least 1"));
        }
        if n == 0 {
            return Err(Error::Domain("empty population".into()));
        }
        Ok(match *dependence {
            Dependence::Independent => SubsampleState::Srs {
                indices: uniform_indices(n, m, rng),
            },
            Dependence::Cpm { .. } => {
                let gaussians: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
                let indices = gaussians.iter().map(|&u| cpm_index(u, n)).collect();
                SubsampleState::Cpm { gaussians, indices }
            }
            Dependence::Bpm { blocks } => {
                if blocks > m {
                    return Err(Error::config(
                        "dependence.blocks",
                        format!("G = {blocks} exceeds m = {m}"),
                    ));
                }
                SubsampleState::Bpm {
                    indices: uniform_indices(n, m, rng),
                    blocks,
                }
            }
        })
    }

    /// A fresh Block-Poisson structure; `dependence` must be independent or
    /// BPM with at most λ groups of outer blocks.
    pub fn draw_block_poisson(
        dependence: &Dependence,
        n: usize,
        lambda: usize,
        m_b: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        dependence.validate()?;
        let groups = match *dependence {
            Dependence::Independent => 1,
            Dependence::Bpm { blocks } if blocks <= lambda => blocks,
            Dependence::Bpm { blocks } => {
                return Err(Error::config(
                    "dependence.blocks",
                    format!("G = {blocks} exceeds λ = {lambda}"),
                ))
            }
            Dependence::Cpm { .. } => return Err(Error::Unsupported(
                "the Block-Poisson estimator supports independent or block (bpm) subsample updates"
                    .into(),
            )),
        };
        Ok(SubsampleState::BlockPoisson {
            draw: BlockPoissonDraw::draw(n, lambda, m_b, rng)?,
            groups,
        })
    }

    /// Indices for the flat kinds; `None` for Block-Poisson.
    pub fn indices(&self) -> Option<&[usize]> {
        match self {
            SubsampleState::Srs { indices }
            | SubsampleState::Cpm { indices, .. }
            | SubsampleState::Bpm { indices, .. } => Some(indices),
            SubsampleState::BlockPoisson { .. } => None,
        }
    }

    /// Number of observations the state asks to evaluate.
    pub fn evaluations(&self) -> usize {
        match self {
            SubsampleState::BlockPoisson { draw, .. } => draw.batch_count() * draw.m_b,
            other => other.indices().map_or(0, <[usize]>::len),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SubsampleState::Srs { .. } => "independent_srs_wr",
            SubsampleState::Cpm { .. } => "cpm_gaussian",
            SubsampleState::Bpm { .. } => "bpm_blocks",
            SubsampleState::BlockPoisson { .. } => "block_poisson",
        }
    }
}

/// Proposes u′ given u. For BPM the refreshed block is `step mod G`, so a
/// chain cycles through the blocks whatever its acceptance history.
pub fn propose_u(
    current: &SubsampleState,
    dependence: &Dependence,
    n: usize,
    step: usize,
    rng: &mut impl Rng,
) -> Result<SubsampleState> {
    dependence.validate()?;
    let mismatch = || {
        Error::config(
            "dependence",
            format!(
                "subsample of kind {} cannot move under {dependence:?}",
                current.kind()
            ),
        )
    };
    match (current, *dependence) {
        (SubsampleState::Srs { indices }, Dependence::Independent) => Ok(SubsampleState::Srs {
            indices: uniform_indices(n, indices.len(), rng),
        }),
        (SubsampleState::Cpm { gaussians, .. }, Dependence::Cpm { phi }) => {
            let s = (1.0 - phi * phi).sqrt();
            let gaussians: Vec<f64> = gaussians
                .iter()
                .map(|&u| phi * u + s * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let indices = gaussians.iter().map(|&u| cpm_index(u, n)).collect();
            Ok(SubsampleState::Cpm { gaussians, indices })
        }
        (SubsampleState::Bpm { indices, blocks }, Dependence::Bpm { blocks: g })
            if *blocks == g =>
        {
            let mut indices = indices.clone();
            for slot in block_range(indices.len(), g, step % g) {
                indices[slot] = rng.random_range(0..n);
            }
            Ok(SubsampleState::Bpm { indices, blocks: g })
        }
        (SubsampleState::BlockPoisson { draw, groups }, Dependence::Independent)
            if *groups == 1 =>
        {
            Ok(SubsampleState::BlockPoisson {
                draw: BlockPoissonDraw::draw(n, draw.lambda(), draw.m_b, rng)?,
                groups: 1,
            })
        }
        (SubsampleState::BlockPoisson { draw, groups }, Dependence::Bpm { blocks: g })
            if *groups == g =>
        {
            let mut next = draw.clone();
            for l in block_range(draw.lambda(), g, step % g) {
                next.batches[l] = outer_block(n, draw.m_b, rng);
            }
            Ok(SubsampleState::BlockPoisson {
                draw: next,
                groups: g,
            })
        }
        _ => Err(mismatch()),
    }
}
