use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};

use super::{DType, TensorSet};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Element distributions for synthetic weight-like tensors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distribution {
    /// N(0, 1).
    Gaussian,
    /// Laplace with unit scale (variance 2, excess kurtosis 3).
    Laplace,
    /// Student-t with `nu > 4` degrees of freedom.
    StudentT { nu: f64 },
    /// N(0, 1) elements whose blocks of `block` are each multiplied by
    /// `exp(sigma · z)`, spreading block maxima over several octaves.
    LognormalMaxBlocks { sigma: f64, block: usize },
}

impl Distribution {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Distribution::StudentT { nu } if !(nu > 4.0 && nu.is_finite()) => Err(Error::Synth(format!(
                "student_t requires nu > 4 for a finite fourth moment, got {nu}"
            ))),
            Distribution::LognormalMaxBlocks { sigma, block } if !(sigma >= 0.0 && sigma.is_finite()) || block == 0 => {
                Err(Error::Synth(format!(
                    "lognormal_max_blocks needs sigma >= 0 and block >= 1, got sigma={sigma} block={block}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::Laplace => "laplace",
            Distribution::StudentT { .. } => "student_t",
            Distribution::LognormalMaxBlocks { .. } => "lognormal_max_blocks",
        }
    }

    /// Fills `out` from `rng`.
    pub fn fill<R: Rng>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        self.validate()?;
        match *self {
            Distribution::Gaussian => out.iter_mut().for_each(|v| *v = StandardNormal.sample(rng)),
            Distribution::Laplace => out.iter_mut().for_each(|v| {
                // Inverse CDF on (-1/2, 1/2].
                let u: f64 = 0.5 - rng.random::<f64>();
                *v = -u.signum() * (1.0 - 2.0 * u.abs()).ln();
            }),
            Distribution::StudentT { nu } => {
                let t = StudentT::new(nu).map_err(|e| Error::Synth(e.to_string()))?;
                out.iter_mut().for_each(|v| *v = t.sample(rng));
            }
            Distribution::LognormalMaxBlocks { sigma, block } => {
                for chunk in out.chunks_mut(block) {
                    let z: f64 = StandardNormal.sample(rng);
                    let scale = (sigma * z).exp();
                    chunk.iter_mut().for_each(|v| {
                        let g: f64 = StandardNormal.sample(rng);
                        *v = g * scale;
                    });
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::StudentT { nu } => write!(f, "student_t({nu})"),
            Distribution::LognormalMaxBlocks { sigma, block } => {
                write!(f, "lognormal_max_blocks({sigma},{block})")
            }
            d => f.write_str(d.label()),
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    /// `gaussian`, `laplace`, `student_t(5)`, `lognormal_max_blocks`,
    /// `lognormal_max_blocks(2)` or `lognormal_max_blocks(2,32)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, args) = match s.find('(') {
            Some(i) => {
                let inner = s[i + 1..]
                    .strip_suffix(')')
                    .ok_or_else(|| Error::Synth(format!("unbalanced parentheses in `{s}`")))?;
                let args = inner
                    .split(',')
                    .map(|a| a.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Synth(format!("bad parameter in `{s}`: {e}")))?;
                (&s[..i], args)
            }
            None => (s, Vec::new()),
        };
        let d = match (head, args.as_slice()) {
            ("gaussian" | "normal", []) => Distribution::Gaussian,
            ("laplace", []) => Distribution::Laplace,
            ("student_t" | "t", [nu]) => Distribution::StudentT { nu: *nu },
            ("lognormal_max_blocks", []) => Distribution::LognormalMaxBlocks {
                sigma: 2.0,
                block: 32,
            },
            ("lognormal_max_blocks", [sigma]) => Distribution::LognormalMaxBlocks {
                sigma: *sigma,
                block: 32,
            },
            ("lognormal_max_blocks", [sigma, block]) if block.fract() == 0.0 && *block >= 1.0 => {
                Distribution::LognormalMaxBlocks {
                    sigma: *sigma,
                    block: *block as usize,
                }
            }
            _ => return Err(Error::Synth(format!("unknown distribution `{s}`"))),
        };
        d.validate()?;
        Ok(d)
    }
}

/// Recipe for a seeded synthetic [`TensorSet`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub distribution: Distribution,
    pub shape: Vec<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub count: usize,
}

fn one() -> usize {
    1
}

impl SynthSpec {
    /// Parses either a JSON object or the compact `dist:AxBxC[*count]` form,
    /// e.g. `gaussian:256x256*64` or `student_t(5):4096`.
    pub fn parse(s: &str, seed: u64) -> Result<Self> {
        let s = s.trim();
        if s.starts_with('{') {
            let spec: SynthSpec =
                serde_json::from_str(s).map_err(|e| Error::Synth(e.to_string()))?;
            spec.distribution.validate()?;
            return Ok(spec);
        }
        let (dist, rest) = s
            .rsplit_once(':')
            .ok_or_else(|| Error::Synth(format!("expected `dist:shape`, got `{s}`")))?;
        let (shape, count) = match rest.split_once('*') {
            Some((shape, count)) => (
                shape,
                count
                    .trim()
                    .parse::<usize>()
                    .map_err(|e| Error::Synth(format!("bad count `{count}`: {e}")))?,
            ),
            None => (rest, 1),
        };
        let shape = shape
            .split('x')
            .map(|d| d.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Synth(format!("bad shape `{shape}`: {e}")))?;
        if count == 0 {
            return Err(Error::Synth("count must be at least 1".into()));
        }
        Ok(Self {
            distribution: dist.parse()?,
            shape,
            seed,
            count,
        })
    }
}

/// Generator for tensor `index` of a set seeded with `seed`: one ChaCha stream per tensor.
pub fn tensor_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn synth_tensor(distribution: Distribution, shape: &[usize], seed: u64) -> Result<Tensor> {
    synth_indexed(distribution, shape, seed, 0)
}

fn synth_indexed(
    distribution: Distribution,
    shape: &[usize],
    seed: u64,
    index: u64,
) -> Result<Tensor> {
    let n = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Synth(format!("shape {shape:?} overflows")))?;
    let mut data = vec![0.0; n];
    distribution.fill(&mut tensor_rng(seed, index), &mut data)?;
    Tensor::new(shape.to_vec(), data)
}

/// Materialises `spec` as tensors named `synth.<dist>.<index>`.
pub fn synth(spec: &SynthSpec) -> Result<TensorSet> {
    spec.distribution.validate()?;
    let mut set = TensorSet::new();
    for i in 0..spec.count {
        let t = synth_indexed(spec.distribution, &spec.shape, spec.seed, i as u64)?;
        set.insert(
            format!("synth.{}.{i:04}", spec.distribution.label()),
            DType::F64,
            t,
        )?;
    }
    Ok(set)
}
