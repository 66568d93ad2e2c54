//! Coins, bias distributions, mixture populations and seeded randomness.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::math::{majority_prob, splitmix64};
use crate::{Error, Result};

/// Name of the generator behind [`RngStream`], recorded in run reports.
pub const GENERATOR: &str = "rand_chacha::ChaCha8Rng 0.3 (seed_from_u64 + set_stream)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasAtom {
    pub bias: f64,
    pub weight: f64,
}

/// Discrete distribution of coin biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<BiasAtom>", into = "Vec<BiasAtom>")]
pub struct BiasDistribution {
    atoms: Vec<BiasAtom>,
}

impl BiasDistribution {
    pub fn new(atoms: Vec<BiasAtom>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidDistribution("empty support".into()));
        }
        let mut total = 0.0;
        for a in &atoms {
            if !(0.0..=1.0).contains(&a.bias) {
                return Err(Error::InvalidDistribution(format!("bias {} outside [0,1]", a.bias)));
            }
            if !(a.weight >= 0.0) {
                return Err(Error::InvalidDistribution(format!("negative weight {}", a.weight)));
            }
            total += a.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDistribution(format!("weights sum to {total}")));
        }
        Ok(Self { atoms })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        Self::new(pairs.iter().map(|&(bias, weight)| BiasAtom { bias, weight }).collect())
    }

    pub fn point(bias: f64) -> Result<Self> {
        Self::new(vec![BiasAtom { bias, weight: 1.0 }])
    }

    /// `w·a + (1−w)·b`, keeping both supports side by side.
    pub fn mixture(a: &Self, w: f64, b: &Self) -> Self {
        let mut atoms = Vec::with_capacity(a.atoms.len() + b.atoms.len());
        atoms.extend(a.atoms.iter().map(|x| BiasAtom { bias: x.bias, weight: w * x.weight }));
        atoms.extend(b.atoms.iter().map(|x| BiasAtom { bias: x.bias, weight: (1.0 - w) * x.weight }));
        Self { atoms }
    }

    pub fn atoms(&self) -> &[BiasAtom] {
        &self.atoms
    }

    /// E[g(p)] for p drawn from this distribution.
    pub fn expect(&self, g: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|a| a.weight * g(a.bias)).sum()
    }

    pub fn min_bias(&self) -> f64 {
        self.atoms.iter().map(|a| a.bias).fold(f64::INFINITY, f64::min)
    }

    pub fn max_bias(&self) -> f64 {
        self.atoms.iter().map(|a| a.bias).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        if self.atoms.len() == 1 {
            return self.atoms[0].bias;
        }
        let u = rng.uniform();
        let mut acc = 0.0;
        for a in &self.atoms {
            acc += a.weight;
            if u < acc {
                return a.bias;
            }
        }
        self.atoms.last().map(|a| a.bias).unwrap_or(0.0)
    }
}

impl TryFrom<Vec<BiasAtom>> for BiasDistribution {
    type Error = Error;
    fn try_from(v: Vec<BiasAtom>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BiasDistribution> for Vec<BiasAtom> {
    fn from(d: BiasDistribution) -> Self {
        d.atoms
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoinSpec {
    pub bias: f64,
    pub label: Label,
}

/// Mixture of positive coins (bias ≥ ½+Δ) and negative coins (bias ≤ ½−Δ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PopulationFile", into = "PopulationFile")]
pub struct CoinPopulation {
    rho: f64,
    delta: f64,
    positive: BiasDistribution,
    negative: BiasDistribution,
}

#[derive(Serialize, Deserialize)]
struct PopulationFile {
    rho: f64,
    delta: f64,
    positive: BiasDistribution,
    negative: BiasDistribution,
}

impl TryFrom<PopulationFile> for CoinPopulation {
    type Error = Error;
    fn try_from(f: PopulationFile) -> Result<Self> {
        Self::new(f.rho, f.delta, f.positive, f.negative)
    }
}

impl From<CoinPopulation> for PopulationFile {
    fn from(p: CoinPopulation) -> Self {
        Self { rho: p.rho, delta: p.delta, positive: p.positive, negative: p.negative }
    }
}

const GAP_SLACK: f64 = 1e-12;

impl CoinPopulation {
    pub fn new(
        rho: f64,
        delta: f64,
        positive: BiasDistribution,
        negative: BiasDistribution,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&rho) {
            return Err(Error::InvalidPopulation(format!("rho {rho} outside [0,1]")));
        }
        if !(delta > 0.0 && delta <= 0.5) {
            return Err(Error::InvalidPopulation(format!("delta {delta} outside (0, 1/2]")));
        }
        if positive.min_bias() < 0.5 + delta - GAP_SLACK {
            return Err(Error::InvalidPopulation(format!(
                "positive bias {} below 1/2+delta",
                positive.min_bias()
            )));
        }
        if negative.max_bias() > 0.5 - delta + GAP_SLACK {
            return Err(Error::InvalidPopulation(format!(
                "negative bias {} above 1/2-delta",
                negative.max_bias()
            )));
        }
        Ok(Self { rho, delta, positive, negative })
    }

    /// Point masses at ½+Δ and ½−Δ.
    pub fn two_point(rho: f64, delta: f64) -> Result<Self> {
        Self::new(
            rho,
            delta,
            BiasDistribution::point(0.5 + delta)?,
            BiasDistribution::point(0.5 - delta)?,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("population serializes")
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn positive(&self) -> &BiasDistribution {
        &self.positive
    }

    pub fn negative(&self) -> &BiasDistribution {
        &self.negative
    }

    /// The same population with a different mixture parameter.
    pub fn with_rho(&self, rho: f64) -> Result<Self> {
        Self::new(rho, self.delta, self.positive.clone(), self.negative.clone())
    }

    /// The unconditional bias distribution ρ·positive + (1−ρ)·negative.
    pub fn mixed(&self) -> BiasDistribution {
        BiasDistribution::mixture(&self.positive, self.rho, &self.negative)
    }

    pub fn draw_coin(&self, rng: &mut RngStream) -> CoinSpec {
        if rng.bernoulli(self.rho) {
            CoinSpec { bias: self.positive.sample(rng), label: Label::Positive }
        } else {
            CoinSpec { bias: self.negative.sample(rng), label: Label::Negative }
        }
    }
}

/// Seeded, splittable random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Independent stream for the `index`-th child of this one.
    pub fn child(&self, index: u64) -> RngStream {
        let id = splitmix64(splitmix64(self.stream_id) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03));
        RngStream::new(self.seed, id)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        if p <= 0.0 {
            return false;
        }
        if p >= 1.0 {
            return true;
        }
        self.uniform() < p
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }
}

pub fn flip(coin: &CoinSpec, rng: &mut RngStream) -> bool {
    rng.bernoulli(coin.bias)
}

/// Raw flips per virtual flip: the smallest odd m ≥ ln 4/(2Δ²) when Δ ≤ ¼, else 1.
pub fn virtual_block_size(delta: f64) -> usize {
    if delta > 0.25 {
        return 1;
    }
    crate::math::odd_ceil(4f64.ln() / (2.0 * delta * delta))
}

/// Majority of a block of raw flips.
pub fn virtual_flip(coin: &CoinSpec, delta: f64, rng: &mut RngStream) -> bool {
    let m = virtual_block_size(delta);
    let heads = (0..m).filter(|_| flip(coin, rng)).count();
    2 * heads > m
}

/// Exact heads probability of the virtual coin built from a coin of bias `p`.
pub fn virtual_bias(p: f64, block: usize) -> f64 {
    if block == 1 {
        return p;
    }
    majority_prob(block, p)
}

/// Flip source for one coin, counting raw flips. Each call to [`CoinView::flip`]
/// spends one block of raw flips.
pub struct CoinView<'a> {
    coin: CoinSpec,
    block: usize,
    rng: &'a mut RngStream,
    raw_flips: u64,
}

impl<'a> CoinView<'a> {
    pub fn new(coin: CoinSpec, block: usize, rng: &'a mut RngStream) -> Self {
        Self { coin, block: block.max(1), rng, raw_flips: 0 }
    }

    pub fn raw(coin: CoinSpec, rng: &'a mut RngStream) -> Self {
        Self::new(coin, 1, rng)
    }

    pub fn flip(&mut self) -> bool {
        self.raw_flips += self.block as u64;
        if self.block == 1 {
            return flip(&self.coin, self.rng);
        }
        let heads = (0..self.block).filter(|_| flip(&self.coin, self.rng)).count();
        2 * heads > self.block
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.uniform()
    }

    pub fn raw_flips(&self) -> u64 {
        self.raw_flips
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn coin(&self) -> &CoinSpec {
        &self.coin
    }
}
