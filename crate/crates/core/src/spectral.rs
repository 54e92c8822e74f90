//! Diagonal operator model: T*T = Σ λ_j E_j with finite multiplicities.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result, SpecregError};
use crate::index_fn::IndexFunction;

/// Analytic bounds for the modes dropped by truncation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationNote {
    /// upper bound on the norm of the discarded solution coefficients
    pub solution_tail: f64,
    /// upper bound on Σ mult·λ over the discarded modes
    pub spectrum_tail: f64,
    /// upper bound on every discarded eigenvalue
    pub lambda_next: f64,
    pub description: String,
}

#[derive(Deserialize)]
struct OperatorRepr {
    eigenvalues: Vec<f64>,
    multiplicities: Vec<usize>,
    #[serde(default)]
    truncation: Option<TruncationNote>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OperatorRepr")]
pub struct SpectralOperator {
    eigenvalues: Vec<f64>,
    multiplicities: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    truncation: Option<TruncationNote>,
    #[serde(skip)]
    offsets: Vec<usize>,
}

impl TryFrom<OperatorRepr> for SpectralOperator {
    type Error = SpecregError;
    fn try_from(r: OperatorRepr) -> Result<Self> {
        let mut op = SpectralOperator::new(r.eigenvalues, r.multiplicities)?;
        op.truncation = r.truncation;
        Ok(op)
    }
}

impl SpectralOperator {
    /// Eigenvalues must be positive, finite and nonincreasing.
    pub fn new(eigenvalues: Vec<f64>, multiplicities: Vec<usize>) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(invalid("operator needs at least one eigenvalue"));
        }
        if eigenvalues.len() != multiplicities.len() {
            return Err(invalid(format!(
                "{} eigenvalues but {} multiplicities",
                eigenvalues.len(),
                multiplicities.len()
            )));
        }
        if let Some(l) = eigenvalues.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(invalid(format!("eigenvalues must be positive and finite, got {l}")));
        }
        if eigenvalues.windows(2).any(|w| w[1] > w[0]) {
            return Err(invalid("eigenvalues must be sorted in descending order"));
        }
        if multiplicities.iter().any(|m| *m == 0) {
            return Err(invalid("multiplicities must be positive"));
        }
        let mut offsets = Vec::with_capacity(multiplicities.len() + 1);
        let mut acc = 0;
        offsets.push(0);
        for m in &multiplicities {
            acc += m;
            offsets.push(acc);
        }
        Ok(SpectralOperator { eigenvalues, multiplicities, truncation: None, offsets })
    }

    pub fn with_truncation(mut self, note: TruncationNote) -> Self {
        self.truncation = Some(note);
        self
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn multiplicities(&self) -> &[usize] {
        &self.multiplicities
    }

    pub fn truncation(&self) -> Option<&TruncationNote> {
        self.truncation.as_ref()
    }

    pub fn groups(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Total number of coefficient slots.
    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// ‖T*T‖ = λ_1
    pub fn norm_tt(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn lambda_min(&self) -> f64 {
        *self.eigenvalues.last().unwrap()
    }

    /// Slot range of eigenvalue group `g`.
    pub fn slots(&self, g: usize) -> std::ops::Range<usize> {
        self.offsets[g]..self.offsets[g + 1]
    }

    pub fn check(&self, x: &SpectralElement) -> Result<()> {
        if x.coefficients.len() != self.dim() {
            return Err(SpecregError::BasisMismatch { expected: self.dim(), got: x.coefficients.len() });
        }
        Ok(())
    }

    /// Σ over slots of x² for every eigenvalue group.
    pub fn group_sq(&self, x: &SpectralElement) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok((0..self.groups()).map(|g| x.coefficients[self.slots(g)].iter().map(|c| c * c).sum()).collect())
    }

    /// Eigenvalue attached to every slot.
    pub fn slot_eigenvalues(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        for (l, m) in self.eigenvalues.iter().zip(&self.multiplicities) {
            out.extend(std::iter::repeat(*l).take(*m));
        }
        out
    }

    /// Data g = Tx in the singular basis: g_j = √λ_j x_j.
    pub fn forward(&self, x: &SpectralElement) -> Result<Vec<f64>> {
        self.check(x)?;
        let mut g = x.coefficients.clone();
        for (grp, l) in self.eigenvalues.iter().enumerate() {
            let s = l.sqrt();
            for c in &mut g[self.slots(grp)] {
                *c *= s;
            }
        }
        Ok(g)
    }

    /// ‖T x‖²
    pub fn forward_sq_norm(&self, x: &SpectralElement) -> Result<f64> {
        let sq = self.group_sq(x)?;
        Ok(sq.iter().zip(&self.eigenvalues).map(|(s, l)| s * l).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralElement {
    pub coefficients: Vec<f64>,
}

impl SpectralElement {
    pub fn new(coefficients: Vec<f64>) -> Self {
        SpectralElement { coefficients }
    }

    pub fn zeros(n: usize) -> Self {
        SpectralElement { coefficients: vec![0.0; n] }
    }

    pub fn norm(&self) -> f64 {
        self.coefficients.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &SpectralElement) -> f64 {
        self.coefficients.iter().zip(&other.coefficients).map(|(a, b)| a * b).sum()
    }

    pub fn sub(&self, other: &SpectralElement) -> SpectralElement {
        SpectralElement::new(self.coefficients.iter().zip(&other.coefficients).map(|(a, b)| a - b).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseModel {
    Deterministic { delta: f64 },
    WhiteNoise { eps: f64 },
}

impl NoiseModel {
    pub fn level(&self) -> f64 {
        match self {
            NoiseModel::Deterministic { delta } => *delta,
            NoiseModel::WhiteNoise { eps } => *eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.level();
        if !(l >= 0.0 && l.is_finite()) {
            return Err(invalid(format!("noise level must be finite and nonnegative, got {l}")));
        }
        Ok(())
    }
}

/// ‖E_λ x‖ where E_λ projects onto eigenvalues ≤ λ.
pub fn spectral_distribution(x: &SpectralElement, op: &SpectralOperator, lambda: f64) -> Result<f64> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(SpecregError::Domain { what: "spectral distribution", value: lambda });
    }
    let sq = op.group_sq(x)?;
    let start = op.eigenvalues.partition_point(|&l| l > lambda);
    Ok(sq[start..].iter().rev().sum::<f64>().sqrt())
}

/// ‖E_{λ_g} x‖ for every eigenvalue group, summed from the tail.
pub fn spectral_distribution_all(x: &SpectralElement, op: &SpectralOperator) -> Result<Vec<f64>> {
    let sq = op.group_sq(x)?;
    let mut out = vec![0.0; sq.len()];
    let mut acc = 0.0;
    for g in (0..sq.len()).rev() {
        acc += sq[g];
        out[g] = acc.sqrt();
    }
    Ok(out)
}

/// sup_λ ‖E_λ x‖ / κ(λ), attained at eigenvalues; +∞ when κ vanishes on mass.
pub fn xtk_norm(x: &SpectralElement, op: &SpectralOperator, kappa: &IndexFunction) -> Result<f64> {
    let dist = spectral_distribution_all(x, op)?;
    let mut best: f64 = 0.0;
    for (g, d) in dist.iter().enumerate() {
        if *d == 0.0 {
            continue;
        }
        let k = kappa.eval(op.eigenvalues[g])?;
        if k <= 0.0 {
            return Ok(f64::INFINITY);
        }
        best = best.max(d / k);
    }
    Ok(best)
}

/// sqrt(sup_m (1∨m)^{2u} Σ_{|n|≥m} x_n²) for coefficients indexed n = −M..M.
pub fn besov_seq_norm(coeffs: &[f64], u: f64) -> Result<f64> {
    if coeffs.len() % 2 == 0 {
        return Err(invalid("frequency coefficients must have odd length 2M+1"));
    }
    let m_max = coeffs.len() / 2;
    let mut tail = vec![0.0; m_max + 1];
    let mut acc = 0.0;
    for m in (0..=m_max).rev() {
        acc += coeffs[m_max + m] * coeffs[m_max + m];
        if m > 0 {
            acc += coeffs[m_max - m] * coeffs[m_max - m];
        }
        tail[m] = acc;
    }
    let best = tail
        .iter()
        .enumerate()
        .map(|(m, t)| (m.max(1) as f64).powf(2.0 * u) * t)
        .fold(0.0, f64::max);
    Ok(best.sqrt())
}

/// g + ε W with W standard Gaussian per slot, reproducible from `seed`.
pub fn add_white_noise(g: &[f64], eps: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    g.iter()
        .map(|v| {
            let w: f64 = StandardNormal.sample(&mut rng);
            v + eps * w
        })
        .collect()
}

/// g + ξ for a caller-supplied ξ with ‖ξ‖ ≤ δ.
pub fn add_deterministic(g: &[f64], xi: &[f64], delta: f64) -> Result<Vec<f64>> {
    if xi.len() != g.len() {
        return Err(SpecregError::BasisMismatch { expected: g.len(), got: xi.len() });
    }
    let n = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > delta * (1.0 + 1e-12) {
        return Err(invalid(format!("noise norm {n} exceeds delta {delta}")));
    }
    Ok(g.iter().zip(xi).map(|(a, b)| a + b).collect())
}
