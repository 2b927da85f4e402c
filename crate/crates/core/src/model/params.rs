use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Default guard on the dimension of a single Hamiltonian block.
pub const DEFAULT_MAX_BLOCK_DIM: usize = 20_000;

/// Parity selector. The parity of a Fock product state is `(-1)^(n + m + j)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Positive,
    Negative,
    Both,
}

impl Parity {
    /// `+1` / `-1` for a definite block, `None` for the full space.
    pub fn sign(self) -> Option<i32> {
        match self {
            Parity::Positive => Some(1),
            Parity::Negative => Some(-1),
            Parity::Both => None,
        }
    }

    pub fn blocks() -> [Parity; 2] {
        [Parity::Positive, Parity::Negative]
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Parity::Positive => 1,
            Parity::Negative => 2,
            Parity::Both => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Parity::Positive => "positive",
            Parity::Negative => "negative",
            Parity::Both => "both",
        }
    }
}

/// Which truncated basis the Hamiltonian is represented in.
///
/// `Fock` is the plain `|n> (x) |j, m_z>` product basis. `Displaced` uses
/// `J_x` eigenstates dressed with displaced Fock states, which absorbs the
/// coupling-induced field displacement and converges with a far smaller
/// bosonic cutoff in the superradiant regime.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BasisKind {
    Fock,
    #[default]
    Displaced,
}

impl BasisKind {
    pub(crate) fn tag(self) -> u8 {
        match self {
            BasisKind::Fock => 1,
            BasisKind::Displaced => 2,
        }
    }
}

/// Physical couplings and truncation of one Dicke Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams<T> {
    /// Boson frequency.
    pub omega: T,
    /// Qubit splitting.
    pub omega0: T,
    /// Rabi splitting.
    pub coupling: T,
    two_j: u32,
    /// Bosonic cutoff: largest retained (displaced) occupation.
    pub n_max: u32,
    pub basis: BasisKind,
    pub max_block_dim: usize,
}

impl<T: Real> ModelParams<T> {
    /// Builds and validates a parameter set. `j` must be a positive
    /// half-integer.
    pub fn new(omega: T, omega0: T, coupling: T, j: T, n_max: u32) -> Result<Self> {
        let two_j_f = (j + j).as_f64();
        if !(two_j_f.is_finite() && two_j_f >= 1.0 && (two_j_f - two_j_f.round()).abs() < 1e-9) {
            return Err(Error::InvalidParams(format!("2j must be a positive integer, got j = {j}")));
        }
        Self::with_two_j(omega, omega0, coupling, two_j_f.round() as u32, n_max)
    }

    pub fn with_two_j(omega: T, omega0: T, coupling: T, two_j: u32, n_max: u32) -> Result<Self> {
        let p = Self {
            omega,
            omega0,
            coupling,
            two_j,
            n_max,
            basis: BasisKind::default(),
            max_block_dim: DEFAULT_MAX_BLOCK_DIM,
        };
        p.validate()?;
        Ok(p)
    }

    /// `omega = omega0 = 1`, `coupling = 2` (twice the critical coupling).
    pub fn standard(j: T, n_max: u32) -> Result<Self> {
        Self::new(T::one(), T::one(), T::lit(2.0), j, n_max)
    }

    pub fn with_basis(mut self, basis: BasisKind) -> Self {
        self.basis = basis;
        self
    }

    pub fn with_n_max(mut self, n_max: u32) -> Self {
        self.n_max = n_max;
        self
    }

    pub fn with_max_block_dim(mut self, max: usize) -> Self {
        self.max_block_dim = max;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: T| v.is_finite() && v > T::zero();
        if !pos(self.omega) || !pos(self.omega0) {
            return Err(Error::InvalidParams(format!(
                "omega and omega0 must be positive, got {} and {}",
                self.omega, self.omega0
            )));
        }
        if !(self.coupling.is_finite() && self.coupling >= T::zero()) {
            return Err(Error::InvalidParams(format!("coupling must be >= 0, got {}", self.coupling)));
        }
        if self.two_j == 0 {
            return Err(Error::InvalidParams("2j must be a positive integer".into()));
        }
        if self.n_max < 1 {
            return Err(Error::InvalidParams("n_max must be >= 1".into()));
        }
        Ok(())
    }

    pub fn two_j(&self) -> u32 {
        self.two_j
    }

    pub fn j(&self) -> T {
        T::lit(self.two_j as f64 * 0.5)
    }

    /// Critical coupling `sqrt(omega * omega0)` of the superradiant transition.
    pub fn critical_coupling(&self) -> T {
        (self.omega * self.omega0).sqrt()
    }

    /// Dimension of the full (both-parity) truncated space.
    pub fn full_dim(&self) -> usize {
        (self.n_max as usize + 1) * (self.two_j as usize + 1)
    }

    /// Same physics and basis, possibly different cutoff.
    pub fn same_model(&self, other: &Self) -> bool {
        self.omega == other.omega
            && self.omega0 == other.omega0
            && self.coupling == other.coupling
            && self.two_j == other.two_j
            && self.basis == other.basis
    }

    pub fn to_f64(&self) -> ModelParams<f64> {
        ModelParams {
            omega: self.omega.as_f64(),
            omega0: self.omega0.as_f64(),
            coupling: self.coupling.as_f64(),
            two_j: self.two_j,
            n_max: self.n_max,
            basis: self.basis,
            max_block_dim: self.max_block_dim,
        }
    }
}
