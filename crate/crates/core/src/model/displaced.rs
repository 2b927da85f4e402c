//! Displaced-boson basis in the `J_x` eigenbasis.
//!
//! With `g = coupling / sqrt(2j)` and `alpha = g / omega`, the Hamiltonian
//! reads `omega A^dag A - (g^2/omega) J_x^2 + omega0 J_z` where
//! `A = a + alpha J_x`. The basis states are `|N; m> = D(-alpha m)|N> (x) |m>_x`
//! with `J_x |m>_x = m |m>_x`. Only `omega0 J_z` is off-diagonal; it links
//! `m` to `m +- 1` with the displaced-Fock overlap `<N'|D(alpha (m' - m))|N>`.
//!
//! Parity acts as `|N; m> -> (-1)^N |N; -m>`, so a parity block is spanned by
//! `(|N; m> + p (-1)^N |N; -m>) / sqrt(2)` for `m > 0` plus `|N; 0>` when
//! `(-1)^N = p` (integer `j` only).

use faer::Mat;
use num_complex::Complex;

use crate::error::Result;
use crate::model::hamiltonian::{check_dim, ladder};
use crate::model::params::{ModelParams, Parity};
use crate::scalar::Real;

/// Basis state of the displaced basis. In a definite-parity block `two_m >= 0`
/// names the symmetrized pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct DisplacedState {
    pub n: u32,
    pub two_m: i32,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct DisplacedBasis {
    two_j: u32,
    n_max: u32,
    parity: Parity,
    states: Vec<DisplacedState>,
}

fn sign_of_n(n: u32) -> i32 {
    if n % 2 == 0 {
        1
    } else {
        -1
    }
}

impl DisplacedBasis {
    pub fn n_max(&self) -> u32 {
        self.n_max
    }

    pub fn new<T: Real>(params: &ModelParams<T>, parity: Parity) -> Self {
        let two_j = params.two_j();
        let mut states = Vec::new();
        for n in 0..=params.n_max {
            match parity.sign() {
                None => {
                    for k in 0..=two_j {
                        let two_m = 2 * k as i32 - two_j as i32;
                        states.push(DisplacedState { n, two_m, index: states.len() });
                    }
                }
                Some(p) => {
                    let mut two_m = (two_j % 2) as i32;
                    while two_m <= two_j as i32 {
                        if two_m > 0 || sign_of_n(n) == p {
                            states.push(DisplacedState { n, two_m, index: states.len() });
                        }
                        two_m += 2;
                    }
                }
            }
        }
        Self { two_j, n_max: params.n_max, parity, states }
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[DisplacedState] {
        &self.states
    }

    pub fn parity(&self) -> Parity {
        self.parity
    }

    /// Slot of `(n, m)` in the unsymmetrized full ordering (n-major, m ascending).
    pub fn full_slot(&self, n: u32, two_m: i32) -> usize {
        n as usize * (self.two_j as usize + 1) + ((two_m + self.two_j as i32) / 2) as usize
    }

    /// Maps amplitudes over the unsymmetrized `|N; m>` states onto this block.
    pub fn project_amplitudes<T: Real>(&self, full: &[Complex<T>]) -> Vec<Complex<T>> {
        let r = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        self.states
            .iter()
            .map(|s| {
                let a = full[self.full_slot(s.n, s.two_m)];
                match self.parity.sign() {
                    None => a,
                    Some(_) if s.two_m == 0 => a,
                    Some(p) => {
                        let b = full[self.full_slot(s.n, -s.two_m)];
                        if p * sign_of_n(s.n) > 0 {
                            (a + b).scale(r)
                        } else {
                            (a - b).scale(r)
                        }
                    }
                }
            })
            .collect()
    }
}

/// Matrix of `<N'|D(lambda)|N>` for real `lambda`, `0 <= N, N' <= n_max`.
///
/// Built from `<0|D(lambda)|N> = e^{-lambda^2/2} (-lambda)^N / sqrt(N!)` and
/// `sqrt(N'+1) d[N'+1][N] = sqrt(N) d[N'][N-1] + lambda d[N'][N]`.
pub fn displacement_matrix<T: Real>(lambda: T, n_max: usize) -> Vec<Vec<T>> {
    let size = n_max + 1;
    let mut d = vec![vec![T::zero(); size]; size];
    let mut top = (-lambda * lambda * T::lit(0.5)).exp();
    for n in 0..size {
        d[0][n] = top;
        top = top * (-lambda) / T::lit((n as f64 + 1.0).sqrt());
    }
    for np in 0..n_max {
        let inv = T::one() / T::lit((np as f64 + 1.0).sqrt());
        for n in 0..size {
            let down = if n > 0 { T::lit((n as f64).sqrt()) * d[np][n - 1] } else { T::zero() };
            d[np + 1][n] = (down + lambda * d[np][n]) * inv;
        }
    }
    d
}

struct Elements<T> {
    two_j: u32,
    omega: T,
    omega0: T,
    shift: T,
    d_plus: Vec<Vec<T>>,
}

impl<T: Real> Elements<T> {
    fn new(params: &ModelParams<T>) -> Self {
        let two_j = params.two_j();
        let g = params.coupling / T::lit(two_j as f64).sqrt();
        let alpha = g / params.omega;
        Self {
            two_j,
            omega: params.omega,
            omega0: params.omega0,
            shift: g * g / params.omega,
            d_plus: displacement_matrix(alpha, params.n_max as usize),
        }
    }

    /// `<Na; ma|H|Nb; mb>` between unsymmetrized states.
    fn get(&self, na: u32, two_ma: i32, nb: u32, two_mb: i32) -> T {
        let half = T::lit(0.5);
        if two_ma == two_mb {
            if na != nb {
                return T::zero();
            }
            let m = T::lit(two_ma as f64 * 0.5);
            return self.omega * T::lit(na as f64) - self.shift * m * m;
        }
        // <m'|J_z|m>_x = -<m'|J_x|m>_z
        if two_ma == two_mb + 2 {
            let spin = -half * ladder::<T>(self.two_j, two_mb, true);
            self.omega0 * spin * self.d_plus[na as usize][nb as usize]
        } else if two_ma == two_mb - 2 {
            let spin = -half * ladder::<T>(self.two_j, two_mb, false);
            self.omega0 * spin * self.d_plus[nb as usize][na as usize]
        } else {
            T::zero()
        }
    }
}

/// Hamiltonian of one parity block (or the full space) in the displaced basis.
pub fn build_displaced_hamiltonian<T: Real>(params: &ModelParams<T>, parity: Parity) -> Result<Mat<T>> {
    params.validate()?;
    let full = params.full_dim();
    check_dim(params, if parity == Parity::Both { full } else { full.div_ceil(2) })?;
    let basis = DisplacedBasis::new(params, parity);
    check_dim(params, basis.len())?;
    let el = Elements::new(params);
    let dim = basis.len();
    let states = basis.states();
    let mut h = Mat::<T>::zeros(dim, dim);
    let sqrt2 = T::lit(2f64.sqrt());
    for (s, a) in states.iter().enumerate() {
        for b in &states[s..] {
            let direct_near = (a.two_m - b.two_m).abs() <= 2;
            let val = match parity.sign() {
                None => {
                    if !direct_near {
                        continue;
                    }
                    el.get(a.n, a.two_m, b.n, b.two_m)
                }
                Some(p) => {
                    let mirrored_near = a.two_m + b.two_m <= 2;
                    if !direct_near && !mirrored_near {
                        continue;
                    }
                    let cs = if a.two_m == 0 { T::one() } else { sqrt2 };
                    let ct = if b.two_m == 0 { T::one() } else { sqrt2 };
                    let direct = el.get(a.n, a.two_m, b.n, b.two_m);
                    let mirrored = el.get(a.n, a.two_m, b.n, -b.two_m);
                    let sign = T::lit((p * sign_of_n(b.n)) as f64);
                    cs * ct * T::lit(0.5) * (direct + sign * mirrored)
                }
            };
            if val != T::zero() {
                h[(a.index, b.index)] = val;
                h[(b.index, a.index)] = val;
            }
        }
    }
    Ok(h)
}
