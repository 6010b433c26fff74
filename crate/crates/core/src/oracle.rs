//! Finite ground-truth worlds with an exactly calibrated model.
//!
//! A [`FiniteWorld`] is one equivalence class: a handful of latent inputs,
//! each with a prior weight and a Gaussian conditional `N(m_i, s_i^2)`. The
//! perfectly calibrated single-answer model predicts the mixture
//! `sum_i w_i N(m_i, s_i^2)`; the perfectly calibrated pair model predicts
//! `sum_i w_i N(y1; m_i, s_i^2) N(y2; m_i, s_i^2)`. Everything here is closed
//! form or deterministic quadrature, so the identities can be checked to
//! round-off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{input, Error, Result};

const WEIGHT_SUM_TOL: f64 = 1e-12;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub weight: f64,
    pub mean: f64,
    /// Standard deviation of `Y` given this latent input.
    pub std_dev: f64,
}

impl Member {
    pub fn variance(&self) -> f64 {
        self.std_dev * self.std_dev
    }

    fn density(&self, y: f64) -> f64 {
        let z = (y - self.mean) / self.std_dev;
        INV_SQRT_2PI / self.std_dev * (-0.5 * z * z).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteWorld {
    members: Vec<Member>,
}

impl FiniteWorld {
    pub fn new(members: Vec<Member>) -> Result<Self> {
        if members.is_empty() {
            return Err(input("a world needs at least one member"));
        }
        for m in &members {
            if !(m.weight > 0.0 && m.weight.is_finite()) {
                return Err(input(format!("member weight {} must be positive", m.weight)));
            }
            if !m.mean.is_finite() || !(m.std_dev >= 0.0 && m.std_dev.is_finite()) {
                return Err(input("member mean must be finite and std_dev >= 0"));
            }
        }
        let total: f64 = members.iter().map(|m| m.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(input(format!("weights sum to {total}, expected 1")));
        }
        Ok(Self { members })
    }

    /// Builds a world from `(weight, mean, std_dev)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|&(weight, mean, std_dev)| Member { weight, mean, std_dev })
                .collect(),
        )
    }

    /// 1 to 16 members, normalized uniform weights, means in `[-5, 5]`,
    /// standard deviations in `[0, 2]`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::random_with_std_range(rng, 0.0, 2.0)
    }

    pub fn random_with_std_range<R: Rng + ?Sized>(rng: &mut R, s_lo: f64, s_hi: f64) -> Self {
        let n = rng.random_range(1..=16usize);
        let raw: Vec<f64> = (0..n).map(|_| 1.0 - rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let mut members: Vec<Member> = raw
            .iter()
            .map(|w| Member {
                weight: w / total,
                mean: rng.random_range(-5.0..=5.0),
                std_dev: rng.random_range(s_lo..=s_hi),
            })
            .collect();
        // Push the rounding residue of the normalization into the largest weight.
        let residue = 1.0 - members.iter().map(|m| m.weight).sum::<f64>();
        if let Some(m) = members.iter_mut().max_by(|a, b| a.weight.total_cmp(&b.weight)) {
            m.weight += residue;
        }
        Self { members }
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    /// `E_w[g(m_i)]`.
    fn expect(&self, g: impl Fn(&Member) -> f64) -> f64 {
        self.members.iter().map(|m| m.weight * g(m)).sum()
    }

    /// Density of the calibrated single-answer model.
    pub fn mixture_density(&self, y: f64) -> f64 {
        self.expect(|m| m.density(y))
    }

    /// Density of the calibrated pair model.
    pub fn pair_density(&self, y1: f64, y2: f64) -> f64 {
        self.expect(|m| m.density(y1) * m.density(y2))
    }

    fn has_point_mass(&self) -> bool {
        self.members.iter().any(|m| m.std_dev == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedMoments {
    pub mu: f64,
    pub total_var: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
}

/// Mean and variance split of the calibrated model over the world.
pub fn calibrated_moments(world: &FiniteWorld) -> CalibratedMoments {
    let mu = world.expect(|m| m.mean);
    let aleatoric = world.expect(Member::variance);
    let epistemic = world.expect(|m| m.mean * m.mean) - mu * mu;
    CalibratedMoments {
        mu,
        total_var: aleatoric + epistemic,
        aleatoric,
        epistemic,
    }
}

/// Covariance between the two answers of the calibrated pair model,
/// `E[Y1 Y2] - E[Y1] E[Y2]`.
pub fn calibrated_pair_covariance(world: &FiniteWorld) -> f64 {
    // Given the latent input, Y1 and Y2 are independent, so E[Y1 Y2 | x'] = m^2.
    let e_y1y2 = world.expect(|m| m.mean * m.mean);
    let e_y1 = world.expect(|m| m.mean);
    let e_y2 = world.expect(|m| m.mean);
    e_y1y2 - e_y1 * e_y2
}

/// Answer covariance of a pair model calibrated on couples (`y2 = y1`): the
/// pair collapses onto the diagonal and the covariance is the total variance.
pub fn zigzag_covariance(world: &FiniteWorld) -> f64 {
    let mu = world.expect(|m| m.mean);
    world.expect(|m| m.variance() + m.mean * m.mean) - mu * mu
}

/// Uniform trapezoid grid on `[lo, hi]` with `n` nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl QuadratureGrid {
    pub const MIN_NODES: usize = 256;

    /// Grid spanning every member's mean plus or minus `k` standard deviations.
    pub fn covering(world: &FiniteWorld, k: f64, n: usize) -> Self {
        let lo = world
            .members
            .iter()
            .map(|m| m.mean - k * m.std_dev)
            .fold(f64::INFINITY, f64::min);
        let hi = world
            .members
            .iter()
            .map(|m| m.mean + k * m.std_dev)
            .fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi - lo < 1.0 { 0.5 } else { 0.0 };
        Self {
            lo: lo - pad,
            hi: hi + pad,
            n,
        }
    }

    fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n - 1) as f64
    }

    fn nodes(&self) -> Vec<f64> {
        let h = self.step();
        (0..self.n).map(|i| self.lo + i as f64 * h).collect()
    }

    fn weights(&self) -> Vec<f64> {
        let h = self.step();
        let mut w = vec![h; self.n];
        w[0] *= 0.5;
        w[self.n - 1] *= 0.5;
        w
    }
}

/// Checks a grid against a world: node count and captured mass.
fn check_grid(world: &FiniteWorld, grid: &QuadratureGrid) -> Result<()> {
    if grid.n < QuadratureGrid::MIN_NODES {
        return Err(input(format!(
            "quadrature needs at least {} nodes per axis, got {}",
            QuadratureGrid::MIN_NODES,
            grid.n
        )));
    }
    if !(grid.hi > grid.lo) {
        return Err(input("quadrature grid needs hi > lo"));
    }
    if world.has_point_mass() {
        return Err(input("members with zero std_dev have no density to integrate"));
    }
    let mass: f64 = world.expect(|m| {
        let d = Normal::new(m.mean, m.std_dev).expect("validated member");
        d.cdf(grid.hi) - d.cdf(grid.lo)
    });
    if mass < 1.0 - 1e-6 {
        return Err(Error::Precision(format!(
            "grid captures only {mass} of the mixture mass"
        )));
    }
    Ok(())
}

/// Double trapezoid quadrature of
/// `[p(y1, y2) - p(y1) p(y2)] * y1 * y2` over `grid x grid`.
pub fn covariance_operator_integral(world: &FiniteWorld, grid: &QuadratureGrid) -> Result<f64> {
    check_grid(world, grid)?;
    let ys = grid.nodes();
    let ws = grid.weights();
    // Member densities at every node; the pair density is a sum of outer products.
    let dens: Vec<Vec<f64>> = world
        .members
        .iter()
        .map(|m| ys.iter().map(|&y| m.density(y)).collect())
        .collect();
    let marginal: Vec<f64> = (0..grid.n)
        .map(|k| world.members.iter().zip(&dens).map(|(m, d)| m.weight * d[k]).sum())
        .collect();
    let mut total = 0.0;
    for k in 0..grid.n {
        let mut row = 0.0;
        for l in 0..grid.n {
            let joint: f64 = world
                .members
                .iter()
                .zip(&dens)
                .map(|(m, d)| m.weight * d[k] * d[l])
                .sum();
            row += ws[l] * ys[l] * (joint - marginal[k] * marginal[l]);
        }
        total += ws[k] * ys[k] * row;
    }
    Ok(total)
}

/// L1 distance between the y1-marginal of the pair density (integrated over
/// y2 on the grid) and the single-answer mixture density.
pub fn marginal_calibration_l1(world: &FiniteWorld, grid: &QuadratureGrid) -> Result<f64> {
    check_grid(world, grid)?;
    let ys = grid.nodes();
    let ws = grid.weights();
    let dens: Vec<Vec<f64>> = world
        .members
        .iter()
        .map(|m| ys.iter().map(|&y| m.density(y)).collect())
        .collect();
    // The pair density factorizes per member, so integrating out y2 only needs
    // each member's numerical mass on the grid.
    let masses: Vec<f64> = dens
        .iter()
        .map(|d| d.iter().zip(&ws).map(|(p, w)| p * w).sum())
        .collect();
    let l1 = (0..grid.n)
        .map(|k| {
            let (mut integrated, mut single) = (0.0, 0.0);
            for ((m, d), mass) in world.members.iter().zip(&dens).zip(&masses) {
                integrated += m.weight * d[k] * mass;
                single += m.weight * d[k];
            }
            ws[k] * (integrated - single).abs()
        })
        .sum();
    Ok(l1)
}

/// Convex functions for generalized variances.
///
/// Catalog entries pair with `f'(s, t) = g(s) g(t)` where `g^2 = f`:
/// `g(t) = t` (square), `e^(t/2)` (exp), `|t|^(p/2)` (abs-power). A custom `f`
/// pairs with `f'(s, t) = (f(s) + f(t)) / 2`. Either way `f'(t, t) = f(t)`.
#[derive(Debug, Clone, Copy)]
pub enum FFunction {
    Square,
    Exp,
    AbsPower(f64),
    Custom(fn(f64) -> f64),
}

impl FFunction {
    pub fn f(&self, t: f64) -> f64 {
        match self {
            Self::Square => t * t,
            Self::Exp => t.exp(),
            Self::AbsPower(p) => t.abs().powf(*p),
            Self::Custom(f) => f(t),
        }
    }

    pub fn f_pair(&self, s: f64, t: f64) -> f64 {
        match self {
            Self::Custom(f) => 0.5 * (f(s) + f(t)),
            _ => self.root(s) * self.root(t),
        }
    }

    fn root(&self, t: f64) -> f64 {
        match self {
            Self::Square => t,
            Self::Exp => (0.5 * t).exp(),
            Self::AbsPower(p) => t.abs().powf(0.5 * p),
            Self::Custom(_) => unreachable!("custom functions have no product root"),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Square => "square".into(),
            Self::Exp => "exp".into(),
            Self::AbsPower(p) => format!("abs_power_{p}"),
            Self::Custom(_) => "custom".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FVariance {
    /// `V^f` of the ground-truth means.
    pub vf_of_means: f64,
    /// `C^f` between the calibrated pair model's two answers.
    pub model_f_cov: f64,
}

impl FVariance {
    pub fn slack(&self) -> f64 {
        self.model_f_cov - self.vf_of_means
    }
}

/// `V^f[E[Y|X]]` and `C^f_theta[Y1, Y2]` over the world.
///
/// Catalog functions are integrated internally; `Custom` needs an explicit
/// `grid`.
pub fn f_variance(world: &FiniteWorld, f: FFunction, grid: Option<&QuadratureGrid>) -> Result<FVariance> {
    let mu = world.expect(|m| m.mean);
    let vf_of_means = world.expect(|m| f.f(m.mean)) - f.f(mu);
    let model_f_cov = match f {
        FFunction::Custom(h) => {
            let grid = grid.ok_or_else(|| input("a custom f needs a quadrature grid"))?;
            let e_f = member_expectations(world, |m| gaussian_expectation_on_grid(h, m, grid))?;
            world.expect_with(&e_f, |e| *e) - f.f_pair(mu, mu)
        }
        FFunction::Square => world.expect(|m| m.mean * m.mean) - mu * mu,
        FFunction::Exp => world.expect(|m| (0.5 * m.mean + m.variance() / 8.0).exp().powi(2)) - f.f_pair(mu, mu),
        FFunction::AbsPower(p) => {
            if !(p >= 1.0) {
                return Err(input("abs-power needs exponent >= 1 to be convex"));
            }
            let q = 0.5 * p;
            world.expect(|m| abs_power_expectation(m.mean, m.std_dev, q).powi(2)) - f.f_pair(mu, mu)
        }
    };
    Ok(FVariance {
        vf_of_means,
        model_f_cov,
    })
}

impl FiniteWorld {
    fn expect_with(&self, values: &[f64], g: impl Fn(&f64) -> f64) -> f64 {
        self.members.iter().zip(values).map(|(m, v)| m.weight * g(v)).sum()
    }
}

fn member_expectations(world: &FiniteWorld, e: impl Fn(&Member) -> Result<f64>) -> Result<Vec<f64>> {
    world.members.iter().map(e).collect()
}

fn gaussian_expectation_on_grid(h: fn(f64) -> f64, m: &Member, grid: &QuadratureGrid) -> Result<f64> {
    if m.std_dev == 0.0 {
        return Ok(h(m.mean));
    }
    if grid.n < 2 || !(grid.hi > grid.lo) {
        return Err(input("quadrature grid needs n >= 2 and hi > lo"));
    }
    Ok(grid
        .nodes()
        .iter()
        .zip(grid.weights())
        .map(|(&y, w)| w * h(y) * m.density(y))
        .sum())
}

/// Composite Simpson rule with `n` (even) intervals.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let c = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += c * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

fn std_normal_pdf(z: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * z * z).exp()
}

/// `E|Y|^q` for `Y ~ N(m, s^2)`.
///
/// Integrates in standard units over `[-12, 12]`. When the kink of `|t|^q`
/// falls inside, each side is integrated separately after the substitution
/// `z - z0 = u^2`, which turns `|t|^q` into the smooth `u^(2q)`.
fn abs_power_expectation(m: f64, s: f64, q: f64) -> f64 {
    const Z: f64 = 12.0;
    const N: usize = 4000;
    if s == 0.0 {
        return m.abs().powf(q);
    }
    let z0 = -m / s;
    if z0 <= -Z || z0 >= Z {
        return simpson(|z| (m + s * z).abs().powf(q) * std_normal_pdf(z), -Z, Z, N);
    }
    let side = |dir: f64, len: f64| {
        simpson(
            |u| {
                let w = u * u;
                2.0 * u * (s * w).powf(q) * std_normal_pdf(z0 + dir * w)
            },
            0.0,
            len.sqrt(),
            N,
        )
    };
    side(1.0, Z - z0) + side(-1.0, Z + z0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChebyshevCheck {
    pub radius: f64,
    pub violating_mass: f64,
    pub bound_holds: bool,
}

/// Prior mass of members whose mean lies at least `sqrt(cov / beta)` away from
/// the calibrated mean. With `cov = 0` every mean coincides with the
/// calibrated mean, and only members strictly away from it would count.
pub fn chebyshev_empirical(world: &FiniteWorld, beta: f64) -> Result<ChebyshevCheck> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(input(format!("beta {beta} outside (0, 1]")));
    }
    let mom = calibrated_moments(world);
    let radius = (mom.epistemic.max(0.0) / beta).sqrt();
    let violating_mass = world
        .members
        .iter()
        .filter(|m| {
            let d = (mom.mu - m.mean).abs();
            if radius > 0.0 {
                d >= radius
            } else {
                d > 0.0
            }
        })
        .map(|m| m.weight)
        .sum::<f64>();
    Ok(ChebyshevCheck {
        radius,
        violating_mass,
        bound_holds: violating_mass <= beta + 1e-12,
    })
}

/// Residuals of the variance-calibration identities of the calibrated pair
/// model, each computed along two independent routes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StrongCalibrationReport {
    /// `|mu_1 - mu_2|` between the two answer means.
    pub mean_symmetry: f64,
    /// `|sigma_1^2 - sigma_2^2|` between the two answer variances.
    pub variance_symmetry: f64,
    /// `|sigma^2 - (E[V] + V[E])|` with `V[E]` in centered form.
    pub decomposition: f64,
    /// `|sigma^2 - E[(mu - Y)^2]|`, the variance-calibration condition.
    pub variance_calibration: f64,
    /// `|cov_12 - V[E]|`.
    pub off_diagonal: f64,
}

impl StrongCalibrationReport {
    pub fn max_residual(&self) -> f64 {
        [
            self.mean_symmetry,
            self.variance_symmetry,
            self.decomposition,
            self.variance_calibration,
            self.off_diagonal,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

pub fn strong_variance_calibration_check(world: &FiniteWorld) -> StrongCalibrationReport {
    // Moments of the bivariate pair mixture, component by component.
    let mu1 = world.expect(|m| m.mean);
    let mu2 = world.expect(|m| m.mean);
    let second1 = world.expect(|m| m.variance() + m.mean * m.mean);
    let second2 = world.expect(|m| m.variance() + m.mean * m.mean);
    let var1 = second1 - mu1 * mu1;
    let var2 = second2 - mu2 * mu2;
    let cross = world.expect(|m| m.mean * m.mean) - mu1 * mu2;

    // Centered routes.
    let e_v = world.expect(Member::variance);
    let v_e = world.expect(|m| (m.mean - mu1).powi(2));
    let mse = world.expect(|m| m.variance() + (mu1 - m.mean).powi(2));

    StrongCalibrationReport {
        mean_symmetry: (mu1 - mu2).abs(),
        variance_symmetry: (var1 - var2).abs(),
        decomposition: (var1 - (e_v + v_e)).abs(),
        variance_calibration: (var1 - mse).abs(),
        off_diagonal: (cross - v_e).abs(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub cases: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub seed: u64,
    pub worlds: usize,
    pub suites: Vec<SuiteReport>,
    pub pass: bool,
}

/// Options for [`run_oracle_suites`].
#[derive(Debug, Clone, PartialEq)]
pub struct OracleOptions {
    pub seed: u64,
    pub worlds: usize,
    /// Worlds used by the quadrature suites, which are far more expensive.
    pub quadrature_worlds: usize,
    pub quadrature_nodes: usize,
    /// Adds a fixed offset to one suite's residuals, to check that failures
    /// are detected and named.
    pub perturb: Option<(String, f64)>,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            worlds: 1000,
            quadrature_worlds: 10,
            quadrature_nodes: 1024,
            perturb: None,
        }
    }
}

pub const SUITE_NAMES: [&str; 9] = [
    "decomposition",
    "pair_covariance",
    "zigzag",
    "strong_variance",
    "chebyshev",
    "f_variance_square",
    "f_variance_jensen",
    "covariance_operator",
    "marginal_calibration",
];

struct Tally {
    name: &'static str,
    tol: f64,
    cases: usize,
    max: f64,
    failed: bool,
}

impl Tally {
    fn new(name: &'static str, tol: f64) -> Self {
        Self {
            name,
            tol,
            cases: 0,
            max: 0.0,
            failed: false,
        }
    }

    fn record(&mut self, residual: f64) {
        self.cases += 1;
        if !(residual <= self.tol) {
            self.failed = true;
        }
        if residual.is_nan() || residual > self.max {
            self.max = residual;
        }
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            suite: self.name.to_string(),
            cases: self.cases,
            max_residual: self.max,
            tolerance: self.tol,
            pass: !self.failed,
        }
    }
}

/// Runs every identity suite over seeded random worlds.
pub fn run_oracle_suites(opts: &OracleOptions) -> Result<OracleReport> {
    if opts.worlds == 0 {
        return Err(input("n_worlds must be at least 1"));
    }
    if let Some((name, _)) = &opts.perturb {
        if !SUITE_NAMES.contains(&name.as_str()) {
            return Err(input(format!("unknown suite '{name}'")));
        }
    }
    let bump = |name: &str| match &opts.perturb {
        Some((n, d)) if n == name => *d,
        _ => 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let worlds: Vec<FiniteWorld> = (0..opts.worlds).map(|_| FiniteWorld::random(&mut rng)).collect();

    let mut decomposition = Tally::new("decomposition", 1e-12);
    let mut pair = Tally::new("pair_covariance", 1e-12);
    let mut zigzag = Tally::new("zigzag", 1e-12);
    let mut strong = Tally::new("strong_variance", 1e-12);
    let mut cheb = Tally::new("chebyshev", 0.0);
    let mut f_square = Tally::new("f_variance_square", 1e-12);
    let mut jensen = Tally::new("f_variance_jensen", 1e-9);
    for w in &worlds {
        let mom = calibrated_moments(w);
        let mixture_var = w.expect(|m| m.variance() + m.mean * m.mean) - mom.mu * mom.mu;
        decomposition.record((mixture_var - (mom.aleatoric + mom.epistemic)).abs() + bump("decomposition"));
        pair.record((calibrated_pair_covariance(w) - mom.epistemic).abs() + bump("pair_covariance"));
        zigzag.record((zigzag_covariance(w) - mom.total_var).abs() + bump("zigzag"));
        strong.record(strong_variance_calibration_check(w).max_residual() + bump("strong_variance"));
        for beta in [0.1, 0.25, 0.5] {
            let c = chebyshev_empirical(w, beta)?;
            cheb.record((c.violating_mass - beta - 1e-12).max(0.0) + bump("chebyshev"));
        }
        let sq = f_variance(w, FFunction::Square, None)?;
        f_square.record((sq.model_f_cov - calibrated_pair_covariance(w)).abs() + bump("f_variance_square"));
        for f in [FFunction::Exp, FFunction::AbsPower(3.0)] {
            jensen.record((-f_variance(w, f, None)?.slack()).max(0.0) + bump("f_variance_jensen"));
        }
    }

    let mut quad = Tally::new("covariance_operator", 1e-3);
    let mut marginal = Tally::new("marginal_calibration", 1e-8);
    for _ in 0..opts.quadrature_worlds {
        let w = FiniteWorld::random_with_std_range(&mut rng, 0.1, 2.0);
        let grid = QuadratureGrid::covering(&w, 10.0, opts.quadrature_nodes);
        let exact = calibrated_pair_covariance(&w);
        let got = covariance_operator_integral(&w, &grid)?;
        quad.record((got - exact).abs() / exact.abs().max(1e-3) + bump("covariance_operator"));
        marginal.record(marginal_calibration_l1(&w, &grid)? + bump("marginal_calibration"));
    }

    let suites: Vec<SuiteReport> = [decomposition, pair, zigzag, strong, cheb, f_square, jensen, quad, marginal]
        .into_iter()
        .map(Tally::finish)
        .collect();
    let pass = suites.iter().all(|s| s.pass);
    Ok(OracleReport {
        seed: opts.seed,
        worlds: opts.worlds,
        suites,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point() -> FiniteWorld {
        FiniteWorld::from_triples(&[(0.5, 1.0, 0.5), (0.5, 3.0, 0.5)]).unwrap()
    }

    #[test]
    fn world_validation() {
        assert!(FiniteWorld::new(vec![]).is_err());
        assert!(FiniteWorld::from_triples(&[(0.5, 0.0, 1.0)]).is_err());
        assert!(FiniteWorld::from_triples(&[(1.0, 0.0, -1.0)]).is_err());
        assert!(FiniteWorld::from_triples(&[(0.0, 0.0, 1.0), (1.0, 0.0, 1.0)]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let w = FiniteWorld::random(&mut rng);
            assert!(FiniteWorld::new(w.members().to_vec()).is_ok());
        }
    }

    #[test]
    fn moments_examples() {
        let m = calibrated_moments(&FiniteWorld::from_triples(&[(1.0, 2.5, 0.3)]).unwrap());
        assert_eq!((m.mu, m.aleatoric, m.epistemic), (2.5, 0.09, 0.0));
        assert!((m.total_var - 0.09).abs() < 1e-15);

        let m = calibrated_moments(&two_point());
        assert_eq!((m.mu, m.aleatoric, m.epistemic, m.total_var), (2.0, 0.25, 1.0, 1.25));

        let flat = FiniteWorld::from_triples(&[(0.2, 1.5, 0.1), (0.3, 1.5, 1.0), (0.5, 1.5, 0.0)]).unwrap();
        assert_eq!(calibrated_moments(&flat).epistemic, 0.0);
        assert_eq!(calibrated_pair_covariance(&flat), 0.0);
    }

    #[test]
    fn pair_and_zigzag_examples() {
        assert_eq!(calibrated_pair_covariance(&two_point()), 1.0);
        let w = FiniteWorld::from_triples(&[(0.25, 0.0, 0.0), (0.75, 4.0, 0.0)]).unwrap();
        assert_eq!(calibrated_pair_covariance(&w), 3.0);
        assert_eq!(zigzag_covariance(&w), calibrated_pair_covariance(&w));
        assert_eq!(zigzag_covariance(&two_point()), 1.25);
        let single = FiniteWorld::from_triples(&[(1.0, -3.0, 0.7)]).unwrap();
        assert!((zigzag_covariance(&single) - 0.49).abs() < 1e-14);
    }

    #[test]
    fn quadrature_examples() {
        let grid = QuadratureGrid {
            lo: -6.0,
            hi: 10.0,
            n: 1024,
        };
        let v = covariance_operator_integral(&two_point(), &grid).unwrap();
        assert!((v - 1.0).abs() < 1e-3);

        let single = FiniteWorld::from_triples(&[(1.0, 2.0, 1.0)]).unwrap();
        assert!(covariance_operator_integral(&single, &grid).unwrap().abs() < 1e-6);

        let a = 1.7;
        let sym = FiniteWorld::from_triples(&[(0.5, -a, 0.6), (0.5, a, 0.6)]).unwrap();
        let g = QuadratureGrid { lo: -8.0, hi: 8.0, n: 1024 };
        assert!((covariance_operator_integral(&sym, &g).unwrap() - a * a).abs() < 1e-3 * a * a);
    }

    #[test]
    fn quadrature_rejects_bad_grids() {
        let w = two_point();
        let narrow = QuadratureGrid { lo: 0.0, hi: 4.0, n: 512 };
        assert!(matches!(covariance_operator_integral(&w, &narrow), Err(Error::Precision(_))));
        let coarse = QuadratureGrid { lo: -6.0, hi: 10.0, n: 100 };
        assert!(matches!(covariance_operator_integral(&w, &coarse), Err(Error::Input(_))));
        let dirac = FiniteWorld::from_triples(&[(1.0, 0.0, 0.0)]).unwrap();
        let wide = QuadratureGrid { lo: -6.0, hi: 6.0, n: 512 };
        assert!(covariance_operator_integral(&dirac, &wide).is_err());
    }

    #[test]
    fn quadrature_error_shrinks_as_grid_refines() {
        let w = FiniteWorld::from_triples(&[(0.3, 0.0, 0.025), (0.7, 4.0, 0.03)]).unwrap();
        let exact = calibrated_pair_covariance(&w);
        let errs: Vec<f64> = [256, 512, 1024]
            .iter()
            .map(|&n| {
                let g = QuadratureGrid { lo: -6.0, hi: 10.0, n };
                (covariance_operator_integral(&w, &g).unwrap() - exact).abs()
            })
            .collect();
        assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
        assert!(errs[2] < 1e-3 * exact);
    }

    #[test]
    fn marginal_of_pair_is_single_mixture() {
        let w = two_point();
        let g = QuadratureGrid::covering(&w, 10.0, 512);
        assert!(marginal_calibration_l1(&w, &g).unwrap() < 1e-8);
    }

    #[test]
    fn f_variance_examples() {
        let w = two_point();
        let sq = f_variance(&w, FFunction::Square, None).unwrap();
        assert_eq!(sq.model_f_cov, calibrated_pair_covariance(&w));
        assert_eq!(sq.vf_of_means, sq.model_f_cov);

        let e = std::f64::consts::E;
        let dirac = FiniteWorld::from_triples(&[(0.5, 1.0, 0.0), (0.5, 3.0, 0.0)]).unwrap();
        let ex = f_variance(&dirac, FFunction::Exp, None).unwrap();
        assert!((ex.vf_of_means - ((e + e.powi(3)) / 2.0 - e * e)).abs() < 1e-12);
        assert!((ex.vf_of_means - 4.0129).abs() < 1e-4);

        let flat = FiniteWorld::from_triples(&[(0.5, 0.7, 0.0), (0.5, 0.7, 0.0)]).unwrap();
        for f in [FFunction::Square, FFunction::Exp, FFunction::AbsPower(3.0)] {
            let v = f_variance(&flat, f, None).unwrap();
            assert!(v.vf_of_means.abs() < 1e-15 && v.model_f_cov.abs() < 1e-12, "{f:?} {v:?}");
        }
    }

    #[test]
    fn f_pair_matches_f_on_the_diagonal() {
        let fs = [
            FFunction::Square,
            FFunction::Exp,
            FFunction::AbsPower(3.0),
            FFunction::AbsPower(1.5),
            FFunction::Custom(f64::cosh),
        ];
        for f in fs {
            for i in 0..=200 {
                let t = -10.0 + 0.1 * i as f64;
                let (a, b) = (f.f_pair(t, t), f.f(t));
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{} at {t}", f.name());
            }
        }
    }

    #[test]
    fn abs_power_expectation_matches_closed_forms() {
        // E|Y| for N(m, s^2), folded-normal mean evaluated in extended precision.
        let cases = [
            (0.0, 1.0, 0.797_884_560_802_865_4),
            (0.3, 0.5, 0.468_672_732_241_755_54),
            (-2.0, 0.1, 2.0),
            (4.0, 2.0, 4.033_962_810_467_319),
            (1e-3, 1e-4, 1e-3),
        ];
        for (m, s, exact) in cases {
            let got = abs_power_expectation(m, s, 1.0);
            assert!((got - exact).abs() < 1e-13 * exact, "{m} {s}: {got} vs {exact}");
        }
        // E Y^2 = m^2 + s^2.
        for (m, s) in [(0.0, 1.0), (0.05, 0.3), (3.0, 1.5)] {
            assert!((abs_power_expectation(m, s, 2.0) - (m * m + s * s)).abs() < 1e-11);
        }
    }

    #[test]
    fn custom_f_needs_a_grid() {
        let w = two_point();
        let f = FFunction::Custom(|t: f64| t * t);
        assert!(f_variance(&w, f, None).is_err());
        let g = QuadratureGrid::covering(&w, 10.0, 2001);
        let v = f_variance(&w, f, Some(&g)).unwrap();
        // (f(s) + f(t)) / 2 pairing gives the total variance.
        assert!((v.model_f_cov - 1.25).abs() < 1e-9);
        assert!((v.vf_of_means - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chebyshev_examples() {
        let w = two_point();
        let c = chebyshev_empirical(&w, 0.5).unwrap();
        assert!((c.radius - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.violating_mass, 0.0);
        assert!(c.bound_holds);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let w = FiniteWorld::random(&mut rng);
            assert!(chebyshev_empirical(&w, 1.0).unwrap().bound_holds);
        }
        assert!(chebyshev_empirical(&w, 0.0).is_err());
    }

    #[test]
    fn strong_calibration_examples() {
        assert!(strong_variance_calibration_check(&two_point()).max_residual() < 1e-12);
        let single = FiniteWorld::from_triples(&[(1.0, 0.4, 0.9)]).unwrap();
        assert_eq!(strong_variance_calibration_check(&single).max_residual(), 0.0);
    }

    #[test]
    fn suites_pass_and_detect_perturbation() {
        let opts = OracleOptions {
            worlds: 200,
            quadrature_worlds: 2,
            quadrature_nodes: 512,
            ..Default::default()
        };
        let r = run_oracle_suites(&opts).unwrap();
        assert!(r.pass, "{r:?}");
        let bad = run_oracle_suites(&OracleOptions {
            perturb: Some(("zigzag".into(), 1e-6)),
            ..opts.clone()
        })
        .unwrap();
        assert!(!bad.pass);
        let failed: Vec<_> = bad.suites.iter().filter(|s| !s.pass).map(|s| s.suite.as_str()).collect();
        assert_eq!(failed, ["zigzag"]);
        assert!(run_oracle_suites(&OracleOptions { worlds: 0, ..opts }).is_err());
    }
}
