//! Discrete structural-causal-model simulator and front-door estimator.
//!
//! The graph has four nodes: an unobserved confounder `U`, a representation
//! `A`, a mediator `S`, and an outcome `Y`, factorized as
//!
//! ```text
//! P(u, a, s, y) = P(u) P(a|u) P(s|a) P(y|s,u)
//! ```
//!
//! `S` depends on `A` only, which is the structural front-door condition: the
//! `A -> S` edge is not confounded by `U`. Under that condition the
//! interventional distribution `P(y | do(a))` is identified from observational
//! quantities by the front-door adjustment
//!
//! ```text
//! P(y | do(a)) = sum_s P(s|a) * sum_a' P(y|a',s) P(a')
//! ```
//!
//! and can be checked against the truncated-factorization oracle
//!
//! ```text
//! P(y | do(a)) = sum_u P(u) * sum_s P(s|a) P(y|s,u).
//! ```
//!
//! A violating variant whose `S` mechanism also reads `U` quantifies how large
//! the estimator's error becomes when the front-door condition fails.

use ndarray::{Array1, Array2, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

use crate::error::{CoreError, Result};

/// Probability rows must sum to one within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Smallest probability kept by the random CPT generator.
pub const CPT_FLOOR: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Types
// ---------------------------------------------------------------------------

/// A CPT-parameterized causal model over `U, A, S, Y` satisfying the
/// structural front-door condition (`S` depends on `A` only).
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteScm {
    /// Distribution of the confounder, length `card_u`.
    pub p_u: Array1<f64>,
    /// `card_u x card_a` row-stochastic table.
    pub p_a_given_u: Array2<f64>,
    /// `card_a x card_s` row-stochastic table.
    pub p_s_given_a: Array2<f64>,
    /// `card_s x card_u x card_y` table, row-stochastic over the last axis.
    pub p_y_given_s_u: Array3<f64>,
}

/// Extended variant whose `S` mechanism also depends on `U`, breaking the
/// front-door condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolatingScm {
    pub p_u: Array1<f64>,
    /// `card_u x card_a`.
    pub p_a_given_u: Array2<f64>,
    /// `card_a x card_u x card_s`, row-stochastic over the last axis.
    pub p_s_given_a_u: Array3<f64>,
    /// `card_s x card_u x card_y`, row-stochastic over the last axis.
    pub p_y_given_s_u: Array3<f64>,
}

/// Exact joint distribution over `(u, a, s, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTable {
    pub values: Array4<f64>,
}

/// Observational conditional tables with `U` marginalized out — exactly the
/// three quantities the front-door formula consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalCpts {
    /// Marginal of `A`.
    pub p_a: Array1<f64>,
    /// `card_a x card_s`.
    pub p_s_given_a: Array2<f64>,
    /// `card_a x card_s x card_y`.
    pub p_y_given_a_s: Array3<f64>,
}

/// One ancestral sample from the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScmSample {
    pub u: usize,
    pub a: usize,
    pub s: usize,
    pub y: usize,
}

fn check_distribution(name: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return Err(CoreError::Precondition(format!(
            "{name}: probabilities must be finite and non-negative"
        )));
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_SUM_TOL {
        return Err(CoreError::Precondition(format!(
            "{name}: row sums to {sum}, expected 1 within {ROW_SUM_TOL}"
        )));
    }
    Ok(())
}

impl DiscreteScm {
    pub fn new(
        p_u: Array1<f64>,
        p_a_given_u: Array2<f64>,
        p_s_given_a: Array2<f64>,
        p_y_given_s_u: Array3<f64>,
    ) -> Result<Self> {
        let scm = Self {
            p_u,
            p_a_given_u,
            p_s_given_a,
            p_y_given_s_u,
        };
        scm.validate()?;
        Ok(scm)
    }

    pub fn card_u(&self) -> usize {
        self.p_u.len()
    }
    pub fn card_a(&self) -> usize {
        self.p_a_given_u.ncols()
    }
    pub fn card_s(&self) -> usize {
        self.p_s_given_a.ncols()
    }
    pub fn card_y(&self) -> usize {
        self.p_y_given_s_u.dim().2
    }

    pub fn validate(&self) -> Result<()> {
        let (u, a, s, y) = (self.card_u(), self.card_a(), self.card_s(), self.card_y());
        if u == 0 || a == 0 || s == 0 || y == 0 {
            return Err(CoreError::Precondition(
                "all cardinalities must be positive".into(),
            ));
        }
        if self.p_a_given_u.nrows() != u {
            return Err(CoreError::DimensionMismatch(format!(
                "p_a_given_u has {} rows, expected card_u = {u}",
                self.p_a_given_u.nrows()
            )));
        }
        if self.p_s_given_a.nrows() != a {
            return Err(CoreError::DimensionMismatch(format!(
                "p_s_given_a has {} rows, expected card_a = {a}",
                self.p_s_given_a.nrows()
            )));
        }
        if self.p_y_given_s_u.dim().0 != s || self.p_y_given_s_u.dim().1 != u {
            return Err(CoreError::DimensionMismatch(format!(
                "p_y_given_s_u has shape {:?}, expected ({s}, {u}, {y})",
                self.p_y_given_s_u.dim()
            )));
        }
        check_distribution("p_u", self.p_u.as_slice().unwrap())?;
        for (i, row) in self.p_a_given_u.outer_iter().enumerate() {
            check_distribution(&format!("p_a_given_u[u={i}]"), row.as_slice().unwrap())?;
        }
        for (i, row) in self.p_s_given_a.outer_iter().enumerate() {
            check_distribution(&format!("p_s_given_a[a={i}]"), row.as_slice().unwrap())?;
        }
        for si in 0..s {
            for ui in 0..u {
                let row: Vec<f64> = (0..y).map(|yi| self.p_y_given_s_u[[si, ui, yi]]).collect();
                check_distribution(&format!("p_y_given_s_u[s={si},u={ui}]"), &row)?;
            }
        }
        Ok(())
    }
}

impl ViolatingScm {
    pub fn new(
        p_u: Array1<f64>,
        p_a_given_u: Array2<f64>,
        p_s_given_a_u: Array3<f64>,
        p_y_given_s_u: Array3<f64>,
    ) -> Result<Self> {
        let scm = Self {
            p_u,
            p_a_given_u,
            p_s_given_a_u,
            p_y_given_s_u,
        };
        scm.validate()?;
        Ok(scm)
    }

    pub fn card_u(&self) -> usize {
        self.p_u.len()
    }
    pub fn card_a(&self) -> usize {
        self.p_a_given_u.ncols()
    }
    pub fn card_s(&self) -> usize {
        self.p_s_given_a_u.dim().2
    }
    pub fn card_y(&self) -> usize {
        self.p_y_given_s_u.dim().2
    }

    pub fn validate(&self) -> Result<()> {
        let (u, a, s, y) = (self.card_u(), self.card_a(), self.card_s(), self.card_y());
        if u == 0 || a == 0 || s == 0 || y == 0 {
            return Err(CoreError::Precondition(
                "all cardinalities must be positive".into(),
            ));
        }
        check_distribution("p_u", self.p_u.as_slice().unwrap())?;
        for (i, row) in self.p_a_given_u.outer_iter().enumerate() {
            check_distribution(&format!("p_a_given_u[u={i}]"), row.as_slice().unwrap())?;
        }
        if self.p_s_given_a_u.dim().0 != a || self.p_s_given_a_u.dim().1 != u {
            return Err(CoreError::DimensionMismatch(format!(
                "p_s_given_a_u has shape {:?}, expected ({a}, {u}, {s})",
                self.p_s_given_a_u.dim()
            )));
        }
        if self.p_y_given_s_u.dim().0 != s || self.p_y_given_s_u.dim().1 != u {
            return Err(CoreError::DimensionMismatch(format!(
                "p_y_given_s_u has shape {:?}, expected ({s}, {u}, {y})",
                self.p_y_given_s_u.dim()
            )));
        }
        for ai in 0..a {
            for ui in 0..u {
                let row: Vec<f64> = (0..s).map(|si| self.p_s_given_a_u[[ai, ui, si]]).collect();
                check_distribution(&format!("p_s_given_a_u[a={ai},u={ui}]"), &row)?;
            }
        }
        for si in 0..s {
            for ui in 0..u {
                let row: Vec<f64> = (0..y).map(|yi| self.p_y_given_s_u[[si, ui, yi]]).collect();
                check_distribution(&format!("p_y_given_s_u[s={si},u={ui}]"), &row)?;
            }
        }
        Ok(())
    }
}

impl JointTable {
    pub fn validate(&self) -> Result<()> {
        if self.values.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(CoreError::Precondition(
                "joint table entries must be finite and non-negative".into(),
            ));
        }
        let sum: f64 = self.values.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(CoreError::Precondition(format!(
                "joint table sums to {sum}, expected 1 within {ROW_SUM_TOL}"
            )));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

/// Exact joint distribution from the factorization.
pub fn exact_joint(scm: &DiscreteScm) -> JointTable {
    let (cu, ca, cs, cy) = (scm.card_u(), scm.card_a(), scm.card_s(), scm.card_y());
    let mut values = Array4::<f64>::zeros((cu, ca, cs, cy));
    for u in 0..cu {
        for a in 0..ca {
            for s in 0..cs {
                for y in 0..cy {
                    values[[u, a, s, y]] = scm.p_u[u]
                        * scm.p_a_given_u[[u, a]]
                        * scm.p_s_given_a[[a, s]]
                        * scm.p_y_given_s_u[[s, u, y]];
                }
            }
        }
    }
    JointTable { values }
}

/// Exact joint distribution of the violating variant.
pub fn violating_exact_joint(scm: &ViolatingScm) -> JointTable {
    let (cu, ca, cs, cy) = (scm.card_u(), scm.card_a(), scm.card_s(), scm.card_y());
    let mut values = Array4::<f64>::zeros((cu, ca, cs, cy));
    for u in 0..cu {
        for a in 0..ca {
            for s in 0..cs {
                for y in 0..cy {
                    values[[u, a, s, y]] = scm.p_u[u]
                        * scm.p_a_given_u[[u, a]]
                        * scm.p_s_given_a_u[[a, u, s]]
                        * scm.p_y_given_s_u[[s, u, y]];
                }
            }
        }
    }
    JointTable { values }
}

/// Marginalize `U` out of a joint to get the three observational tables the
/// front-door formula needs.
pub fn observational_cpts(joint: &JointTable) -> Result<ObservationalCpts> {
    let (cu, ca, cs, cy) = joint.values.dim();
    let mut p_a = Array1::<f64>::zeros(ca);
    let mut p_as = Array2::<f64>::zeros((ca, cs));
    let mut p_asy = Array3::<f64>::zeros((ca, cs, cy));
    for u in 0..cu {
        for a in 0..ca {
            for s in 0..cs {
                for y in 0..cy {
                    let v = joint.values[[u, a, s, y]];
                    p_a[a] += v;
                    p_as[[a, s]] += v;
                    p_asy[[a, s, y]] += v;
                }
            }
        }
    }
    let mut zero_cells = Vec::new();
    for a in 0..ca {
        if p_a[a] <= 0.0 {
            zero_cells.push(format!("P(A={a}) = 0"));
        }
    }
    for a in 0..ca {
        for s in 0..cs {
            if p_as[[a, s]] <= 0.0 {
                zero_cells.push(format!("P(A={a}, S={s}) = 0"));
            }
        }
    }
    if !zero_cells.is_empty() {
        return Err(CoreError::ZeroMassConditioning(zero_cells.join("; ")));
    }
    let mut p_s_given_a = Array2::<f64>::zeros((ca, cs));
    let mut p_y_given_a_s = Array3::<f64>::zeros((ca, cs, cy));
    for a in 0..ca {
        for s in 0..cs {
            p_s_given_a[[a, s]] = p_as[[a, s]] / p_a[a];
            for y in 0..cy {
                p_y_given_a_s[[a, s, y]] = p_asy[[a, s, y]] / p_as[[a, s]];
            }
        }
    }
    Ok(ObservationalCpts {
        p_a,
        p_s_given_a,
        p_y_given_a_s,
    })
}

/// Front-door adjustment: `sum_s P(s|a) * sum_a' P(y|a',s) P(a')`.
pub fn front_door(cpts: &ObservationalCpts, a: usize, y: usize) -> f64 {
    let (ca, cs, _) = cpts.p_y_given_a_s.dim();
    let mut total = 0.0;
    for s in 0..cs {
        let mut inner = 0.0;
        for a_prime in 0..ca {
            inner += cpts.p_y_given_a_s[[a_prime, s, y]] * cpts.p_a[a_prime];
        }
        total += cpts.p_s_given_a[[a, s]] * inner;
    }
    total
}

/// Truncated-factorization oracle: `sum_u P(u) sum_s P(s|a) P(y|s,u)`.
pub fn do_oracle(scm: &DiscreteScm, a: usize, y: usize) -> f64 {
    let mut total = 0.0;
    for u in 0..scm.card_u() {
        let mut inner = 0.0;
        for s in 0..scm.card_s() {
            inner += scm.p_s_given_a[[a, s]] * scm.p_y_given_s_u[[s, u, y]];
        }
        total += scm.p_u[u] * inner;
    }
    total
}

/// Truncated factorization for the violating variant:
/// `sum_u P(u) sum_s P(s|a,u) P(y|s,u)`.
pub fn violating_do_oracle(scm: &ViolatingScm, a: usize, y: usize) -> f64 {
    let mut total = 0.0;
    for u in 0..scm.card_u() {
        let mut inner = 0.0;
        for s in 0..scm.card_s() {
            inner += scm.p_s_given_a_u[[a, u, s]] * scm.p_y_given_s_u[[s, u, y]];
        }
        total += scm.p_u[u] * inner;
    }
    total
}

/// `|front_door - do_oracle|` on a model that breaks the front-door
/// condition. Expected to be positive for generically chosen CPTs.
pub fn criterion_violation_gap(scm: &ViolatingScm, a: usize, y: usize) -> Result<f64> {
    let joint = violating_exact_joint(scm);
    let cpts = observational_cpts(&joint)?;
    let fd = front_door(&cpts, a, y);
    let oracle = violating_do_oracle(scm, a, y);
    Ok((fd - oracle).abs())
}

fn sample_categorical(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if r < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Draw `n` i.i.d. ancestral samples. Deterministic for a fixed seed.
pub fn sample_scm(scm: &DiscreteScm, n: usize, seed: u64) -> Result<Vec<ScmSample>> {
    if n == 0 {
        return Err(CoreError::Precondition("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u = sample_categorical(scm.p_u.as_slice().unwrap(), &mut rng);
        let a = sample_categorical(scm.p_a_given_u.row(u).as_slice().unwrap(), &mut rng);
        let s = sample_categorical(scm.p_s_given_a.row(a).as_slice().unwrap(), &mut rng);
        let y_row: Vec<f64> = (0..scm.card_y())
            .map(|y| scm.p_y_given_s_u[[s, u, y]])
            .collect();
        let y = sample_categorical(&y_row, &mut rng);
        out.push(ScmSample { u, a, s, y });
    }
    Ok(out)
}

/// Maximum-likelihood frequency estimates of the observational tables.
///
/// `U` is ignored: it is unobserved in estimation. Unsmoothed; every
/// conditioning cell must be observed at least once or the estimate is
/// rejected with the full list of missing cells.
pub fn empirical_cpts(
    samples: &[ScmSample],
    card_a: usize,
    card_s: usize,
    card_y: usize,
) -> Result<ObservationalCpts> {
    if samples.is_empty() {
        return Err(CoreError::EmptyInput);
    }
    let n = samples.len() as f64;
    let mut count_a = vec![0u64; card_a];
    let mut count_as = Array2::<u64>::zeros((card_a, card_s));
    let mut count_asy = Array3::<u64>::zeros((card_a, card_s, card_y));
    for t in samples {
        count_a[t.a] += 1;
        count_as[[t.a, t.s]] += 1;
        count_asy[[t.a, t.s, t.y]] += 1;
    }
    let mut missing = Vec::new();
    for a in 0..card_a {
        if count_a[a] == 0 {
            missing.push(format!("A={a} never observed"));
        }
    }
    for a in 0..card_a {
        for s in 0..card_s {
            if count_as[[a, s]] == 0 {
                missing.push(format!("(A={a}, S={s}) never observed"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(CoreError::ZeroMassConditioning(missing.join("; ")));
    }
    let p_a = Array1::from_iter(count_a.iter().map(|c| *c as f64 / n));
    let mut p_s_given_a = Array2::<f64>::zeros((card_a, card_s));
    let mut p_y_given_a_s = Array3::<f64>::zeros((card_a, card_s, card_y));
    for a in 0..card_a {
        for s in 0..card_s {
            p_s_given_a[[a, s]] = count_as[[a, s]] as f64 / count_a[a] as f64;
            for y in 0..card_y {
                p_y_given_a_s[[a, s, y]] = count_asy[[a, s, y]] as f64 / count_as[[a, s]] as f64;
            }
        }
    }
    Ok(ObservationalCpts {
        p_a,
        p_s_given_a,
        p_y_given_a_s,
    })
}

// ---------------------------------------------------------------------------
// Generators and benchmark models
// ---------------------------------------------------------------------------

/// One symmetric-Dirichlet(1) row, floored at `CPT_FLOOR` and renormalized so
/// every conditioning cell stays strictly positive.
fn dirichlet_row(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len)
        .map(|_| {
            let u: f64 = rng.random();
            -(1.0 - u).ln()
        })
        .collect();
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
        if *v < CPT_FLOOR {
            *v = CPT_FLOOR;
        }
    }
    let sum: f64 = row.iter().sum();
    for v in row.iter_mut() {
        *v /= sum;
    }
    row
}

/// Random front-door SCM with strictly positive CPT entries.
pub fn random_front_door_scm(
    card_u: usize,
    card_a: usize,
    card_s: usize,
    card_y: usize,
    rng: &mut ChaCha8Rng,
) -> DiscreteScm {
    let p_u = Array1::from(dirichlet_row(card_u, rng));
    let mut p_a_given_u = Array2::<f64>::zeros((card_u, card_a));
    for u in 0..card_u {
        let row = dirichlet_row(card_a, rng);
        for a in 0..card_a {
            p_a_given_u[[u, a]] = row[a];
        }
    }
    let mut p_s_given_a = Array2::<f64>::zeros((card_a, card_s));
    for a in 0..card_a {
        let row = dirichlet_row(card_s, rng);
        for s in 0..card_s {
            p_s_given_a[[a, s]] = row[s];
        }
    }
    let mut p_y_given_s_u = Array3::<f64>::zeros((card_s, card_u, card_y));
    for s in 0..card_s {
        for u in 0..card_u {
            let row = dirichlet_row(card_y, rng);
            for y in 0..card_y {
                p_y_given_s_u[[s, u, y]] = row[y];
            }
        }
    }
    DiscreteScm {
        p_u,
        p_a_given_u,
        p_s_given_a,
        p_y_given_s_u,
    }
}

/// Random SCM with a `U -> S` edge (front-door condition broken).
pub fn random_violating_scm(
    card_u: usize,
    card_a: usize,
    card_s: usize,
    card_y: usize,
    rng: &mut ChaCha8Rng,
) -> ViolatingScm {
    let base = random_front_door_scm(card_u, card_a, card_s, card_y, rng);
    let mut p_s_given_a_u = Array3::<f64>::zeros((card_a, card_u, card_s));
    for a in 0..card_a {
        for u in 0..card_u {
            let row = dirichlet_row(card_s, rng);
            for s in 0..card_s {
                p_s_given_a_u[[a, u, s]] = row[s];
            }
        }
    }
    ViolatingScm {
        p_u: base.p_u,
        p_a_given_u: base.p_a_given_u,
        p_s_given_a_u,
        p_y_given_s_u: base.p_y_given_s_u,
    }
}

/// Fixed binary benchmark model used by hand-enumeration tests.
pub fn fd_benchmark_scm() -> DiscreteScm {
    DiscreteScm {
        p_u: Array1::from(vec![0.3, 0.7]),
        p_a_given_u: Array2::from_shape_vec((2, 2), vec![0.8, 0.2, 0.25, 0.75]).unwrap(),
        p_s_given_a: Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.15, 0.85]).unwrap(),
        p_y_given_s_u: Array3::from_shape_vec(
            (2, 2, 2),
            vec![
                0.7, 0.3, // s=0, u=0
                0.4, 0.6, // s=0, u=1
                0.2, 0.8, // s=1, u=0
                0.55, 0.45, // s=1, u=1
            ],
        )
        .unwrap(),
    }
}

/// Fixed violating benchmark with strong `U -> S` and `U -> Y` dependence.
pub fn violation_benchmark_scm() -> ViolatingScm {
    ViolatingScm {
        p_u: Array1::from(vec![0.5, 0.5]),
        p_a_given_u: Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.2, 0.8]).unwrap(),
        p_s_given_a_u: Array3::from_shape_vec(
            (2, 2, 2),
            vec![
                0.95, 0.05, // a=0, u=0
                0.20, 0.80, // a=0, u=1
                0.70, 0.30, // a=1, u=0
                0.05, 0.95, // a=1, u=1
            ],
        )
        .unwrap(),
        p_y_given_s_u: Array3::from_shape_vec(
            (2, 2, 2),
            vec![
                0.9, 0.1, // s=0, u=0
                0.3, 0.7, // s=0, u=1
                0.6, 0.4, // s=1, u=0
                0.1, 0.9, // s=1, u=1
            ],
        )
        .unwrap(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_binary_scm() -> DiscreteScm {
        DiscreteScm {
            p_u: Array1::from(vec![0.5, 0.5]),
            p_a_given_u: Array2::from_elem((2, 2), 0.5),
            p_s_given_a: Array2::from_elem((2, 2), 0.5),
            p_y_given_s_u: Array3::from_elem((2, 2, 2), 0.5),
        }
    }

    fn deterministic_scm() -> DiscreteScm {
        // U=0, A=1, S=0, Y=1 with probability one.
        let mut p_a = Array2::zeros((1, 2));
        p_a[[0, 1]] = 1.0;
        let mut p_s = Array2::zeros((2, 2));
        p_s[[0, 0]] = 1.0;
        p_s[[1, 0]] = 1.0;
        let mut p_y = Array3::zeros((2, 1, 2));
        p_y[[0, 0, 1]] = 1.0;
        p_y[[1, 0, 1]] = 1.0;
        DiscreteScm {
            p_u: Array1::from(vec![1.0]),
            p_a_given_u: p_a,
            p_s_given_a: p_s,
            p_y_given_s_u: p_y,
        }
    }

    #[test]
    fn exact_joint_deterministic_point_mass() {
        let joint = exact_joint(&deterministic_scm());
        assert_eq!(joint.values[[0, 1, 0, 1]], 1.0);
        assert!((joint.values.sum() - 1.0).abs() <= 1e-12);
        joint.validate().unwrap();
    }

    #[test]
    fn exact_joint_uniform_cells() {
        let joint = exact_joint(&uniform_binary_scm());
        for v in joint.values.iter() {
            assert!((v - 1.0 / 16.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn exact_joint_benchmark_matches_factor_products() {
        // Independent enumeration of the 16-cell table in test code.
        let scm = fd_benchmark_scm();
        let joint = exact_joint(&scm);
        let mut total = 0.0;
        for u in 0..2 {
            for a in 0..2 {
                for s in 0..2 {
                    for y in 0..2 {
                        let expected = scm.p_u[u]
                            * scm.p_a_given_u[[u, a]]
                            * scm.p_s_given_a[[a, s]]
                            * scm.p_y_given_s_u[[s, u, y]];
                        assert!((joint.values[[u, a, s, y]] - expected).abs() < 1e-15);
                        total += expected;
                    }
                }
            }
        }
        assert!((total - 1.0).abs() <= 1e-12);
        // Frozen spot checks: 0.3*0.8*0.9*0.7 and 0.7*0.75*0.85*0.45.
        assert!((joint.values[[0, 0, 0, 0]] - 0.1512).abs() < 1e-12);
        assert!((joint.values[[1, 1, 1, 1]] - 0.2008125).abs() < 1e-12);
    }

    #[test]
    fn observational_cpts_uniform_joint() {
        let joint = exact_joint(&uniform_binary_scm());
        let cpts = observational_cpts(&joint).unwrap();
        assert!((cpts.p_a[0] - 0.5).abs() < 1e-15);
        for v in cpts.p_s_given_a.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        for v in cpts.p_y_given_a_s.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn observational_cpts_deterministic_point_mass() {
        let joint = exact_joint(&deterministic_scm());
        // The A=0 branch has zero mass, so conditioning must be rejected.
        assert!(matches!(
            observational_cpts(&joint),
            Err(CoreError::ZeroMassConditioning(_))
        ));
    }

    #[test]
    fn observational_cpts_benchmark_hand_enumeration() {
        let scm = fd_benchmark_scm();
        let joint = exact_joint(&scm);
        let cpts = observational_cpts(&joint).unwrap();
        // P(A=a) = sum_u P(u) P(a|u).
        let p_a0 = 0.3 * 0.8 + 0.7 * 0.25;
        assert!((cpts.p_a[0] - p_a0).abs() < 1e-15);
        // S depends on A only, so P(s|a) equals the structural table.
        for a in 0..2 {
            for s in 0..2 {
                assert!((cpts.p_s_given_a[[a, s]] - scm.p_s_given_a[[a, s]]).abs() < 1e-12);
            }
        }
        // P(y|a,s) = sum_u P(u)P(a|u)P(y|s,u) / sum_u P(u)P(a|u).
        for a in 0..2 {
            for s in 0..2 {
                for y in 0..2 {
                    let num: f64 = (0..2)
                        .map(|u| scm.p_u[u] * scm.p_a_given_u[[u, a]] * scm.p_y_given_s_u[[s, u, y]])
                        .sum();
                    let den: f64 = (0..2).map(|u| scm.p_u[u] * scm.p_a_given_u[[u, a]]).sum();
                    assert!((cpts.p_y_given_a_s[[a, s, y]] - num / den).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn front_door_no_confounding_collapses_to_conditional() {
        // card_u = 1: all derivations collapse to P(y|a).
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let scm = random_front_door_scm(1, 3, 2, 4, &mut rng);
        let joint = exact_joint(&scm);
        let cpts = observational_cpts(&joint).unwrap();
        for a in 0..3 {
            for y in 0..4 {
                let p_y_given_a: f64 = (0..2)
                    .map(|s| cpts.p_s_given_a[[a, s]] * cpts.p_y_given_a_s[[a, s, y]])
                    .sum();
                assert!((front_door(&cpts, a, y) - p_y_given_a).abs() <= 1e-12);
                assert!((do_oracle(&scm, a, y) - p_y_given_a).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn front_door_constant_mediator_kills_causal_channel() {
        // p_s_given_a independent of a: front_door identical for all a.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut scm = random_front_door_scm(2, 3, 2, 2, &mut rng);
        let row = scm.p_s_given_a.row(0).to_owned();
        for a in 0..3 {
            scm.p_s_given_a.row_mut(a).assign(&row);
        }
        let cpts = observational_cpts(&exact_joint(&scm)).unwrap();
        for y in 0..2 {
            let v0 = front_door(&cpts, 0, y);
            for a in 1..3 {
                assert!((front_door(&cpts, a, y) - v0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn front_door_matches_do_oracle_on_benchmark() {
        let scm = fd_benchmark_scm();
        let cpts = observational_cpts(&exact_joint(&scm)).unwrap();
        for a in 0..2 {
            for y in 0..2 {
                let fd = front_door(&cpts, a, y);
                let oracle = do_oracle(&scm, a, y);
                assert!(
                    (fd - oracle).abs() <= 1e-12,
                    "a={a} y={y}: fd={fd} do={oracle}"
                );
            }
        }
    }

    #[test]
    fn front_door_identity_over_random_scms() {
        // Module-level property: 25 random SCMs of assorted cardinalities.
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for trial in 0..25 {
            let (cu, ca, cs, cy) = match trial % 3 {
                0 => (2, 2, 2, 2),
                1 => (3, 2, 4, 2),
                _ => (2, 4, 2, 3),
            };
            let scm = random_front_door_scm(cu, ca, cs, cy, &mut rng);
            scm.validate().unwrap();
            let cpts = observational_cpts(&exact_joint(&scm)).unwrap();
            for a in 0..ca {
                let mut sum_y = 0.0;
                for y in 0..cy {
                    let fd = front_door(&cpts, a, y);
                    let oracle = do_oracle(&scm, a, y);
                    assert!((fd - oracle).abs() <= 1e-10, "trial {trial}: gap too big");
                    assert!((0.0..=1.0 + 1e-12).contains(&fd));
                    sum_y += fd;
                }
                assert!((sum_y - 1.0).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn do_oracle_deterministic_chain() {
        let scm = deterministic_scm();
        // A=1 forces S=0 forces Y=1 regardless of U.
        assert_eq!(do_oracle(&scm, 1, 1), 1.0);
        assert_eq!(do_oracle(&scm, 1, 0), 0.0);
    }

    #[test]
    fn do_oracle_uniform_outcome() {
        let scm = uniform_binary_scm();
        for a in 0..2 {
            for y in 0..2 {
                assert!((do_oracle(&scm, a, y) - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn sample_scm_deterministic_model_constant_tuples() {
        let scm = deterministic_scm();
        let samples = sample_scm(&scm, 100, 5).unwrap();
        for t in samples {
            assert_eq!(
                t,
                ScmSample {
                    u: 0,
                    a: 1,
                    s: 0,
                    y: 1
                }
            );
        }
    }

    #[test]
    fn sample_scm_rejects_zero() {
        let scm = uniform_binary_scm();
        assert!(matches!(
            sample_scm(&scm, 0, 1),
            Err(CoreError::Precondition(_))
        ));
    }

    #[test]
    fn sample_scm_is_bit_reproducible() {
        let scm = fd_benchmark_scm();
        let a = sample_scm(&scm, 1000, 42).unwrap();
        let b = sample_scm(&scm, 1000, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_scm_uniform_frequencies() {
        let scm = uniform_binary_scm();
        let samples = sample_scm(&scm, 100_000, 7).unwrap();
        let mut counts = [[[[0usize; 2]; 2]; 2]; 2];
        for t in &samples {
            counts[t.u][t.a][t.s][t.y] += 1;
        }
        for u in 0..2 {
            for a in 0..2 {
                for s in 0..2 {
                    for y in 0..2 {
                        let freq = counts[u][a][s][y] as f64 / samples.len() as f64;
                        assert!(
                            (freq - 1.0 / 16.0).abs() < 0.01,
                            "cell ({u},{a},{s},{y}) freq {freq}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn empirical_cpts_single_tuple_point_mass() {
        let samples = vec![ScmSample {
            u: 0,
            a: 0,
            s: 0,
            y: 1,
        }];
        // With cardinality 1 for A and S the single tuple covers every cell.
        let cpts = empirical_cpts(&samples, 1, 1, 2).unwrap();
        assert_eq!(cpts.p_a[0], 1.0);
        assert_eq!(cpts.p_y_given_a_s[[0, 0, 1]], 1.0);
        assert_eq!(cpts.p_y_given_a_s[[0, 0, 0]], 0.0);
    }

    #[test]
    fn empirical_cpts_reports_missing_cells() {
        let samples = vec![
            ScmSample {
                u: 0,
                a: 0,
                s: 0,
                y: 0,
            },
            ScmSample {
                u: 0,
                a: 0,
                s: 1,
                y: 0,
            },
        ];
        let err = empirical_cpts(&samples, 2, 2, 2).unwrap_err();
        match err {
            CoreError::ZeroMassConditioning(msg) => {
                assert!(msg.contains("A=1"));
                assert!(msg.contains("(A=1, S=0)"));
            }
            other => panic!("expected ZeroMassConditioning, got {other:?}"),
        }
    }

    #[test]
    fn empirical_cpts_exhaustive_uniform() {
        // Equally weighted exhaustive enumeration of a uniform SCM.
        let mut samples = Vec::new();
        for u in 0..2 {
            for a in 0..2 {
                for s in 0..2 {
                    for y in 0..2 {
                        samples.push(ScmSample { u, a, s, y });
                    }
                }
            }
        }
        let cpts = empirical_cpts(&samples, 2, 2, 2).unwrap();
        for v in cpts.p_s_given_a.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        for v in cpts.p_y_given_a_s.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn empirical_estimate_converges_on_benchmark() {
        let scm = fd_benchmark_scm();
        let exact = observational_cpts(&exact_joint(&scm)).unwrap();
        let samples = sample_scm(&scm, 100_000, 9).unwrap();
        let est = empirical_cpts(&samples, 2, 2, 2).unwrap();
        for a in 0..2 {
            assert!((est.p_a[a] - exact.p_a[a]).abs() < 0.02);
            for s in 0..2 {
                assert!((est.p_s_given_a[[a, s]] - exact.p_s_given_a[[a, s]]).abs() < 0.02);
                for y in 0..2 {
                    assert!(
                        (est.p_y_given_a_s[[a, s, y]] - exact.p_y_given_a_s[[a, s, y]]).abs()
                            < 0.02
                    );
                }
            }
        }
    }

    #[test]
    fn violation_gap_zero_when_s_ignores_u() {
        let scm = fd_benchmark_scm();
        // Lift p_s_given_a into the violating shape without a real U edge.
        let mut p_s_given_a_u = Array3::<f64>::zeros((2, 2, 2));
        for a in 0..2 {
            for u in 0..2 {
                for s in 0..2 {
                    p_s_given_a_u[[a, u, s]] = scm.p_s_given_a[[a, s]];
                }
            }
        }
        let violating = ViolatingScm {
            p_u: scm.p_u.clone(),
            p_a_given_u: scm.p_a_given_u.clone(),
            p_s_given_a_u,
            p_y_given_s_u: scm.p_y_given_s_u.clone(),
        };
        for a in 0..2 {
            for y in 0..2 {
                assert!(criterion_violation_gap(&violating, a, y).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn violation_gap_zero_when_u_disconnected_from_y_and_a() {
        // With Y reading S only, the gap vanishes once U carries no
        // information about A (observational P(s|a) then equals the
        // interventional mediator distribution). If U still influences A,
        // the U -> S edge alone keeps the gap open: U confounds A -> S.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut scm = random_violating_scm(2, 2, 2, 2, &mut rng);
        // Make Y depend on S only.
        for s in 0..2 {
            let row: Vec<f64> = (0..2).map(|y| scm.p_y_given_s_u[[s, 0, y]]).collect();
            for u in 0..2 {
                for y in 0..2 {
                    scm.p_y_given_s_u[[s, u, y]] = row[y];
                }
            }
        }
        // Disconnect U from A as well.
        let a_row: Vec<f64> = (0..2).map(|a| scm.p_a_given_u[[0, a]]).collect();
        for u in 0..2 {
            for a in 0..2 {
                scm.p_a_given_u[[u, a]] = a_row[a];
            }
        }
        for a in 0..2 {
            for y in 0..2 {
                assert!(criterion_violation_gap(&scm, a, y).unwrap() <= 1e-12);
            }
        }
    }

    #[test]
    fn violation_gap_positive_when_u_drives_a_and_s_even_with_y_inert_in_u() {
        // Counterexample to "U disconnected from Y implies gap 0": a near
        // deterministic U -> A, U -> S chain biases observational P(s|a)
        // away from the interventional mediator distribution.
        let eps = 1e-6;
        let scm = ViolatingScm::new(
            Array1::from(vec![0.5, 0.5]),
            Array2::from_shape_vec((2, 2), vec![1.0 - eps, eps, eps, 1.0 - eps]).unwrap(),
            Array3::from_shape_vec(
                (2, 2, 2),
                vec![
                    1.0 - eps,
                    eps, // a=0, u=0
                    eps,
                    1.0 - eps, // a=0, u=1
                    1.0 - eps,
                    eps, // a=1, u=0
                    eps,
                    1.0 - eps, // a=1, u=1
                ],
            )
            .unwrap(),
            Array3::from_shape_vec(
                (2, 2, 2),
                vec![0.9, 0.1, 0.9, 0.1, 0.1, 0.9, 0.1, 0.9],
            )
            .unwrap(),
        )
        .unwrap();
        let gap = criterion_violation_gap(&scm, 0, 1).unwrap();
        assert!(gap > 0.3, "expected a large gap, got {gap}");
    }

    #[test]
    fn violation_benchmark_gap_exceeds_threshold() {
        let scm = violation_benchmark_scm();
        scm.validate().unwrap();
        let max_gap = (0..2)
            .flat_map(|a| (0..2).map(move |y| (a, y)))
            .map(|(a, y)| criterion_violation_gap(&scm, a, y).unwrap())
            .fold(0.0_f64, f64::max);
        assert!(max_gap > 0.01, "gap {max_gap} not above 0.01");
    }

    #[test]
    fn random_scm_has_strictly_positive_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..5 {
            let scm = random_front_door_scm(2, 2, 2, 2, &mut rng);
            scm.validate().unwrap();
            assert!(scm.p_u.iter().all(|p| *p >= CPT_FLOOR / 2.0));
            assert!(scm.p_a_given_u.iter().all(|p| *p > 0.0));
        }
    }
}
