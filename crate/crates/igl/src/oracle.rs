//! Exact brute-force information quantities on small enumerable instances,
//! plus the finite-difference gradient checker.
//!
//! Everything here is computed by direct summation over probability tables
//! (no sampling), with Kahan compensation on the accumulators. This module
//! is the ground truth that the sampled estimators elsewhere in the crate
//! are tested against.

use thiserror::Error;

use crate::fdiv::{DvForm, FDivergence};
use crate::trainer::InputMode;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("probability table invalid: {0}")]
    InvalidTable(String),

    #[error("grid search space too large: {size} tables (limit {limit})")]
    SearchSpace { size: f64, limit: f64 },

    #[error("non-finite function evaluation while perturbing coordinate {coord}")]
    NonFiniteEval { coord: usize },

    #[error("decoder table does not cover the joint support: {0}")]
    DecoderCoverage(String),
}

/// Compensated accumulator.
#[derive(Default, Clone, Copy)]
struct Kahan {
    sum: f64,
    carry: f64,
}

impl Kahan {
    fn add(&mut self, v: f64) {
        let y = v - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<(), OracleError> {
    if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(OracleError::InvalidTable(format!("{what} has a negative or non-finite entry")));
    }
    let mut total = Kahan::default();
    p.iter().for_each(|&v| total.add(v));
    if (total.value() - 1.0).abs() > 1e-12 {
        return Err(OracleError::InvalidTable(format!(
            "{what} sums to {} (expected 1 within 1e-12)",
            total.value()
        )));
    }
    Ok(())
}

/// Joint distribution over a pair of finite variables.
#[derive(Debug, Clone)]
pub struct Joint2 {
    pub n1: usize,
    pub n2: usize,
    pub p: Vec<f64>,
}

impl Joint2 {
    pub fn new(n1: usize, n2: usize, p: Vec<f64>) -> Result<Self, OracleError> {
        if p.len() != n1 * n2 {
            return Err(OracleError::InvalidTable(format!(
                "{} entries for a {n1}x{n2} joint",
                p.len()
            )));
        }
        check_distribution(&p, "pair joint")?;
        Ok(Joint2 { n1, n2, p })
    }

    fn at(&self, i: usize, j: usize) -> f64 {
        self.p[i * self.n2 + j]
    }
}

/// Joint distribution over a triple; the third axis is the conditioning
/// variable in [`exact_f_cmi`].
#[derive(Debug, Clone)]
pub struct Joint3 {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub p: Vec<f64>,
}

impl Joint3 {
    pub fn new(n1: usize, n2: usize, n3: usize, p: Vec<f64>) -> Result<Self, OracleError> {
        if p.len() != n1 * n2 * n3 {
            return Err(OracleError::InvalidTable(format!(
                "{} entries for a {n1}x{n2}x{n3} joint",
                p.len()
            )));
        }
        check_distribution(&p, "triple joint")?;
        Ok(Joint3 { n1, n2, n3, p })
    }

    fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.p[(i * self.n2 + j) * self.n3 + k]
    }
}

/// `D_f(P || Q)` between two distributions on the same finite space, with
/// the `0 * f(0/0) := 0` convention.
pub fn exact_f_divergence(p: &[f64], q: &[f64], f: FDivergence) -> f64 {
    assert_eq!(p.len(), q.len(), "distributions live on different spaces");
    let mut acc = Kahan::default();
    for (&pi, &qi) in p.iter().zip(q) {
        if qi == 0.0 {
            // Absolute continuity is assumed by every caller in this crate;
            // a zero-mass cell carries no mass of P either.
            debug_assert!(pi == 0.0, "P not absolutely continuous w.r.t. Q");
            continue;
        }
        acc.add(qi * f.generator(pi / qi));
    }
    acc.value()
}

/// `I_f(Z1; Z2)`: divergence of the joint from the product of marginals.
pub fn exact_f_mi(joint: &Joint2, f: FDivergence) -> f64 {
    let mut m1 = vec![0.0; joint.n1];
    let mut m2 = vec![0.0; joint.n2];
    for i in 0..joint.n1 {
        for j in 0..joint.n2 {
            let v = joint.at(i, j);
            m1[i] += v;
            m2[j] += v;
        }
    }
    let mut acc = Kahan::default();
    for i in 0..joint.n1 {
        for j in 0..joint.n2 {
            let q = m1[i] * m2[j];
            if q == 0.0 {
                continue;
            }
            acc.add(q * f.generator(joint.at(i, j) / q));
        }
    }
    acc.value()
}

/// `I_f(Z1; Z2 | Z3)`: expectation over the third axis of per-slice
/// [`exact_f_mi`]. Zero-probability slices contribute nothing.
pub fn exact_f_cmi(joint: &Joint3, f: FDivergence) -> f64 {
    let mut acc = Kahan::default();
    for k in 0..joint.n3 {
        let mut pz3 = Kahan::default();
        for i in 0..joint.n1 {
            for j in 0..joint.n2 {
                pz3.add(joint.at(i, j, k));
            }
        }
        let pz3 = pz3.value();
        if pz3 == 0.0 {
            continue;
        }
        let mut slice = Vec::with_capacity(joint.n1 * joint.n2);
        for i in 0..joint.n1 {
            for j in 0..joint.n2 {
                slice.push(joint.at(i, j, k) / pz3);
            }
        }
        let sliced = Joint2 { n1: joint.n1, n2: joint.n2, p: slice };
        acc.add(pz3 * exact_f_mi(&sliced, f));
    }
    acc.value()
}

/// Explicit probability table over `(X, A, R, Y)` with binary `R`.
///
/// Index layout is `((x * na + a) * 2 + r) * ny + y`.
#[derive(Debug, Clone)]
pub struct DiscreteJoint {
    pub nx: usize,
    pub na: usize,
    pub ny: usize,
    p: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(nx: usize, na: usize, ny: usize, p: Vec<f64>) -> Result<Self, OracleError> {
        if p.len() != nx * na * 2 * ny {
            return Err(OracleError::InvalidTable(format!(
                "{} entries for a {nx}x{na}x2x{ny} joint",
                p.len()
            )));
        }
        check_distribution(&p, "xary joint")?;
        Ok(DiscreteJoint { nx, na, ny, p })
    }

    pub fn prob(&self, x: usize, a: usize, r: usize, y: usize) -> f64 {
        self.p[((x * self.na + a) * 2 + r) * self.ny + y]
    }

    pub fn table(&self) -> &[f64] {
        &self.p
    }

    /// Replace the reward axis with the decoded reward: the original `R` is
    /// marginalized out and `R_psi ~ Bernoulli(psi)` is attached analytically.
    pub fn with_decoder(&self, decoder: &DecoderTable) -> Result<DiscreteJoint, OracleError> {
        decoder.check_coverage(self)?;
        let mut q = vec![0.0; self.p.len()];
        for x in 0..self.nx {
            for a in 0..self.na {
                for y in 0..self.ny {
                    let mass = self.prob(x, a, 0, y) + self.prob(x, a, 1, y);
                    if mass == 0.0 {
                        continue;
                    }
                    let psi = decoder.prob_r1(x, a, y);
                    q[((x * self.na + a) * 2 + 1) * self.ny + y] = mass * psi;
                    q[((x * self.na + a) * 2) * self.ny + y] = mass * (1.0 - psi);
                }
            }
        }
        Ok(DiscreteJoint { nx: self.nx, na: self.na, ny: self.ny, p: q })
    }

    /// `I_f(Y; X,A | R)` with `(X, A)` merged into one axis.
    pub fn cmi_y_xa_given_r(&self, f: FDivergence) -> f64 {
        let nxa = self.nx * self.na;
        let mut p = vec![0.0; self.ny * nxa * 2];
        for x in 0..self.nx {
            for a in 0..self.na {
                for r in 0..2 {
                    for y in 0..self.ny {
                        p[(y * nxa + x * self.na + a) * 2 + r] = self.prob(x, a, r, y);
                    }
                }
            }
        }
        exact_f_cmi(&Joint3 { n1: self.ny, n2: nxa, n3: 2, p }, f)
    }

    /// `I_f(Y; R | X,A)`.
    pub fn cmi_y_r_given_xa(&self, f: FDivergence) -> f64 {
        let nxa = self.nx * self.na;
        let mut p = vec![0.0; self.ny * 2 * nxa];
        for x in 0..self.nx {
            for a in 0..self.na {
                for r in 0..2 {
                    for y in 0..self.ny {
                        p[(y * 2 + r) * nxa + x * self.na + a] = self.prob(x, a, r, y);
                    }
                }
            }
        }
        exact_f_cmi(&Joint3 { n1: self.ny, n2: 2, n3: nxa, p }, f)
    }

    /// `I_f(X,A; R)`.
    pub fn mi_xa_r(&self, f: FDivergence) -> f64 {
        let nxa = self.nx * self.na;
        let mut p = vec![0.0; nxa * 2];
        for x in 0..self.nx {
            for a in 0..self.na {
                for r in 0..2 {
                    for y in 0..self.ny {
                        p[(x * self.na + a) * 2 + r] += self.prob(x, a, r, y);
                    }
                }
            }
        }
        exact_f_mi(&Joint2 { n1: nxa, n2: 2, p }, f)
    }

    /// `I_f(Y; R)`.
    pub fn mi_y_r(&self, f: FDivergence) -> f64 {
        let mut p = vec![0.0; self.ny * 2];
        for x in 0..self.nx {
            for a in 0..self.na {
                for r in 0..2 {
                    for y in 0..self.ny {
                        p[y * 2 + r] += self.prob(x, a, r, y);
                    }
                }
            }
        }
        exact_f_mi(&Joint2 { n1: self.ny, n2: 2, p }, f)
    }

    /// `I_f(Y; X,A)`.
    pub fn mi_y_xa(&self, f: FDivergence) -> f64 {
        let nxa = self.nx * self.na;
        let mut p = vec![0.0; self.ny * nxa];
        for x in 0..self.nx {
            for a in 0..self.na {
                for r in 0..2 {
                    for y in 0..self.ny {
                        p[y * nxa + x * self.na + a] += self.prob(x, a, r, y);
                    }
                }
            }
        }
        exact_f_mi(&Joint2 { n1: self.ny, n2: nxa, p }, f)
    }
}

/// Decoded-reward probability for every enumerable input.
#[derive(Debug, Clone)]
pub struct DecoderTable {
    mode: InputMode,
    nx: usize,
    na: usize,
    ny: usize,
    values: Vec<f64>,
}

impl DecoderTable {
    /// Feedback-dependent table: one entry per feedback class.
    pub fn feedback_dependent(values: Vec<f64>) -> Self {
        let ny = values.len();
        DecoderTable { mode: InputMode::Y, nx: 0, na: 0, ny, values }
    }

    /// Context-action-feedback table, `nx * na * ny` entries indexed
    /// `(x * na + a) * ny + y`.
    pub fn context_action_feedback(nx: usize, na: usize, ny: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), nx * na * ny, "table size mismatch");
        DecoderTable { mode: InputMode::Xay, nx, na, ny, values }
    }

    pub fn mode(&self) -> InputMode {
        self.mode
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn prob_r1(&self, x: usize, a: usize, y: usize) -> f64 {
        match self.mode {
            InputMode::Y => self.values[y],
            InputMode::Xay => self.values[(x * self.na + a) * self.ny + y],
        }
    }

    /// The opposite decoder `1 - psi`.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        for v in &mut out.values {
            *v = 1.0 - *v;
        }
        out
    }

    fn check_coverage(&self, joint: &DiscreteJoint) -> Result<(), OracleError> {
        let ok = match self.mode {
            InputMode::Y => self.ny >= joint.ny,
            InputMode::Xay => self.nx >= joint.nx && self.na >= joint.na && self.ny >= joint.ny,
        };
        if ok {
            Ok(())
        } else {
            Err(OracleError::DecoderCoverage(format!(
                "table covers ({}, {}, {}), joint needs ({}, {}, {})",
                self.nx, self.na, self.ny, joint.nx, joint.na, joint.ny
            )))
        }
    }
}

/// Both exact terms of the regularized objective:
/// `(I_f1(Y; X,A | R_psi), I_f2(X,A; R_psi))`.
pub fn exact_objective_terms(
    joint: &DiscreteJoint,
    decoder: &DecoderTable,
    f1: FDivergence,
    f2: FDivergence,
) -> Result<(f64, f64), OracleError> {
    let extended = joint.with_decoder(decoder)?;
    Ok((extended.cmi_y_xa_given_r(f1), extended.mi_xa_r(f2)))
}

/// `I_f1(Y; X,A | R_psi) - beta * I_f2(X,A; R_psi)` computed exactly.
pub fn exact_objective(
    joint: &DiscreteJoint,
    decoder: &DecoderTable,
    beta: f64,
    f1: FDivergence,
    f2: FDivergence,
) -> Result<f64, OracleError> {
    let (cmi, reg) = exact_objective_terms(joint, decoder, f1, f2)?;
    Ok(cmi - beta * reg)
}

/// Outcome of an exhaustive decoder-table search.
#[derive(Debug, Clone)]
pub struct GridSearch {
    pub best: DecoderTable,
    pub value: f64,
    pub cmi_at_best: f64,
    /// Every table whose objective ties the minimum within 1e-9.
    pub minimizers: Vec<DecoderTable>,
}

const GRID_LIMIT: f64 = 1e6;

/// Exhaustive search over decoder tables whose entries range over a uniform
/// grid on `[clamp_c, 1 - clamp_c]`. `clamp_c = 0` searches the unclamped
/// class, which is what realizability arguments need.
pub fn grid_minimize_objective(
    joint: &DiscreteJoint,
    beta: f64,
    resolution: usize,
    input_mode: InputMode,
    clamp_c: f64,
    f1: FDivergence,
    f2: FDivergence,
) -> Result<GridSearch, OracleError> {
    assert!(resolution >= 2, "grid needs at least two points");
    assert!((0.0..0.5).contains(&clamp_c), "clamp must lie in [0, 0.5)");
    let entries = match input_mode {
        InputMode::Y => joint.ny,
        InputMode::Xay => joint.nx * joint.na * joint.ny,
    };
    let size = (resolution as f64).powi(entries as i32);
    if size > GRID_LIMIT {
        return Err(OracleError::SearchSpace { size, limit: GRID_LIMIT });
    }

    let lo = clamp_c;
    let hi = 1.0 - clamp_c;
    let grid: Vec<f64> = (0..resolution)
        .map(|i| lo + (hi - lo) * i as f64 / (resolution - 1) as f64)
        .collect();

    let make_table = |values: Vec<f64>| match input_mode {
        InputMode::Y => DecoderTable::feedback_dependent(values),
        InputMode::Xay => {
            DecoderTable::context_action_feedback(joint.nx, joint.na, joint.ny, values)
        }
    };

    let mut odometer = vec![0usize; entries];
    let mut best: Option<GridSearch> = None;
    loop {
        let values: Vec<f64> = odometer.iter().map(|&i| grid[i]).collect();
        let table = make_table(values);
        let (cmi, reg) = exact_objective_terms(joint, &table, f1, f2)?;
        let value = cmi - beta * reg;
        match &mut best {
            None => {
                best = Some(GridSearch {
                    best: table.clone(),
                    value,
                    cmi_at_best: cmi,
                    minimizers: vec![table],
                });
            }
            Some(b) => {
                if value < b.value - 1e-9 {
                    b.best = table.clone();
                    b.value = value;
                    b.cmi_at_best = cmi;
                    b.minimizers = vec![table];
                } else if (value - b.value).abs() <= 1e-9 {
                    b.minimizers.push(table);
                }
            }
        }

        // Advance the odometer.
        let mut pos = 0;
        loop {
            if pos == entries {
                return Ok(best.unwrap());
            }
            odometer[pos] += 1;
            if odometer[pos] < resolution {
                break;
            }
            odometer[pos] = 0;
            pos += 1;
        }
    }
}

/// The variational bound `E_P[T] - E_Q[f*(T)]` with exact expectations over
/// pointwise critic values. Never exceeds `D_f(P || Q)`.
pub fn exact_variational_bound(
    p: &[f64],
    q: &[f64],
    critic: &[f64],
    f: FDivergence,
    form: DvForm,
) -> f64 {
    assert_eq!(p.len(), q.len());
    assert_eq!(p.len(), critic.len());
    let mut acc = Kahan::default();
    for i in 0..p.len() {
        acc.add(p[i] * critic[i] - q[i] * f.conjugate_with_form(form, critic[i]));
    }
    acc.value()
}

/// Comparison of an autodiff gradient against central finite differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Worst relative error over coordinates with non-negligible magnitude.
    pub max_rel: f64,
    /// Worst absolute error over near-zero coordinates.
    pub max_abs_small: f64,
    pub worst_coord: usize,
}

impl GradCheckReport {
    pub fn passes(&self, rel_tol: f64, abs_tol: f64) -> bool {
        self.max_rel < rel_tol && self.max_abs_small < abs_tol
    }
}

/// Central finite differences of `f` at `point`, coordinate by coordinate,
/// compared against the supplied autodiff gradient. Coordinates where both
/// magnitudes fall below 1e-4 are judged on absolute error.
pub fn finite_diff_gradcheck<F: Fn(&[f64]) -> f64>(
    f: F,
    point: &[f64],
    step: f64,
    autodiff_grad: &[f64],
) -> Result<GradCheckReport, OracleError> {
    assert_eq!(point.len(), autodiff_grad.len());
    assert!(step > 0.0);
    let mut report = GradCheckReport { max_rel: 0.0, max_abs_small: 0.0, worst_coord: 0 };
    let mut x = point.to_vec();
    for i in 0..point.len() {
        let orig = x[i];
        x[i] = orig + step;
        let fp = f(&x);
        x[i] = orig - step;
        let fm = f(&x);
        x[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(OracleError::NonFiniteEval { coord: i });
        }
        let fd = (fp - fm) / (2.0 * step);
        let g = autodiff_grad[i];
        let denom = g.abs().max(fd.abs());
        if denom >= 1e-4 {
            let rel = (g - fd).abs() / denom;
            if rel > report.max_rel {
                report.max_rel = rel;
                report.worst_coord = i;
            }
        } else {
            let abs = (g - fd).abs();
            if abs > report.max_abs_small {
                report.max_abs_small = abs;
                report.worst_coord = i;
            }
        }
    }
    Ok(report)
}
