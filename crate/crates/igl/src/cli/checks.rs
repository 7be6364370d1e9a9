//! Built-in exact-oracle self-checks for the `oracle-check` verb.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fdiv::{DvForm, FDivergence};
use crate::oracle::{
    exact_f_divergence, exact_f_mi, exact_variational_bound, DiscreteJoint, Joint2,
};

pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn random_distribution<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= total);
    p
}

/// Run the oracle self-checks and report one result per check.
pub fn oracle_checks() -> Vec<CheckResult> {
    let mut results = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);

    {
        let joint = Joint2::new(2, 2, vec![0.45, 0.05, 0.05, 0.45]).unwrap();
        let got = exact_f_mi(&joint, FDivergence::Kl);
        let expect = 2.0f64.ln() + 0.9 * 0.9f64.ln() + 0.1 * 0.1f64.ln();
        results.push(CheckResult {
            name: "doubly-symmetric binary source closed form",
            passed: (got - expect).abs() < 1e-9,
            detail: format!("got {got:.12}, expected {expect:.12}"),
        });
    }

    {
        let m1 = random_distribution(&mut rng, 3);
        let m2 = random_distribution(&mut rng, 4);
        let mut p = Vec::new();
        for &a in &m1 {
            for &b in &m2 {
                p.push(a * b);
            }
        }
        let joint = Joint2::new(3, 4, p).unwrap();
        let kl = exact_f_mi(&joint, FDivergence::Kl);
        let chi = exact_f_mi(&joint, FDivergence::Chi2);
        results.push(CheckResult {
            name: "independent joint has zero mutual information",
            passed: kl.abs() < 1e-12 && chi.abs() < 1e-12,
            detail: format!("kl {kl:.3e}, chi2 {chi:.3e}"),
        });
    }

    {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let joint =
                DiscreteJoint::new(2, 2, 4, random_distribution(&mut rng, 2 * 2 * 2 * 4)).unwrap();
            let lhs = joint.cmi_y_xa_given_r(FDivergence::Kl);
            let rhs = joint.cmi_y_r_given_xa(FDivergence::Kl) - joint.mi_y_r(FDivergence::Kl)
                + joint.mi_y_xa(FDivergence::Kl);
            worst = worst.max((lhs - rhs).abs());
        }
        results.push(CheckResult {
            name: "chain-rule identity on 100 random joints",
            passed: worst < 1e-9,
            detail: format!("worst residual {worst:.3e}"),
        });
    }

    {
        let mut violations = 0;
        for _ in 0..100 {
            let p = random_distribution(&mut rng, 6);
            let q = random_distribution(&mut rng, 6);
            let critic: Vec<f64> = (0..6).map(|_| rng.random_range(-10.0..10.0)).collect();
            for f in [FDivergence::Kl, FDivergence::Chi2] {
                let bound = exact_variational_bound(&p, &q, &critic, f, DvForm::Nwj);
                if bound > exact_f_divergence(&p, &q, f) + 1e-12 {
                    violations += 1;
                }
            }
        }
        results.push(CheckResult {
            name: "variational bound dominated by exact divergence",
            passed: violations == 0,
            detail: format!("{violations} violations over 200 bound evaluations"),
        });
    }

    {
        let mut worst_gap: f64 = 0.0;
        let mut violated = false;
        for f in [FDivergence::Kl, FDivergence::Chi2] {
            let mut u = 0.1;
            while u <= 10.0 {
                let mut t = -10.0;
                while t <= 10.0 {
                    if f.conjugate(t) < u * t - f.generator(u) - 1e-12 {
                        violated = true;
                    }
                    t += 0.5;
                }
                let tstar = f.derivative(u);
                worst_gap =
                    worst_gap.max((f.conjugate(tstar) - (u * tstar - f.generator(u))).abs());
                u += 0.1;
            }
        }
        results.push(CheckResult {
            name: "Fenchel-Young inequality with equality at f'(u)",
            passed: !violated && worst_gap < 1e-9,
            detail: format!("worst equality gap {worst_gap:.3e}"),
        });
    }

    results
}
