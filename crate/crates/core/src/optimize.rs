//! Bounded derivative-free minimization of action-sequence objectives.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// False when the budget ran out before the simplex collapsed.
    pub converged: bool,
}

/// Minimizes `objective` over the box `[lower, upper]`, starting from `x0`.
///
/// Implementations must return a point inside the box whose value is no
/// worse than `objective(x0)` (after projecting `x0` into the box), and must
/// be deterministic for identical inputs.
pub trait BoxMinimizer: Send + Sync {
    fn minimize(
        &self,
        objective: &mut dyn FnMut(&[f64]) -> f64,
        x0: &[f64],
        lower: &[f64],
        upper: &[f64],
        max_evaluations: usize,
    ) -> OptimizeResult;
}

/// Nelder-Mead with every trial point projected onto the box.
///
/// Coordinates are rescaled to the unit cube internally so that force and
/// torque components share one simplex geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMead {
    /// Initial simplex edge as a fraction of each coordinate's range.
    pub initial_step: f64,
    /// Stop when the spread of simplex values drops below this.
    pub f_tol: f64,
    /// Stop when the simplex diameter (unit-cube coordinates) drops below this.
    pub x_tol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        Self {
            initial_step: 0.1,
            f_tol: 1e-10,
            x_tol: 1e-6,
        }
    }
}

const REFLECT: f64 = 1.0;
const EXPAND: f64 = 2.0;
const CONTRACT: f64 = 0.5;
const SHRINK: f64 = 0.5;

fn finite_or_max(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

impl BoxMinimizer for NelderMead {
    fn minimize(
        &self,
        objective: &mut dyn FnMut(&[f64]) -> f64,
        x0: &[f64],
        lower: &[f64],
        upper: &[f64],
        max_evaluations: usize,
    ) -> OptimizeResult {
        let n = x0.len();
        assert_eq!(lower.len(), n);
        assert_eq!(upper.len(), n);

        let span: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| (u - l).max(0.0)).collect();
        let to_real = |z: &[f64], out: &mut Vec<f64>| {
            out.clear();
            out.extend(
                z.iter()
                    .zip(lower)
                    .zip(&span)
                    .map(|((zi, l), s)| (l + zi * s).clamp(*l, l + s)),
            );
        };
        let project = |z: &mut [f64]| {
            for zi in z.iter_mut() {
                *zi = zi.clamp(0.0, 1.0);
            }
        };

        let mut buf = Vec::with_capacity(n);
        let mut evals = 0usize;
        let mut eval = |z: &[f64], evals: &mut usize, buf: &mut Vec<f64>| -> f64 {
            to_real(z, buf);
            *evals += 1;
            finite_or_max(objective(buf))
        };

        let mut start: Vec<f64> = x0
            .iter()
            .zip(lower)
            .zip(&span)
            .map(|((x, l), s)| if *s > 0.0 { (x - l) / s } else { 0.0 })
            .collect();
        project(&mut start);

        let f0 = eval(&start, &mut evals, &mut buf);
        if n == 0 || max_evaluations <= 1 {
            let mut x = Vec::new();
            to_real(&start, &mut x);
            return OptimizeResult {
                x,
                value: f0,
                evaluations: evals,
                converged: n == 0,
            };
        }

        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
        simplex.push((start.clone(), f0));
        for i in 0..n {
            if evals >= max_evaluations {
                break;
            }
            let mut v = start.clone();
            v[i] = if start[i] + self.initial_step <= 1.0 {
                start[i] + self.initial_step
            } else {
                start[i] - self.initial_step
            };
            let f = eval(&v, &mut evals, &mut buf);
            simplex.push((v, f));
        }

        let mut converged = false;
        if simplex.len() == n + 1 {
            let mut centroid = vec![0.0; n];
            let mut trial = vec![0.0; n];
            let mut trial2 = vec![0.0; n];
            while evals < max_evaluations {
                simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
                let best = simplex[0].1;
                let worst = simplex[n].1;
                let diameter = simplex[1..]
                    .iter()
                    .map(|(v, _)| {
                        v.iter()
                            .zip(&simplex[0].0)
                            .map(|(a, b)| (a - b).abs())
                            .fold(0.0, f64::max)
                    })
                    .fold(0.0, f64::max);
                if (worst - best).abs() <= self.f_tol * (1.0 + best.abs()) && diameter <= self.x_tol {
                    converged = true;
                    break;
                }

                centroid.iter_mut().for_each(|c| *c = 0.0);
                for (v, _) in &simplex[..n] {
                    for (c, vi) in centroid.iter_mut().zip(v) {
                        *c += vi / n as f64;
                    }
                }

                let line = |coef: f64, out: &mut Vec<f64>, worst: &[f64]| {
                    for ((o, c), w) in out.iter_mut().zip(&centroid).zip(worst) {
                        *o = c + coef * (c - w);
                    }
                };

                line(REFLECT, &mut trial, &simplex[n].0);
                project(&mut trial);
                let fr = eval(&trial, &mut evals, &mut buf);

                if fr < best {
                    if evals >= max_evaluations {
                        simplex[n] = (trial.clone(), fr);
                        break;
                    }
                    line(EXPAND, &mut trial2, &simplex[n].0);
                    project(&mut trial2);
                    let fe = eval(&trial2, &mut evals, &mut buf);
                    simplex[n] = if fe < fr {
                        (trial2.clone(), fe)
                    } else {
                        (trial.clone(), fr)
                    };
                    continue;
                }
                if fr < simplex[n - 1].1 {
                    simplex[n] = (trial.clone(), fr);
                    continue;
                }
                if evals >= max_evaluations {
                    break;
                }
                // Contraction: outside if the reflection beat the worst point, inside otherwise.
                let (coef, reference) = if fr < worst {
                    (CONTRACT, fr)
                } else {
                    (-CONTRACT, worst)
                };
                line(coef, &mut trial2, &simplex[n].0);
                project(&mut trial2);
                let fc = eval(&trial2, &mut evals, &mut buf);
                if fc < reference {
                    simplex[n] = (trial2.clone(), fc);
                    continue;
                }
                // Shrink towards the best vertex.
                let anchor = simplex[0].0.clone();
                for k in 1..=n {
                    if evals >= max_evaluations {
                        break;
                    }
                    for (vi, ai) in simplex[k].0.iter_mut().zip(&anchor) {
                        *vi = ai + SHRINK * (*vi - ai);
                    }
                    simplex[k].1 = eval(&simplex[k].0, &mut evals, &mut buf);
                }
            }
        }

        let (zbest, fbest) = simplex
            .iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(v, f)| (v.clone(), *f))
            .expect("simplex holds the start point");
        let mut x = Vec::with_capacity(n);
        to_real(&zbest, &mut x);
        OptimizeResult {
            x,
            value: fbest,
            evaluations: evals,
            converged,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad(x: &[f64]) -> f64 {
        let target = [1.5, -2.0, 0.25, 3.0];
        x.iter().zip(target).map(|(a, b)| (a - b) * (a - b) * 2.0).sum()
    }

    #[test]
    fn recovers_interior_minimum() {
        let nm = NelderMead::default();
        let lo = [-5.0; 4];
        let hi = [5.0; 4];
        let r = nm.minimize(&mut |x| quad(x), &[0.0; 4], &lo, &hi, 4000);
        for (xi, t) in r.x.iter().zip([1.5, -2.0, 0.25, 3.0]) {
            assert!((xi - t).abs() < 1e-3, "{:?}", r.x);
        }
        assert!(r.converged);
    }

    #[test]
    fn never_worse_than_start() {
        let nm = NelderMead::default();
        let lo = [-5.0; 4];
        let hi = [5.0; 4];
        let x0 = [1.5, -2.0, 0.25, 3.0];
        let r = nm.minimize(&mut |x| quad(x), &x0, &lo, &hi, 200);
        assert!(r.value <= quad(&x0));
        let r = nm.minimize(&mut |x| quad(x), &[4.0; 4], &lo, &hi, 3);
        assert!(r.value <= quad(&[4.0; 4]));
    }

    #[test]
    fn respects_bounds_with_exterior_minimum() {
        let nm = NelderMead::default();
        let lo = [-1.0, -1.0];
        let hi = [1.0, 1.0];
        let r = nm.minimize(&mut |x| (x[0] - 10.0).powi(2) + (x[1] + 10.0).powi(2), &[0.0, 0.0], &lo, &hi, 500);
        assert!(r.x.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] + 1.0).abs() < 1e-3);
    }

    #[test]
    fn respects_budget_and_is_deterministic() {
        let nm = NelderMead::default();
        let lo = [-5.0; 4];
        let hi = [5.0; 4];
        let mut count = 0;
        let r1 = nm.minimize(
            &mut |x| {
                count += 1;
                quad(x)
            },
            &[0.0; 4],
            &lo,
            &hi,
            37,
        );
        assert!(r1.evaluations <= 37);
        assert_eq!(count, r1.evaluations);
        let r2 = nm.minimize(&mut |x| quad(x), &[0.0; 4], &lo, &hi, 37);
        assert_eq!(r1, r2);
    }

    #[test]
    fn out_of_box_start_is_projected() {
        let nm = NelderMead::default();
        let r = nm.minimize(&mut |x| x[0] * x[0], &[50.0], &[-1.0], &[1.0], 100);
        assert!(r.x[0].abs() <= 1.0);
        assert!(r.x[0].abs() < 1e-3);
    }
}
