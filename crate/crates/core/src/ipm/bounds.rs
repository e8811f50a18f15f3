//! Per-coordinate bound bookkeeping for the barrier terms.

use crate::model::Bounds;

/// Bounds with finite entries relaxed by `relax · max(1, |b|)`; infinite
/// entries contribute no barrier, multiplier or step limit.
#[derive(Clone, Debug)]
pub struct BoundSet {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl BoundSet {
    pub fn new(b: &Bounds, relax: f64) -> Self {
        let lower = b
            .lower
            .iter()
            .map(|&l| {
                if l.is_finite() {
                    l - relax * l.abs().max(1.0)
                } else {
                    l
                }
            })
            .collect();
        let upper = b
            .upper
            .iter()
            .map(|&u| {
                if u.is_finite() {
                    u + relax * u.abs().max(1.0)
                } else {
                    u
                }
            })
            .collect();
        Self { lower, upper }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    /// Moves `v` inside the bounds: `[l + f·span, u − f·span]` when both are
    /// finite, otherwise at least `push · max(1, |b|)` from the finite bound.
    pub fn project(&self, v: &mut [f64], frac: f64, push: f64) {
        for (j, vj) in v.iter_mut().enumerate() {
            let (l, u) = (self.lower[j], self.upper[j]);
            *vj = match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    let span = u - l;
                    vj.min(u - frac * span).max(l + frac * span)
                }
                (true, false) => vj.max(l + push * l.abs().max(1.0)),
                (false, true) => vj.min(u - push * u.abs().max(1.0)),
                (false, false) => *vj,
            };
        }
    }

    pub fn is_interior(&self, v: &[f64]) -> bool {
        v.iter()
            .enumerate()
            .all(|(j, &x)| x > self.lower[j] && x < self.upper[j])
    }

    /// `μ / (v − l)` and `μ / (u − v)` on finite bounds, zero elsewhere.
    pub fn central_multipliers(&self, v: &[f64], mu: f64, zl: &mut [f64], zu: &mut [f64]) {
        for j in 0..v.len() {
            zl[j] = if self.lower[j].is_finite() {
                mu / (v[j] - self.lower[j])
            } else {
                0.0
            };
            zu[j] = if self.upper[j].is_finite() {
                mu / (self.upper[j] - v[j])
            } else {
                0.0
            };
        }
    }

    /// `Σ = z_l/(v − l) + z_u/(u − v)`
    pub fn sigma(&self, v: &[f64], zl: &[f64], zu: &[f64]) -> Vec<f64> {
        (0..v.len())
            .map(|j| {
                let mut s = 0.0;
                if self.lower[j].is_finite() {
                    s += zl[j] / (v[j] - self.lower[j]);
                }
                if self.upper[j].is_finite() {
                    s += zu[j] / (self.upper[j] - v[j]);
                }
                s
            })
            .collect()
    }

    /// Adds `−μ/(v − l) + μ/(u − v)` to `out`.
    pub fn add_barrier_gradient(&self, v: &[f64], mu: f64, out: &mut [f64]) {
        for j in 0..v.len() {
            if self.lower[j].is_finite() {
                out[j] -= mu / (v[j] - self.lower[j]);
            }
            if self.upper[j].is_finite() {
                out[j] += mu / (self.upper[j] - v[j]);
            }
        }
    }

    /// `−μ Σ log(distance)` over finite bounds.
    pub fn barrier(&self, v: &[f64], mu: f64) -> f64 {
        let mut b = 0.0;
        for j in 0..v.len() {
            if self.lower[j].is_finite() {
                b -= mu * (v[j] - self.lower[j]).ln();
            }
            if self.upper[j].is_finite() {
                b -= mu * (self.upper[j] - v[j]).ln();
            }
        }
        b
    }

    /// Largest `α ≤ 1` keeping every distance at least `(1 − τ)` of its current value.
    pub fn max_step(&self, v: &[f64], p: &[f64], tau: f64) -> f64 {
        let mut a = 1.0f64;
        for j in 0..v.len() {
            if self.lower[j].is_finite() {
                a = a.min(fraction_to_boundary(v[j] - self.lower[j], p[j], tau));
            }
            if self.upper[j].is_finite() {
                a = a.min(fraction_to_boundary(self.upper[j] - v[j], -p[j], tau));
            }
        }
        a
    }

    /// Newton steps of the perturbed complementarity for both bound multipliers.
    pub fn multiplier_steps(
        &self,
        v: &[f64],
        p: &[f64],
        zl: &[f64],
        zu: &[f64],
        mu: f64,
    ) -> (Vec<f64>, Vec<f64>) {
        let n = v.len();
        let mut pl = vec![0.0; n];
        let mut pu = vec![0.0; n];
        for j in 0..n {
            if self.lower[j].is_finite() {
                let dl = v[j] - self.lower[j];
                pl[j] = mu / dl - zl[j] - zl[j] / dl * p[j];
            }
            if self.upper[j].is_finite() {
                let du = self.upper[j] - v[j];
                pu[j] = mu / du - zu[j] + zu[j] / du * p[j];
            }
        }
        (pl, pu)
    }

    /// Keeps each multiplier within `[μ/(κ d), κ μ/d]` of its central value.
    pub fn safeguard(&self, v: &[f64], zl: &mut [f64], zu: &mut [f64], mu: f64, kappa: f64) {
        for j in 0..v.len() {
            if self.lower[j].is_finite() {
                let d = v[j] - self.lower[j];
                zl[j] = zl[j].clamp(mu / (kappa * d), kappa * mu / d);
            }
            if self.upper[j].is_finite() {
                let d = self.upper[j] - v[j];
                zu[j] = zu[j].clamp(mu / (kappa * d), kappa * mu / d);
            }
        }
    }
}

/// Largest `α ∈ (0, 1]` with `d + α p ≥ (1 − τ) d` for a positive distance `d`.
pub fn fraction_to_boundary(d: f64, p: f64, tau: f64) -> f64 {
    if p < 0.0 {
        (tau * d / -p).min(1.0)
    } else {
        1.0
    }
}

/// Step limit for positive multipliers.
pub fn multiplier_max_step(z: &[f64], p: &[f64], finite: impl Fn(usize) -> bool, tau: f64) -> f64 {
    let mut a = 1.0f64;
    for j in 0..z.len() {
        if finite(j) {
            a = a.min(fraction_to_boundary(z[j], p[j], tau));
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(l: &[f64], u: &[f64]) -> BoundSet {
        BoundSet {
            lower: l.to_vec(),
            upper: u.to_vec(),
        }
    }

    #[test]
    fn fraction_to_boundary_formula() {
        assert_eq!(fraction_to_boundary(1.0, -2.0, 0.995), 0.4975);
        assert_eq!(fraction_to_boundary(1.0, 3.0, 0.995), 1.0);
    }

    #[test]
    fn projection_rules() {
        let b = set(
            &[0.0, 1.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            &[10.0, f64::INFINITY, -5.0, f64::INFINITY],
        );
        let mut v = vec![-3.0, 0.0, 0.0, 7.0];
        b.project(&mut v, 0.1, 1e-2);
        assert_eq!(v, vec![1.0, 1.01, -5.05, 7.0]);
        let mut w = vec![9.5, 2.0, -6.0, 0.0];
        b.project(&mut w, 0.1, 1e-2);
        assert_eq!(w, vec![9.0, 2.0, -6.0, 0.0]);
    }

    #[test]
    fn barrier_gradient_matches_difference() {
        let b = set(&[0.0, f64::NEG_INFINITY], &[2.0, 1.0]);
        let v = [0.3, -0.4];
        let mut g = vec![0.0; 2];
        b.add_barrier_gradient(&v, 0.7, &mut g);
        for j in 0..2 {
            let h = 1e-6;
            let mut a = v;
            let mut c = v;
            a[j] += h;
            c[j] -= h;
            let fd = (b.barrier(&a, 0.7) - b.barrier(&c, 0.7)) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-6);
        }
    }

    #[test]
    fn multiplier_step_linearizes_complementarity() {
        let b = set(&[0.0], &[1.0]);
        let (v, p, zl, zu, mu) = ([0.25], [0.1], [2.0], [0.5], 0.3);
        let (pl, pu) = b.multiplier_steps(&v, &p, &zl, &zu, mu);
        // (d + p)(z + pz) ≈ μ to first order: d·pz + z·p = μ − d z
        assert!(((0.25 * pl[0] + 2.0 * 0.1) - (mu - 0.25 * 2.0)).abs() < 1e-14);
        assert!(((0.75 * pu[0] - 0.5 * 0.1) - (mu - 0.75 * 0.5)).abs() < 1e-14);
    }

    #[test]
    fn relaxation_widens_finite_bounds_only() {
        let b = BoundSet::new(
            &Bounds {
                lower: vec![2.0, f64::NEG_INFINITY],
                upper: vec![2.0, 0.0],
            },
            1e-8,
        );
        assert!(b.lower[0] < 2.0 && b.upper[0] > 2.0);
        assert_eq!(b.lower[1], f64::NEG_INFINITY);
        assert_eq!(b.upper[1], 1e-8);
    }
}
