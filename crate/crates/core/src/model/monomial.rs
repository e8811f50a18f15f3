use super::BasisKernel;
use crate::autodiff::Scalar;
use crate::linalg::DenseMatrix;

/// `coef · Π v[var]^power` over the stacked inputs `v = (x, u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Monomial {
    pub coef: f64,
    pub factors: Vec<(usize, u32)>,
}

impl Monomial {
    pub fn new(coef: f64, factors: &[(usize, u32)]) -> Self {
        Self {
            coef,
            factors: factors.iter().copied().filter(|f| f.1 > 0).collect(),
        }
    }
}

/// Kernel whose basis entries are monomials, optionally scaled per block.
#[derive(Clone, Debug)]
pub struct MonomialKernel {
    n_x: usize,
    terms: Vec<Monomial>,
    /// n_b × N scale applied to each entry for each block.
    block_scale: Option<DenseMatrix>,
}

impl MonomialKernel {
    pub fn new(n_x: usize, terms: Vec<Monomial>) -> Self {
        Self {
            n_x,
            terms,
            block_scale: None,
        }
    }

    pub fn with_block_scale(mut self, scale: DenseMatrix) -> Self {
        assert_eq!(scale.nrows(), self.terms.len());
        self.block_scale = Some(scale);
        self
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    fn coef(&self, k: usize, block: usize) -> f64 {
        let c = self.terms[k].coef;
        match &self.block_scale {
            Some(s) => c * s[(k, block)],
            None => c,
        }
    }

    fn input<'a, S>(&self, x: &'a [S], u: &'a [S], var: usize) -> &'a S {
        if var < self.n_x {
            &x[var]
        } else {
            &u[var - self.n_x]
        }
    }
}

impl BasisKernel for MonomialKernel {
    fn n_basis(&self) -> usize {
        self.terms.len()
    }

    fn eval<S: Scalar>(&self, block: usize, x: &[S], u: &[S], psi: &mut [S]) {
        for (k, t) in self.terms.iter().enumerate() {
            let mut v = S::cst(self.coef(k, block));
            for &(var, p) in &t.factors {
                v = v * self.input(x, u, var).powi(p);
            }
            psi[k] = v;
        }
    }

    fn adjoint<S: Scalar>(
        &self,
        block: usize,
        x: &[S],
        u: &[S],
        omega: &[S],
        grad_x: &mut [S],
        grad_u: &mut [S],
    ) {
        for (k, t) in self.terms.iter().enumerate() {
            let c = self.coef(k, block);
            for (a, &(var, p)) in t.factors.iter().enumerate() {
                let mut d = omega[k].clone() * (c * p as f64);
                d = d * self.input(x, u, var).powi(p - 1);
                for (b, &(w, q)) in t.factors.iter().enumerate() {
                    if a != b {
                        d = d * self.input(x, u, w).powi(q);
                    }
                }
                if var < self.n_x {
                    grad_x[var] += d;
                } else {
                    grad_u[var - self.n_x] += d;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adjoint_matches_finite_differences() {
        let k = MonomialKernel::new(
            2,
            vec![
                Monomial::new(2.0, &[(0, 2), (2, 1)]),
                Monomial::new(-1.0, &[(1, 3)]),
                Monomial::new(0.5, &[]),
            ],
        )
        .with_block_scale(DenseMatrix::from_fn(3, 2, |i, j| 1.0 + (i + j) as f64));
        let x = [0.3, -1.2];
        let u = [0.8];
        let omega = [0.7, -0.4, 2.0];
        let mut gx = [0.0; 2];
        let mut gu = [0.0; 1];
        k.adjoint(1, &x, &u, &omega, &mut gx, &mut gu);
        let phi = |x: &[f64], u: &[f64]| {
            let mut psi = [0.0; 3];
            k.eval(1, x, u, &mut psi);
            psi.iter().zip(&omega).map(|(a, b)| a * b).sum::<f64>()
        };
        let h = 1e-6;
        for j in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (phi(&xp, &u) - phi(&xm, &u)) / (2.0 * h);
            assert!((fd - gx[j]).abs() < 1e-7);
        }
        let fd = (phi(&x, &[u[0] + h]) - phi(&x, &[u[0] - h])) / (2.0 * h);
        assert!((fd - gu[0]).abs() < 1e-7);
    }
}
