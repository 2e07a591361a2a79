//! Generator calculus: carré du champ, iterated Γ, heat and Schrödinger
//! semigroups, entropy.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::space::{CurvatureField, Space};
use crate::{Error, Result};

/// Probability density with respect to the reference measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Density {
    rho: Vec<f64>,
}

impl Density {
    pub fn new(space: &Space, rho: Vec<f64>) -> Result<Self> {
        space.check_fn(&rho, "density")?;
        if rho.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::arg("density must be finite and nonnegative"));
        }
        let mass = space.integrate(&rho);
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("density has mass {mass}, expected 1")));
        }
        Ok(Density { rho })
    }

    /// Density of a probability vector of node masses (normalized here).
    pub fn from_masses(space: &Space, mu: &[f64]) -> Result<Self> {
        space.check_fn(mu, "mass vector")?;
        if mu.iter().any(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::arg("masses must be finite and nonnegative"));
        }
        let total: f64 = mu.iter().sum();
        if !(total > 0.0) {
            return Err(Error::arg("zero total mass"));
        }
        let rho = mu.iter().zip(space.measure()).map(|(u, m)| u / total / m).collect();
        Ok(Density { rho })
    }

    pub fn dirac(space: &Space, x: usize) -> Result<Self> {
        space.check_node(x)?;
        let mut rho = vec![0.0; space.len()];
        rho[x] = 1.0 / space.measure()[x];
        Ok(Density { rho })
    }

    pub fn uniform(space: &Space) -> Self {
        Density { rho: vec![1.0 / space.total_mass(); space.len()] }
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Node masses `ρ·m`.
    pub fn masses(&self, space: &Space) -> Vec<f64> {
        self.rho.iter().zip(space.measure()).map(|(r, m)| r * m).collect()
    }
}

/// `L f`.
pub fn apply_generator(space: &Space, f: &[f64]) -> Vec<f64> {
    (0..space.len())
        .map(|x| space.rates(x).iter().map(|&(y, l)| l * (f[y] - f[x])).sum())
        .collect()
}

/// `Γ(f, g) = ½(L(fg) − f Lg − g Lf)`, evaluated in the equivalent edge form.
pub fn gamma(space: &Space, f: &[f64], g: &[f64]) -> Vec<f64> {
    (0..space.len())
        .map(|x| 0.5 * space.rates(x).iter().map(|&(y, l)| l * (f[y] - f[x]) * (g[y] - g[x])).sum::<f64>())
        .collect()
}

/// `Γ(f) = Γ(f, f)`.
pub fn gamma_sq(space: &Space, f: &[f64]) -> Vec<f64> {
    gamma(space, f, f)
}

/// `γ₂(f) = ½ L Γ(f) − Γ(f, Lf)`.
pub fn gamma2(space: &Space, f: &[f64]) -> Vec<f64> {
    let lf = apply_generator(space, f);
    let lg = apply_generator(space, &gamma_sq(space, f));
    let cross = gamma(space, f, &lf);
    lg.iter().zip(&cross).map(|(a, b)| 0.5 * a - b).collect()
}

/// `Σ ρ log ρ m` with `0 log 0 = 0`.
pub fn entropy(space: &Space, rho: &[f64]) -> f64 {
    rho.iter()
        .zip(space.measure())
        .map(|(&r, &m)| if r > 0.0 { r * r.ln() * m } else { 0.0 })
        .sum()
}

/// Entropy of a mass vector `μ` relative to `m`.
pub fn entropy_of_masses(space: &Space, mu: &[f64]) -> f64 {
    mu.iter()
        .zip(space.measure())
        .map(|(&u, &m)| if u > 0.0 { u * (u / m).ln() } else { 0.0 })
        .sum()
}

/// Spectral factorization of `L − diag(v)` through its `m`-symmetrization.
#[derive(Clone, Debug)]
pub struct Semigroup {
    sqrt_m: Vec<f64>,
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl Semigroup {
    /// Heat semigroup `exp(tL)`.
    pub fn heat(space: &Space) -> Self {
        Self::with_potential(space, &vec![0.0; space.len()])
    }

    /// Schrödinger semigroup `exp(t(L − q k))`.
    pub fn schrodinger(space: &Space, field: &CurvatureField, q: f64) -> Self {
        let v: Vec<f64> = field.k.iter().map(|k| q * k).collect();
        Self::with_potential(space, &v)
    }

    /// Semigroup of `L − diag(v)`.
    pub fn with_potential(space: &Space, v: &[f64]) -> Self {
        let n = space.len();
        let sqrt_m: Vec<f64> = space.measure().iter().map(|m| m.sqrt()).collect();
        let l = space.generator();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                s[(i, j)] = sqrt_m[i] * l[(i, j)] / sqrt_m[j];
            }
            s[(i, i)] -= v[i];
        }
        let sym = (&s + s.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        Semigroup { sqrt_m, vectors: eig.eigenvectors, values: eig.eigenvalues }
    }

    pub fn len(&self) -> usize {
        self.sqrt_m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqrt_m.is_empty()
    }

    /// Eigenvalues of the symmetrized operator.
    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.values
    }

    /// Eigenfunctions of the operator ordered by decreasing eigenvalue.
    pub fn eigenfunctions(&self) -> Vec<(f64, Vec<f64>)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        order
            .into_iter()
            .map(|k| {
                let f = self.vectors.column(k).iter().zip(&self.sqrt_m).map(|(u, s)| u / s).collect();
                (self.values[k], f)
            })
            .collect()
    }

    /// Generator rebuilt from the factorization.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.len();
        let s = &self.vectors * DMatrix::from_diagonal(&self.values) * self.vectors.transpose();
        DMatrix::from_fn(n, n, |i, j| s[(i, j)] * self.sqrt_m[j] / self.sqrt_m[i])
    }

    fn spectral(&self, t: f64, g: DVector<f64>) -> DVector<f64> {
        let mut c = self.vectors.tr_mul(&g);
        for (ci, lam) in c.iter_mut().zip(self.values.iter()) {
            *ci *= (t * lam).exp();
        }
        &self.vectors * c
    }

    /// `P_t f`.
    pub fn apply(&self, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        check_time(t)?;
        if f.len() != self.len() {
            return Err(Error::arg("function length differs from space size"));
        }
        if t == 0.0 {
            return Ok(f.to_vec());
        }
        let g = DVector::from_iterator(f.len(), f.iter().zip(&self.sqrt_m).map(|(a, s)| a * s));
        let r = self.spectral(t, g);
        Ok(r.iter().zip(&self.sqrt_m).map(|(a, s)| a / s).collect())
    }

    /// Row action `μ ↦ μ P_t` on mass vectors.
    pub fn apply_masses(&self, t: f64, mu: &[f64]) -> Result<Vec<f64>> {
        check_time(t)?;
        if mu.len() != self.len() {
            return Err(Error::arg("mass vector length differs from space size"));
        }
        if t == 0.0 {
            return Ok(mu.to_vec());
        }
        let g = DVector::from_iterator(mu.len(), mu.iter().zip(&self.sqrt_m).map(|(a, s)| a / s));
        let r = self.spectral(t, g);
        Ok(r.iter().zip(&self.sqrt_m).map(|(a, s)| a * s).collect())
    }

    /// Kernel matrix `P_t(x, y)` with `(P_t f)(x) = Σ_y P_t(x, y) f(y)`.
    pub fn kernel(&self, t: f64) -> Result<DMatrix<f64>> {
        check_time(t)?;
        let n = self.len();
        let e = DVector::from_iterator(n, self.values.iter().map(|l| (t * l).exp()));
        let mut ue = self.vectors.clone();
        for (j, ej) in e.iter().enumerate() {
            ue.column_mut(j).scale_mut(*ej);
        }
        let s = ue * self.vectors.transpose();
        Ok(DMatrix::from_fn(n, n, |i, j| s[(i, j)] * self.sqrt_m[j] / self.sqrt_m[i]))
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0) || !t.is_finite() {
        return Err(Error::NegativeTime(t));
    }
    Ok(())
}

/// `exp(tL) f`.
pub fn heat(space: &Space, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    space.check_fn(f, "function")?;
    Semigroup::heat(space).apply(t, f)
}

/// Heat flow of a density.
pub fn heat_measure(space: &Space, t: f64, rho: &Density) -> Result<Density> {
    let r = heat(space, t, rho.rho())?;
    Ok(Density { rho: r.into_iter().map(|v| v.max(0.0)).collect() })
}

/// `exp(t(L − q k)) f`.
pub fn schrodinger(space: &Space, field: &CurvatureField, q: f64, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    space.check_fn(f, "function")?;
    if !(q >= 1.0) {
        return Err(Error::arg(format!("exponent q = {q} must be >= 1")));
    }
    Semigroup::schrodinger(space, field, q).apply(t, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::Edge;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn two_node() -> Space {
        Space::graph(2, vec![Edge { i: 0, j: 1, length: 1.0, weight: 1.0 }], vec![1.0, 1.0]).unwrap()
    }

    fn small_graph() -> Space {
        let e = |i, j, w| Edge { i, j, length: 1.0, weight: w };
        Space::graph(4, vec![e(0, 1, 1.0), e(1, 2, 0.5), e(2, 3, 2.0), e(3, 0, 1.5), e(0, 2, 0.3)], vec![1.0, 2.0, 0.5, 1.5])
            .unwrap()
    }

    #[test]
    fn gamma_of_constant_vanishes() {
        let s = small_graph();
        let g = gamma(&s, &[3.0; 4], &[1.0, -2.0, 0.5, 4.0]);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gamma_matches_product_rule_form() {
        let s = small_graph();
        let f = [1.0, -2.0, 0.5, 4.0];
        let g = [0.3, 0.1, -1.0, 2.0];
        let fg: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a * b).collect();
        let lfg = apply_generator(&s, &fg);
        let lf = apply_generator(&s, &f);
        let lg = apply_generator(&s, &g);
        let direct = gamma(&s, &f, &g);
        for x in 0..4 {
            let want = 0.5 * (lfg[x] - f[x] * lg[x] - g[x] * lf[x]);
            assert_relative_eq!(direct[x], want, epsilon = 1e-12);
        }
    }

    #[test]
    fn segment_gamma_of_coordinate() {
        let s = Space::segment_fn(-1.0, 1.0, 81, |x| x * x / 2.0).unwrap();
        let x = s.coordinates().unwrap();
        let g = gamma_sq(&s, &x);
        for i in 1..80 {
            assert!((g[i] - 1.0).abs() < 0.03, "Γ = {} at {}", g[i], x[i]);
        }
    }

    #[test]
    fn segment_gamma2_ou_and_square() {
        let k = 1.3;
        let s = Space::segment_fn(-2.0, 2.0, 161, |x| k * x * x / 2.0).unwrap();
        let x = s.coordinates().unwrap();
        let g2 = gamma2(&s, &x);
        for i in 2..159 {
            assert!((g2[i] - k).abs() < 0.05, "γ₂ = {} at {}", g2[i], x[i]);
        }
        let flat = Space::segment_fn(-1.0, 1.0, 81, |_| 0.0).unwrap();
        let x = flat.coordinates().unwrap();
        let sq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let g2 = gamma2(&flat, &sq);
        for v in &g2[2..79] {
            assert!((v - 4.0).abs() < 1e-6);
        }
        assert!(gamma2(&flat, &[2.0; 81]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn gamma_converges_at_first_order() {
        // Error of Γ(sin) at interior nodes against the continuum |f'|².
        let err = |n: usize| {
            let s = Space::segment_fn(-1.0, 1.0, n, |x| x * x).unwrap();
            let x = s.coordinates().unwrap();
            let f: Vec<f64> = x.iter().map(|v| v.sin()).collect();
            let g = gamma_sq(&s, &f);
            (1..n - 1).map(|i| (g[i] - x[i].cos().powi(2)).abs()).fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(21), err(41), err(81));
        assert!(e1 / e2 > 1.8 && e2 / e3 > 1.8, "{e1} {e2} {e3}");
    }

    #[test]
    fn two_node_heat() {
        let s = two_node();
        for t in [0.0, 0.3, 1.7] {
            let r = heat(&s, t, &[1.0, -1.0]).unwrap();
            assert_relative_eq!(r[0], (-2.0 * t).exp(), epsilon = 1e-14);
            assert_relative_eq!(r[1], -(-2.0 * t).exp(), epsilon = 1e-14);
        }
        assert!(matches!(heat(&s, -1.0, &[1.0, 0.0]), Err(Error::NegativeTime(_))));
    }

    #[test]
    fn reconstruction_matches_generator() {
        let s = Space::segment_fn(-3.0, 3.0, 121, |x| x * x / 2.0).unwrap();
        let sg = Semigroup::heat(&s);
        let diff = (sg.reconstruct() - s.generator()).abs().max();
        assert!(diff <= 1e-10 * s.generator().abs().max(), "{diff}");
    }

    #[test]
    fn heat_conserves_mass_and_kernel_is_stochastic() {
        let s = small_graph();
        let rho = Density::from_masses(&s, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let out = heat_measure(&s, 0.8, &rho).unwrap();
        assert_relative_eq!(s.integrate(out.rho()), 1.0, epsilon = 1e-13);
        let k = Semigroup::heat(&s).kernel(0.8).unwrap();
        for i in 0..4 {
            assert_relative_eq!(k.row(i).sum(), 1.0, epsilon = 1e-13);
        }
        let mu = Semigroup::heat(&s).apply_masses(0.8, &rho.masses(&s)).unwrap();
        for (a, b) in mu.iter().zip(out.masses(&s)) {
            assert_relative_eq!(*a, b, epsilon = 1e-13);
        }
    }

    #[test]
    fn schrodinger_reductions() {
        let s = small_graph();
        let f = [1.0, 2.0, -1.0, 0.5];
        let zero = CurvatureField::constant(&s, 0.0).unwrap();
        let a = schrodinger(&s, &zero, 1.0, 0.4, &f).unwrap();
        let b = heat(&s, 0.4, &f).unwrap();
        for i in 0..4 {
            assert_relative_eq!(a[i], b[i], epsilon = 1e-13);
        }
        let kf = CurvatureField::constant(&s, 0.7).unwrap();
        let a = schrodinger(&s, &kf, 2.0, 0.4, &f).unwrap();
        for i in 0..4 {
            assert_relative_eq!(a[i], (-2.0 * 0.7 * 0.4f64).exp() * b[i], epsilon = 1e-13);
        }
    }

    #[test]
    fn trotter_splitting_converges_first_order() {
        let s = small_graph();
        let field = CurvatureField::new(&s, vec![0.0, 1.0, 2.0, -0.5]).unwrap();
        let (q, t) = (1.5, 0.7);
        let f = [1.0, 2.0, -1.0, 0.5];
        let exact = schrodinger(&s, &field, q, t, &f).unwrap();
        let heat_sg = Semigroup::heat(&s);
        let err = |n: usize| {
            let dt = t / n as f64;
            let mut g = f.to_vec();
            for _ in 0..n {
                g = g.iter().zip(&field.k).map(|(v, k)| v * (-q * k * dt).exp()).collect();
                g = heat_sg.apply(dt, &g).unwrap();
            }
            g.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let (e1, e2, e3) = (err(16), err(32), err(64));
        assert!(e1 / e2 > 1.8 && e2 / e3 > 1.8, "{e1} {e2} {e3}");
    }

    #[test]
    fn entropy_examples() {
        let s = Space::graph(2, vec![Edge { i: 0, j: 1, length: 1.0, weight: 1.0 }], vec![1.0, 1.0]).unwrap();
        assert_relative_eq!(entropy(&s, Density::uniform(&s).rho()), -(2f64).ln(), epsilon = 1e-15);
        assert_eq!(entropy(&s, Density::dirac(&s, 0).unwrap().rho()), 0.0);
        let rho = [0.75, 0.25];
        let hand = 0.75 * 0.75f64.ln() + 0.25 * 0.25f64.ln();
        assert_relative_eq!(entropy(&s, &rho), hand, epsilon = 1e-15);
        assert_relative_eq!(entropy_of_masses(&s, &rho), hand, epsilon = 1e-15);
    }

    #[test]
    fn density_validation() {
        let s = two_node();
        assert!(Density::new(&s, vec![0.5, 0.4]).is_err());
        assert!(Density::new(&s, vec![1.5, -0.5]).is_err());
        assert!(Density::new(&s, vec![0.5, 0.5]).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(20))]

        #[test]
        fn gamma_is_nonnegative(f in proptest::collection::vec(-5.0f64..5.0, 4)) {
            let s = small_graph();
            prop_assert!(gamma_sq(&s, &f).iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn semigroups_are_self_adjoint(
            f in proptest::collection::vec(-1.0f64..1.0, 4),
            g in proptest::collection::vec(-1.0f64..1.0, 4),
            t in 0.0f64..2.0,
        ) {
            let s = small_graph();
            let field = CurvatureField::new(&s, vec![0.0, 1.0, 2.0, -0.5]).unwrap();
            for sg in [Semigroup::heat(&s), Semigroup::schrodinger(&s, &field, 2.0)] {
                let pf = sg.apply(t, &f).unwrap();
                let pg = sg.apply(t, &g).unwrap();
                let a: f64 = (0..4).map(|i| pf[i] * g[i] * s.measure()[i]).sum();
                let b: f64 = (0..4).map(|i| f[i] * pg[i] * s.measure()[i]).sum();
                prop_assert!((a - b).abs() <= 1e-10 * (a.abs() + b.abs()).max(1.0));
            }
        }

        #[test]
        fn semigroup_law(
            f in proptest::collection::vec(-1.0f64..1.0, 4),
            a in 0.0f64..1.0,
            b in 0.0f64..1.0,
        ) {
            let s = small_graph();
            let sg = Semigroup::heat(&s);
            let direct = sg.apply(a + b, &f).unwrap();
            let composed = sg.apply(a, &sg.apply(b, &f).unwrap()).unwrap();
            for i in 0..4 {
                prop_assert!((direct[i] - composed[i]).abs() <= 1e-9 * direct[i].abs().max(1.0));
            }
        }
    }
}
