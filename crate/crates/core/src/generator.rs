//! Dense discretized Fokker-Planck generator and its spectral analysis.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::{validate, Error, Result};
use crate::lattice::{idft_real, GridField, SpectralField, TorusLattice, DENSE_CAP};
use crate::potential::EnergyPotential;
use crate::spectral::derivative_matrix;

/// Eigenvalues of the symmetrized generator this close to zero are set to zero.
pub const CLIP_TOL: f64 = 1e-9;

/// `L f = sum_j D_j e^{-W} D_j (e^{W} f)` with its symmetrization and eigendecomposition.
#[derive(Clone, Debug)]
pub struct FpOperator {
    lattice: TorusLattice,
    w: Vec<f64>,
    halve: bool,
    delta_w: f64,
    matrix: DMatrix<f64>,
    sym: DMatrix<f64>,
    asymmetry: f64,
    eigenvalues: Vec<f64>,
    raw_eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    assembly_discrepancy: f64,
}

/// Builds the generator for `W = E/2` (`halve`) or `W = E`.
pub fn build_generator(e: &EnergyPotential, lattice: &TorusLattice, halve: bool) -> Result<FpOperator> {
    let factor = if halve { 0.5 } else { 1.0 };
    let w = e.grid(lattice)?.re().into_iter().map(|v| factor * v).collect();
    build_from_grid(lattice, w, factor * e.diameter(), halve)
}

/// Builds from lattice values of `W`; `delta_w` is the diameter of `W` on the torus.
pub fn build_from_grid(lattice: &TorusLattice, w: Vec<f64>, delta_w: f64, halve: bool) -> Result<FpOperator> {
    let size = lattice.size();
    if size > DENSE_CAP {
        return Err(Error::Size(format!("{size} lattice points exceed dense cap {DENSE_CAP}")));
    }
    validate(w.len() == size, || format!("expected {size} potential values, got {}", w.len()))?;
    validate(w.iter().all(|v| v.is_finite()), || "non-finite potential value".into())?;
    let side = lattice.side();
    let k = derivative_matrix(lattice.n(), lattice.l());
    let mut matrix = DMatrix::<f64>::zeros(size, size);
    let mut idx = vec![0usize; side];
    for axis in 0..lattice.d() {
        let stride = lattice.stride(axis);
        for base in (0..size).filter(|f| (f / stride).is_multiple_of(side)) {
            for (s, v) in idx.iter_mut().enumerate() {
                *v = base + s * stride;
            }
            let mut mid = k.clone();
            for r in 0..side {
                let em = (-w[idx[r]]).exp();
                mid.column_mut(r).scale_mut(em);
            }
            let block = &mid * &k;
            for p in 0..side {
                for q in 0..side {
                    matrix[(idx[p], idx[q])] += block[(p, q)] * w[idx[q]].exp();
                }
            }
        }
    }
    let half: Vec<f64> = w.iter().map(|v| (0.5 * v).exp()).collect();
    let mut sym = DMatrix::from_fn(size, size, |p, q| half[p] * matrix[(p, q)] / half[q]);
    let asymmetry = (&sym - sym.transpose()).norm() / sym.norm().max(f64::MIN_POSITIVE);
    sym = (&sym + sym.transpose()) * 0.5;

    let eig = SymmetricEigen::new(sym.clone());
    let mut order: Vec<usize> = (0..size).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let raw_eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let eigenvalues = raw_eigenvalues.iter().map(|&v| if v.abs() <= CLIP_TOL { 0.0 } else { v }).collect();
    let mut eigenvectors = DMatrix::zeros(size, size);
    for (c, &i) in order.iter().enumerate() {
        eigenvectors.set_column(c, &eig.eigenvectors.column(i));
    }
    let mut op = FpOperator {
        lattice: *lattice,
        w,
        halve,
        delta_w,
        matrix,
        sym,
        asymmetry,
        eigenvalues,
        raw_eigenvalues,
        eigenvectors,
        assembly_discrepancy: 0.0,
    };
    op.assembly_discrepancy = op.assembly_check(20, (lattice.n() / 4).max(1), 0);
    Ok(op)
}

/// Real random trigonometric polynomial with `|k|_inf <= band` on the lattice.
pub fn band_limited_probe(lat: &TorusLattice, band: usize, rng: &mut ChaCha20Rng) -> Vec<f64> {
    let b = band.min(lat.n()) as i64;
    let raw: Vec<Complex64> = (0..lat.size())
        .map(|f| {
            if lat.multi(f).iter().all(|k| k.abs() <= b) {
                Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect();
    // conjugate-symmetrize so the synthesis is real
    let coeffs = (0..lat.size()).map(|f| 0.5 * (raw[f] + raw[lat.negated(f)].conj())).collect();
    let scale = (lat.size() as f64).sqrt();
    idft_real(&SpectralField::new(*lat, coeffs).expect("layout")).values().iter().map(|v| v.re * scale).collect()
}

impl FpOperator {
    pub fn lattice(&self) -> &TorusLattice {
        &self.lattice
    }
    pub fn w(&self) -> &[f64] {
        &self.w
    }
    pub fn halved(&self) -> bool {
        self.halve
    }
    /// Diameter of `W` on the torus.
    pub fn delta_w(&self) -> f64 {
        self.delta_w
    }
    /// Diameter of `W` over lattice points only.
    pub fn grid_delta_w(&self) -> f64 {
        let hi = self.w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = self.w.iter().cloned().fold(f64::INFINITY, f64::min);
        hi - lo
    }
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    /// Symmetrized `U^{-1} L U`, `U = diag(e^{-W/2})`.
    pub fn symmetrized(&self) -> &DMatrix<f64> {
        &self.sym
    }
    /// Relative Frobenius asymmetry of `U^{-1} L U` before symmetrizing.
    pub fn asymmetry(&self) -> f64 {
        self.asymmetry
    }
    /// Clipped eigenvalues, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }
    pub fn raw_eigenvalues(&self) -> &[f64] {
        &self.raw_eigenvalues
    }
    /// Orthonormal eigenvectors, columns ordered as [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }
    pub fn gap(&self) -> f64 {
        if self.eigenvalues.len() < 2 {
            0.0
        } else {
            -self.eigenvalues[1]
        }
    }
    pub fn max_eigenvalue(&self) -> f64 {
        self.raw_eigenvalues[0]
    }
    pub fn kernel_dimension(&self, tol: f64) -> usize {
        self.raw_eigenvalues.iter().filter(|v| v.abs() <= tol).count()
    }
    /// Largest relative discrepancy between the composed and expanded assemblies on probes.
    pub fn assembly_discrepancy(&self) -> f64 {
        self.assembly_discrepancy
    }

    /// Cosine similarity of the top eigenvector with the lattice values of `e^{-W/2}`.
    pub fn kernel_cosine(&self) -> f64 {
        let v = DVector::from_iterator(self.w.len(), self.w.iter().map(|w| (-0.5 * w).exp()));
        let q = self.eigenvectors.column(0);
        (q.dot(&v) / (q.norm() * v.norm())).abs()
    }

    /// Lattice values of `e^{-W}`, the stationary direction of `L`.
    pub fn stationary(&self) -> Vec<f64> {
        self.w.iter().map(|w| (-w).exp()).collect()
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let v = DVector::from_column_slice(f);
        (&self.matrix * v).iter().copied().collect()
    }

    /// Expanded form `(lap W) f + grad W . grad f + lap f` with every derivative a spectral `D_j`.
    pub fn apply_expanded(&self, f: &[f64]) -> Vec<f64> {
        let lat = &self.lattice;
        let side = lat.side();
        let k = derivative_matrix(lat.n(), lat.l());
        let along = |g: &[f64], axis: usize| -> Vec<f64> {
            let stride = lat.stride(axis);
            let mut out = vec![0.0; g.len()];
            for (fl, o) in out.iter_mut().enumerate() {
                let s = (fl / stride) % side;
                let base = fl - s * stride;
                *o = (0..side).map(|m| k[(s, m)] * g[base + m * stride]).sum();
            }
            out
        };
        let mut out = vec![0.0; f.len()];
        for axis in 0..lat.d() {
            let dw = along(&self.w, axis);
            let ddw = along(&dw, axis);
            let df = along(f, axis);
            let ddf = along(&df, axis);
            for i in 0..f.len() {
                out[i] += ddw[i] * f[i] + dw[i] * df[i] + ddf[i];
            }
        }
        out
    }

    /// Worst `||(L - L_exp) f|| / ||L f||` over seeded band-limited probes.
    pub fn assembly_check(&self, probes: usize, band: usize, seed: u64) -> f64 {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut worst: f64 = 0.0;
        for _ in 0..probes {
            let f = band_limited_probe(&self.lattice, band, &mut rng);
            let a = self.apply(&f);
            let b = self.apply_expanded(&f);
            let num: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let den: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            if den > 0.0 {
                worst = worst.max(num / den);
            }
        }
        worst
    }

    /// CSV rows `index,eigenvalue`.
    pub fn write_spectrum_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["index", "eigenvalue"])?;
        for (i, v) in self.eigenvalues.iter().enumerate() {
            wr.write_record([i.to_string(), format!("{v:e}")])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Dense matrix of `L`, one CSV row per matrix row.
    pub fn write_matrix_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for r in 0..self.matrix.nrows() {
            wr.write_record(self.matrix.row(r).iter().map(|v| format!("{v:e}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn w_field(&self) -> GridField {
        GridField::from_real(self.lattice, self.w.clone()).expect("layout")
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OperatorNormReport {
    pub measured: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `||L|| <= (d N^2 / l^2) min(4 pi^2 + 2606 Delta_W (ln N)^2, 4 pi^2 e^{Delta_W})`.
pub fn operator_norm_bound(lat: &TorusLattice, delta_w: f64) -> f64 {
    let n = lat.n() as f64;
    let pre = lat.d() as f64 * n * n / (lat.l() * lat.l());
    let fp = 4.0 * PI * PI;
    pre * (fp + 2606.0 * delta_w * n.ln().powi(2)).min(fp * delta_w.exp())
}

pub fn operator_norm_check(op: &FpOperator) -> Result<OperatorNormReport> {
    if op.lattice.n() <= 3 {
        return Err(Error::Precondition(format!("operator norm bound needs N > 3, got {}", op.lattice.n())));
    }
    let measured = op.matrix.clone().singular_values().max();
    let bound = operator_norm_bound(&op.lattice, op.delta_w);
    Ok(OperatorNormReport { measured, bound, holds: measured <= bound * (1.0 + 1e-10) })
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub kappa: f64,
    pub kappa_closed_form: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `kappa_V` for `V = U Q`; numerically via singular values when the lattice is small.
pub fn condition_number_check(op: &FpOperator) -> ConditionReport {
    let kappa_closed_form = (0.5 * op.grid_delta_w()).exp();
    let kappa = if op.w.len() <= 1024 {
        let u = DMatrix::from_diagonal(&DVector::from_iterator(op.w.len(), op.w.iter().map(|w| (-0.5 * w).exp())));
        let sv = (u * &op.eigenvectors).singular_values();
        sv.max() / sv.min()
    } else {
        kappa_closed_form
    };
    let bound = (0.5 * op.delta_w).exp();
    ConditionReport { kappa, kappa_closed_form, bound, holds: kappa <= bound * (1.0 + 1e-10) }
}

#[derive(Clone, Debug, Serialize)]
pub struct PoincareReport {
    pub gap: f64,
    pub floor: f64,
    pub holds: bool,
}

/// Spectral gap against `4 pi^2 / (l^2 e^{Delta_W})` with 5% slack.
pub fn poincare_report(op: &FpOperator) -> PoincareReport {
    let l = op.lattice.l();
    let floor = 4.0 * PI * PI / (l * l * op.delta_w.exp());
    let gap = op.gap();
    PoincareReport { gap, floor, holds: gap >= 0.95 * floor }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::make_lattice;
    use crate::potential::{cosine_potential, zero_potential};

    #[test]
    fn zero_potential_is_laplacian() {
        let lat = make_lattice(1, 1, 2.0 * PI).unwrap();
        let op = build_generator(&zero_potential(1, 2.0 * PI).unwrap(), &lat, true).unwrap();
        let ev = op.eigenvalues();
        assert_eq!(ev[0], 0.0);
        assert!((ev[1] + 1.0).abs() < 1e-12 && (ev[2] + 1.0).abs() < 1e-12);
        assert!((op.gap() - 1.0).abs() < 1e-12);
        let p = poincare_report(&op);
        assert!((p.floor - 1.0).abs() < 1e-12 && p.holds);
    }

    #[test]
    fn zero_potential_norm_equals_bound() {
        let lat = make_lattice(2, 5, 1.0).unwrap();
        let op = build_generator(&zero_potential(2, 1.0).unwrap(), &lat, true).unwrap();
        let r = operator_norm_check(&op).unwrap();
        let want = 2.0 * (2.0 * PI * 5.0).powi(2);
        assert!((r.measured - want).abs() < 1e-9 * want);
        assert!((r.bound - want).abs() < 1e-9 * want && r.holds);
        let c = condition_number_check(&op);
        assert!((c.kappa - 1.0).abs() < 1e-12 && c.holds);
    }

    #[test]
    fn kernel_is_gibbs_direction() {
        let l = 1.0;
        let lat = make_lattice(1, 8, l).unwrap();
        let e = cosine_potential(2.0, 1, l).unwrap();
        let op = build_generator(&e, &lat, false).unwrap();
        assert_eq!(op.kernel_dimension(1e-8), 1);
        assert!(op.kernel_cosine() > 1.0 - 1e-12);
        let st = op.stationary();
        let r = op.apply(&st);
        assert!(r.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-9 * op.matrix().norm());
        let c = condition_number_check(&op);
        assert!((c.kappa - c.kappa_closed_form).abs() < 1e-9 * c.kappa);
        assert!(c.holds);
    }

    #[test]
    fn norm_check_needs_large_n() {
        let lat = make_lattice(1, 3, 1.0).unwrap();
        let op = build_generator(&cosine_potential(1.0, 1, 1.0).unwrap(), &lat, true).unwrap();
        assert!(matches!(operator_norm_check(&op), Err(Error::Precondition(_))));
    }

    #[test]
    fn cap_is_enforced() {
        let lat = TorusLattice::fine(1, 2048, 1.0).unwrap();
        let e = zero_potential(1, 1.0).unwrap();
        assert!(matches!(build_generator(&e, &lat, true), Err(Error::Size(_))));
    }
}
