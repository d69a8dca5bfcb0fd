//! Pencils with prescribed Kronecker structure, hidden behind random
//! invertible transformations. Used to test decompositions against known
//! block dimensions.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::linalg;
use crate::pencil::Pencil;

/// Block structure: underdetermined `L_eps` blocks, overdetermined `L_eta^T`
/// blocks, a finite block of size `finite`, `infinite` index-one infinite
/// eigenvalues and `nilpotent2` index-two blocks of size 2.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KroneckerSpec {
    pub eps: Vec<usize>,
    pub etas: Vec<usize>,
    pub finite: usize,
    pub infinite: usize,
    pub nilpotent2: usize,
}

impl KroneckerSpec {
    /// `(m, n)`.
    pub fn shape(&self) -> (usize, usize) {
        let m = self.eps.iter().sum::<usize>()
            + self.etas.iter().map(|e| e + 1).sum::<usize>()
            + self.finite
            + self.infinite
            + 2 * self.nilpotent2;
        let n = self.eps.iter().map(|e| e + 1).sum::<usize>()
            + self.etas.iter().sum::<usize>()
            + self.finite
            + self.infinite
            + 2 * self.nilpotent2;
        (m, n)
    }

    /// Expected `(dim X_s1, dim X_s2, dim X_1, dim X_2)`.
    pub fn expected_x_dims(&self) -> [usize; 4] {
        let core = self.eps.iter().sum::<usize>() + self.etas.iter().sum::<usize>();
        [core, self.eps.len(), self.finite, self.infinite]
    }

    /// Expected `(dim Y_s1, dim Y_s2, dim Y_1, dim Y_2)`.
    pub fn expected_y_dims(&self) -> [usize; 4] {
        let core = self.eps.iter().sum::<usize>() + self.etas.iter().sum::<usize>();
        [core, self.etas.len(), self.finite, self.infinite]
    }

    /// Block-diagonal canonical pair `(A, B)`; the finite block has random `B`.
    pub fn canonical<R: Rng>(&self, rng: &mut R) -> (DMatrix<f64>, DMatrix<f64>) {
        let mut blocks: Vec<(DMatrix<f64>, DMatrix<f64>)> = Vec::new();
        for &e in &self.eps {
            let mut a = DMatrix::zeros(e, e + 1);
            let mut b = DMatrix::zeros(e, e + 1);
            for i in 0..e {
                a[(i, i)] = 1.0;
                b[(i, i + 1)] = 1.0;
            }
            blocks.push((a, b));
        }
        if self.finite > 0 {
            blocks.push((DMatrix::identity(self.finite, self.finite), gaussian(rng, self.finite, self.finite)));
        }
        if self.infinite > 0 {
            blocks.push((
                DMatrix::zeros(self.infinite, self.infinite),
                DMatrix::identity(self.infinite, self.infinite),
            ));
        }
        for _ in 0..self.nilpotent2 {
            blocks.push((
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
                DMatrix::identity(2, 2),
            ));
        }
        for &e in &self.etas {
            let mut a = DMatrix::zeros(e + 1, e);
            let mut b = DMatrix::zeros(e + 1, e);
            for i in 0..e {
                a[(i, i)] = 1.0;
                b[(i + 1, i)] = 1.0;
            }
            blocks.push((a, b));
        }
        let (m, n) = self.shape();
        let mut a = DMatrix::zeros(m, n);
        let mut b = DMatrix::zeros(m, n);
        let (mut r, mut c) = (0, 0);
        for (ba, bb) in blocks {
            a.view_mut((r, c), ba.shape()).copy_from(&ba);
            b.view_mut((r, c), bb.shape()).copy_from(&bb);
            r += ba.nrows();
            c += ba.ncols();
        }
        (a, b)
    }
}

/// Matrix of independent standard normal entries.
pub fn gaussian<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

/// Random invertible matrix with condition number at most `max_cond`.
pub fn random_invertible<R: Rng>(rng: &mut R, k: usize, max_cond: f64) -> DMatrix<f64> {
    loop {
        let g = gaussian(rng, k, k);
        if linalg::condition_number(&g) <= max_cond {
            return g;
        }
    }
}

/// `L * canonical * R` with random invertible `L`, `R`.
pub fn synthesize<R: Rng>(spec: &KroneckerSpec, rng: &mut R) -> Pencil {
    let (a, b) = spec.canonical(rng);
    let (m, n) = spec.shape();
    let l = random_invertible(rng, m, 1e3);
    let r = random_invertible(rng, n, 1e3);
    Pencil::new(&l * a * &r, &l * b * &r).expect("synthesized pencil is well formed")
}

/// Random index-one structure with `m <= max_m`, `n <= max_n`, both positive.
pub fn random_spec<R: Rng>(rng: &mut R, max_m: usize, max_n: usize) -> KroneckerSpec {
    loop {
        let mut spec = KroneckerSpec::default();
        for _ in 0..rng.random_range(0..=3) {
            spec.eps.push(rng.random_range(0..=3));
        }
        for _ in 0..rng.random_range(0..=2) {
            spec.etas.push(rng.random_range(0..=2));
        }
        spec.finite = rng.random_range(0..=4);
        spec.infinite = rng.random_range(0..=3);
        let (m, n) = spec.shape();
        if m >= 1 && n >= 1 && m <= max_m && n <= max_n {
            return spec;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_and_dims_are_consistent() {
        let spec = KroneckerSpec {
            eps: vec![0, 2, 1],
            etas: vec![1, 0],
            finite: 3,
            infinite: 2,
            nilpotent2: 0,
        };
        assert_eq!(spec.shape(), (11, 12));
        assert_eq!(spec.expected_x_dims(), [4, 3, 3, 2]);
        assert_eq!(spec.expected_y_dims(), [4, 2, 3, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = synthesize(&spec, &mut rng);
        assert_eq!((p.m(), p.n()), (11, 12));
    }
}
