//! Built-in example systems.

use nalgebra::{DMatrix, DVector};

use crate::decomp::PencilDecomposition;
use crate::integrate::FreeComponent;
use crate::pencil::Pencil;
use crate::reduce::{build_reduced_system, ReducedSystem, SemilinearDAE};

/// The 3x3 singular pencil of rank 2 used throughout the examples.
pub fn example_pencil() -> Pencil {
    Pencil::new(
        DMatrix::from_row_slice(3, 3, &[1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]),
        DMatrix::from_row_slice(3, 3, &[1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 0.0, 2.0, 0.0]),
    )
    .expect("valid pencil")
}

fn col(v: [f64; 3]) -> DMatrix<f64> {
    DMatrix::from_column_slice(3, 1, &v)
}

/// Decomposition of [`example_pencil`] built from the hand-derived bases
/// `s1 = (1,0,0)`, `s2 = (1,0,1)`, `p = (0,1,0)` and
/// `l1 = (1,0,0)`, `l2 = (0,1,0)`, `q = (-1/2, 1/2, 1)`.
pub fn example_decomposition() -> PencilDecomposition {
    let empty = DMatrix::zeros(3, 0);
    PencilDecomposition::from_bases(
        &example_pencil(),
        [&col([1.0, 0.0, 0.0]), &col([1.0, 0.0, 1.0]), &empty, &col([0.0, 1.0, 0.0])],
        [&col([1.0, 0.0, 0.0]), &col([0.0, 1.0, 0.0]), &empty, &col([-0.5, 0.5, 1.0])],
        1e-10,
    )
    .expect("hand-derived bases split the pencil")
}

/// The worked-example pencil with the hand-derived decomposition and a given `f`.
pub fn example_reduced<F>(f: F) -> ReducedSystem
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
{
    build_reduced_system(SemilinearDAE::new(example_pencil(), f), example_decomposition())
        .expect("shapes agree")
}

/// `f = (0, x1 - x3, 0)`, `phi_s2(t) = sin(t) (1,0,1)`, `x0 = (1,0,0)`.
///
/// Exact solution: `x1 - x3 = e^-t`, `x2 = 0`, `x3 = sin t`.
pub fn example_analytic() -> (ReducedSystem, FreeComponent, DVector<f64>) {
    let dae = SemilinearDAE::new(example_pencil(), |_, x| DVector::from_vec(vec![0.0, x[0] - x[2], 0.0]))
        .with_jacobian(|_, _| DMatrix::from_row_slice(3, 3, &[0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0]));
    let rs = build_reduced_system(dae, example_decomposition()).expect("shapes agree");
    let phi = FreeComponent::new("sin(t) (1,0,1)", |t| DVector::from_vec(vec![t.sin(), 0.0, t.sin()]));
    (rs, phi, DVector::from_vec(vec![1.0, 0.0, 0.0]))
}

/// `f = ((x1-x3)^2, x1 - x3, 0)`, `phi_s2 = 0`, `x0 = (2,0,0)`.
///
/// `w = x1 - x3` obeys `w' = -w + w^2` and escapes at `ln 2`.
pub fn example_blowup() -> (ReducedSystem, FreeComponent, DVector<f64>) {
    let dae = SemilinearDAE::new(example_pencil(), |_, x| {
        let w = x[0] - x[2];
        DVector::from_vec(vec![w * w, w, 0.0])
    })
    .with_jacobian(|_, x| {
        let w = x[0] - x[2];
        DMatrix::from_row_slice(3, 3, &[2.0 * w, 0.0, -2.0 * w, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0])
    });
    let rs = build_reduced_system(dae, example_decomposition()).expect("shapes agree");
    (rs, FreeComponent::zero(3), DVector::from_vec(vec![2.0, 0.0, 0.0]))
}
