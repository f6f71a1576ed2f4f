//! Hierarchical clustering under the FPCA semimetric, compared across
//! linkages and truncation levels.
//!
//! cargo run --release --example distance_clustering

use nalgebra::DMatrix;

use fcurve::basis::{make_basis, KnotScheme};
use fcurve::cluster::{adjusted_rand_index, hierarchical, semimetric_fpca, semimetric_matrix, Linkage};
use fcurve::fpca::fpca;
use fcurve::smooth::{default_lambda_grid, select_lambda, FunctionalDataset};
use fcurve::synthetic::three_template_curves;

fn main() -> fcurve::Result<()> {
    let basis = make_basis(&KnotScheme::NonUniform31, 4)?;
    let ages: Vec<f64> = (0..=110).map(f64::from).collect();
    let (curves, truth) = three_template_curves(20, 2e-4, 5);
    let rows: Vec<Vec<f64>> = curves
        .iter()
        .map(|y| select_lambda(y, &ages, &basis, &default_lambda_grid()).map(|s| s.best.coefficients.as_slice().to_vec()))
        .collect::<fcurve::Result<_>>()?;
    let ds = FunctionalDataset::from_coefficients(basis.clone(), DMatrix::from_fn(rows.len(), basis.dim(), |i, j| rows[i][j]))?;
    let res = fpca(&ds)?;

    // with every component kept, the semimetric is the L2 distance
    let p = ds.p();
    println!(
        "d_p(0, 30) = {:.6e}, ‖x_0 − x_30‖ = {:.6e}",
        semimetric_fpca(&res, 0, 30, p)?,
        ds.l2_distance(0, 30)
    );

    for q in [1, 2, 4] {
        let dist = semimetric_matrix(&res, q)?;
        for linkage in [Linkage::Ward, Linkage::Complete, Linkage::Average] {
            let part = hierarchical(&dist, linkage, 3)?;
            println!(
                "q = {q}  {:<8}  sizes {:?}  ARI {:.3}",
                format!("{linkage:?}"),
                part.sizes,
                adjusted_rand_index(&part.assignments, &truth)
            );
        }
    }
    Ok(())
}
