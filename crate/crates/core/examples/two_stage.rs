//! Two-stage clustering: smooth, then k-means on basis coefficients or on
//! FPCA scores.
//!
//! cargo run --release --example two_stage

use nalgebra::DMatrix;

use fcurve::basis::{make_basis, KnotScheme};
use fcurve::cluster::{adjusted_rand_index, two_stage, Feature};
use fcurve::smooth::{default_lambda_grid, select_lambda, FunctionalDataset};
use fcurve::synthetic::three_template_curves;

fn main() -> fcurve::Result<()> {
    let basis = make_basis(&KnotScheme::NonUniform31, 4)?;
    let ages: Vec<f64> = (0..=110).map(f64::from).collect();
    let (curves, truth) = three_template_curves(20, 2e-4, 11);

    let rows: Vec<Vec<f64>> = curves
        .iter()
        .map(|y| select_lambda(y, &ages, &basis, &default_lambda_grid()).map(|s| s.best.coefficients.as_slice().to_vec()))
        .collect::<fcurve::Result<_>>()?;
    let m = DMatrix::from_fn(rows.len(), basis.dim(), |i, j| rows[i][j]);
    let ds = FunctionalDataset::from_coefficients(basis, m)?;

    for (name, feature) in [
        ("coefficients", Feature::Coefficients),
        ("2 FPCA scores", Feature::FpcaScores(2)),
        ("4 FPCA scores", Feature::FpcaScores(4)),
    ] {
        let part = two_stage(&ds, feature, 3, 42)?;
        println!(
            "{name:<14} sizes {:?}  inertia {:.3e}  ARI {:.3}",
            part.sizes,
            part.diagnostic,
            adjusted_rand_index(&part.assignments, &truth)
        );
    }
    Ok(())
}
