//! Penalized smoothing of noisy curves with the roughness parameter chosen
//! by generalized cross-validation, per curve and panel-wide.
//!
//! cargo run --release --example smoothing_gcv

use fcurve::basis::{make_basis, KnotScheme};
use fcurve::ingest::Sex;
use fcurve::smooth::{default_lambda_grid, select_lambda, smooth_panel, LambdaMode, PenalizedSmoother};
use fcurve::synthetic::{mortality_panel, three_template_curves};

fn main() -> fcurve::Result<()> {
    let basis = make_basis(&KnotScheme::NonUniform31, 4)?;
    let ages: Vec<f64> = (0..=110).map(f64::from).collect();
    let grid = default_lambda_grid();

    let (curves, _) = three_template_curves(1, 5e-4, 7);
    let y = &curves[1];
    let sel = select_lambda(y, &ages, &basis, &grid)?;
    println!("GCV profile for one noisy curve:");
    for f in sel.fits.iter().step_by(4) {
        println!("  λ = {:9.3e}  df = {:6.2}  GCV = {:.4e}", f.lambda, f.df, f.gcv.unwrap_or(f64::NAN));
    }
    println!("selected λ = {:.3e} (df {:.2})", sel.lambda, sel.best.df);

    // the same factorization serves every curve observed on the same ages
    let smoother = PenalizedSmoother::new(&basis, &ages)?;
    let factor = smoother.factor(sel.lambda)?;
    let fit = smoother.fit_with(&factor, y)?;
    let peak = ages
        .iter()
        .map(|&a| (a, basis.eval_curve(fit.coefficients.as_slice(), a, 0).unwrap()))
        .fold((0.0, f64::MIN), |m, p| if p.1 > m.1 { p } else { m });
    println!("smoothed modal age ≈ {:.0}, density {:.4}", peak.0, peak.1);

    let panel = mortality_panel(&["AAA", "BBB", "CCC"], (1960, 2010), Sex::Female, 1)?;
    for mode in [LambdaMode::Common, LambdaMode::PerCurve] {
        let ds = smooth_panel(&panel, &basis, mode, &grid)?;
        let (lo, hi) = ds
            .lambdas
            .iter()
            .fold((f64::MAX, f64::MIN), |(lo, hi), &l| (lo.min(l), hi.max(l)));
        println!("{mode:?}: {} curves, λ range [{lo:.3e}, {hi:.3e}]", ds.n());
    }
    Ok(())
}
