//! Cubic B-spline bases on the age axis: dimension, Gram and penalty
//! matrices, evaluation with derivatives.
//!
//! cargo run --example basis

use fcurve::basis::{make_basis, KnotScheme};

fn main() -> fcurve::Result<()> {
    for (name, scheme) in [("31 non-uniform knots", KnotScheme::NonUniform31), ("111 uniform knots", KnotScheme::Uniform111)] {
        let b = make_basis(&scheme, 4)?;
        let (lo, hi) = b.domain();
        println!("{name}: p = {} on [{lo}, {hi}]", b.dim());

        let w = b.gram();
        let r = b.penalty();
        // ∫ Σ_k B_k = domain length
        println!("  sum of Gram entries      {:.6}", w.sum());
        println!("  penalty of a line        {:.2e}", {
            let c = b.affine_coefficients(1.0, 0.5);
            (c.transpose() * r * &c)[(0, 0)]
        });
        println!("  smallest Gram eigenvalue {:.3e}", w.symmetric_eigenvalues().min());
    }

    let b = make_basis(&KnotScheme::NonUniform31, 4)?;
    println!("\nbasis values near birth (first five functions):");
    for t in [0.0, 0.1, 0.5, 1.5, 5.0] {
        let v = b.eval(t, 0)?;
        let d = b.eval(t, 1)?;
        let head: Vec<String> = v.iter().take(5).map(|x| format!("{x:.3}")).collect();
        println!("  t = {t:<4} B = [{}]  ΣB = {:.3}  ΣB' = {:.1e}", head.join(", "), v.sum(), d.sum());
    }

    // a curve defined by coefficients, with its first two derivatives
    let coefs: Vec<f64> = b.greville().iter().map(|g| (-(g - 75.0).powi(2) / 200.0).exp()).collect();
    for age in [60.0, 75.0, 90.0] {
        println!(
            "  x({age}) = {:.4}  x' = {:+.4}  x'' = {:+.5}",
            b.eval_curve(&coefs, age, 0)?,
            b.eval_curve(&coefs, age, 1)?,
            b.eval_curve(&coefs, age, 2)?
        );
    }
    Ok(())
}
