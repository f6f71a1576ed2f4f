//! Functional PCA of a smoothed panel: explained variance, harmonic
//! effects, reconstruction error and score trajectories.
//!
//! cargo run --release --example fpca -- [output-dir]

use std::path::PathBuf;

use fcurve::basis::{make_basis, KnotScheme};
use fcurve::fpca::fpca;
use fcurve::ingest::Sex;
use fcurve::report::{effect_series, plot_curves, trajectory_plot, write_text, PlotStyle};
use fcurve::smooth::{default_lambda_grid, smooth_panel, LambdaMode};
use fcurve::synthetic::mortality_panel;

fn main() -> fcurve::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("fcurve-examples/fpca"), PathBuf::from);
    std::fs::create_dir_all(&out).map_err(|e| fcurve::FcurveError::io(&out, e))?;

    let countries = ["DNK", "SWE", "JPN", "FRATNP", "CZE", "USA", "RUS"];
    let panel = mortality_panel(&countries, (1960, 2010), Sex::Male, 3)?;
    let basis = make_basis(&KnotScheme::NonUniform31, 4)?;
    let ds = smooth_panel(&panel, &basis, LambdaMode::Common, &default_lambda_grid())?;
    let res = fpca(&ds)?;

    let cum = res.cumulative_varprop();
    for l in 0..4 {
        println!(
            "PC{}: eigenvalue {:.3e}, share {:5.2}%, cumulative {:5.2}%",
            l + 1,
            res.eigenvalues[l],
            100.0 * res.varprop[l],
            100.0 * cum[l]
        );
    }

    let i = ds.keys.iter().position(|k| k.country == "FRATNP" && k.year == 2010).unwrap();
    print!("reconstruction error of {} by q:", ds.keys[i]);
    for q in [1, 2, 4, 6, 10] {
        print!("  {q}:{:.2e}", res.reconstruction_error(&ds, i, q)?);
    }
    println!();

    for l in 0..2 {
        let (plus, minus) = res.harmonic_effect(l, 2.0)?;
        let series = effect_series(&basis, plus.as_slice(), minus.as_slice(), res.mean_coeffs.as_slice(), &ds.grid)?;
        let style = PlotStyle::titled(&format!("PC{} ({:.1}%)", l + 1, 100.0 * res.varprop[l]));
        write_text(&out.join(format!("harmonic_{}.svg", l + 1)), &plot_curves(&series, &style, None))?;
    }
    let style = PlotStyle {
        x_label: "PC1".into(),
        y_label: "PC2".into(),
        ..PlotStyle::titled("decadal score trajectories")
    };
    write_text(&out.join("trajectories.svg"), &trajectory_plot(&res.scores(2)?, &ds.keys, 10, &style, None)?)?;
    println!("plots written to {}", out.display());
    Ok(())
}
