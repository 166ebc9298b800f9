//! Gaussian mutual information and how it tracks CKA across correlation levels.

use ckasr::diagnostics::{cka_mi_association, gaussian_mi, rho_grid_family, GaussianSample, MiConvention};
use ckasr::Rng;

fn main() -> ckasr::Result<()> {
    let mut rng = Rng::new(5);
    let pair = GaussianSample::correlated_pair(0.6, 20_000, &mut rng)?;
    println!(
        "rho = 0.6: MI {:.5} (appendix), {:.5} (standard); closed form -ln(1 - rho^2) = {:.5}",
        gaussian_mi(&pair, MiConvention::Appendix)?,
        gaussian_mi(&pair, MiConvention::Standard)?,
        -(1.0f64 - 0.36).ln()
    );

    let family = rho_grid_family(2000, &mut rng)?;
    let assoc = cka_mi_association(&family, MiConvention::Appendix)?;
    print!("{}", assoc.to_csv());
    println!("spearman(CKA, MI) = {:.4}", assoc.spearman);
    Ok(())
}
