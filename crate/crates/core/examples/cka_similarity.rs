//! Linear CKA between feature maps, and its invariances.
//!
//! ```text
//! cargo run --example cka_similarity
//! ```

use ckasr::linalg::random_orthogonal;
use ckasr::similarity::pairwise_cka;
use ckasr::{linear_cka, linear_hsic, FeatureMap, Rng};

fn main() -> ckasr::Result<()> {
    let mut rng = Rng::new(1);
    let x = rng.gaussian_matrix(64, 10);
    let noise = rng.gaussian_matrix(64, 10);

    let fx = FeatureMap::from_matrix(x.clone())?;
    let rotated = FeatureMap::from_matrix(x.matmul(&random_orthogonal(10, &mut rng))?)?;
    let scaled = FeatureMap::from_matrix(x.scale(7.5))?;
    let unrelated = FeatureMap::from_matrix(noise.clone())?;
    let mixed = FeatureMap::from_matrix(x.add(&noise)?)?;

    println!("HSIC(x, x)          = {:.4}", linear_hsic(&fx, &fx)?);
    println!("CKA(x, x)           = {:.6}", linear_cka(&fx, &fx)?);
    println!("CKA(x, x Q)         = {:.6}", linear_cka(&fx, &rotated)?);
    println!("CKA(x, 7.5 x)       = {:.6}", linear_cka(&fx, &scaled)?);
    println!("CKA(x, x + noise)   = {:.4}", linear_cka(&fx, &mixed)?);
    println!("CKA(x, noise)       = {:.4}", linear_cka(&fx, &unrelated)?);

    let heat = pairwise_cka(&[fx, mixed, unrelated])?;
    println!("\npairwise heatmap:\n{}", heat.to_csv());
    Ok(())
}
