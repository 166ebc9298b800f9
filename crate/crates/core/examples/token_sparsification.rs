//! Down-weights tokens that duplicate others before choosing which to keep.

use ckasr::sparsify::{token_keep_probs, token_select, TokenBatch};
use ckasr::{FeatureMap, Rng};

fn main() -> ckasr::Result<()> {
    let mut rng = Rng::new(8);
    let base = rng.gaussian_matrix(32, 6);
    let mut tokens = Vec::new();
    // tokens 0..3 are near copies of one signal, 3..6 are independent
    for i in 0..6 {
        let x = if i < 3 {
            base.add(&rng.gaussian_matrix(32, 6).scale(0.05))?
        } else {
            rng.gaussian_matrix(32, 6)
        };
        tokens.push(FeatureMap::from_matrix(x)?);
    }
    let probs = vec![0.9, 0.85, 0.8, 0.6, 0.55, 0.5];
    let batch = TokenBatch::new(tokens, probs.clone())?;
    let adjusted = token_keep_probs(&batch)?;
    for (i, (p, a)) in probs.iter().zip(&adjusted).enumerate() {
        println!("token {i}: predictor {p:.2}  adjusted {a:+.3}");
    }
    println!("keep half by predictor: {:?}", token_select(&probs, 0.5)?);
    println!("keep half after adjustment: {:?}", token_select(&adjusted, 0.5)?);
    Ok(())
}
