//! Checks taped gradients of a CKA expression against central differences.

use ckasr::autodiff::{grad_check, Tape, Var};
use ckasr::{Matrix, Rng};

// CKA between x and a fixed second representation, written with tape primitives.
fn cka_to(target: &Matrix) -> impl Fn(&mut Tape, Var) -> ckasr::Result<Var> + '_ {
    move |tape, x| {
        let y = tape.constant(target.clone());
        let kx = tape.gram(x);
        let kx = tape.center_gram(kx)?;
        let ky = tape.gram(y);
        let ky = tape.center_gram(ky)?;
        let prod = tape.mul(kx, ky)?;
        let hsic = tape.sum_all(prod);
        let xx = tape.frobenius_sq(kx);
        let yy = tape.frobenius_sq(ky);
        let nx = tape.sqrt(xx)?;
        let ny = tape.sqrt(yy)?;
        let denom = tape.mul(nx, ny)?;
        tape.div(hsic, denom)
    }
}

fn main() -> ckasr::Result<()> {
    let mut rng = Rng::new(3);
    let y = rng.gaussian_matrix(12, 4);
    for h in [1e-3, 1e-5, 1e-7] {
        let x = rng.gaussian_matrix(12, 5);
        let err = grad_check(cka_to(&y), &x, h)?;
        println!("step {h:e}: max relative error {err:.3e}");
    }

    // the same check through a ReLU layer and log-softmax
    let w = rng.gaussian_matrix(3, 5);
    let x = rng.gaussian_matrix(8, 5);
    let err = grad_check(
        |tape, w| {
            let xs = tape.constant(x.clone());
            let wt = tape.transpose(w);
            let z = tape.matmul(xs, wt)?;
            let a = tape.relu(z);
            let ls = tape.log_softmax(a);
            Ok(tape.sum_all(ls))
        },
        &w,
        1e-6,
    )?;
    println!("relu + log_softmax: max relative error {err:.3e}");
    Ok(())
}
