//! Logistic regression on the tape: forward, backward, a few SGD steps, and
//! a central-difference check of one gradient entry.
//!
//!     cargo run --example autodiff_basics

use gpnn::{Tape, Tensor};

fn loss(w: &Tensor, x: &Tensor, y: &Tensor) -> f64 {
    let mut tape = Tape::inference();
    let (w, x, y) = (
        tape.constant(w.clone()),
        tape.constant(x.clone()),
        tape.constant(y.clone()),
    );
    let z = tape.matmul(x, w).unwrap();
    let p = tape.sigmoid(z).unwrap();
    let d = tape.sub(p, y).unwrap();
    let sq = tape.mul(d, d).unwrap();
    let m = tape.mean_all(sq).unwrap();
    tape.value(m).item()
}

fn main() -> gpnn::Result<()> {
    // Four points, two features plus a bias column; label = first feature > 0.
    let x = Tensor::from_rows(&[
        vec![1.0, 0.5, 1.0],
        vec![-1.0, 0.3, 1.0],
        vec![0.8, -0.7, 1.0],
        vec![-0.6, -0.2, 1.0],
    ])?;
    let y = Tensor::from_rows(&[vec![1.0], vec![0.0], vec![1.0], vec![0.0]])?;
    let mut w = Tensor::zeros(&[3, 1]);

    for step in 0..=200 {
        let mut tape = Tape::new();
        let wv = tape.param(w.clone());
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let z = tape.matmul(xv, wv)?;
        let p = tape.sigmoid(z)?;
        let d = tape.sub(p, yv)?;
        let sq = tape.mul(d, d)?;
        let l = tape.mean_all(sq)?;
        tape.backward(l)?;
        let g = tape.grad(wv)?.clone();
        if step % 50 == 0 {
            println!(
                "step {step:3}  loss {:.5}  w {:?}",
                tape.value(l).item(),
                w.data()
            );
        }
        if step == 0 {
            let h = 1e-6;
            let (mut plus, mut minus) = (w.clone(), w.clone());
            plus.data_mut()[0] += h;
            minus.data_mut()[0] -= h;
            let numeric = (loss(&plus, &x, &y) - loss(&minus, &x, &y)) / (2.0 * h);
            println!("dL/dw0 analytic {:.9} numeric {numeric:.9}", g.data()[0]);
        }
        for (wi, gi) in w.data_mut().iter_mut().zip(g.data()) {
            *wi -= 2.0 * gi;
        }
    }
    Ok(())
}
