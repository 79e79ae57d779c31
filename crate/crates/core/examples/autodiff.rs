//! Reverse-mode gradients on the tape, checked against central differences.

use genrec::numeric::{grad_check, FlopKind, Matrix, Tape};

fn main() -> genrec::Result<()> {
    let x = Matrix::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.25, -0.5]])?;
    let w = Matrix::from_rows(&[[0.1, 0.2], [-0.3, 0.4], [0.5, -0.6]])?;

    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let wv = tape.leaf(w.clone());
    let h = tape.matmul(xv, wv, FlopKind::Projection)?;
    let h = tape.silu(h);
    let loss = tape.sum(h);
    let grads = tape.backward(loss)?;

    println!("loss = {:.6}", tape.value(loss).get(0, 0));
    println!("dloss/dw = {:?}", grads.wrt(wv).to_f64_rows());
    println!("flops = {:?}", tape.flops());

    let err = grad_check(&[w], 1e-6, |t, v| {
        let xv = t.constant(x.clone());
        let h = t.matmul(xv, v[0], FlopKind::Projection)?;
        let h = t.silu(h);
        Ok(t.sum(h))
    })?;
    println!("max relative error vs finite differences: {err:.2e}");
    Ok(())
}
