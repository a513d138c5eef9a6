//! Reverse-mode gradients on the tape, checked against central finite
//! differences, and a stop-gradient that blocks flow into one input.

use eta::tensor::gradcheck::GradCheckOptions;
use eta::tensor::{grad_check, Graph, Tensor};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let x = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let w = Tensor::new(vec![4, 2], (0..8).map(|i| (i as f64 * 0.61).cos()).collect())?;

    let report = grad_check(
        |_, v| {
            let h = v[0].layer_norm()?.matmul(v[1])?.gelu()?;
            h.mul(h.sigmoid()?)?.sum()
        },
        &[x.clone(), w.clone()],
        &GradCheckOptions::default(),
    )?;
    println!(
        "{} coordinates checked, worst relative error {:.2e}",
        report.coords_checked,
        report.max_rel_err()
    );

    let g = Graph::new();
    let (vx, vw) = (g.variable(x), g.variable(w));
    let loss = vx.stop_grad().matmul(vw)?.sum()?;
    let grads = g.backward(loss)?;
    println!("gradient reaches w: {}", grads.wrt(vw).is_some());
    println!("gradient reaches x through stop_grad: {}", grads.wrt(vx).is_some());
    Ok(())
}
