//! Per-op timing probe. Run: cargo test --release --test perf_ops -- --ignored --nocapture

use std::time::Instant;

use sacseg::rng::{seeded, uniform_tensor};
use sacseg::tensor::{conv2d_direct, im2col, ConvSpec, Tensor};

fn time<F: FnMut()>(label: &str, iters: usize, mut f: F) {
    let t0 = Instant::now();
    for _ in 0..iters {
        f();
    }
    println!("{label}: {:?}/iter", t0.elapsed() / iters as u32);
}

#[test]
#[ignore]
fn time_ops() {
    let mut rng = seeded(1);
    let x = uniform_tensor::<f64>(&mut rng, &[2, 8, 64, 512], -1.0, 1.0);
    let w = uniform_tensor::<f64>(&mut rng, &[8, 8, 3, 3], -0.3, 0.3);
    let spec = ConvSpec::new(
        Tensor::param(&[8, 8, 3, 3], w.to_vec()),
        None,
        1,
        1,
    )
    .unwrap();

    time("conv3x3 8->8 @64x512 fwd (37.7 MMAC)", 5, || {
        let _ = conv2d_direct(&x, &spec);
    });

    let xp = Tensor::<f64>::param(&[2, 8, 64, 512], x.to_vec());
    time("conv3x3 fwd+bwd", 3, || {
        let y = conv2d_direct(&xp, &spec);
        y.sum_all().backward();
        xp.zero_grad();
        spec.weight().zero_grad();
    });

    time("im2col K3 @64x512", 5, || {
        let _ = im2col(&x, 3, 1);
    });

    let big = uniform_tensor::<f64>(&mut rng, &[2, 72, 64, 512], -1.0, 1.0);
    let big2 = uniform_tensor::<f64>(&mut rng, &[2, 72, 64, 512], -1.0, 1.0);
    time("mul same-shape 4.7M elems", 5, || {
        let _ = big.mul(&big2);
    });

    let bigp = Tensor::<f64>::param(&[2, 72, 64, 512], big.to_vec());
    time("mul fwd+bwd 4.7M", 3, || {
        let y = bigp.mul(&big2);
        y.sum_all().backward();
        bigp.zero_grad();
    });

    time("leaky_relu 4.7M", 5, || {
        let _ = big.leaky_relu(0.1);
    });

    let attw = uniform_tensor::<f64>(&mut rng, &[72, 3, 3, 3], -0.3, 0.3);
    let attspec = ConvSpec::new(Tensor::param(&[72, 3, 3, 3], attw.to_vec()), None, 1, 1).unwrap();
    let coord = uniform_tensor::<f64>(&mut rng, &[2, 3, 64, 512], -1.0, 1.0);
    time("attention conv 3->72 K3 (127 MMAC)", 3, || {
        let _ = conv2d_direct(&coord, &attspec);
    });

    let cols = uniform_tensor::<f64>(&mut rng, &[2, 72, 64, 512], -1.0, 1.0);
    let w1 = uniform_tensor::<f64>(&mut rng, &[8, 72, 1, 1], -0.3, 0.3);
    let spec1 = ConvSpec::new(Tensor::param(&[8, 72, 1, 1], w1.to_vec()), None, 1, 0).unwrap();
    time("1x1 conv 72->8 (37.7 MMAC)", 5, || {
        let _ = conv2d_direct(&cols, &spec1);
    });
}
