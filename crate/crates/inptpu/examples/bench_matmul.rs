use ndarray::Array2;
use std::time::Instant;

fn main() {
    for &(m, k, n) in &[(1024usize, 128usize, 128usize), (1024, 1024, 128), (512, 512, 512)] {
        let a = Array2::<f32>::from_elem((m, k), 1.001);
        let b = Array2::<f32>::from_elem((k, n), 0.999);
        let t0 = Instant::now();
        let mut reps = 0u32;
        let mut acc = 0.0f32;
        while t0.elapsed().as_secs_f64() < 1.0 {
            let c = a.dot(&b);
            acc += c[[0, 0]];
            reps += 1;
        }
        let el = t0.elapsed().as_secs_f64();
        let flops = 2.0 * m as f64 * k as f64 * n as f64 * reps as f64 / el;
        println!("{}x{}x{}: {:.2} GFLOP/s ({} reps, acc={})", m, k, n, flops / 1e9, reps, acc);
    }
    // two threads via rayon
    use rayon::prelude::*;
    let a = Array2::<f32>::from_elem((1024, 1024), 1.001);
    let b = Array2::<f32>::from_elem((1024, 128), 0.999);
    let t0 = Instant::now();
    let mut reps = 0;
    let mut acc = 0.0f32;
    while t0.elapsed().as_secs_f64() < 1.0 {
        let cs: Vec<Array2<f32>> = (0..2).into_par_iter().map(|_| a.dot(&b)).collect();
        acc += cs[0][[0, 0]];
        reps += 2;
    }
    let el = t0.elapsed().as_secs_f64();
    let flops = 2.0 * 1024.0 * 1024.0 * 128.0 * reps as f64 / el;
    println!("parallel 1024x1024x128: {:.2} GFLOP/s ({} reps, acc={})", flops / 1e9, reps, acc);
}
