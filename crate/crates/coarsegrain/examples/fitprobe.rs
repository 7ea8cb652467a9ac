use coarsegrain::mle::*;
use coarsegrain::model::*;
use coarsegrain::rng;
use rand_distr::{Distribution, StandardNormal};
use std::time::Instant;

fn probe(k: usize, d: usize, n: usize, trials: usize, scale: f64, seed: u64) {
    let model = SoftmaxModel::linear_pinned(d, k).unwrap();
    let mut r = rng::stream(seed, &[]);
    let theta_star: Vec<f64> = (0..model.param_count())
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r))
        .collect();
    let dist = InputDistribution::UniformCube { dim: d };
    let cfg = FitConfig::default();
    let t0 = Instant::now();
    let (mut bad_y, mut bad_z) = (0, 0);
    for trial in 0..trials {
        let tseed = rng::derive(seed, &[0x01, trial as u64]);
        let data = sample_dataset(&model, &theta_star, &dist, n, tseed).unwrap();
        let fy = fit_mle(&model, &data, LikelihoodMode::Multiclass, &cfg, &vec![0.0; model.param_count()]).unwrap();
        let fz = fit_mle(&model, &data, LikelihoodMode::Binary { target: 0 }, &cfg, &vec![0.0; model.param_count()]).unwrap();
        if !fy.converged { bad_y += 1; }
        if !fz.converged { bad_z += 1; }
    }
    println!("cube K={k} d={d} n={n} scale={scale}: bad=({bad_y},{bad_z})/{trials} elapsed={:?}", t0.elapsed());
}

fn main() {
    probe(3, 1, 800, 30, 0.8, 104);
    probe(3, 2, 1000, 30, 0.8, 105);
}
