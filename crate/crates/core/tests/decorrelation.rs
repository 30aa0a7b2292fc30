use noiseprop::network::{decorrelation_update_batch, off_diagonal_covariance};
use noiseprop::numerics::Matrix;
use noiseprop::rng::stream_rng;
use rand::Rng;
use rand_distr::StandardNormal;

const DIM: usize = 10;

/// Lower-triangular factor `L` with `L Lᵀ = Q diag(λ) Qᵀ`, where `λ` spans
/// `[1, cond]` geometrically and `Q` comes from Gram-Schmidt on a Gaussian
/// matrix. Rows drawn as `L z` then have covariance condition number `cond`.
fn correlated_factor(cond: f64, seed: u64) -> Matrix {
    let mut rng = stream_rng(seed, 0);
    let mut q: Vec<Vec<f64>> = (0..DIM)
        .map(|_| (0..DIM).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    for i in 0..DIM {
        let (done, rest) = q.split_at_mut(i);
        for qj in done.iter() {
            let d: f64 = rest[0].iter().zip(qj).map(|(a, b)| a * b).sum();
            rest[0].iter_mut().zip(qj).for_each(|(a, b)| *a -= d * b);
        }
        let n = q[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        q[i].iter_mut().for_each(|v| *v /= n);
    }
    // Columns of Q scaled by sqrt(λ): A = Q diag(sqrt λ), so A Aᵀ = Σ.
    Matrix::from_fn(DIM, DIM, |r, c| {
        let lambda = cond.powf(c as f64 / (DIM - 1) as f64);
        q[c][r] * lambda.sqrt()
    })
}

fn draw(a: &Matrix, n: usize, rng: &mut impl Rng) -> Matrix {
    let z = Matrix::from_fn(n, DIM, |_, _| rng.sample(StandardNormal));
    z.matmul(&a.transpose()).unwrap()
}

fn decorrelated(r: &Matrix, x: &Matrix) -> Matrix {
    x.matmul(&r.transpose()).unwrap()
}

fn run(cond: f64, iterations: usize, eps: f64, seed: u64) -> (f64, f64) {
    let a = correlated_factor(cond, seed);
    let mut rng = stream_rng(seed, 1);
    let probe = draw(&a, 20_000, &mut rng);
    let mut r = Matrix::identity(DIM);
    let before = off_diagonal_covariance(&decorrelated(&r, &probe)).unwrap();
    for _ in 0..iterations {
        let batch = draw(&a, 64, &mut rng);
        let xbar = decorrelated(&r, &batch);
        decorrelation_update_batch(&mut r, &xbar, eps).unwrap();
    }
    assert!(r.is_finite());
    (before, off_diagonal_covariance(&decorrelated(&r, &probe)).unwrap())
}

#[test]
fn strongly_correlated_data_is_decorrelated_within_100_iterations() {
    for seed in 0..5 {
        let (before, after) = run(100.0, 100, 0.01, seed);
        assert!(after <= 0.5 * before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn decorrelation_keeps_improving() {
    let (before, mid) = run(100.0, 100, 0.01, 7);
    let (_, late) = run(100.0, 400, 0.01, 7);
    assert!(late < mid && mid < before, "{before} {mid} {late}");
}

#[test]
fn white_data_stays_white() {
    let (before, after) = run(1.0, 200, 0.01, 3);
    // Only sampling noise in the off-diagonal; the rule must not amplify it.
    assert!(after < 2.0 * before + 0.05, "{before} -> {after}");
}
