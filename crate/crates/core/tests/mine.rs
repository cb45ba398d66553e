use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use ser_core::losses::{estimate_mi, MineFit};

fn gaussian_pairs(n: usize, rho: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    for _ in 0..n {
        let a: f64 = StandardNormal.sample(&mut rng);
        let b: f64 = StandardNormal.sample(&mut rng);
        x.push(vec![a]);
        z.push(vec![rho * a + (1.0 - rho * rho).sqrt() * b]);
    }
    (x, z)
}

fn closed_form(rho: f64) -> f64 {
    -0.5 * (1.0 - rho * rho).ln()
}

#[test]
fn independent_gaussians_have_near_zero_estimate() {
    let (x, z) = gaussian_pairs(5000, 0.0, 11);
    let mi = estimate_mi(&x, &z, MineFit::default()).unwrap();
    assert!(mi.abs() < 0.1, "estimate {mi}");
}

#[test]
fn correlated_gaussians_approach_closed_form() {
    let (x, z) = gaussian_pairs(5000, 0.9, 12);
    let mi = estimate_mi(&x, &z, MineFit::default()).unwrap();
    assert!(mi > 0.4 && mi <= closed_form(0.9) + 0.1, "estimate {mi}");
}
