mod common;

use gridshield::estimation::{wls_estimate, NoiseModel};
use gridshield::grid::{parse_case, ObservationMatrix, IEEE14_CASE};
use gridshield::seed;
use nalgebra::DVector;
use rand::Rng;

#[test]
fn wls_matches_exact_normal_equations() {
    let case = parse_case(IEEE14_CASE).unwrap();
    let h = ObservationMatrix::build(&case).unwrap();
    let mut worst: f64 = 0.0;
    for s in 0..100u64 {
        let mut rng = seed::rng(s, "wls-oracle", 0);
        // Dyadic inputs keep the rational arithmetic small.
        let variances: Vec<f64> =
            (0..h.m()).map(|_| rng.random_range(1..1000) as f64 * 2f64.powi(-24)).collect();
        let z: Vec<f64> = (0..h.m()).map(|_| rng.random_range(-(1 << 21)..(1 << 21)) as f64 * 2f64.powi(-20)).collect();
        let noise = NoiseModel::diagonal(variances.clone()).unwrap();
        let got = wls_estimate(&DVector::from_vec(z.clone()), &h, &noise).unwrap().x_hat;
        let want = common::normal_equations(h.matrix(), &variances, &z);
        let num: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
        worst = worst.max(num / den);
    }
    assert!(worst < 1e-9, "worst relative error {worst:e}");
}
