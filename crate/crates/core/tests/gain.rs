use admm_eki::eki::{gain_direct, gain_woodbury};
use admm_eki::weighting::{BlockWeighting, WeightBlock};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn centered(m: DMatrix<f64>) -> DMatrix<f64> {
    let mean = m.column_mean();
    let mut out = m;
    for mut c in out.column_iter_mut() {
        c -= &mean;
    }
    out
}

/// A weighting with a dense SPD block, a repeated small block and a scaled identity tail.
fn random_weighting(rng: &mut ChaCha8Rng, d: usize) -> BlockWeighting {
    let head = 6;
    let a = gaussian(rng, head, head);
    let spd = &a * a.transpose() + DMatrix::identity(head, head) * 0.5;
    let small = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
    let reps = (d - head) / 4;
    let tail = d - head - 2 * reps;
    BlockWeighting::from_blocks(vec![
        WeightBlock::repeated_covariance("dense", spd, 1).unwrap(),
        WeightBlock::repeated_covariance("small", small, reps).unwrap(),
        WeightBlock::ScaledIdentity {
            dim: tail,
            variance: rng.random_range(0.01..10.0),
        },
    ])
    .unwrap()
}

fn rel_frobenius(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

#[test]
fn woodbury_matches_direct_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for &n in &[5usize, 20] {
        for &d in &[30usize, 200] {
            for _ in 0..13 {
                let hm = rng.random_range(2..12);
                let du = centered(gaussian(&mut rng, hm, n));
                let scale = rng.random_range(0.1..5.0);
                let dc = centered(gaussian(&mut rng, d, n) * scale);
                let w = random_weighting(&mut rng, d);
                let p_uc = &du * dc.transpose() / (n - 1) as f64;
                let p_cc = &dc * dc.transpose() / (n - 1) as f64;
                let direct = gain_direct(&p_uc, &p_cc, &w.to_dense()).unwrap();
                let wood = gain_woodbury(&du, &dc, &w).unwrap();
                worst = worst.max(rel_frobenius(&wood, &direct));
                count += 1;
            }
        }
    }
    assert!(count >= 50);
    assert!(worst < 1e-8, "worst relative error {worst:e}");
}

#[test]
fn direct_gain_solves_normal_equation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..20 {
        let (hm, d, n) = (4, 9, 7);
        let du = centered(gaussian(&mut rng, hm, n));
        let dc = centered(gaussian(&mut rng, d, n));
        let w = random_weighting(&mut rng, d);
        let p_uc = &du * dc.transpose() / (n - 1) as f64;
        let p_cc = &dc * dc.transpose() / (n - 1) as f64;
        let k = gain_direct(&p_uc, &p_cc, &w.to_dense()).unwrap();
        let lhs = &k * (&p_cc + w.to_dense());
        assert!(rel_frobenius(&lhs, &p_uc) < 1e-10);
    }
}
