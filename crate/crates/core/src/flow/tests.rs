use super::*;
use crate::data::DataMatrix;
use crate::nn::Parameters;
use crate::rng;
use crate::stats;
use rand::Rng as _;

fn random_flow(dim: usize, n_blocks: usize, seed: u64) -> FlowModel {
    let arch = FlowArch {
        n_blocks,
        hidden_sizes: vec![16],
    };
    FlowModel::new(dim, &arch, seed).unwrap().perturbed(0.1, seed + 100)
}

fn random_rows(n: usize, dim: usize, bound: f64, seed: u64) -> DataMatrix {
    let mut r = rng::seeded(seed);
    let v = (0..n * dim).map(|_| r.random_range(-bound..bound)).collect();
    DataMatrix::new(n, dim, v).unwrap()
}

/// Determinant by Gaussian elimination with partial pivoting.
fn det(mut a: Vec<f64>, n: usize) -> f64 {
    let mut d = 1.0;
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i * n + c].abs().total_cmp(&a[j * n + c].abs())).unwrap();
        if a[p * n + c] == 0.0 {
            return 0.0;
        }
        if p != c {
            for k in 0..n {
                a.swap(p * n + k, c * n + k);
            }
            d = -d;
        }
        d *= a[c * n + c];
        for i in c + 1..n {
            let f = a[i * n + c] / a[c * n + c];
            for k in c..n {
                a[i * n + k] -= f * a[c * n + k];
            }
        }
    }
    d
}

#[test]
fn fresh_model_is_identity() {
    let m = FlowModel::new(3, &FlowArch::default(), 0).unwrap();
    let x = random_rows(20, 3, 5.0, 1);
    let (z, ld) = m.forward(&x).unwrap();
    assert_eq!(z, x);
    assert!(ld.iter().all(|v| *v == 0.0));
    assert_eq!(m.inverse(&x).unwrap(), x);
}

fn constant_affine_flow() -> FlowModel {
    let arch = FlowArch {
        n_blocks: 1,
        hidden_sizes: vec![],
    };
    let mut m = FlowModel::new(1, &arch, 0).unwrap();
    m.blocks[0].mu.b[0] = 1.0;
    m.blocks[0].log_scale.b[0] = 2f64.ln();
    m
}

#[test]
fn constant_affine_block_by_hand() {
    let m = constant_affine_flow();
    let x = DataMatrix::from_column(&[-3.0, 0.0, 1.0, 7.5]).unwrap();
    let (z, ld) = m.forward(&x).unwrap();
    for (zi, xi) in z.values().iter().zip(x.values()) {
        assert!((zi - (xi - 1.0) / 2.0).abs() < 1e-15);
    }
    for l in ld {
        assert!((l + 2f64.ln()).abs() < 1e-15);
    }
    assert_eq!(m.inverse(&z).unwrap(), x);
}

#[test]
fn identity_log_prob_matches_standard_normal() {
    let m = FlowModel::new(2, &FlowArch::default(), 0).unwrap();
    let lp = m.log_prob(&DataMatrix::from_rows(&[[0.0, 0.0]]).unwrap()).unwrap();
    assert!((lp[0] + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
    let m1 = FlowModel::new(1, &FlowArch::default(), 0).unwrap();
    let lp = m1.log_prob(&DataMatrix::from_column(&[1.0]).unwrap()).unwrap();
    assert!((lp[0] - (-0.5 * (2.0 * std::f64::consts::PI).ln() - 0.5)).abs() < 1e-12);
    assert!((lp[0] + 1.4189).abs() < 1e-4);
}

#[test]
fn round_trip_random_flows() {
    for dim in 1..=8 {
        for seed in 0..3 {
            let m = random_flow(dim, 5, seed * 10 + dim as u64);
            let x = random_rows(30, dim, 10.0, seed);
            let back = m.inverse(&m.encode(&x).unwrap()).unwrap();
            let err = back.values().iter().zip(x.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-6, "dim {dim} seed {seed}: {err}");
        }
    }
}

#[test]
fn logdet_matches_finite_difference_jacobian() {
    let h = 1e-6;
    for dim in 1..=4 {
        let m = random_flow(dim, 5, 40 + dim as u64);
        let x = random_rows(5, dim, 2.0, dim as u64);
        for row in x.iter_rows() {
            let (_, ld) = m.forward_row(row).unwrap();
            let mut jac = vec![0.0; dim * dim];
            for j in 0..dim {
                let mut xp = row.to_vec();
                xp[j] += h;
                let mut xm = row.to_vec();
                xm[j] -= h;
                let zp = m.forward_row(&xp).unwrap().0;
                let zm = m.forward_row(&xm).unwrap().0;
                for i in 0..dim {
                    jac[i * dim + j] = (zp[i] - zm[i]) / (2.0 * h);
                }
            }
            let fd = det(jac, dim).abs().ln();
            assert!((fd - ld).abs() < 1e-3, "dim {dim}: {fd} vs {ld}");
        }
    }
}

#[test]
fn nll_gradient_matches_central_differences() {
    for dim in 1..=3 {
        let mut m = random_flow(dim, 3, 70 + dim as u64);
        m.norms_initialized = true;
        let x = random_rows(10, dim, 1.5, 5);
        let (_, grad) = m.nll_grad(&x);
        let p0 = m.params();
        let free = m.free_parameters();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for i in 0..p0.len() {
            if !free[i] {
                assert_eq!(grad[i], 0.0);
                continue;
            }
            let mut p = p0.clone();
            p[i] = p0[i] + h;
            m.read_params(&p);
            let up = m.mean_nll(&x).unwrap();
            p[i] = p0[i] - h;
            m.read_params(&p);
            let dn = m.mean_nll(&x).unwrap();
            let fd = (up - dn) / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-3);
            worst = worst.max(rel);
        }
        m.read_params(&p0);
        assert!(worst < 1e-4, "dim {dim}: worst relative error {worst}");
    }
}

fn gaussian_1d(n: usize, mean: f64, sd: f64, seed: u64) -> DataMatrix {
    let mut r = rng::seeded(seed);
    let v: Vec<f64> = (0..n).map(|_| mean + sd * rng::standard_normal(&mut r)).collect();
    DataMatrix::from_column(&v).unwrap()
}

fn small_cfg(epochs: usize, seed: u64) -> FlowTrainConfig {
    FlowTrainConfig {
        epochs,
        batch_size: 100,
        learning_rate: 1e-3,
        seed,
        ..FlowTrainConfig::default()
    }
}

fn trained_1d() -> (FlowModel, crate::TrainReport) {
    let data = gaussian_1d(2000, 3.0, 2.0, 21);
    let arch = FlowArch {
        n_blocks: 5,
        hidden_sizes: vec![16],
    };
    let mut m = FlowModel::new(1, &arch, 4).unwrap();
    let rep = m.fit(&data, &small_cfg(200, 4)).unwrap();
    (m, rep)
}

#[test]
fn fit_matches_moments_and_density() {
    let (m, rep) = trained_1d();
    assert!(rep.best_loss() <= rep.monitor_loss[0]);

    let s = m.sample(10_000, 8).unwrap();
    let v = s.values();
    let mean = stats::mean(v);
    let var = stats::std_dev(v).powi(2);
    assert!((mean - 3.0).abs() < 0.3, "mean {mean}");
    assert!((var - 4.0).abs() < 0.4, "var {var}");

    let s = m.sample(5000, 9).unwrap();
    let normal = statrs::distribution::Normal::new(3.0, 2.0).unwrap();
    use statrs::distribution::ContinuousCDF;
    let ks = stats::ks_one_sample(s.values(), |x| normal.cdf(x));
    assert!(ks < 0.05, "ks {ks}");

    // trapezoid rule over [-17, 23] with 4001 nodes
    let grid: Vec<f64> = (0..=4000).map(|i| -17.0 + 0.01 * i as f64).collect();
    let dens: Vec<f64> = m
        .log_prob(&DataMatrix::from_column(&grid).unwrap())
        .unwrap()
        .iter()
        .map(|l| l.exp())
        .collect();
    let integral: f64 = dens.windows(2).map(|w| 0.005 * (w[0] + w[1])).sum();
    assert!((integral - 1.0).abs() < 0.02, "integral {integral}");
}

#[test]
fn fit_is_deterministic() {
    let data = random_rows(300, 2, 2.0, 3);
    let arch = FlowArch {
        n_blocks: 2,
        hidden_sizes: vec![8],
    };
    let run = || {
        let mut m = FlowModel::new(2, &arch, 1).unwrap();
        m.fit(&data, &small_cfg(5, 1)).unwrap();
        m.params()
    };
    assert_eq!(run(), run());
}

#[test]
fn fit_rejects_small_data_and_bad_config() {
    let data = random_rows(10, 2, 1.0, 0);
    let mut m = FlowModel::new(2, &FlowArch::default(), 0).unwrap();
    assert!(m.fit(&data, &small_cfg(1, 0)).is_err());
    let cfg = FlowTrainConfig {
        batch_size: 5,
        learning_rate: 0.0,
        ..FlowTrainConfig::default()
    };
    assert!(m.fit(&data, &cfg).is_err());
}

#[test]
fn identity_samples_are_standard_normal() {
    let m = FlowModel::new(2, &FlowArch::default(), 0).unwrap();
    let s = m.sample(10_000, 5).unwrap();
    for c in s.column_means() {
        assert!(c.abs() < 0.05);
    }
    assert_eq!(s, m.sample(10_000, 5).unwrap());
}

#[test]
fn persistence_reproduces_log_prob() {
    let m = random_flow(3, 5, 2);
    let x = random_rows(50, 3, 3.0, 2);
    let back = FlowModel::from_json(&m.to_json().unwrap()).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.log_prob(&x).unwrap(), m.log_prob(&x).unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flow.json");
    m.save(&path).unwrap();
    assert_eq!(FlowModel::load(&path).unwrap().log_prob(&x).unwrap(), m.log_prob(&x).unwrap());
}

#[test]
fn dimension_mismatch_is_an_error() {
    let m = FlowModel::new(2, &FlowArch::default(), 0).unwrap();
    assert!(m.forward(&random_rows(3, 3, 1.0, 0)).is_err());
}

proptest::proptest! {
    #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
    #[test]
    fn round_trip_property(seed in 0u64..10_000, dim in 1usize..=8) {
        let m = random_flow(dim, 5, seed);
        let x = random_rows(4, dim, 10.0, seed ^ 0xabc);
        let back = m.inverse(&m.encode(&x).unwrap()).unwrap();
        for (a, b) in back.values().iter().zip(x.values()) {
            proptest::prop_assert!((a - b).abs() < 1e-6);
        }
    }
}
