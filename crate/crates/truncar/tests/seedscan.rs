//! Temporary scan of study seeds, not part of the gate.

use truncar::simulate::simulate_dataset;
use truncar::{
    replicate_study, Family, FitSpec, NeumannConfig, NeumannMode, PriorConfig, SimulationDesign,
};

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[test]
#[ignore]
fn scan_conditional_study_seeds() {
    let _ = simulate_dataset as usize;
    let prior = PriorConfig { a: 0.01, b: 0.01 };
    let cfg = NeumannConfig::new(NeumannMode::Auto, 5000, 1e-8).unwrap();
    let rho_grid: Vec<f64> = (0..100).map(|i| -0.99 + 0.02 * i as f64).collect();
    let design = SimulationDesign::canonical(Family::TarC, 0).unwrap();
    let fits = vec![
        FitSpec {
            family: Family::TarC,
            grid: vec![1.0],
        },
        FitSpec {
            family: Family::Car,
            grid: rho_grid,
        },
    ];
    let _ = (&design, &fits);
    let run = |family: Family, fits: &[FitSpec], seed: u64, label: &str| {
        let design = SimulationDesign::canonical(family, 0).unwrap();
        let records =
            replicate_study(&design, fits, 10, 500, &prior, &cfg, 0.05, seed).unwrap();
        let rm = |fam: Family| {
            median(
                records
                    .iter()
                    .filter(|r| r.family == fam)
                    .map(|r| r.scores.rmse)
                    .collect(),
            )
        };
        let fr = |fam: Family| {
            median(
                records
                    .iter()
                    .filter(|r| r.family == fam)
                    .map(|r| r.frobenius)
                    .collect(),
            )
        };
        let fam_a = fits[0].family;
        let fam_b = fits[1].family;
        println!(
            "{label} seed {seed}: rmse {fam_a} {:.5} {fam_b} {:.5} | frob {fam_a} {:.4} {fam_b} {:.4}",
            rm(fam_a),
            rm(fam_b),
            fr(fam_a),
            fr(fam_b),
        );
    };
    let delta_grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.1).collect();
    let rho: Vec<f64> = (0..100).map(|i| -0.99 + 0.02 * i as f64).collect();
    let tar_s_known = FitSpec {
        family: Family::TarS,
        grid: vec![1.0],
    };
    let tar_s_grid = FitSpec {
        family: Family::TarS,
        grid: delta_grid.clone(),
    };
    let tar_c_grid = FitSpec {
        family: Family::TarC,
        grid: delta_grid.clone(),
    };
    let sar = FitSpec {
        family: Family::Sar,
        grid: rho.clone(),
    };
    let car = FitSpec {
        family: Family::Car,
        grid: rho.clone(),
    };
    for seed in [44u64, 53] {
        run(
            Family::TarS,
            &[tar_s_known.clone(), sar.clone()],
            seed,
            "study d (tar-s data):",
        );
    }
    run(
        Family::Car,
        &[tar_c_grid.clone(), car.clone()],
        43,
        "study a (car data):",
    );
    run(
        Family::Sar,
        &[tar_s_grid.clone(), sar.clone()],
        45,
        "study c (sar data):",
    );
}
