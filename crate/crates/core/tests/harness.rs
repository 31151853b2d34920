use std::time::Instant;

use svrg_core::harness::{
    parse_config, plots_from_dir, read_index, read_run_csv, run_experiment, DataSource, ExperimentSpec, DEFAULT_GRID,
};
use svrg_core::{LossKind, Method};

fn desk(methods: Vec<Method>) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(DataSource::Synth { n: 1000, d: 20, seed: 5, separability: 0.9 }, LossKind::Logistic);
    spec.lambdas = vec![1e-2];
    spec.methods = methods;
    spec.grid = DEFAULT_GRID.to_vec();
    spec.epochs = 20;
    spec
}

#[test]
fn desk_run_orders_methods() {
    let start = Instant::now();
    let table = run_experiment(&desk(vec![Method::Svrg, Method::Svrg2Bb])).unwrap();
    assert!(start.elapsed().as_secs() < 300);
    assert_eq!(table.rows.len(), 2 * DEFAULT_GRID.len());
    let svrg = table.winner(Method::Svrg, 1e-2).unwrap().final_gap;
    let bb = table.winner(Method::Svrg2Bb, 1e-2).unwrap().final_gap;
    let floor = 4.0 * f64::EPSILON * table.cells[0].f_star.abs().max(1.0);
    assert!(bb.max(floor) <= svrg.max(floor), "{bb:e} vs {svrg:e}");
}

#[test]
fn winners_minimize_their_cell() {
    let mut spec = desk(Method::ALL.to_vec());
    spec.epochs = 4;
    spec.seeds = vec![0, 1];
    let table = run_experiment(&spec).unwrap();
    for w in &table.winners {
        for param in spec.params_for(w.method).unwrap() {
            let gaps: Vec<f64> = table
                .rows
                .iter()
                .filter(|r| r.method == w.method && r.lambda == w.lambda && r.param == param)
                .map(|r| r.final_gap())
                .collect();
            let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
            assert!(w.final_gap <= mean || mean.is_nan(), "{} {param:e}", w.method);
        }
    }
}

#[test]
fn gap_column_is_exact_difference() {
    let mut spec = desk(vec![Method::Svrg2D]);
    spec.grid = vec![0.1];
    spec.epochs = 3;
    let table = run_experiment(&spec).unwrap();
    let f_star = table.cells[0].f_star;
    for r in &table.rows[0].records {
        assert_eq!(r.gap.unwrap().to_bits(), (r.fval - f_star).to_bits());
    }
}

#[test]
fn config_file_drives_a_full_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let text = format!(
        "synth = 80,5,2\nmodel = svm\nlambda = 1e-2\nmethods = SVRG, SVRG-2BBS-M3\ngrid = 0.1, 0.01\n\
         epochs = 3\nseeds = 4\nout = {}\n",
        out.display()
    );
    let spec = ExperimentSpec::from_pairs(&parse_config(&text).unwrap()).unwrap();
    let table = run_experiment(&spec).unwrap();
    assert_eq!(table.rows.len(), 4);

    let index = read_index(&out).unwrap();
    assert_eq!(index.len(), 2);
    for e in &index {
        let records = read_run_csv(&out.join(&e.run_files[0])).unwrap();
        assert_eq!(records.len(), 3);
    }
    assert!(out.join("meta.txt").exists());
    assert_eq!(std::fs::read_dir(out.join("plots")).unwrap().count(), 3);

    let regen = dir.path().join("regen");
    let report = plots_from_dir(&out, &regen).unwrap();
    for f in &report.files {
        let original = out.join("plots").join(f.file_name().unwrap());
        assert_eq!(std::fs::read(f).unwrap(), std::fs::read(original).unwrap());
    }
}

#[test]
fn diverged_runs_count_as_infinite_gap() {
    let mut spec = desk(vec![Method::Svrg]);
    spec.grid = vec![1e3, 1e-1];
    spec.epochs = 3;
    let table = run_experiment(&spec).unwrap();
    let blown = table.rows.iter().find(|r| r.param == 1e3).unwrap();
    assert!(blown.diverged);
    assert_eq!(blown.final_gap(), f64::INFINITY);
    assert_eq!(table.winner(Method::Svrg, 1e-2).unwrap().param, 1e-1);
}

#[test]
fn identical_specs_give_identical_tables() {
    let mut spec = desk(vec![Method::Svrg2Bb, Method::SvrgBb]);
    spec.epochs = 3;
    spec.grid = vec![0.1, 0.01];
    let strip = |mut t: svrg_core::ResultTable| {
        for r in &mut t.rows {
            for e in &mut r.records {
                e.wall_time_sec = 0.0;
            }
        }
        t
    };
    assert_eq!(strip(run_experiment(&spec).unwrap()), strip(run_experiment(&spec).unwrap()));
}
