use relu_rate_lab::model::NetworkSpec;
use relu_rate_lab::scaling::{
    aggregate, load_series, rows_csv, run_sweep, save_series, spearman, ErrorSeries, SeriesRow, StudentInit,
    SweepConfig, TeacherSource,
};
use relu_rate_lab::training::{init_params, InitScheme, TrainConfig};
use relu_rate_lab::Error;

fn config() -> SweepConfig {
    SweepConfig {
        spec: NetworkSpec::new(3, vec![4], 1, 10.0, 10.0).unwrap(),
        teacher: TeacherSource::Random {
            hidden: vec![4],
            seed: 9,
            init: InitScheme::UniformGlorot,
        },
        sigma: 0.1,
        n_grid: vec![500, 1000],
        seeds: vec![1, 2],
        test_size: 500,
        test_seed: 3,
        noiseless_test: false,
        train_config: TrainConfig {
            epochs: 3,
            batch_size: 50,
            learning_rate: 1e-2,
            ..Default::default()
        },
        student_init: StudentInit::Fresh,
    }
}

#[test]
fn one_row_per_cell() {
    let series = run_sweep(&config()).unwrap();
    assert_eq!(series.rows.len(), 4);
    let cells: Vec<(usize, usize)> = series.rows.iter().map(|r| (r.n, r.seed_index)).collect();
    assert_eq!(cells, vec![(500, 0), (500, 1), (1000, 0), (1000, 1)]);
    assert_eq!(series.aggregate, aggregate(&series.rows).unwrap());
    assert!(series.aggregate.iter().all(|a| a.count == 2));
}

#[test]
fn teacher_start_without_noise_or_steps_is_exact() {
    let spec = NetworkSpec::new(3, vec![4], 1, 10.0, 10.0).unwrap();
    let teacher = init_params(&spec, InitScheme::UniformGlorot, 5).unwrap();
    let cfg = SweepConfig {
        teacher: TeacherSource::Explicit { params: teacher },
        sigma: 0.0,
        student_init: StudentInit::Teacher,
        train_config: TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 50,
            ..Default::default()
        },
        ..config()
    };
    let series = run_sweep(&cfg).unwrap();
    assert!(series.rows.iter().all(|r| r.test_error == 0.0));
}

#[test]
fn reruns_and_thread_counts_agree() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| rows_csv(&run_sweep(&config()).unwrap().rows))
    };
    let a = run(1);
    assert_eq!(a, run(1));
    assert_eq!(a, run(4));
}

#[test]
fn noiseless_realizable_sweep_does_not_get_worse() {
    let cfg = SweepConfig {
        sigma: 0.0,
        n_grid: vec![50, 100, 200, 400, 800],
        seeds: vec![11, 12, 13],
        test_size: 2000,
        train_config: TrainConfig {
            epochs: 40,
            batch_size: 16,
            learning_rate: 5e-3,
            ..Default::default()
        },
        ..config()
    };
    let series = run_sweep(&cfg).unwrap();
    let ns: Vec<f64> = series.aggregate.iter().map(|a| a.n as f64).collect();
    let errs: Vec<f64> = series.aggregate.iter().map(|a| a.mean_error).collect();
    assert!(spearman(&ns, &errs) <= 0.0, "{errs:?}");
}

#[test]
fn failing_cell_is_identified() {
    let cfg = SweepConfig {
        n_grid: vec![40, 500],
        ..config()
    };
    match run_sweep(&cfg) {
        Err(Error::Cell { n, seed_index, source }) => {
            assert_eq!((n, seed_index), (40, 0));
            assert!(matches!(*source, Error::InvalidConfig(_)));
        }
        other => panic!("expected a cell error, got {other:?}"),
    }
}

#[test]
fn invalid_grids_rejected() {
    let cfg = SweepConfig {
        n_grid: vec![1000, 500],
        ..config()
    };
    assert!(matches!(run_sweep(&cfg), Err(Error::InvalidConfig(_))));
    let cfg = SweepConfig { seeds: vec![], ..config() };
    assert!(matches!(run_sweep(&cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn series_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rows.csv");
    let series = run_sweep(&config()).unwrap();
    save_series(&series, &path).unwrap();
    assert_eq!(load_series(&path).unwrap(), series);

    std::fs::write(&path, "n,seed_index,test_error\n").unwrap();
    assert!(matches!(load_series(&path), Err(Error::EmptySeries)));
    std::fs::write(&path, "n,seed_index,test_error\n500,0,0.1\n500,1,oops\n").unwrap();
    assert!(matches!(load_series(&path), Err(Error::Parse { line: 3, .. })));
}

#[test]
fn shard_aggregation_matches_whole() {
    let rows: Vec<SeriesRow> = (0..12)
        .map(|i| SeriesRow {
            n: 100 * (1 + i % 3),
            seed_index: i / 3,
            test_error: 0.1 + 0.37 * (i as f64).sin().abs(),
        })
        .collect();
    let whole = ErrorSeries::from_rows(rows.clone()).unwrap();
    let mut shards = rows[6..].to_vec();
    shards.extend_from_slice(&rows[..6]);
    assert_eq!(ErrorSeries::from_rows(shards).unwrap(), whole);
}
