mod common;

use common::*;
use parsirank::analysis::{bias_report, dense_ranks, deviation_ranking, rank_compare};
use parsirank::cv::{fit_at, fit_to_time, mismatch_ratio, run_cv, split_by_item, uniform_grid, CvConfig, Predictor, SplitMode};
use parsirank::io::{self, FeatureSource};
use parsirank::simulation::{generate, SimConfig};
use parsirank::*;

fn small_sim(seed: u64) -> ComparisonDataset {
    let sim = SimConfig {
        n_users: 12,
        n_items: 10,
        dim: 4,
        n_range: (30, 60),
        ..SimConfig::with_seed(seed)
    };
    generate(&sim).unwrap().0
}

fn cfg(iters: usize) -> SolverConfig {
    SolverConfig {
        kappa: 0.5,
        max_iters: iters,
        record_every: 10,
        ..SolverConfig::new(LossFamily::BradleyTerry)
    }
}

#[test]
fn dataset_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_sim(1);
    let (c, f) = (dir.path().join("c.csv"), dir.path().join("f.csv"));
    io::save_dataset(&ds, &c, Some(&f)).unwrap();
    let back = io::load_dataset(&c, FeatureSource::File(&f)).unwrap();
    assert_eq!(back.records(), ds.records());
    assert_eq!(back.user_ids(), ds.user_ids());
    assert_eq!(back.item_ids(), ds.item_ids());
    assert_eq!(io::dataset_hash(&back), io::dataset_hash(&ds));
}

#[test]
fn path_file_round_trips_bit_exactly_and_checks_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_sim(2);
    let path = fit_path(&ds, &cfg(150)).unwrap();
    let file = dir.path().join("p.jsonl");
    io::save_path(&path, &ds, &file).unwrap();
    let loaded = io::load_path(&file, &ds).unwrap();
    assert_eq!(loaded.path.points, path.points);
    assert_eq!(loaded.path.events, path.events);
    assert_eq!(loaded.path.alpha.to_bits(), path.alpha.to_bits());
    assert_eq!(loaded.header.n_users, ds.n_users());

    let other = small_sim(3);
    assert!(matches!(io::load_path(&file, &other), Err(Error::HashMismatch { .. })));
}

#[test]
fn missing_input_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = io::load_dataset(&dir.path().join("absent.csv"), FeatureSource::Identity).unwrap_err();
    assert_eq!(err.exit_code(), 10);
}

#[test]
fn foreign_records_map_through_the_reference_ids() {
    let ds = small_sim(4);
    let (u0, i0, i1) = (&ds.user_ids()[0], &ds.item_ids()[0], &ds.item_ids()[1]);
    let text = format!("user,left,right,y\n{u0},{i0},{i1},1\nstranger,{i1},{i0},-1\nanother,{i0},{i1},1\n");
    let recs = io::read_records_for(text.as_bytes(), "t", &ds).unwrap();
    assert_eq!(recs[0].user, 0);
    assert_eq!((recs[1].user, recs[2].user), (ds.n_users(), ds.n_users() + 1));
    assert_eq!((recs[1].left, recs[1].right), (1, 0));

    let bad = format!("user,left,right,y\n{u0},{i0},nope,1\n");
    assert!(matches!(io::read_records_for(bad.as_bytes(), "t", &ds), Err(Error::Parse { line: 2, .. })));
}

#[test]
fn zero_time_grid_scores_every_comparison_as_a_tie() {
    let ds = small_sim(5);
    let cv = CvConfig {
        folds: 3,
        t_grid: vec![0.0],
        split_mode: SplitMode::ByRecord,
        seed: 0,
    };
    let report = run_cv(&ds, &cfg(100), &cv).unwrap();
    assert!(report.errors.iter().all(|row| row[0] == 0.5));
    assert_eq!(report.t_cv, 0.0);
}

#[test]
fn cv_on_recorded_times_matches_direct_evaluation() {
    let ds = small_sim(6);
    let c = cfg(200);
    let cv = CvConfig {
        folds: 2,
        t_grid: vec![],
        split_mode: SplitMode::ByItem,
        seed: 7,
    };
    // fit each fold by hand on a grid of recorded snapshot times
    let folds = parsirank::cv::fold_indices(&ds, &cv);
    let train0 = ds.subset(&folds[0].0).unwrap();
    let probe = fit_path(&train0, &c).unwrap();
    let grid: Vec<f64> = probe.points.iter().step_by(4).map(|p| p.state.t).collect();
    let report = run_cv(&ds, &c, &CvConfig { t_grid: grid.clone(), ..cv.clone() }).unwrap();
    for (f, (train, test)) in folds.iter().enumerate() {
        let train_ds = ds.subset(train).unwrap();
        let test_recs: Vec<_> = test.iter().map(|&k| ds.records()[k]).collect();
        let path = fit_to_time(&train_ds, &c, *grid.last().unwrap()).unwrap();
        for (j, &t) in grid.iter().enumerate() {
            let s = path.points.iter().find(|p| p.state.t == t).map(|p| p.state.clone());
            let s = s.unwrap_or_else(|| path.state_at(t).unwrap());
            let want = mismatch_ratio(Predictor::state(&s, ds.features()), &test_recs, true).unwrap();
            assert_eq!(report.errors[f][j], want, "fold {f} t {t}");
        }
    }
    let best = report.mean_errors.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(report.mean_errors[report.t_cv_index], best);
    assert!(report.mean_errors[..report.t_cv_index].iter().all(|&e| e > best));
}

#[test]
fn fit_at_matches_interpolation_of_a_longer_run() {
    let ds = small_sim(7);
    let c = cfg(300);
    let long = fit_path(&ds, &c).unwrap();
    let t = 0.37 * long.t_max();
    let direct = fit_at(&ds, &c, t).unwrap();
    // oracle: a run that records every iterate
    let k = (t / long.alpha).floor() as usize;
    let dense = fit_path(&ds, &SolverConfig { record_every: 1, max_iters: k + 1, ..c.clone() }).unwrap();
    let want = dense.state_at(t).unwrap();
    assert!(state_diff(&direct, &want) < 1e-12);
    assert!(matches!(fit_to_time(&ds, &c, 3.0 * long.t_max()), Err(Error::GridExceedsPath { .. })));
}

#[test]
fn uniform_grid_spans_the_path() {
    let g = uniform_grid(10.0, 6);
    assert_eq!(g, vec![0.0, 2.0, 4.0, 6.0, 8.0, 10.0]);
}

#[test]
fn item_split_keeps_held_out_items_out_of_training() {
    let ds = small_sim(8);
    let (train, test) = split_by_item(&ds, 0.7, 3).unwrap();
    let seen: std::collections::BTreeSet<usize> = train.records().iter().flat_map(|r| [r.left, r.right]).collect();
    assert_eq!(seen.len(), 7);
    assert!(test.records().iter().all(|r| !seen.contains(&r.left) || !seen.contains(&r.right)));
    assert_eq!(train.n_records() + test.n_records(), ds.n_records());
}

#[test]
fn simulation_matches_its_configuration() {
    let sim = SimConfig::with_seed(11);
    let (ds, truth) = generate(&sim).unwrap();
    for u in 0..ds.n_users() {
        let n = ds.user_records(u).len();
        assert!((50..=200).contains(&n), "user {u} has {n} records");
    }
    // 100 users x 10 coordinates at rate 0.4 and 100 biases at rate 0.4
    let dev = truth.xi.iter().filter(|&&x| x != 0.0).count() as f64 / truth.xi.len() as f64;
    let bias = truth.gamma.iter().filter(|&&x| x != 0.0).count() as f64 / truth.gamma.len() as f64;
    assert!((dev - 0.4).abs() < 0.05, "deviation rate {dev}");
    assert!((bias - 0.4).abs() < 0.15, "bias rate {bias}");
    assert!(ds.is_binary());
}

#[test]
fn deviating_users_enter_before_clean_ones() {
    let sim = SimConfig {
        n_users: 30,
        p_dev_nonzero: 0.08,
        ..SimConfig::with_seed(12)
    };
    let (ds, truth) = generate(&sim).unwrap();
    let c = SolverConfig {
        kappa: 0.1,
        max_iters: 3000,
        record_every: 50,
        ..SolverConfig::new(LossFamily::BradleyTerry)
    };
    let path = fit_path(&ds, &c).unwrap();
    let order = deviation_ranking(&path);
    let pos = |u: usize| order.iter().position(|&v| v == u).unwrap() as f64 / order.len() as f64;
    let deviating: Vec<f64> = (0..ds.n_users()).filter(|&u| truth.xi_of(u).iter().any(|&x| x != 0.0)).map(pos).collect();
    let clean: Vec<f64> = (0..ds.n_users()).filter(|&u| truth.xi_of(u).iter().all(|&x| x == 0.0)).map(pos).collect();
    assert!(deviating.len() >= 5 && clean.len() >= 5, "{} vs {}", deviating.len(), clean.len());
    // earlier position = smaller value, so clean users should sit later
    let p = rank_sum_p(&clean, &deviating);
    assert!(p < 0.05, "p = {p}");
    let rows = bias_report(path.last(), &ds, Some(&path));
    let top: Vec<_> = rows.iter().take(5).collect();
    assert!(top.iter().filter(|r| truth.gamma[r.user] != 0.0).count() >= 4);
}

#[test]
fn rank_comparison_rows() {
    assert_eq!(dense_ranks(&[0.5, 2.0, 0.5, -1.0]), vec![2, 1, 2, 3]);
    let scores = Scores {
        common: vec![1.0, 0.0, 2.0],
        personalized: vec![vec![0.0, 1.0, 2.0], vec![2.0, 1.0, 0.0]],
    };
    let rows = rank_compare(&scores, &[1]).unwrap();
    assert_eq!(rows, vec![vec![2, 3, 1], vec![1, 2, 3]]);
    assert!(rank_compare(&scores, &[5]).is_err());
}

#[test]
fn empty_path_round_trips_as_a_single_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_sim(9);
    let path = fit_path(&ds, &cfg(0)).unwrap();
    assert_eq!(path.points.len(), 1);
    let file = dir.path().join("empty.jsonl");
    io::save_path(&path, &ds, &file).unwrap();
    let back = io::load_path(&file, &ds).unwrap().path;
    assert_eq!(back.points, path.points);
    assert_eq!(back.points[0].state.t, 0.0);
}

#[test]
fn corrupted_header_hash_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let ds = small_sim(10);
    let path = fit_path(&ds, &cfg(20)).unwrap();
    let file = dir.path().join("p.jsonl");
    io::save_path(&path, &ds, &file).unwrap();
    let hash = io::dataset_hash(&ds);
    let text = std::fs::read_to_string(&file).unwrap();
    let flipped = if hash.starts_with('0') { "1" } else { "0" };
    std::fs::write(&file, text.replacen(&hash, &format!("{flipped}{}", &hash[1..]), 1)).unwrap();
    assert!(matches!(io::load_path(&file, &ds), Err(Error::HashMismatch { .. })));
}

#[test]
fn crowdsourcing_shaped_files_load() {
    // worker ids, quoted item names with commas, fractional weights, the
    // same pair judged in both presentation orders
    let comparisons = "user,left,right,y,weight\n\
        A1X9,\"Rome, Italy\",Paris,1,1\n\
        A1X9,Paris,\"Rome, Italy\",-1,0.5\n\
        B77Q,Oslo,Paris,-1,2\n\
        B77Q,Oslo,\"Rome, Italy\",1,1\n\
        c-03,Paris,Oslo,1,1\n";
    let ds = io::read_dataset::<_, &[u8]>(comparisons.as_bytes(), "college.csv", None).unwrap();
    assert_eq!(ds.n_records(), 5);
    assert_eq!(ds.item_ids(), ["Oslo", "Paris", "Rome, Italy"]);
    assert_eq!(ds.user_ids(), ["A1X9", "B77Q", "c-03"]);
    assert_eq!(ds.records()[1].weight, 0.5);
    assert!(ds.is_binary());

    // movie-style explicit features keyed by item id
    let features = "item,f0,f1\nOslo,0.5,1\nParis,-1,0\n\"Rome, Italy\",2,0.25\n";
    let ds = io::read_dataset(comparisons.as_bytes(), "movies.csv", Some((features.as_bytes(), "feat.csv"))).unwrap();
    assert_eq!(ds.dim(), 2);
    assert!(fit_path(&ds, &cfg(20)).is_ok());

    // graded (real-valued) preferences are accepted only by the linear loss
    let graded = comparisons.replace(",1,1\n", ",0.8,1\n");
    let ds = io::read_dataset::<_, &[u8]>(graded.as_bytes(), "graded.csv", None).unwrap();
    assert!(!ds.is_binary());
    assert!(matches!(fit_path(&ds, &cfg(5)), Err(Error::NonBinaryOutcomeForGlm { .. })));
    let linear = SolverConfig { family: LossFamily::Linear, ..cfg(5) };
    assert!(fit_path(&ds, &linear).is_ok());
}
