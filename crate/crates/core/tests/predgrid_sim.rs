use calmort_core::linalg::quantile_sorted;
use calmort_core::predgrid::{
    enumerate_grid, loyo_fit_predict, read_results, run_grid, summarize, AqLevel, CsvResultSink, CvResult, GridModel,
    GridRun, GridSpec, MetLevel,
};
use calmort_core::synth::{generate, SynthConfig};
use calmort_core::{FitOptions, Outcome};

fn small_spec() -> GridSpec {
    GridSpec {
        rh: vec![MetLevel::Null],
        tmax: vec![MetLevel::Null, MetLevel::Current],
        tmin: vec![MetLevel::Null],
        ..GridSpec::default()
    }
}

fn run(outcome: Outcome) -> GridRun {
    GridRun {
        outcomes: vec![outcome],
        hold_out_years: (2000..2007).collect(),
        fit: FitOptions::default(),
    }
}

#[test]
fn time_only_ratio_is_one() {
    let s = generate(&SynthConfig::realistic(1, 7)).unwrap();
    let r = loyo_fit_predict(&s, &GridSpec::default(), &GridModel::TIME_ONLY, Outcome::Ac75p, 2003, &FitOptions::default()).unwrap();
    assert_eq!(r.ratio, 1.0);
    assert_eq!(r.mspe, r.mspe_time);
    assert_eq!(r.n_test, 365);
}

#[test]
fn null_data_ratios_centre_on_one() {
    let s = generate(&SynthConfig::null(2, 7)).unwrap();
    let spec = small_spec();
    let models = enumerate_grid(&spec);
    assert_eq!(models.len(), 14);
    let mut out: Vec<CvResult> = Vec::new();
    run_grid(&[s], &spec, &models, &run(Outcome::Ac75p), &mut out, &mut |_| {}).unwrap();
    assert_eq!(out.len(), 14 * 7);
    let mut ratios: Vec<f64> = out.iter().filter(|r| !r.model.is_time_only()).map(|r| r.ratio).collect();
    assert!(ratios.iter().all(|r| r.is_finite()));
    ratios.sort_by(|a, b| a.total_cmp(b));
    let med = quantile_sorted(&ratios, 0.5);
    assert!((0.98..=1.02).contains(&med), "median ratio {med}");
}

#[test]
fn injected_ozone_effect_lowers_ozone_ratios() {
    let cfg = SynthConfig::realistic(3, 7).with_ozone_effect(vec![0.005, 0.003]);
    let s = generate(&cfg).unwrap();
    let spec = GridSpec {
        aq: vec![AqLevel::Null, AqLevel::OzoneDay0, AqLevel::OzoneMean01, AqLevel::OzoneDlnm],
        ..small_spec()
    };
    let models = enumerate_grid(&spec);
    let mut out: Vec<CvResult> = Vec::new();
    run_grid(&[s], &spec, &models, &run(Outcome::Ac75p), &mut out, &mut |_| {}).unwrap();
    let ozone: Vec<&CvResult> = out.iter().filter(|r| r.model.aq != AqLevel::Null && r.model.tmax == MetLevel::Null).collect();
    assert_eq!(ozone.len(), 3 * 7);
    let below = ozone.iter().filter(|r| r.ratio < 1.0).count();
    assert!(below as f64 >= 0.9 * ozone.len() as f64, "{below} of {}", ozone.len());
}

#[test]
fn csv_resume_matches_single_run() {
    let s = generate(&SynthConfig::realistic(4, 7)).unwrap();
    let spec = GridSpec {
        aq: vec![AqLevel::Null, AqLevel::PmDay0],
        ..small_spec()
    };
    let models = enumerate_grid(&spec);
    let dir = tempfile::tempdir().unwrap();
    let full_path = dir.path().join("full.csv");
    let part_path = dir.path().join("part.csv");
    let all = run(Outcome::Hl75p);
    {
        let mut sink = CsvResultSink::open(&full_path).unwrap();
        run_grid(std::slice::from_ref(&s), &spec, &models, &all, &mut sink, &mut |_| {}).unwrap();
    }
    {
        let first = GridRun {
            hold_out_years: vec![2000, 2001, 2002],
            ..all.clone()
        };
        let mut sink = CsvResultSink::open(&part_path).unwrap();
        run_grid(std::slice::from_ref(&s), &spec, &models, &first, &mut sink, &mut |_| {}).unwrap();
    }
    // simulate a crash in the middle of a row
    {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new().append(true).open(&part_path).unwrap();
        write!(f, "SC,hl75p,2003,m0").unwrap();
    }
    let mut sink = CsvResultSink::open(&part_path).unwrap();
    assert_eq!(sink.completed(), 3 * models.len());
    let written = run_grid(std::slice::from_ref(&s), &spec, &models, &all, &mut sink, &mut |_| {}).unwrap();
    drop(sink);
    assert_eq!(written, 4 * models.len());
    assert_eq!(std::fs::read(&full_path).unwrap(), std::fs::read(&part_path).unwrap());

    let records = read_results(&full_path).unwrap();
    assert_eq!(records.len(), 7 * models.len());
    let summary = summarize(&records, &[2000]);
    assert!(summary.best.iter().all(|b| b.year != 2000));
    // two groups share the null level, each with 6 usable years
    assert_eq!(summary.best.len(), 2 * 6);
}

#[test]
fn grid_runs_are_deterministic() {
    let s = generate(&SynthConfig::realistic(5, 7)).unwrap();
    let spec = GridSpec {
        aq: vec![AqLevel::Null, AqLevel::OzoneDlnm],
        ..small_spec()
    };
    let models = enumerate_grid(&spec);
    let go = || {
        let mut out: Vec<CvResult> = Vec::new();
        let r = GridRun {
            hold_out_years: vec![2002, 2005],
            ..run(Outcome::Ac6574)
        };
        run_grid(std::slice::from_ref(&s), &spec, &models, &r, &mut out, &mut |_| {}).unwrap();
        out
    };
    assert_eq!(go(), go());
}
