use wbary_core::mirror::{NullSink, RunTrace};
use wbary_core::{
    run_frbary, BoxDomain, DiscreteMeasure, FrbaryOptions, GridDensity, InputMeasure, MeasureKind, RegularGrid,
    Schedule, ScheduleKind,
};

fn ring(cx: f64, cy: f64, n: usize) -> DiscreteMeasure {
    let pts = (0..n)
        .flat_map(|i| {
            let t = i as f64 * std::f64::consts::TAU / n as f64;
            [cx + 0.25 * t.cos(), cy + 0.15 * t.sin()]
        })
        .collect();
    DiscreteMeasure::uniform(2, pts).unwrap()
}

fn inputs() -> Vec<InputMeasure> {
    vec![
        InputMeasure::new(MeasureKind::Discrete(ring(0.35, 0.4, 9)), 0.5),
        InputMeasure::new(MeasureKind::Discrete(ring(0.65, 0.6, 14)), 0.3),
        InputMeasure::new(MeasureKind::Discrete(ring(0.5, 0.5, 5)), 0.2),
    ]
}

fn grid() -> RegularGrid {
    RegularGrid::new(BoxDomain::unit(2).unwrap(), vec![20, 20]).unwrap()
}

fn run(inputs: &[InputMeasure], t: usize) -> (GridDensity, RunTrace) {
    run_with(inputs, t, 1.0)
}

fn run_with(inputs: &[InputMeasure], t: usize, c: f64) -> (GridDensity, RunTrace) {
    let schedule = Schedule::new(ScheduleKind::InverseSqrtK, c, 0.0, t).unwrap();
    let res = run_frbary(inputs, GridDensity::uniform(grid()), &schedule, &FrbaryOptions::default(), &mut NullSink).unwrap();
    (res.density, res.trace)
}

#[test]
fn results_do_not_depend_on_the_thread_count() {
    let inputs = inputs();
    let pool = |n| rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
    let one = pool(1).install(|| run(&inputs, 6));
    let four = pool(4).install(|| run(&inputs, 6));
    assert_eq!(one.0, four.0);
    let strip = |t: &RunTrace| t.rows.iter().map(|r| (r.objective, r.kl_step, r.inner_residuals.clone())).collect::<Vec<_>>();
    assert_eq!(strip(&one.1), strip(&four.1));
}

#[test]
fn input_order_is_irrelevant() {
    let inputs = inputs();
    let reversed: Vec<InputMeasure> = inputs.iter().rev().cloned().collect();
    let (a, _) = run(&inputs, 6);
    let (b, _) = run(&reversed, 6);
    for (x, y) in a.log_values().iter().zip(b.log_values()) {
        assert!((x - y).abs() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn objective_decreases_and_mass_moves_toward_the_weighted_mean() {
    let (rho, trace) = run_with(&inputs(), 40, 20.0);
    assert!(trace.violations().is_empty(), "{:?}", trace.violations());
    assert!(trace.running_min(40) < 0.5 * trace.rows[0].objective);
    let (mean, _) = rho.moments();
    // barycenter mean is the weighted mean of the input means
    let target = [0.5 * 0.35 + 0.3 * 0.65 + 0.2 * 0.5, 0.5 * 0.4 + 0.3 * 0.6 + 0.2 * 0.5];
    for a in 0..2 {
        assert!((mean[a] - target[a]).abs() < 0.05, "axis {a}: {} vs {}", mean[a], target[a]);
    }
}
