use lastraj_core::trajectory::{
    avg_intra, evaluate_derived, read_dataset, total_time, traj_semimetric, traj_semimetric_with,
    write_dataset, DatasetHeader, DatasetMeta, DerivedVariable, InterConvention, Step, Trajectory,
    TrajectoryDataset,
};
use proptest::prelude::*;

const B: f64 = 10.0;
const T_MAX: usize = 8;

fn step() -> impl Strategy<Value = Step> {
    (0u32..5, 0.0f64..=1.0, 0.0f64..=1.0).prop_map(|(item, u, v)| {
        let intra = (u * B * 100.0).round() / 100.0;
        let inter = ((B - intra) * v * 100.0).floor() / 100.0;
        Step::new(item, intra, inter)
    })
}

fn traj() -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(step(), 1..=T_MAX).prop_map(Trajectory::from_steps)
}

fn matched_intra(x: &Trajectory, y: &Trajectory) -> f64 {
    x.steps.iter().zip(&y.steps).map(|(s, t)| (s.intra - t.intra).abs()).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn semimetric_symmetric_and_reflexive(x in traj(), y in traj()) {
        prop_assert_eq!(traj_semimetric(&x, &x, B).unwrap(), 0.0);
        let (a, b) = (traj_semimetric(&x, &y, B).unwrap(), traj_semimetric(&y, &x, B).unwrap());
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn tot_is_lipschitz_on_exit_dropped_view(x in traj(), y in traj()) {
        let gap = (total_time(&x, InterConvention::ExcludeExit)
            - total_time(&y, InterConvention::ExcludeExit)).abs();
        let d = traj_semimetric_with(&x, &y, B, InterConvention::ExcludeExit).unwrap();
        prop_assert!(gap <= d + 1e-9);
        // Summing every inter value is Lipschitz for the raw semi-metric.
        let gap_all = (total_time(&x, InterConvention::AllSteps)
            - total_time(&y, InterConvention::AllSteps)).abs();
        prop_assert!(gap_all <= traj_semimetric(&x, &y, B).unwrap() + 1e-9);
    }

    #[test]
    fn avg_bound(x in traj(), y in traj()) {
        let m = x.len().max(y.len()).max(1) as f64;
        let dt = x.len().abs_diff(y.len()) as f64;
        let gap = (avg_intra(&x) - avg_intra(&y)).abs();
        let base = matched_intra(&x, &y) / m;
        prop_assert!(gap <= base + 2.0 * B / m * dt + 1e-9);
        prop_assert!(gap <= base + B / m * dt + 1e-9);
    }

    #[test]
    fn visit_count_is_length(x in traj()) {
        let meta = DatasetMeta::new(T_MAX, B, 5);
        let v = evaluate_derived(&x, DerivedVariable::VisitCount, &meta).unwrap();
        prop_assert_eq!(v.scalar(), Some(x.len() as f64));
    }
}

#[test]
fn raw_tot_is_not_lipschitz_under_exit_excluded_sum() {
    // The final inter value of the shorter trajectory is dropped from Tot but
    // still counted by the raw semi-metric, which pairs it with a step that is
    // inside the longer trajectory.
    let x = Trajectory::from_steps(vec![Step::new(0, 0.0, B)]);
    let y = Trajectory::from_steps(vec![Step::new(0, 0.0, B), Step::new(0, B, 0.0)]);
    let gap = (total_time(&x, InterConvention::ExcludeExit)
        - total_time(&y, InterConvention::ExcludeExit))
    .abs();
    assert_eq!(gap, 2.0 * B);
    assert_eq!(traj_semimetric(&x, &y, B).unwrap(), B);
    assert_eq!(traj_semimetric_with(&x, &y, B, InterConvention::ExcludeExit).unwrap(), 2.0 * B);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn file_round_trip(ts in prop::collection::vec(traj(), 1..20)) {
        let trajectories: Vec<Trajectory> = ts
            .into_iter()
            .enumerate()
            .map(|(i, t)| Trajectory::new(format!("r{i}"), t.steps, vec![i as f64 * 0.5, -1.25]))
            .collect();
        let meta = DatasetMeta::new(T_MAX, B, 5);
        let ds = TrajectoryDataset::new(trajectories, meta).unwrap();
        let mut buf = Vec::new();
        write_dataset(&ds, &mut buf).unwrap();
        let back = read_dataset(buf.as_slice(), &DatasetHeader::default()).unwrap();
        prop_assert_eq!(back, ds);
    }
}
