//! Randomized properties of the codec, the projection, the planner, the
//! runtime and the tensor tape.

use proptest::prelude::*;

use eta::harness::LrSchedule;
use eta::models::Mode;
use eta::scheduler::{
    plan_schedule, run_sequential, CostModel, MissKind, Pipeline, PipelineConfig, SyntheticBackend, SyntheticEnv,
};
use eta::tensor::gradcheck::GradCheckOptions;
use eta::tensor::{grad_check, ParamStore, Tensor};
use eta::world::{action_to_mask, ActionPlan, CameraModel, ACTION_POINTS};

fn plan_from(points: &[(f64, f64)]) -> ActionPlan {
    let mut plan = ActionPlan::stationary();
    for (p, &(x, y)) in plan.path.iter_mut().chain(plan.waypoints.iter_mut()).zip(points) {
        *p = [x, y];
    }
    plan
}

fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-5.0..40.0f64, -20.0..20.0f64), ACTION_POINTS)
}

proptest! {
    #[test]
    fn residuals_reconstruct_the_plan(pts in points()) {
        let plan = plan_from(&pts);
        let back = ActionPlan::from_residual_slice(&plan.residual_vec()).unwrap();
        for (a, b) in plan.points().zip(back.points()) {
            prop_assert!((a[0] - b[0]).abs() <= 1e-9 && (a[1] - b[1]).abs() <= 1e-9);
        }
    }

    #[test]
    fn every_marked_patch_holds_a_projected_point(pts in points()) {
        let cam = CameraModel::default();
        let plan = plan_from(&pts);
        let mask = action_to_mask(&plan, &cam);
        let hits: Vec<(usize, usize)> = plan
            .points()
            .filter_map(|p| cam.project_point(p))
            .map(|(u, v)| (v as usize / 8, u as usize / 8))
            .collect();
        for r in 0..mask.rows() {
            for c in 0..mask.cols() {
                prop_assert_eq!(mask.get(r, c), hits.contains(&(r, c)));
            }
        }
    }

    #[test]
    fn moving_points_behind_the_clip_plane_clears_the_mask(pts in points()) {
        let cam = CameraModel::default();
        let behind: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.min(cam.x_min - 1e-3), y)).collect();
        prop_assert_eq!(action_to_mask(&plan_from(&behind), &cam).count(), 0);
    }

    #[test]
    fn planned_batch_is_the_smallest_feasible_one(
        fixed in 0.0..120.0f64,
        marginal in 0.0..60.0f64,
        tick in prop::sample::select(vec![25.0, 50.0, 100.0]),
        ratio in 1usize..12,
    ) {
        let costs = CostModel { large_fixed: fixed, large_marginal: marginal, ..CostModel::default() };
        let cfg = PipelineConfig::new(tick, tick * ratio as f64);
        let ok = |b: usize| costs.large(b) <= b as f64 * tick && (b - 1) as f64 * tick + costs.large(b) <= cfg.delta_ms;
        match plan_schedule(&costs, &cfg) {
            Ok(plan) => {
                prop_assert!(ok(plan.batch));
                prop_assert!((1..plan.batch).all(|b| !ok(b)));
            }
            Err(_) => prop_assert!((1..=cfg.capacity).all(|b| !ok(b))),
        }
    }

    #[test]
    fn feasible_pipelines_match_the_oracle_without_misses(
        tick in prop::sample::select(vec![50.0, 100.0, 200.0]),
        ratio in 2usize..8,
        len in 1u64..80,
        mode in prop::sample::select(Mode::ALL.to_vec()),
    ) {
        let cfg = PipelineConfig::new(tick, tick * ratio as f64);
        let costs = CostModel::default();
        if let Ok(p) = Pipeline::new(&costs, &cfg, mode) {
            let run = p.run(&mut SyntheticEnv::new(len), &SyntheticBackend, 1000).unwrap();
            let seq = run_sequential(&mut SyntheticEnv::new(len), &SyntheticBackend, &cfg, mode, 1000).unwrap();
            prop_assert_eq!(&run.actions, &seq);
            prop_assert!(run.trace.check_conservation(run.ticks).is_ok() || p.batch.is_none());
            prop_assert_eq!(run.trace.misses().filter(|(_, k)| *k == MissKind::MissingFeatures).count(), 0);
            if p.batch.is_some() {
                prop_assert!(run.trace.check_staleness(cfg.delta_ms, cfg.delta_ticks()).is_ok());
            }
        }
    }

    #[test]
    fn schedule_restarts_and_bounds(lr0 in 1e-6..1e-2f64, restarts in 0usize..6, extra in 0usize..500) {
        let total = (restarts + 1) * 2 + extra;
        let curve = LrSchedule::new(lr0, restarts, total).curve();
        prop_assert_eq!(curve.len(), total);
        prop_assert_eq!(curve[0], lr0);
        prop_assert_eq!(curve.windows(2).filter(|w| w[1] > w[0]).count(), restarts);
        prop_assert!(curve.iter().all(|&l| (0.0..=lr0).contains(&l)));
        prop_assert_eq!(*curve.last().unwrap(), 0.0);
    }

    #[test]
    fn param_store_round_trips_bit_exactly(values in prop::collection::vec(-1e6..1e6f64, 1..40), cols in 1usize..4) {
        let rows = values.len().div_ceil(cols);
        let mut data = values.clone();
        data.resize(rows * cols, 0.5);
        let mut store = ParamStore::new();
        store.insert("a.w", Tensor::new(vec![rows, cols], data).unwrap()).unwrap();
        store.insert("b", Tensor::scalar(values[0])).unwrap();
        let mut bytes = Vec::new();
        store.write_to(&mut bytes).unwrap();
        let back = ParamStore::read_from(bytes.as_slice()).unwrap();
        for ((na, ta), (nb, tb)) in store.iter().zip(back.iter()) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(ta.shape(), tb.shape());
            prop_assert!(ta.data().iter().zip(tb.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn composed_ops_match_finite_differences(
        a in prop::collection::vec(-2.0..2.0f64, 12),
        b in prop::collection::vec(-2.0..2.0f64, 12),
    ) {
        let x = Tensor::new(vec![3, 4], a).unwrap();
        let w = Tensor::new(vec![4, 3], b).unwrap();
        let report = grad_check(
            |_, v| {
                let h = v[0].layer_norm()?.matmul(v[1])?.gelu()?;
                h.softmax()?.mul(h.sigmoid()?)?.sum()
            },
            &[x, w],
            &GradCheckOptions::default(),
        )
        .unwrap();
        prop_assert!(report.max_rel_err() < 1e-5, "{:?}", report);
    }
}
