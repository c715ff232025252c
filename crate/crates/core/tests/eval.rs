mod common;

use common::{rng, smooth_point, synth_family};
use proptest::prelude::*;
use rand::Rng;
use scene_adapt::eval::{self, psnr, PSNR_CAP_DB};
use scene_adapt::exec::Exec;
use scene_adapt::model::{random_frame, Arch, ModelParams};
use scene_adapt::optim::OptimizerKind;
use scene_adapt::trainer::AdaptConfig;
use scene_adapt::Frame;

#[test]
fn psnr_closed_forms() {
    let a = Frame::constant(3, 4, 4, 0.75);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
    let half = psnr(&Frame::constant(3, 4, 4, 0.25), &a).unwrap();
    assert!((half - 6.0206).abs() < 1e-4, "{half}");
    let quarter = psnr(&Frame::constant(3, 4, 4, 0.5), &a).unwrap();
    assert!((quarter - 12.0412).abs() < 1e-4, "{quarter}");
    assert!(psnr(&a, &Frame::constant(1, 4, 4, 0.75)).is_err());
}

#[test]
fn psnr_clamps_before_comparing() {
    let over = Frame::from_tensor(scene_adapt::Tensor::full(vec![1, 2, 2], 1.7)).unwrap();
    let one = Frame::constant(1, 2, 2, 1.0);
    assert_eq!(psnr(&over, &one).unwrap(), PSNR_CAP_DB);
}

#[test]
fn psnr_decreases_with_noise_magnitude() {
    let mut r = rng(1);
    let base = Frame::constant(1, 16, 16, 0.5);
    let pattern: Vec<f64> = (0..256).map(|_| r.gen_range(-1.0..1.0)).collect();
    let mut last = f64::INFINITY;
    for s in [0.01, 0.02, 0.05, 0.1, 0.2, 0.4] {
        let noisy = Frame::new(1, 16, 16, pattern.iter().map(|p| 0.5 + s * p).collect()).unwrap();
        let v = psnr(&noisy, &base).unwrap();
        assert!(v < last);
        last = v;
    }
}

#[test]
fn identical_models_without_adaptation_give_equal_rows() {
    let params = ModelParams::init(&Arch::micro(), 2).unwrap();
    let suite = synth_family(3, 8, 1.0, 3);
    let table = eval::compare_modes(
        &params,
        &params,
        &params,
        &suite,
        &AdaptConfig::plain(0.0, 1),
        Exec::Sequential,
    )
    .unwrap();
    let b = table.per_sequence(eval::BASELINE);
    assert_eq!(b.len(), 3);
    assert_eq!(b, table.per_sequence(eval::RETRAINED));
    assert_eq!(b, table.per_sequence(eval::META));
    let csv = table.to_csv();
    assert!(csv.starts_with("#"));
    assert_eq!(
        csv.lines().nth(1),
        Some("method,condition,sequence,psnr_db")
    );
    assert_eq!(csv.lines().count(), 2 + 3 * 4);
}

#[test]
fn comparison_rejects_empty_suite_and_mismatched_models() {
    let p = ModelParams::init(&Arch::micro(), 4).unwrap();
    let acfg = AdaptConfig::default();
    assert!(eval::compare_modes(&p, &p, &p, &[], &acfg, Exec::Sequential).is_err());
    let other = ModelParams::init(
        &Arch {
            widths: vec![4, 4],
            ..Arch::micro()
        },
        4,
    )
    .unwrap();
    let suite = synth_family(1, 8, 1.0, 5);
    assert!(eval::compare_modes(&p, &other, &p, &suite, &acfg, Exec::Sequential).is_err());
}

#[test]
fn zero_step_column_is_the_unadapted_evaluation() {
    let meta = smooth_point(&Arch::micro(), 6);
    let retrained = smooth_point(&Arch::micro(), 7);
    let suite = synth_family(3, 8, 1.0, 8);
    let grid = eval::ablate_inner_steps(
        &meta,
        &retrained,
        &suite,
        1e-3,
        OptimizerKind::Adamax,
        &[0, 1, 2, 3, 5],
        Exec::Sequential,
    )
    .unwrap();
    let none = AdaptConfig::none();
    assert_eq!(
        grid.naive[0],
        eval::mean(&eval::evaluate_suite(&retrained, &suite, &none, Exec::Sequential).unwrap())
    );
    assert_eq!(
        grid.meta[0],
        eval::mean(&eval::evaluate_suite(&meta, &suite, &none, Exec::Sequential).unwrap())
    );
    let csv = grid.to_csv();
    let lines: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(lines[0], "method,k=0,k=1,k=2,k=3,k=5");
    assert!(lines[1].starts_with("Naive Fine-tune,"));
    assert!(lines[2].starts_with("Meta-trained,"));
    assert!(lines[3].starts_with("PSNR gain,,"));
    assert!(lines.iter().all(|l| l.split(',').count() == 6));
    assert!(grid.monotonicity_report().contains("k=5"));
}

#[test]
fn zero_alpha_cell_is_the_unadapted_evaluation() {
    let retrained = smooth_point(&Arch::micro(), 9);
    let meta = smooth_point(&Arch::micro(), 10);
    let suite = synth_family(2, 8, 1.0, 11);
    let entries = [
        (0.0, &retrained),
        (1e-6, &meta),
        (1e-5, &meta),
        (1e-4, &meta),
    ];
    let grid = eval::ablate_lr(&entries, &suite, 1, OptimizerKind::Sgd, Exec::Sequential).unwrap();
    let plain = eval::mean(
        &eval::evaluate_suite(&retrained, &suite, &AdaptConfig::none(), Exec::Sequential).unwrap(),
    );
    assert_eq!(grid.psnr[0], plain);
    let csv = grid.to_csv();
    let header = csv.lines().nth(1).unwrap();
    assert_eq!(header.split(',').count(), 5);
    assert!(header.starts_with("learning_rate,alpha=0e0,"));
    assert!(grid.all_at_least_zero_cell().is_some());
}

#[test]
fn feasibility_curve_identities() {
    let params = smooth_point(&Arch::micro(), 12);
    let seq = synth_family(1, 8, 1.0, 13).remove(0);
    let flat = eval::feasibility_curve(&params, &seq, 0.0, 5, OptimizerKind::Adamax).unwrap();
    assert_eq!(flat.delta_db, vec![0.0; 6]);
    let moving = eval::feasibility_curve(&params, &seq, 1e-3, 5, OptimizerKind::Adamax).unwrap();
    assert_eq!(moving.delta_db[0], 0.0);
    assert_eq!(moving.delta_db.len(), 6);
    assert!(moving
        .to_csv()
        .starts_with("step,delta_psnr_db,finetune_loss\n0,0.000000,"));
    assert!(eval::feasibility_curve(&params, &seq[..6], 1e-3, 5, OptimizerKind::Adamax).is_err());
}

#[test]
fn harness_csvs_are_reproducible() {
    let meta = smooth_point(&Arch::micro(), 14);
    let suite = synth_family(2, 8, 1.0, 15);
    let acfg = AdaptConfig::plain(1e-2, 1);
    let run = |exec| {
        eval::compare_modes(&meta, &meta, &meta, &suite, &acfg, exec)
            .unwrap()
            .to_csv()
    };
    assert_eq!(run(Exec::Sequential), run(Exec::Sequential));
    assert_eq!(run(Exec::Sequential), run(Exec::Parallel));
}

proptest! {
    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let mut r = rng(seed);
        let a = random_frame(3, 4, 4, &mut r);
        let b = random_frame(3, 4, 4, &mut r);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!(psnr(&a, &b).unwrap() <= PSNR_CAP_DB);
    }
}
