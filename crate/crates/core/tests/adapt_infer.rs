mod common;

use std::sync::Arc;

use common::{random_sequence, smooth_point};
use scene_adapt::adapt::{adapt_and_interpolate, interpolate_sequence, WindowPolicy};
use scene_adapt::exec::Exec;
use scene_adapt::model::{self, Arch};
use scene_adapt::optim::OptimizerKind;
use scene_adapt::trainer::AdaptConfig;
use scene_adapt::Frame;

fn adapting() -> AdaptConfig {
    AdaptConfig::plain(1e-2, 1)
}

#[test]
fn disabled_adaptation_equals_plain_inference() {
    let params = smooth_point(&Arch::micro(), 1);
    let window = random_sequence(4, 2);
    for acfg in [AdaptConfig::plain(0.0, 1), AdaptConfig::plain(1e-2, 0)] {
        let out = adapt_and_interpolate(&params, &window, &acfg).unwrap();
        assert_eq!(out.params, params);
        for (i, f) in out.frames.iter().enumerate() {
            assert_eq!(
                f,
                &model::forward(&params, &window[i], &window[i + 1]).unwrap()
            );
        }
    }
}

#[test]
fn adapted_frames_come_from_the_adapted_parameters() {
    let params = smooth_point(&Arch::micro(), 3);
    let window = random_sequence(4, 4);
    let out = adapt_and_interpolate(&params, &window, &adapting()).unwrap();
    assert_ne!(out.params, params);
    assert_eq!(out.frames.len(), 3);
    assert_eq!(
        out.frames[1],
        model::forward(&out.params, &window[1], &window[2]).unwrap()
    );
}

#[test]
fn constant_window_stays_constant() {
    let params = smooth_point(&Arch::micro(), 5);
    let window: Vec<_> = (0..4)
        .map(|_| Arc::new(Frame::constant(1, 8, 8, 0.62)))
        .collect();
    let out = adapt_and_interpolate(&params, &window, &adapting()).unwrap();
    for f in &out.frames {
        assert!(f.data().iter().all(|v| (v - 0.62).abs() < 1e-9));
    }
}

#[test]
fn short_windows_fall_back_or_are_rejected() {
    let params = smooth_point(&Arch::micro(), 6);
    let seq = random_sequence(3, 7);
    assert_eq!(
        adapt_and_interpolate(&params, &seq, &adapting())
            .unwrap()
            .frames
            .len(),
        2
    );
    assert!(adapt_and_interpolate(&params, &seq[..2], &adapting()).is_err());
    let mut mixed = random_sequence(3, 8);
    mixed.push(Arc::new(Frame::constant(1, 8, 4, 0.5)));
    assert!(adapt_and_interpolate(&params, &mixed, &adapting()).is_err());
}

#[test]
fn four_frames_double_to_seven_with_originals_untouched() {
    let params = smooth_point(&Arch::micro(), 9);
    let seq = random_sequence(4, 10);
    let out = interpolate_sequence(
        &params,
        &seq,
        &adapting(),
        WindowPolicy::default(),
        Exec::Sequential,
    )
    .unwrap();
    assert_eq!(out.len(), 7);
    for (i, f) in seq.iter().enumerate() {
        assert_eq!(out[2 * i].data(), f.data());
    }
    let window = adapt_and_interpolate(&params, &seq, &adapting()).unwrap();
    for i in 0..3 {
        assert_eq!(*out[2 * i + 1], window.frames[i]);
    }
}

#[test]
fn three_frames_use_one_shot_mode() {
    let params = smooth_point(&Arch::micro(), 11);
    let seq = random_sequence(3, 12);
    let out = interpolate_sequence(
        &params,
        &seq,
        &adapting(),
        WindowPolicy::default(),
        Exec::Sequential,
    )
    .unwrap();
    assert_eq!(out.len(), 5);
    assert!(interpolate_sequence(
        &params,
        &seq[..2],
        &adapting(),
        WindowPolicy::default(),
        Exec::Sequential
    )
    .is_err());
}

#[test]
fn windows_are_adapted_in_isolation() {
    let params = smooth_point(&Arch::micro(), 13);
    let before = params.checksum();
    let seq = random_sequence(9, 14);
    let policy = WindowPolicy::default();
    let out = interpolate_sequence(&params, &seq, &adapting(), policy, Exec::Parallel).unwrap();
    assert_eq!(out.len(), 17);
    assert_eq!(params.checksum(), before);
    // windows start at 0, 2, 4; gap 5 belongs to the window at 4 (its centre)
    let alone = adapt_and_interpolate(&params, &seq[4..8], &adapting()).unwrap();
    assert_eq!(*out[2 * 5 + 1], alone.frames[1]);
    // gap 4 is an edge of windows 2 and 4; the earlier one wins the tie
    let w2 = adapt_and_interpolate(&params, &seq[2..6], &adapting()).unwrap();
    assert_eq!(*out[2 * 4 + 1], w2.frames[2]);
    // the pinned last window covers the final gap
    let last = adapt_and_interpolate(&params, &seq[5..9], &adapting()).unwrap();
    assert_eq!(*out[2 * 7 + 1], last.frames[2]);
    let seq_out =
        interpolate_sequence(&params, &seq, &adapting(), policy, Exec::Sequential).unwrap();
    assert_eq!(out, seq_out);
}

#[test]
fn zero_alpha_sequence_matches_unadapted_sliding_inference() {
    let params = smooth_point(&Arch::micro(), 15);
    let seq = random_sequence(6, 16);
    let out = interpolate_sequence(
        &params,
        &seq,
        &AdaptConfig {
            alpha: 0.0,
            k: 1,
            optimizer: OptimizerKind::Adamax,
        },
        WindowPolicy::default(),
        Exec::Sequential,
    )
    .unwrap();
    for g in 0..5 {
        assert_eq!(
            *out[2 * g + 1],
            model::forward(&params, &seq[g], &seq[g + 1]).unwrap()
        );
    }
    assert!(interpolate_sequence(
        &params,
        &seq,
        &adapting(),
        WindowPolicy { stride: 4 },
        Exec::Sequential
    )
    .is_err());
}
