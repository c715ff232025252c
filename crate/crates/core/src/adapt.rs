//! Test-time scene adaptation: adapt a copy of the parameters on a window's
//! own frames, then synthesize the frames between them.

use std::sync::Arc;

use crate::exec::{map_ordered, Exec};
use crate::frame::{Frame, SharedFrame};
use crate::model::{self, ModelParams};
use crate::tasks::{DataError, Triplet};
use crate::trainer::{adapt_on_triplets, AdaptConfig, TrainError};

/// Adapted parameters and the frames synthesized between consecutive inputs.
#[derive(Clone, Debug)]
pub struct Adapted {
    pub params: ModelParams,
    /// `frames[i]` lies between input `i` and input `i + 1`.
    pub frames: Vec<Frame>,
}

fn check_window(window: &[SharedFrame]) -> Result<(), TrainError> {
    if window.len() < 3 {
        return Err(DataError::TooShort {
            len: window.len(),
            need: 3,
        }
        .into());
    }
    let dims = window[0].dims();
    if let Some(f) = window.iter().find(|f| f.dims() != dims) {
        return Err(DataError::MixedShapes(format!("{:?} vs {:?}", f.dims(), dims)).into());
    }
    Ok(())
}

/// Adapts on the wide-gap triplets of a 4-frame window `(I1, I3, I5, I7)`
/// (or the single triplet of a 3-frame window) and returns `Î2, Î4, Î6`
/// (or `Î2, Î4`). `params` is never modified.
pub fn adapt_and_interpolate(
    params: &ModelParams,
    window: &[SharedFrame],
    acfg: &AdaptConfig,
) -> Result<Adapted, TrainError> {
    check_window(window)?;
    let window = &window[..window.len().min(4)];
    let triplets: Vec<Triplet> = window
        .windows(3)
        .map(|w| Triplet::new(w[0].clone(), w[1].clone(), w[2].clone(), 2))
        .collect::<Result<_, _>>()?;
    let refs: Vec<&Triplet> = triplets.iter().collect();
    let adapted = adapt_on_triplets(params, &refs, acfg)?;
    let frames = window
        .windows(2)
        .map(|p| model::forward(&adapted, &p[0], &p[1]))
        .collect::<Result<_, _>>()?;
    Ok(Adapted {
        params: adapted,
        frames,
    })
}

/// How a sequence is covered by 4-frame adaptation windows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowPolicy {
    /// Distance between consecutive window starts, 1..=3.
    pub stride: usize,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        Self { stride: 2 }
    }
}

/// Window starts for a sequence of `len >= 4` frames; the last window is
/// pinned to the end of the sequence.
pub fn window_starts(len: usize, policy: WindowPolicy) -> Vec<usize> {
    debug_assert!(len >= 4);
    let last = len - 4;
    let mut starts: Vec<usize> = (0..=last).step_by(policy.stride).collect();
    if starts.last() != Some(&last) {
        starts.push(last);
    }
    starts
}

/// For gap `g` (between frames `g` and `g + 1`), the index into `starts` of
/// the window whose central gap is nearest; ties go to the earlier window.
pub fn owner_of_gap(starts: &[usize], g: usize) -> usize {
    let mut best = 0;
    let mut best_d = usize::MAX;
    for (i, &s) in starts.iter().enumerate() {
        if g < s || g > s + 2 {
            continue;
        }
        let d = (s + 1).abs_diff(g);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    debug_assert!(best_d != usize::MAX, "gap {g} not covered");
    best
}

/// Doubles the frame rate: originals at even output indices, synthesized
/// frames at odd ones. Each window is adapted independently from `params`.
pub fn interpolate_sequence(
    params: &ModelParams,
    seq: &[SharedFrame],
    acfg: &AdaptConfig,
    policy: WindowPolicy,
    exec: Exec,
) -> Result<Vec<SharedFrame>, TrainError> {
    check_window(seq)?;
    if !(1..=3).contains(&policy.stride) {
        return Err(TrainError::Config(format!(
            "window stride must be 1..=3, got {}",
            policy.stride
        )));
    }
    let middles: Vec<Frame> = if seq.len() == 3 {
        adapt_and_interpolate(params, seq, acfg)?.frames
    } else {
        let starts = window_starts(seq.len(), policy);
        let results = map_ordered(exec, &starts, |&s| {
            adapt_and_interpolate(params, &seq[s..s + 4], acfg)
        });
        let per_window: Vec<Vec<Frame>> = results
            .into_iter()
            .map(|r| r.map(|a| a.frames))
            .collect::<Result<_, _>>()?;
        (0..seq.len() - 1)
            .map(|g| {
                let w = owner_of_gap(&starts, g);
                per_window[w][g - starts[w]].clone()
            })
            .collect()
    };
    let mut out = Vec::with_capacity(2 * seq.len() - 1);
    for (i, f) in seq.iter().enumerate() {
        out.push(Arc::clone(f));
        if let Some(m) = middles.get(i) {
            out.push(Arc::new(m.clone()));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn windows_cover_every_gap_with_centre_priority() {
        assert_eq!(window_starts(4, WindowPolicy::default()), vec![0]);
        assert_eq!(window_starts(7, WindowPolicy::default()), vec![0, 2, 3]);
        assert_eq!(window_starts(8, WindowPolicy::default()), vec![0, 2, 4]);
        let starts = window_starts(8, WindowPolicy::default());
        let owners: Vec<usize> = (0..7).map(|g| owner_of_gap(&starts, g)).collect();
        // gap 2 is an edge of windows 0 and 1 alike; the earlier window wins
        assert_eq!(owners, vec![0, 0, 0, 1, 1, 2, 2]);
        let starts = window_starts(7, WindowPolicy::default());
        let owners: Vec<usize> = (0..6).map(|g| owner_of_gap(&starts, g)).collect();
        assert_eq!(owners, vec![0, 0, 0, 1, 2, 2]);
    }
}
