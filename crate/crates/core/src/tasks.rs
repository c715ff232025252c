//! Meta-learning tasks built from 7-frame windows.
//!
//! For a window `I1..I7` the task-wise training set holds the two wide-gap
//! triplets `(I1, I3, I5)` and `(I3, I5, I7)`; the test set holds the
//! narrow-gap triplet `(I3, I4, I5)`. Training gaps are therefore always
//! twice the test gap.

use std::fmt;
use std::sync::Arc;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::frame::SharedFrame;

pub const WINDOW: usize = 7;

pub type Sequence = Vec<SharedFrame>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("sequence has {len} frames, at least {need} required")]
    TooShort { len: usize, need: usize },
    #[error("anchor {anchor} needs frames up to index {}, sequence has {len}", anchor + WINDOW - 1)]
    AnchorOutOfRange { anchor: usize, len: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("batch of {batch} exceeds the {available} available windows")]
    BatchTooLarge { batch: usize, available: usize },
    #[error("batch size must be at least 1")]
    ZeroBatch,
    #[error("frames differ in shape: {0}")]
    MixedShapes(String),
    #[error("invalid synthetic sequence: {0}")]
    Synth(String),
    #[error("{path}: {msg}")]
    File { path: String, msg: String },
}

/// `(input_a, target, input_b)`; `gap` counts frames from `input_a` to `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct Triplet {
    pub input_a: SharedFrame,
    pub target: SharedFrame,
    pub input_b: SharedFrame,
    pub gap: usize,
}

impl Triplet {
    pub fn new(
        input_a: SharedFrame,
        target: SharedFrame,
        input_b: SharedFrame,
        gap: usize,
    ) -> Result<Self, DataError> {
        if input_a.dims() != target.dims() || input_b.dims() != target.dims() {
            return Err(DataError::MixedShapes(format!(
                "{:?} / {:?} / {:?}",
                input_a.dims(),
                target.dims(),
                input_b.dims()
            )));
        }
        debug_assert!(gap >= 1);
        Ok(Self {
            input_a,
            target,
            input_b,
            gap,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TaskSource {
    pub sequence: usize,
    pub anchor: usize,
}

impl fmt::Display for TaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "seq{:04}@{}", self.sequence, self.anchor)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Task {
    pub d_train: [Triplet; 2],
    pub d_test: Triplet,
    pub source: TaskSource,
}

impl Task {
    /// The four low-frame-rate frames `I1, I3, I5, I7`.
    pub fn low_rate_frames(&self) -> [SharedFrame; 4] {
        let [t0, t1] = &self.d_train;
        [
            t0.input_a.clone(),
            t0.target.clone(),
            t1.target.clone(),
            t1.input_b.clone(),
        ]
    }
}

/// Number of task windows in a sequence of `len` frames (anchors slide by one).
pub fn window_count(len: usize) -> usize {
    (len + 1).saturating_sub(WINDOW)
}

/// Builds the task whose window starts at `anchor` (0-based): frames
/// `anchor..anchor + 7` play the roles of `I1..I7`.
pub fn make_task(seq: &[SharedFrame], anchor: usize) -> Result<Task, DataError> {
    make_task_from(
        seq,
        TaskSource {
            sequence: 0,
            anchor,
        },
    )
}

fn make_task_from(seq: &[SharedFrame], source: TaskSource) -> Result<Task, DataError> {
    if seq.len() < WINDOW {
        return Err(DataError::TooShort {
            len: seq.len(),
            need: WINDOW,
        });
    }
    let anchor = source.anchor;
    if anchor + WINDOW > seq.len() {
        return Err(DataError::AnchorOutOfRange {
            anchor,
            len: seq.len(),
        });
    }
    let i = |k: usize| Arc::clone(&seq[anchor + k - 1]);
    Ok(Task {
        d_train: [
            Triplet::new(i(1), i(3), i(5), 2)?,
            Triplet::new(i(3), i(5), i(7), 2)?,
        ],
        d_test: Triplet::new(i(3), i(4), i(5), 1)?,
        source,
    })
}

/// Every `(sequence, anchor)` window of a dataset, in order.
pub fn all_windows(dataset: &[Sequence]) -> Vec<TaskSource> {
    dataset
        .iter()
        .enumerate()
        .flat_map(|(s, seq)| {
            (0..window_count(seq.len())).map(move |anchor| TaskSource {
                sequence: s,
                anchor,
            })
        })
        .collect()
}

pub fn task_at(dataset: &[Sequence], source: TaskSource) -> Result<Task, DataError> {
    let seq = dataset
        .get(source.sequence)
        .ok_or(DataError::EmptyDataset)?;
    make_task_from(seq, source)
}

/// Every task of a dataset, in window order.
pub fn all_tasks(dataset: &[Sequence]) -> Result<Vec<Task>, DataError> {
    all_windows(dataset)
        .into_iter()
        .map(|s| task_at(dataset, s))
        .collect()
}

/// Draws task batches uniformly over `(sequence, anchor)` windows, without
/// replacement inside a batch.
pub struct TaskSampler<'a> {
    dataset: &'a [Sequence],
    windows: Vec<TaskSource>,
    rng: ChaCha8Rng,
}

impl<'a> TaskSampler<'a> {
    pub fn new(dataset: &'a [Sequence], seed: u64) -> Result<Self, DataError> {
        let windows = all_windows(dataset);
        if windows.is_empty() {
            return Err(DataError::EmptyDataset);
        }
        Ok(Self {
            dataset,
            windows,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn available(&self) -> usize {
        self.windows.len()
    }

    pub fn next_sources(&mut self, batch: usize) -> Result<Vec<TaskSource>, DataError> {
        if batch == 0 {
            return Err(DataError::ZeroBatch);
        }
        if batch > self.windows.len() {
            return Err(DataError::BatchTooLarge {
                batch,
                available: self.windows.len(),
            });
        }
        Ok(index::sample(&mut self.rng, self.windows.len(), batch)
            .into_iter()
            .map(|i| self.windows[i])
            .collect())
    }

    pub fn next_batch(&mut self, batch: usize) -> Result<Vec<Task>, DataError> {
        self.next_sources(batch)?
            .into_iter()
            .map(|s| task_at(self.dataset, s))
            .collect()
    }
}

/// One batch drawn with a fresh sampler seeded by `seed`.
pub fn sample_batch(dataset: &[Sequence], batch: usize, seed: u64) -> Result<Vec<Task>, DataError> {
    TaskSampler::new(dataset, seed)?.next_batch(batch)
}

/// All consecutive `(t, t+1, t+2)` triplets of a sequence.
pub fn consecutive_triplets(seq: &[SharedFrame]) -> Result<Vec<Triplet>, DataError> {
    seq.windows(3)
        .map(|w| Triplet::new(w[0].clone(), w[1].clone(), w[2].clone(), 1))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::Frame;

    /// Frame `i` is the constant `i / 100`.
    fn numbered(len: usize) -> Sequence {
        (0..len)
            .map(|i| Arc::new(Frame::constant(1, 4, 4, i as f64 / 100.0)))
            .collect()
    }

    fn id(f: &SharedFrame) -> usize {
        (f.data()[0] * 100.0).round() as usize
    }

    #[test]
    fn task_layout_matches_window() {
        // Frames numbered 1..7 sit at indices 1..=7; anchor 1 selects them.
        let seq = numbered(8);
        let t = make_task(&seq, 1).unwrap();
        let ids = |tr: &Triplet| (id(&tr.input_a), id(&tr.target), id(&tr.input_b));
        assert_eq!(ids(&t.d_train[0]), (1, 3, 5));
        assert_eq!(ids(&t.d_train[1]), (3, 5, 7));
        assert_eq!(ids(&t.d_test), (3, 4, 5));
        assert_eq!(t.d_train[0].gap, 2);
        assert_eq!(t.d_train[1].gap, 2);
        assert_eq!(t.d_test.gap, 1);
        assert!(Arc::ptr_eq(&t.d_train[0].target, &t.d_train[1].input_a));
        assert!(Arc::ptr_eq(&t.d_test.input_b, &t.d_train[0].input_b));
        assert_eq!(t, make_task(&seq, 1).unwrap());
    }

    #[test]
    fn short_sequence_is_rejected() {
        let err = make_task(&numbered(6), 0).unwrap_err();
        assert!(err.to_string().contains("at least 7"), "{err}");
        assert!(matches!(
            make_task(&numbered(8), 2),
            Err(DataError::AnchorOutOfRange { .. })
        ));
    }

    #[test]
    fn ten_frames_give_four_windows() {
        let seq = numbered(10);
        let valid: Vec<usize> = (0..10).filter(|&a| make_task(&seq, a).is_ok()).collect();
        assert_eq!(valid, vec![0, 1, 2, 3]);
        assert_eq!(window_count(10), 4);
        assert_eq!(window_count(6), 0);
    }

    #[test]
    fn batch_of_four_is_distinct_and_reproducible() {
        let data = vec![numbered(7), numbered(9), numbered(8)];
        let a = sample_batch(&data, 4, 5).unwrap();
        let mut srcs: Vec<_> = a.iter().map(|t| t.source).collect();
        srcs.sort();
        srcs.dedup();
        assert_eq!(srcs.len(), 4);
        assert_eq!(a, sample_batch(&data, 4, 5).unwrap());
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let data = vec![numbered(7), numbered(8)];
        assert!(matches!(
            sample_batch(&data, 4, 0),
            Err(DataError::BatchTooLarge {
                batch: 4,
                available: 3
            })
        ));
        assert!(matches!(
            sample_batch(&[], 1, 0),
            Err(DataError::EmptyDataset)
        ));
        assert!(matches!(
            sample_batch(&data, 0, 0),
            Err(DataError::ZeroBatch)
        ));
    }
}
