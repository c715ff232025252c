//! Gradient-descent optimizers over [`ModelParams`].

use std::fmt;
use std::str::FromStr;

use crate::model::{ModelParams, ParamVec};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum OptimizerKind {
    /// `θ ← θ − lr · g`
    #[default]
    Sgd,
    /// Adam variant with an infinity-norm second moment.
    Adamax,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adamax => "adamax",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" | "plain" => Ok(OptimizerKind::Sgd),
            "adamax" => Ok(OptimizerKind::Adamax),
            other => Err(format!(
                "unknown optimizer {other:?} (expected sgd or adamax)"
            )),
        }
    }
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Optimizer with its (possibly empty) state.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    moments: Option<(ParamVec, ParamVec)>,
    steps: i32,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            moments: None,
            steps: 0,
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: &mut ModelParams, grad: &ParamVec, lr: f64) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.tensors_mut().iter_mut().zip(&grad.0) {
                    p.add_scaled(-lr, g)
                        .expect("gradient layout matches parameters");
                }
            }
            OptimizerKind::Adamax => {
                let (m, u) = self
                    .moments
                    .get_or_insert_with(|| (params.zeros_like(), params.zeros_like()));
                self.steps += 1;
                let step = lr / (1.0 - BETA1.powi(self.steps));
                for (((p, g), m), u) in params
                    .tensors_mut()
                    .iter_mut()
                    .zip(&grad.0)
                    .zip(m.0.iter_mut())
                    .zip(u.0.iter_mut())
                {
                    let (p, g, m, u) = (p.data_mut(), g.data(), m.data_mut(), u.data_mut());
                    for i in 0..p.len() {
                        m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                        u[i] = f64::max(BETA2 * u[i], g[i].abs());
                        p[i] -= step * m[i] / (u[i] + EPS);
                    }
                }
            }
        }
    }
}
