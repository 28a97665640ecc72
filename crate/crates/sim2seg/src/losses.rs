//! Adversarial and reconstruction objectives.

use serde::{Deserialize, Serialize};

use crate::nn::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvMode {
    LeastSquares,
    BinaryCrossEntropy,
}

impl AdvMode {
    fn against(self, g: &mut Graph, scores: Var, label: f32) -> Var {
        match self {
            AdvMode::LeastSquares => g.mse_const(scores, label),
            AdvMode::BinaryCrossEntropy => g.bce_logits_const(scores, label),
        }
    }

    /// Generator term: push discriminator scores on fakes toward "real".
    pub fn generator(self, g: &mut Graph, fake_scores: Var) -> Var {
        self.against(g, fake_scores, 1.0)
    }

    /// Discriminator term: real toward 1, fake toward 0, halved.
    pub fn discriminator(self, g: &mut Graph, real_scores: Var, fake_scores: Var) -> Var {
        let r = self.against(g, real_scores, 1.0);
        let f = self.against(g, fake_scores, 0.0);
        g.weighted_sum(&[(r, 0.5), (f, 0.5)])
    }
}

/// Mean absolute reconstruction error.
pub fn l1(g: &mut Graph, output: Var, target: Var) -> Var {
    g.l1(output, target)
}
