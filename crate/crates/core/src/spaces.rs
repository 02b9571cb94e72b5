use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    /// Number of actions.
    Discrete(usize),
    /// Action vector width; every component lives in `[-1, 1]`.
    Continuous(usize),
}

impl ActionSpace {
    pub fn is_discrete(self) -> bool {
        matches!(self, ActionSpace::Discrete(_))
    }

    /// Width of one action as stored in a batch (1 for discrete).
    pub fn width(self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous(d) => d,
        }
    }
}

/// A batch of actions, one per row.
#[derive(Debug, Clone, PartialEq)]
pub enum Actions {
    Discrete(Vec<usize>),
    Continuous { data: Vec<f64>, dim: usize },
}

impl Actions {
    pub fn len(&self) -> usize {
        match self {
            Actions::Discrete(a) => a.len(),
            Actions::Continuous { data, dim } => data.len() / dim,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn empty_like(space: ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(_) => Actions::Discrete(Vec::new()),
            ActionSpace::Continuous(dim) => Actions::Continuous { data: Vec::new(), dim },
        }
    }

    /// Appends row `i` of `other`.
    pub fn push_from(&mut self, other: &Actions, i: usize) -> Result<()> {
        match (self, other) {
            (Actions::Discrete(a), Actions::Discrete(b)) => a.push(b[i]),
            (Actions::Continuous { data, dim }, Actions::Continuous { data: src, dim: d2 }) if dim == d2 => {
                data.extend_from_slice(&src[i * *d2..(i + 1) * *d2]);
            }
            _ => return shape_err("mixed action kinds"),
        }
        Ok(())
    }

    /// Rows at `idx`, in order.
    pub fn gather(&self, idx: &[usize]) -> Actions {
        match self {
            Actions::Discrete(a) => Actions::Discrete(idx.iter().map(|&i| a[i]).collect()),
            Actions::Continuous { data, dim } => Actions::Continuous {
                data: idx
                    .iter()
                    .flat_map(|&i| data[i * dim..(i + 1) * dim].iter().copied())
                    .collect(),
                dim: *dim,
            },
        }
    }

    /// Continuous actions clamped to `[-1, 1]`, the form environments and the
    /// critic consume. Discrete actions pass through.
    pub fn squashed(&self) -> Actions {
        match self {
            Actions::Discrete(_) => self.clone(),
            Actions::Continuous { data, dim } => Actions::Continuous {
                data: data.iter().map(|v| v.clamp(-1.0, 1.0)).collect(),
                dim: *dim,
            },
        }
    }
}
