//! Right-hand sides `eps_tilde` of the regularized equation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, Node, ScalarField};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfileError {
    #[error("regularization parameter must be positive and finite, got {0}")]
    NonPositive(f64),
    #[error("right-hand side field must be positive and finite; found {value} at index {index}")]
    BadField { index: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Constant,
    Annulus,
}

/// `eps_tilde(t)` on the right-hand side of `Phi_tt (1 + a) - |Phi_tzbar|^2 = eps_tilde`.
///
/// `Annulus` is the pull-back of a constant right-hand side `eps` from the
/// annulus `1 <= |tau| <= e`, giving `4 eps exp(2t)`. `Field` carries an
/// arbitrary positive per-node right-hand side (manufactured solutions).
#[derive(Debug, Clone, PartialEq)]
pub enum EpsilonProfile {
    Constant { eps_tilde: f64 },
    Annulus { epsilon: f64 },
    Field(ScalarField),
}

impl EpsilonProfile {
    pub fn constant(eps_tilde: f64) -> Result<Self, ProfileError> {
        check_param(eps_tilde)?;
        Ok(Self::Constant { eps_tilde })
    }

    pub fn annulus(epsilon: f64) -> Result<Self, ProfileError> {
        check_param(epsilon)?;
        Ok(Self::Annulus { epsilon })
    }

    pub fn from_kind(kind: ProfileKind, param: f64) -> Result<Self, ProfileError> {
        match kind {
            ProfileKind::Constant => Self::constant(param),
            ProfileKind::Annulus => Self::annulus(param),
        }
    }

    pub fn field(f: ScalarField) -> Result<Self, ProfileError> {
        if let Some((index, &value)) =
            f.values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(ProfileError::BadField { index, value });
        }
        Ok(Self::Field(f))
    }

    pub fn kind(&self) -> Option<ProfileKind> {
        match self {
            Self::Constant { .. } => Some(ProfileKind::Constant),
            Self::Annulus { .. } => Some(ProfileKind::Annulus),
            Self::Field(_) => None,
        }
    }

    /// Scalar parameter (`eps_tilde` or `eps`); `None` for field profiles.
    pub fn param(&self) -> Option<f64> {
        match self {
            Self::Constant { eps_tilde } => Some(*eps_tilde),
            Self::Annulus { epsilon } => Some(*epsilon),
            Self::Field(_) => None,
        }
    }

    /// Value at time `t` for the `t`-only profiles.
    pub fn at_t(&self, t: f64) -> Option<f64> {
        match self {
            Self::Constant { eps_tilde } => Some(*eps_tilde),
            Self::Annulus { epsilon } => Some(4.0 * epsilon * (2.0 * t).exp()),
            Self::Field(_) => None,
        }
    }

    pub fn at(&self, grid: &Grid, node: Node) -> f64 {
        match self {
            Self::Field(f) => f.values[grid.node_index(node)],
            _ => self.at_t(grid.t(node.it)).unwrap_or(f64::NAN),
        }
    }

    pub fn max_value(&self) -> f64 {
        match self {
            Self::Constant { eps_tilde } => *eps_tilde,
            Self::Annulus { epsilon } => 4.0 * epsilon * 2f64.exp(),
            Self::Field(f) => f.values.iter().cloned().fold(f64::MIN, f64::max),
        }
    }

    /// Whether the profile is constant along each torus slice.
    pub fn is_z_independent(&self) -> bool {
        !matches!(self, Self::Field(_))
    }
}

fn check_param(v: f64) -> Result<(), ProfileError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ProfileError::NonPositive(v))
    }
}
