//! Transferability measurement and the two adaptive attacks on ensembles.

mod aggregate;
mod paa;
mod taa;
mod transfer;

use thiserror::Error;

use crate::attacks::AttackError;
use crate::classifier::ClassifierError;
use crate::ensemble::EnsembleError;
use crate::tensor::{Tensor, TensorError};
use crate::transforms::TransformError;

pub use aggregate::{aggregate, mvote_quantum, wsump_positions, wsump_weights, Aggregation, MVOTE_STEP};
pub use paa::{paa, PaaConfig, PaaOutcome};
pub use taa::taa;
pub use transfer::{
    generate_victim_aes, transfer_matrix, transfer_matrix_from_aes, transfer_ranking, transfer_ranking_from_aes,
    TransferMatrix, TransferRanking, VictimAes,
};

#[derive(Debug, Error)]
pub enum AdaptiveError {
    #[error("reference image has zero norm")]
    ZeroReference,
    #[error("no perturbations to aggregate")]
    NothingToAggregate,
    #[error("member '{0}' is irreversible and cannot host an adaptive attack")]
    Irreversible(String),
    #[error("ranking does not cover member '{0}'")]
    NotRanked(String),
    #[error("ranking and member set differ")]
    RankingMismatch,
    #[error("no members given")]
    NoMembers,
    #[error("evaluation set is empty")]
    EmptySet,
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Ensemble(#[from] EnsembleError),
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// `‖x_adv − x0‖₂ / ‖x0‖₂`.
pub fn dissimilarity(x_adv: &Tensor, x0: &Tensor) -> Result<f64, AdaptiveError> {
    let reference = x0.l2_norm();
    if reference == 0.0 {
        return Err(AdaptiveError::ZeroReference);
    }
    Ok(x_adv.sub(x0)?.l2_norm() / reference)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images() {
        let x0 = Tensor::filled(&[28, 28, 1], 0.5);
        assert_eq!(dissimilarity(&x0, &x0).unwrap(), 0.0);
        let adv = Tensor::filled(&[28, 28, 1], 0.55);
        assert!((dissimilarity(&adv, &x0).unwrap() - 0.1).abs() < 1e-6);
        assert!(matches!(
            dissimilarity(&adv, &Tensor::zeros(&[28, 28, 1])),
            Err(AdaptiveError::ZeroReference)
        ));
    }
}
