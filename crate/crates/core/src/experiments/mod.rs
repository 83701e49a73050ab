//! Experiment harnesses built on training and metrics: the loss-term
//! ablation and the estimator augmentation study.

pub mod ablation;
pub mod augmentation;

pub use ablation::{
    batch_hash, cycle_l1, run_ablation, AblationArm, AblationEval, AblationOutcome, AblationSpec, AblationVariant,
};
pub use augmentation::{
    build_augmented_dataset, check_no_leakage, estimator_errors, evaluation_set, open_external_eval_set,
    run_augmentation_study, AugmentationOutcome, AugmentationRow, AugmentationSpec, AugmentationTable, AugmentedSets,
    AUGMENTED_MANIFEST, RAW_MANIFEST,
};
