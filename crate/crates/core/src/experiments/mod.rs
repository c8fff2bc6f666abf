//! Reproduction harness for the numerical experiments.

mod image;
mod runs;
mod truth;

pub use image::{
    accuracy, assign_components, classify, draw_observation, generate_dataset, generate_image, generate_image_with,
    generate_labeled, gradient_orientations, oracle_model, run_image_experiment, ClassSpec, Edge, Image, ImageConfig,
    ImageOutcome, CLASSES, GRADIENT_POSITIONS, IMAGE_COLS, IMAGE_ROWS, N_CLASSES, PIXEL_NOISE,
};
pub use runs::{
    recovers_truth, repeat_seed, run_function_experiment, run_mixture_experiment, ExperimentConfig, ExperimentOutcome,
    MeanStd, RepeatOutcome, TestFunction,
};
pub use truth::{build_ground_truth, truth_couplings, Setting, TRUTH_ALPHA, TRUTH_DIM};
