//! Motion-capture processing and evaluation for co-speech gesture data.

pub mod audio;
pub mod autodiff;
pub mod body_model;
pub mod bvh;
pub mod dataset;
pub mod container;
pub mod face_map;
pub mod metrics;
pub mod motion;
pub mod rotation;
pub mod mosh;
pub mod optim;
pub mod pipeline;
pub mod synth;
pub mod vq;
pub mod refine;
