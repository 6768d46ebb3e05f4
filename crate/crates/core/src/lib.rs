//! Transfer clustering for novel category discovery.
//!
//! A small encoder pretrained on labelled classes is extended with a
//! PCA bottleneck and fine-tuned jointly with cluster prototypes by
//! annealing Student's-t soft assignments toward a sharpened target
//! distribution. Temporal ensembling and consistency penalties are
//! available as variants. The number of novel classes can be estimated
//! with constrained k-means over labelled probe classes.

pub mod assignment;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod estimator;
pub mod kmeans;
pub mod metrics;
pub mod optim;
pub mod regularizers;
pub mod rng;
pub mod trainer;

pub use assignment::{AssignmentMatrix, Prototypes};
pub use dataset::{FeatureFormat, FeatureMatrix, LabeledSet, ProbeSplit};
pub use encoder::{EncoderParams, PcaModel};
pub use error::{DtcError, Result};
pub use trainer::{TrainConfig, TrainTrace, Variant};
