//! Adversarial speaker adaptation of dense acoustic models, at desk scale.
//!
//! A fixed speaker-independent (SI) model is adapted to a target speaker by
//! fine-tuning a cloned speaker-dependent (SD) copy while a discriminator
//! network, trained adversarially through a gradient reversal layer, pulls
//! the SD model's deep features (or its output posteriors) back toward the
//! SI model's distribution. A KL-style interpolated-target baseline and a
//! synthetic multi-speaker corpus generator round out the toolkit, and the
//! `asa` binary drives end-to-end experiments that report frame error rate,
//! post-hoc discriminator probe accuracy and an MMD estimate per run.

pub mod error;
pub mod tensor;
pub mod nn;
pub mod models;
pub mod losses;
pub mod datagen;
pub mod adapt;
pub mod harness;

pub use adapt::{AdaptConfig, AdaptOutcome, Method, SiTrainConfig, Supervision, TrainTrace};
pub use datagen::{Corpus, CorpusConfig, FrameDataset, SpeakerSpec};
pub use error::{Error, Result};
pub use harness::{EvalReport, ProbeConfig, SweepCell, SweepPlan};
pub use losses::LabelSeq;
pub use models::{AcousticModel, Discriminator, ModelRole};
pub use nn::{Activation, DenseLayer, ForwardCache, Gradients, Network};
pub use tensor::Tensor2D;
