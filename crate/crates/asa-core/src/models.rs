//! Acoustic models and discriminators built from plain networks.
//!
//! An acoustic model is a feature extractor (the lower hidden layers)
//! followed by a senone classifier (the remaining layers, ending in a
//! softmax head). Splitting an already-trained network at a hidden-layer
//! boundary and composing the two halves reproduces the original outputs
//! exactly, so the split point only decides where adversarial
//! regularization attaches.

use crate::error::{Error, Result};
use crate::nn::{self, Activation, Network, PROB_EPS};
use crate::tensor::Tensor2D;

/// Whether a model is a frozen speaker-independent reference or a trainable
/// speaker-dependent copy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelRole {
    Si,
    Sd,
}

/// Feature extractor plus senone classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticModel {
    feature_extractor: Network,
    senone_classifier: Network,
    role: ModelRole,
}

impl AcousticModel {
    /// Assembles a model from pre-built halves, validating the seam.
    pub fn from_parts(
        feature_extractor: Network,
        senone_classifier: Network,
        role: ModelRole,
    ) -> Result<Self> {
        if feature_extractor.output_dim() != senone_classifier.input_dim() {
            return Err(Error::invalid(format!(
                "extractor outputs {} dims but classifier expects {}",
                feature_extractor.output_dim(),
                senone_classifier.input_dim()
            )));
        }
        let last = senone_classifier.layers().last().unwrap();
        if last.activation() != Activation::Softmax {
            return Err(Error::invalid(
                "the senone classifier must end in a softmax head",
            ));
        }
        Ok(AcousticModel {
            feature_extractor,
            senone_classifier,
            role,
        })
    }

    pub fn feature_extractor(&self) -> &Network {
        &self.feature_extractor
    }

    pub fn senone_classifier(&self) -> &Network {
        &self.senone_classifier
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Network, &mut Network) {
        (&mut self.feature_extractor, &mut self.senone_classifier)
    }

    pub fn role(&self) -> ModelRole {
        self.role
    }

    /// Number of hidden layers in the feature extractor.
    pub fn split_index(&self) -> usize {
        self.feature_extractor.layers().len()
    }

    /// Input frame dimension.
    pub fn input_dim(&self) -> usize {
        self.feature_extractor.input_dim()
    }

    /// Deep feature dimension produced by the extractor.
    pub fn feature_dim(&self) -> usize {
        self.feature_extractor.output_dim()
    }

    pub fn num_senones(&self) -> usize {
        self.senone_classifier.output_dim()
    }

    pub fn param_count(&self) -> usize {
        self.feature_extractor.param_count() + self.senone_classifier.param_count()
    }

    /// Bit-exact hash over every parameter of both halves.
    pub fn checksum(&self) -> u64 {
        self.feature_extractor
            .checksum()
            .wrapping_mul(0x9e3779b97f4a7c15)
            ^ self.senone_classifier.checksum()
    }
}

/// Builds a fresh acoustic model network: tanh hidden layers and a softmax
/// output of width `num_senones`.
pub fn init_acoustic_network(
    input_dim: usize,
    hidden: &[usize],
    num_senones: usize,
    seed: u64,
) -> Result<Network> {
    if hidden.is_empty() {
        return Err(Error::invalid("an acoustic model needs hidden layers"));
    }
    let mut dims = Vec::with_capacity(hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(hidden);
    dims.push(num_senones);
    let mut acts = vec![Activation::Tanh; hidden.len()];
    acts.push(Activation::Softmax);
    nn::init_network(&dims, &acts, seed)
}

/// Divides a full network into an extractor (first `n_h` hidden layers) and
/// a classifier (everything above, including the softmax output layer).
pub fn split_model(full: Network, n_h: usize) -> Result<AcousticModel> {
    let hidden_count = full.layers().len() - 1;
    if n_h < 1 || n_h > hidden_count {
        return Err(Error::invalid(format!(
            "split index {n_h} out of range: the network has {hidden_count} hidden layers"
        )));
    }
    if full.layers().last().unwrap().activation() != Activation::Softmax {
        return Err(Error::invalid("the full network must end in a softmax head"));
    }
    let mut layers = full.into_layers();
    let upper = layers.split_off(n_h);
    AcousticModel::from_parts(Network::new(layers)?, Network::new(upper)?, ModelRole::Si)
}

/// Deep-copies an SI model into a trainable SD model. Parameters are bitwise
/// equal at return; later SD updates leave the source untouched.
pub fn clone_model(si: &AcousticModel) -> AcousticModel {
    AcousticModel {
        feature_extractor: si.feature_extractor.clone(),
        senone_classifier: si.senone_classifier.clone(),
        role: ModelRole::Sd,
    }
}

/// Maps frames to deep features through the extractor half.
pub fn extract_features(m: &AcousticModel, frames: &Tensor2D) -> Result<Tensor2D> {
    let (features, _) = nn::forward(&m.feature_extractor, frames)?;
    Ok(features)
}

/// Maps frames to senone posteriors through both halves. Each output row is
/// a categorical distribution over the senone set.
pub fn classify_senones(m: &AcousticModel, frames: &Tensor2D) -> Result<Tensor2D> {
    let features = extract_features(m, frames)?;
    let (posteriors, _) = nn::forward(&m.senone_classifier, &features)?;
    Ok(posteriors)
}

/// Binary network scoring how likely an input was produced by the SD model.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    net: Network,
}

impl Discriminator {
    /// Fresh discriminator: tanh hidden layers, single sigmoid output unit.
    ///
    /// The output layer starts at zero, so a new discriminator scores every
    /// input exactly 0.5 and its input gradient vanishes. An adversarial run
    /// therefore starts at the symmetric saddle: while the SD and SI
    /// branches still agree, the two discrimination gradients cancel and no
    /// spurious push reaches the feature extractor; the discriminator only
    /// grows along directions in which the branches actually differ.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(input_dim);
        dims.extend_from_slice(hidden);
        dims.push(1);
        let mut acts = vec![Activation::Tanh; hidden.len()];
        acts.push(Activation::Sigmoid);
        let mut net = nn::init_network(&dims, &acts, seed)?;
        let head = net.layers_mut().last_mut().unwrap();
        for w in head.weight_mut().data_mut() {
            *w = 0.0;
        }
        Ok(Discriminator { net })
    }

    /// Wraps an existing network, validating the sigmoid head.
    pub fn from_network(net: Network) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::invalid(format!(
                "a discriminator must output one unit, got {}",
                net.output_dim()
            )));
        }
        if net.layers().last().unwrap().activation() != Activation::Sigmoid {
            return Err(Error::invalid("a discriminator must end in a sigmoid unit"));
        }
        Ok(Discriminator { net })
    }

    pub fn net(&self) -> &Network {
        &self.net
    }

    pub(crate) fn net_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn checksum(&self) -> u64 {
        self.net.checksum()
    }
}

/// Posterior probability, one per row of `inputs`, that the row came from
/// the SD model. Values are clamped to `[PROB_EPS, 1 - PROB_EPS]` so a
/// downstream logarithm is always finite.
pub fn discriminate(d: &Discriminator, inputs: &Tensor2D) -> Result<Vec<f64>> {
    let (out, _) = nn::forward(&d.net, inputs)?;
    Ok(out
        .data()
        .iter()
        .map(|p| p.clamp(PROB_EPS, 1.0 - PROB_EPS))
        .collect())
}
