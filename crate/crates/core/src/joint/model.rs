use std::collections::HashMap;
use std::path::Path;

use ndarray::{concatenate, Array2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gaussian::{LOG_VAR_MAX, LOG_VAR_MIN};
use crate::data::{read_spec, spec_entries, LikelihoodFamily, ModalitySpec};
use crate::error::{Error, Result};
use crate::nn::{
    format_widths, named_parameters, parse_widths, restore_parameters, Activation, Graph, Linear,
    Mlp, Parameterized, Var,
};
use crate::store::{self, Manifest};

/// Maps an input to a diagonal Gaussian. The optional body is a ReLU MLP
/// whose last activation doubles as the feature vector handed to flows as
/// context; the head outputs `[mean | log_var]`.
#[derive(Clone, Debug)]
pub struct GaussianEncoder {
    pub body: Option<Mlp>,
    pub head: Linear,
    pub latent_dim: usize,
}

/// Graph handles produced by [`GaussianEncoder::forward`].
#[derive(Clone, Copy, Debug)]
pub struct EncoderOut {
    pub mean: Var,
    pub log_var: Var,
    pub features: Var,
}

impl GaussianEncoder {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, input_dim: usize, hidden: &[usize], latent_dim: usize) -> Self {
        let body = (!hidden.is_empty()).then(|| {
            let mut widths = vec![input_dim];
            widths.extend_from_slice(hidden);
            Mlp::new(rng, &widths, Activation::Relu, Activation::Relu)
        });
        let feat = hidden.last().copied().unwrap_or(input_dim);
        Self {
            body,
            head: Linear::new(rng, feat, 2 * latent_dim),
            latent_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.body {
            Some(b) => b.input_dim(),
            None => self.head.input_dim(),
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.head.input_dim()
    }

    pub fn hidden(&self) -> Vec<usize> {
        match &self.body {
            Some(b) => b.widths()[1..].to_vec(),
            None => Vec::new(),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> EncoderOut {
        let (features, rest) = match &self.body {
            Some(b) => {
                let n = 2 * b.layers.len();
                (b.forward(g, &p[..n], x), &p[n..])
            }
            None => (x, p),
        };
        let out = self.head.forward(g, rest, features);
        let d = self.latent_dim;
        let mean = g.slice_cols(out, 0, d);
        let lv = g.slice_cols(out, d, 2 * d);
        let log_var = g.clamp(lv, LOG_VAR_MIN, LOG_VAR_MAX);
        EncoderOut {
            mean,
            log_var,
            features,
        }
    }

    /// `(mean, log_var, features)` on plain arrays.
    pub fn eval(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let o = self.forward(&mut g, &p, xv);
        (
            g.value(o.mean).clone(),
            g.value(o.log_var).clone(),
            g.value(o.features).clone(),
        )
    }
}

impl Parameterized for GaussianEncoder {
    fn parameters(&self) -> Vec<&Array2<f64>> {
        let mut v = self.body.as_ref().map(|b| b.parameters()).unwrap_or_default();
        v.extend(self.head.parameters());
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self
            .body
            .as_mut()
            .map(|b| b.parameters_mut())
            .unwrap_or_default();
        v.extend(self.head.parameters_mut());
        v
    }
}

/// `p(x_i | z)`: an MLP producing the likelihood parameters (sigmoid output
/// for Bernoulli, identity for the unit-variance Gaussian mean).
#[derive(Clone, Debug)]
pub struct Decoder {
    pub net: Mlp,
    pub family: LikelihoodFamily,
}

impl Decoder {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        latent_dim: usize,
        hidden: &[usize],
        spec: &ModalitySpec,
    ) -> Self {
        let mut widths = vec![latent_dim];
        widths.extend_from_slice(hidden);
        widths.push(spec.dim());
        let out = match spec.family {
            LikelihoodFamily::Bernoulli => Activation::Sigmoid,
            LikelihoodFamily::GaussianUnitVariance => Activation::Identity,
        };
        Self {
            net: Mlp::new(rng, &widths, Activation::Relu, out),
            family: spec.family,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointArch {
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
}

impl Default for JointArch {
    fn default() -> Self {
        Self {
            encoder_hidden: vec![512, 256],
            decoder_hidden: vec![256, 512],
        }
    }
}

/// Joint encoder `q(z | x_1..x_m)` over the concatenated modalities, one
/// decoder per modality and the standard-normal prior.
#[derive(Clone, Debug)]
pub struct JointModel {
    pub specs: Vec<ModalitySpec>,
    pub joint_encoder: GaussianEncoder,
    pub decoders: Vec<Decoder>,
    pub latent_dim: usize,
    pub reconstruction_weights: Vec<f64>,
}

/// Bound parameters of a [`JointModel`] in one graph.
#[derive(Clone, Debug)]
pub struct JointVars {
    pub encoder: Vec<Var>,
    pub decoders: Vec<Vec<Var>>,
}

impl JointVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.encoder.clone();
        for d in &self.decoders {
            v.extend_from_slice(d);
        }
        v
    }
}

impl JointModel {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        specs: Vec<ModalitySpec>,
        latent_dim: usize,
        arch: &JointArch,
        reconstruction_weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        if latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be >= 1".into()));
        }
        let weights = reconstruction_weights.unwrap_or_else(|| vec![1.0; specs.len()]);
        if weights.len() != specs.len() {
            return Err(Error::DimensionMismatch(specs.len(), weights.len()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::InvalidConfig(format!(
                "reconstruction weights must be positive, got {weights:?}"
            )));
        }
        let total: usize = specs.iter().map(ModalitySpec::dim).sum();
        let joint_encoder = GaussianEncoder::new(rng, total, &arch.encoder_hidden, latent_dim);
        let decoders = specs
            .iter()
            .map(|s| Decoder::new(rng, latent_dim, &arch.decoder_hidden, s))
            .collect();
        Ok(Self {
            specs,
            joint_encoder,
            decoders,
            latent_dim,
            reconstruction_weights: weights,
        })
    }

    /// Scales each modality's reconstruction term by `max_dim / dim_i`, so a
    /// 1x28x28 image paired with a 3x32x32 one gets weight 3072/784.
    pub fn dimension_balanced_weights(specs: &[ModalitySpec]) -> Vec<f64> {
        let max = specs.iter().map(ModalitySpec::dim).max().unwrap_or(1) as f64;
        specs.iter().map(|s| max / s.dim() as f64).collect()
    }

    pub fn n_modalities(&self) -> usize {
        self.specs.len()
    }

    pub fn arch(&self) -> JointArch {
        JointArch {
            encoder_hidden: self.joint_encoder.hidden(),
            decoder_hidden: self.decoders[0].net.widths()[1..self.decoders[0].net.layers.len()].to_vec(),
        }
    }

    pub fn check_batch(&self, batch: &[Array2<f64>]) -> Result<usize> {
        if batch.len() != self.n_modalities() {
            return Err(Error::DimensionMismatch(self.n_modalities(), batch.len()));
        }
        let n = batch[0].nrows();
        for (x, s) in batch.iter().zip(&self.specs) {
            if x.dim() != (n, s.dim()) {
                return Err(Error::shape((n, s.dim()), x.dim()));
            }
        }
        Ok(n)
    }

    pub fn bind_vars(&self, g: &mut Graph, trainable: bool) -> JointVars {
        JointVars {
            encoder: self.joint_encoder.bind(g, trainable),
            decoders: self.decoders.iter().map(|d| d.net.bind(g, trainable)).collect(),
        }
    }

    pub fn encoder_input(batch: &[Array2<f64>]) -> Array2<f64> {
        let views: Vec<_> = batch.iter().map(|a| a.view()).collect();
        concatenate(Axis(1), &views).expect("rows agree")
    }

    pub fn encode_graph(&self, g: &mut Graph, vars: &JointVars, batch: &[Array2<f64>]) -> EncoderOut {
        let x = g.constant(Self::encoder_input(batch));
        self.joint_encoder.forward(g, &vars.encoder, x)
    }

    pub fn decode_graph(&self, g: &mut Graph, vars: &JointVars, i: usize, z: Var) -> Var {
        self.decoders[i].net.forward(g, &vars.decoders[i], z)
    }

    /// Joint posterior `(mean, log_var)` for a batch.
    pub fn encode(&self, batch: &[Array2<f64>]) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_batch(batch)?;
        let (m, lv, _) = self.joint_encoder.eval(&Self::encoder_input(batch));
        Ok((m, lv))
    }

    /// Likelihood parameters of modality `i` for each latent row.
    pub fn decode(&self, i: usize, z: &Array2<f64>) -> Array2<f64> {
        self.decoders[i].net.eval(z)
    }

    pub fn parameter_hash(&self) -> String {
        store::hash_arrays(self.parameters())
    }

    pub fn save(&self, dir: &Path, extra: &Manifest) -> Result<()> {
        let mut m = extra.clone();
        m.set("kind", "joint_model");
        m.set("latent_dim", self.latent_dim);
        m.set("n_modalities", self.n_modalities());
        for (i, s) in self.specs.iter().enumerate() {
            spec_entries(&mut m, &format!("modality.{i}"), s);
            m.set(format!("weight.{i}"), self.reconstruction_weights[i]);
        }
        let arch = self.arch();
        m.set("arch.encoder_hidden", format_widths(&arch.encoder_hidden));
        m.set("arch.decoder_hidden", format_widths(&arch.decoder_hidden));
        store::save_bundle(dir, &m, &named_parameters("p", self))
    }

    pub fn load(dir: &Path) -> Result<(Self, Manifest)> {
        let (m, arrays) = store::load_bundle(dir)?;
        if m.get("kind") != Some("joint_model") {
            return Err(Error::format(dir, "not a joint model checkpoint"));
        }
        let latent_dim: usize = m.parse_value("latent_dim")?;
        let n: usize = m.parse_value("n_modalities")?;
        let mut specs = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            specs.push(read_spec(&m, &format!("modality.{i}"), dir)?);
            weights.push(m.parse_value(&format!("weight.{i}"))?);
        }
        let widths = |k: &str| {
            m.get(k)
                .and_then(parse_widths)
                .ok_or_else(|| Error::format(dir, format!("bad {k}")))
        };
        let arch = JointArch {
            encoder_hidden: widths("arch.encoder_hidden")?,
            decoder_hidden: widths("arch.decoder_hidden")?,
        };
        let mut model = Self::new(&mut ChaCha8Rng::seed_from_u64(0), specs, latent_dim, &arch, Some(weights))?;
        let map: HashMap<String, Array2<f64>> = arrays.into_iter().collect();
        restore_parameters("p", &mut model, &map)?;
        Ok((model, m))
    }
}

impl Parameterized for JointModel {
    fn parameters(&self) -> Vec<&Array2<f64>> {
        let mut v = self.joint_encoder.parameters();
        for d in &self.decoders {
            v.extend(d.net.parameters());
        }
        v
    }

    fn parameters_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut v = self.joint_encoder.parameters_mut();
        for d in &mut self.decoders {
            v.extend(d.net.parameters_mut());
        }
        v
    }
}
