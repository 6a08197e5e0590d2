use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{DenoiserInput, ForwardOutput};
use crate::dit::{dit_dual_forward, DiTBackbone, DiTConfig};
use crate::error::{Error, Result};
use crate::numerics::{Element, Graph, ParamStore, Var};
use crate::unet::{unet_dual_forward, UNetBackbone, UNetConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Unet,
    Dit,
}

/// How the reference stream gets its weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One parameter set serves both streams.
    Shared,
    /// A second, frozen copy of the initial weights encodes the reference.
    DualFrozen,
    /// A second, independently trained set encodes the reference.
    DualTrainable,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Shared, Variant::DualFrozen, Variant::DualTrainable];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Shared => "shared",
            Variant::DualFrozen => "dual_frozen",
            Variant::DualTrainable => "dual_trainable",
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub kind: BackboneKind,
    pub variant: Variant,
    pub unet: UNetConfig,
    pub dit: DiTConfig,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::Unet,
            variant: Variant::Shared,
            unet: UNetConfig::default(),
            dit: DiTConfig::default(),
            init_seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackboneKind::Unet => self.unet.validate(),
            BackboneKind::Dit => self.dit.validate(),
        }
    }

    pub fn image_size(&self) -> usize {
        match self.kind {
            BackboneKind::Unet => self.unet.image_size,
            BackboneKind::Dit => self.dit.image_size,
        }
    }

    pub fn timesteps(&self) -> usize {
        match self.kind {
            BackboneKind::Unet => self.unet.timesteps,
            BackboneKind::Dit => self.dit.timesteps,
        }
    }

    pub fn set_timesteps(&mut self, t: usize) {
        self.unet.timesteps = t;
        self.dit.timesteps = t;
    }

    pub fn layer_ids(&self) -> Vec<String> {
        match self.kind {
            BackboneKind::Unet => self.unet.layer_ids(),
            BackboneKind::Dit => self.dit.layer_ids(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backbone {
    Unet(UNetBackbone),
    Dit(DiTBackbone),
}

impl Backbone {
    fn build<T: Element>(store: &mut ParamStore<T>, prefix: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        Ok(match cfg.kind {
            BackboneKind::Unet => Backbone::Unet(UNetBackbone::new(
                store,
                &format!("{prefix}unet"),
                cfg.unet.clone(),
                &mut rng,
            )?),
            BackboneKind::Dit => Backbone::Dit(DiTBackbone::new(
                store,
                &format!("{prefix}dit"),
                cfg.dit.clone(),
                &mut rng,
            )?),
        })
    }
}

/// Anything that predicts noise for a conditioned input.
pub trait Denoiser<T: Element> {
    fn predict(&self, g: &mut Graph<T>, input: &DenoiserInput<T>, t: usize) -> Result<Var>;

    /// Parameters that receive gradients; `None` for fixed stand-ins.
    fn params_mut(&mut self) -> Option<&mut ParamStore<T>> {
        None
    }
}

/// A backbone family wired according to a [`Variant`].
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub main: Backbone,
    /// Present for the dual variants only.
    pub reference: Option<Backbone>,
}

/// Parameter-name prefix of the reference branch in dual variants.
pub const REFERENCE_PREFIX: &str = "ref.";
pub const BACKGROUND_PREFIX: &str = "bg.";

/// Builds the model for `cfg.variant`. Both branches of a dual variant start
/// from the same initial weights (the reference branch is an initialisation-time copy).
pub fn build_variant<T: Element>(cfg: &ModelConfig) -> Result<Model<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    let (main, reference) = match cfg.variant {
        Variant::Shared => (Backbone::build(&mut store, "", cfg)?, None),
        Variant::DualFrozen | Variant::DualTrainable => {
            let main = Backbone::build(&mut store, BACKGROUND_PREFIX, cfg)?;
            let reference = Backbone::build(&mut store, REFERENCE_PREFIX, cfg)?;
            (main, Some(reference))
        }
    };
    if cfg.variant == Variant::DualFrozen {
        let frozen: Vec<_> = store
            .iter()
            .filter(|(_, p)| p.name.starts_with(REFERENCE_PREFIX))
            .map(|(id, _)| id)
            .collect();
        for id in frozen {
            store.set_trainable(id, false);
        }
    }
    Ok(Model {
        config: cfg.clone(),
        store,
        main,
        reference,
    })
}

impl<T: Element> Model<T> {
    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    pub fn depth(&self) -> usize {
        self.config.layer_ids().len()
    }

    /// Dual-stream forward with traces. `t` is validated against the configured schedule length.
    pub fn forward(&self, g: &mut Graph<T>, input: &DenoiserInput<T>, t: f64) -> Result<ForwardOutput> {
        let reference = self.reference.as_ref().unwrap_or(&self.main);
        match (&self.main, reference) {
            (Backbone::Unet(m), Backbone::Unet(r)) => unet_dual_forward(g, &self.store, m, r, input, t),
            (Backbone::Dit(m), Backbone::Dit(r)) => dit_dual_forward(g, &self.store, m, r, input, t),
            _ => Err(Error::Config("mixed backbone kinds".into())),
        }
    }

    /// Background-stream forward without any reference input.
    pub fn forward_reference_free(&self, g: &mut Graph<T>, input: &DenoiserInput<T>, t: f64) -> Result<ForwardOutput> {
        self.forward(g, &input.without_reference(), t)
    }

    /// Checkpoint metadata sufficient to rebuild this model.
    pub fn meta(&self) -> serde_json::Value {
        serde_json::json!({ "model": self.config })
    }
}

impl<T: Element> Denoiser<T> for Model<T> {
    fn predict(&self, g: &mut Graph<T>, input: &DenoiserInput<T>, t: usize) -> Result<Var> {
        Ok(self.forward(g, input, t as f64)?.eps)
    }

    fn params_mut(&mut self) -> Option<&mut ParamStore<T>> {
        Some(&mut self.store)
    }
}

/// Rebuilds a model from a checkpoint written by [`crate::checkpoint::save`] with [`Model::meta`].
pub fn load_model<T: Element>(path: &std::path::Path) -> Result<Model<T>> {
    let ck = crate::checkpoint::Checkpoint::read(path)?;
    let cfg: ModelConfig = serde_json::from_value(ck.header.meta["model"].clone())?;
    let mut model = build_variant::<T>(&cfg)?;
    ck.load_into(&mut model.store)?;
    Ok(model)
}
