use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::autodiff::{ParamStore, Tape, Var};
use crate::encoders::{GroundingTransformer, LocalEncoder, SalientTransformer};
use crate::error::{Error, Result};
use crate::geom::PointCloud;
use crate::nn::{pos_embed, Mlp, Trace};
use crate::refine::{Grb, GrbState, Sources};
use crate::seed::SeedGenerator;

/// The full correction network. Every component is built regardless of the
/// ablation flags so parameter layouts match across variants.
#[derive(Clone, Debug)]
pub struct PgNet {
    pub cfg: ModelConfig,
    /// Positional embedding shared by both encoders.
    pub phi_enc: Mlp,
    pub enc_obs: LocalEncoder,
    pub enc_gen: LocalEncoder,
    pub salient: SalientTransformer,
    pub grounding: GroundingTransformer,
    pub seed: SeedGenerator,
    pub grbs: Vec<Grb>,
}

#[derive(Clone, Debug)]
pub struct ModelOut {
    pub coarse: Var,
    pub levels: Vec<Var>,
    pub trace: Trace,
    /// Final observation and prior features.
    pub f_obs: Var,
    pub f_gen: Var,
}

impl ModelOut {
    pub fn final_level(&self) -> Var {
        *self.levels.last().unwrap_or(&self.coarse)
    }

    /// Scaffold followed by every refinement level.
    pub fn all_levels(&self) -> Vec<Var> {
        std::iter::once(self.coarse)
            .chain(self.levels.iter().copied())
            .collect()
    }
}

impl PgNet {
    pub fn new<R: rand::Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let e = &cfg.encoder;
        Ok(Self {
            cfg: cfg.clone(),
            phi_enc: pos_embed(store, "enc.phi", e.dim, rng)?,
            enc_obs: LocalEncoder::new(store, "enc.obs", e, rng)?,
            enc_gen: LocalEncoder::new(store, "enc.gen", e, rng)?,
            salient: SalientTransformer::new(store, "sal", e, rng)?,
            grounding: GroundingTransformer::new(store, "gr", e, rng)?,
            seed: SeedGenerator::new(store, "seed", &cfg.seed, rng)?,
            grbs: cfg
                .grbs
                .iter()
                .enumerate()
                .map(|(i, g)| Grb::new(store, &format!("grb.{i}"), g, i == 0, rng))
                .collect::<Result<_>>()?,
        })
    }

    /// Fresh parameters from a seed; the same seed gives the same store.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<(ParamStore, Self)> {
        let mut store = ParamStore::new();
        let model = Self::new(&mut store, cfg, &mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok((store, model))
    }

    /// Rebuilds the module tree for `cfg` and checks `store` has its layout.
    pub fn attach(cfg: &ModelConfig, store: &ParamStore) -> Result<Self> {
        let (fresh, model) = Self::init(cfg, 0)?;
        fresh.check_layout(store)?;
        Ok(model)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        partial: &PointCloud,
        prior: &PointCloud,
    ) -> Result<ModelOut> {
        let cfg = &self.cfg;
        let ab = cfg.ablation;
        let need = cfg.min_input_points();
        if partial.len() < need || (!ab.inpaint_mode && prior.len() < need) {
            return Err(Error::invalid(format!(
                "model_forward: partial has {} and prior {} points, need at least {need}",
                partial.len(),
                prior.len()
            )));
        }
        let mut trace = Trace::default();
        let obs = self.enc_obs.encode(tape, store, &self.phi_enc, partial, &cfg.encoder)?;
        let f_obs = self
            .salient
            .forward(tape, store, obs.feats, &obs.centers, cfg.encoder.k_local, &mut trace)?
            .out;
        let f_gen = if ab.inpaint_mode {
            f_obs
        } else {
            let gen = self.enc_gen.encode(tape, store, &self.phi_enc, prior, &cfg.encoder)?;
            self.grounding
                .forward(
                    tape,
                    store,
                    gen.feats,
                    f_obs,
                    !ab.no_prior_feature_grounding,
                    &mut trace,
                )?
                .out
        };
        let seed = self
            .seed
            .forward(tape, store, f_gen, f_obs, !ab.no_seed_grounding, &mut trace)?;

        let src = Sources {
            obs_centers: tape.constant(obs.centers.to_tensor()),
            obs_feats: f_obs,
            gen_feats: f_gen,
        };
        let mut state = GrbState {
            points: seed.coarse,
            ctx: None,
        };
        let mut levels = Vec::with_capacity(self.grbs.len());
        for grb in &self.grbs {
            let out = grb.forward(tape, store, state, src, ab.grb_flags(), &mut trace)?;
            levels.push(out.points);
            state = out.next;
        }
        Ok(ModelOut {
            coarse: seed.coarse,
            levels,
            trace,
            f_obs,
            f_gen,
        })
    }

    /// Forward pass returning plain clouds: scaffold first, then each level.
    pub fn predict(&self, store: &ParamStore, partial: &PointCloud, prior: &PointCloud) -> Result<Vec<PointCloud>> {
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, store, partial, prior)?;
        out.all_levels()
            .into_iter()
            .map(|v| PointCloud::from_tensor(tape.value(v)))
            .collect()
    }

    /// Parameter name prefixes of the displacement heads.
    pub fn displacement_prefixes(&self) -> Vec<String> {
        (0..self.grbs.len()).map(|i| format!("grb.{i}.disp")).collect()
    }
}
