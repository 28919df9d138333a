use rand_chacha::ChaCha8Rng;

use super::alpha::AlphaTable;
use super::config::SearchSpaceConfig;
use super::genotype::Genotype;
use crate::conformer::{
    embed_input, Affine, EmbedParams, Forward, ModuleParams, NormParams, ParamStore, Slot,
};
use crate::error::Result;
use crate::tensor::{Segments, Tensor, Var};

/// Input embedding, final layer norm and output head shared by the
/// supernet and materialized models.
#[derive(Clone, Debug)]
struct Stem {
    embed: EmbedParams,
    final_norm: NormParams,
    head: Affine,
}

impl Stem {
    fn new(store: &mut ParamStore, config: &SearchSpaceConfig) -> Self {
        Stem {
            embed: EmbedParams::new(store, "embed", config.feature_dim, config.d_model),
            final_norm: NormParams::new(store, "final_norm", config.d_model),
            head: Affine::new(store, "head", config.d_model, config.vocab),
        }
    }

    fn output(&self, ctx: &mut Forward<'_>, x: Var) -> Result<Var> {
        let h = self.final_norm.apply(ctx, x)?;
        self.head.apply(ctx, h)
    }
}

fn slot_prefix(block: usize, slot: Slot) -> String {
    format!("block{block}.{slot}")
}

fn slot_norms(store: &mut ParamStore, block: usize, d: usize) -> [NormParams; 3] {
    Slot::ALL.map(|s| NormParams::new(store, &format!("{}.norm", slot_prefix(block, s)), d))
}

/// Output of one candidate given the slot input `x` and its normalized form `h`.
fn candidate_output(
    ctx: &mut Forward<'_>,
    x: Var,
    h: Var,
    module: &ModuleParams,
    segments: &Segments,
) -> Result<Var> {
    match module.branch(ctx, h, segments)? {
        Some(f) => ctx.tape.add(x, f),
        None => Ok(x),
    }
}

/// A network whose parameters live in a `ParamStore`.
pub trait Network {
    fn config(&self) -> &SearchSpaceConfig;
    fn store(&self) -> &ParamStore;
    fn store_mut(&mut self) -> &mut ParamStore;
    /// Per-frame logits `[frames x vocab]`.
    fn forward(&self, ctx: &mut Forward<'_>, features: Var, segments: &Segments) -> Result<Var>;

    /// A forward context configured with this network's dropout and
    /// position settings.
    fn context<'a>(
        &'a self,
        train: bool,
        grad_weights: bool,
        rng: &'a mut ChaCha8Rng,
    ) -> Forward<'a> {
        let mut ctx = Forward::new(self.store(), train, grad_weights, rng);
        ctx.dropout = self.config().dropout;
        ctx.relative_position = self.config().relative_position;
        ctx
    }

    /// Evaluates logits without recording gradients.
    fn logits(
        &self,
        features: &Tensor,
        segments: &Segments,
        train: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Tensor> {
        let mut ctx = self.context(train, false, rng);
        let x = ctx.tape.constant(features.clone());
        let y = self.forward(&mut ctx, x, segments)?;
        Ok(ctx.tape.value(y).clone())
    }
}

#[derive(Clone, Debug)]
struct SupernetBlock {
    norms: [NormParams; 3],
    candidates: [Vec<ModuleParams>; 3],
}

/// Every candidate of every slot, mixed by `softmax(alpha)`.
#[derive(Clone, Debug)]
pub struct Supernet {
    config: SearchSpaceConfig,
    pub alpha: AlphaTable,
    store: ParamStore,
    stem: Stem,
    blocks: Vec<SupernetBlock>,
}

/// Builds the supernet with fan-in scaled uniform weights and zero
/// architecture logits.
pub fn build_supernet(config: &SearchSpaceConfig, seed: u64) -> Result<Supernet> {
    config.validate()?;
    let mut store = ParamStore::new(seed);
    let stem = Stem::new(&mut store, config);
    let mut blocks = Vec::with_capacity(config.num_blocks);
    for b in 0..config.num_blocks {
        let norms = slot_norms(&mut store, b, config.d_model);
        let mut candidates: [Vec<ModuleParams>; 3] = Default::default();
        for slot in Slot::ALL {
            for &op in config.candidates(slot) {
                let prefix = format!("{}.{op}", slot_prefix(b, slot));
                candidates[slot.index()].push(ModuleParams::build(
                    &mut store,
                    &prefix,
                    op,
                    config.d_model,
                )?);
            }
        }
        blocks.push(SupernetBlock { norms, candidates });
    }
    Ok(Supernet {
        alpha: AlphaTable::zeros(config),
        config: config.clone(),
        store,
        stem,
        blocks,
    })
}

impl Supernet {
    /// Weights and architecture logits, borrowed together.
    pub fn parts_mut(&mut self) -> (&mut ParamStore, &mut AlphaTable) {
        (&mut self.store, &mut self.alpha)
    }

    /// Number of instantiated candidate operations, identity included.
    pub fn candidate_count(&self) -> usize {
        self.blocks
            .iter()
            .flat_map(|b| &b.candidates)
            .map(Vec::len)
            .sum()
    }

    pub fn candidates(&self, block: usize, slot: Slot) -> &[ModuleParams] {
        &self.blocks[block].candidates[slot.index()]
    }

    /// Records the architecture logits on the tape, one vector per
    /// (block, slot); differentiable when `requires_grad`.
    pub fn alpha_vars(&self, ctx: &mut Forward<'_>, requires_grad: bool) -> Vec<Var> {
        self.alpha
            .vectors()
            .iter()
            .map(|v| {
                let t = Tensor::vector(v.clone());
                if requires_grad {
                    ctx.tape.leaf(t)
                } else {
                    ctx.tape.constant(t)
                }
            })
            .collect()
    }

    /// Forward pass with architecture logits taken from `alpha` (as
    /// returned by `alpha_vars`).
    pub fn forward_with_alpha(
        &self,
        ctx: &mut Forward<'_>,
        features: Var,
        segments: &Segments,
        alpha: &[Var],
    ) -> Result<Var> {
        self.run(ctx, features, segments, alpha, None)
    }

    /// Like `forward_with_alpha`, also returning the (input, mixed output)
    /// pair of every slot in (block, slot) order.
    pub fn forward_traced(
        &self,
        ctx: &mut Forward<'_>,
        features: Var,
        segments: &Segments,
        alpha: &[Var],
    ) -> Result<(Var, Vec<(Var, Var)>)> {
        let mut trace = Vec::with_capacity(3 * self.blocks.len());
        let y = self.run(ctx, features, segments, alpha, Some(&mut trace))?;
        Ok((y, trace))
    }

    pub fn slot_norm(&self, block: usize, slot: Slot) -> &NormParams {
        &self.blocks[block].norms[slot.index()]
    }

    fn run(
        &self,
        ctx: &mut Forward<'_>,
        features: Var,
        segments: &Segments,
        alpha: &[Var],
        mut trace: Option<&mut Vec<(Var, Var)>>,
    ) -> Result<Var> {
        let mut x = embed_input(ctx, features, &self.stem.embed, segments)?;
        for (b, block) in self.blocks.iter().enumerate() {
            for slot in Slot::ALL {
                let h = block.norms[slot.index()].apply(ctx, x)?;
                let outs = block.candidates[slot.index()]
                    .iter()
                    .map(|m| candidate_output(ctx, x, h, m, segments))
                    .collect::<Result<Vec<_>>>()?;
                let w = ctx.tape.softmax(alpha[b * 3 + slot.index()], 0)?;
                let mixed = ctx.tape.mix(&outs, w)?;
                if let Some(t) = trace.as_deref_mut() {
                    t.push((x, mixed));
                }
                x = mixed;
            }
        }
        self.stem.output(ctx, x)
    }
}

impl Network for Supernet {
    fn config(&self) -> &SearchSpaceConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, ctx: &mut Forward<'_>, features: Var, segments: &Segments) -> Result<Var> {
        let alpha = self.alpha_vars(ctx, false);
        self.forward_with_alpha(ctx, features, segments, &alpha)
    }
}

/// Mixed-operation forward pass of the supernet without gradients.
pub fn mixed_forward(
    supernet: &Supernet,
    features: &Tensor,
    segments: &Segments,
    train: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    supernet.logits(features, segments, train, rng)
}

#[derive(Clone, Debug)]
struct ModelBlock {
    norms: [NormParams; 3],
    ops: [ModuleParams; 3],
}

/// A standalone network containing only the operations of one genotype.
#[derive(Clone, Debug)]
pub struct Model {
    config: SearchSpaceConfig,
    genotype: Genotype,
    store: ParamStore,
    stem: Stem,
    blocks: Vec<ModelBlock>,
}

/// Freshly initialized network for `genotype`. Tensors are seeded by name,
/// so a supernet built with the same seed holds identical values for the
/// operations they share.
pub fn materialize(genotype: &Genotype, config: &SearchSpaceConfig, seed: u64) -> Result<Model> {
    config.validate()?;
    genotype.validate(config)?;
    let mut store = ParamStore::new(seed);
    let stem = Stem::new(&mut store, config);
    let mut blocks = Vec::with_capacity(config.num_blocks);
    for b in 0..config.num_blocks {
        let norms = slot_norms(&mut store, b, config.d_model);
        let mut ops = Vec::with_capacity(3);
        for slot in Slot::ALL {
            let op = genotype.op(b, slot);
            let prefix = format!("{}.{op}", slot_prefix(b, slot));
            ops.push(ModuleParams::build(
                &mut store,
                &prefix,
                op,
                config.d_model,
            )?);
        }
        let ops: [ModuleParams; 3] = ops.try_into().expect("three slots");
        blocks.push(ModelBlock { norms, ops });
    }
    Ok(Model {
        config: config.clone(),
        genotype: genotype.clone(),
        store,
        stem,
        blocks,
    })
}

impl Model {
    pub fn genotype(&self) -> &Genotype {
        &self.genotype
    }

    pub fn weight_count(&self) -> usize {
        self.store.weight_count()
    }
}

impl Network for Model {
    fn config(&self) -> &SearchSpaceConfig {
        &self.config
    }

    fn store(&self) -> &ParamStore {
        &self.store
    }

    fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn forward(&self, ctx: &mut Forward<'_>, features: Var, segments: &Segments) -> Result<Var> {
        let mut x = embed_input(ctx, features, &self.stem.embed, segments)?;
        for block in &self.blocks {
            for slot in Slot::ALL {
                let h = block.norms[slot.index()].apply(ctx, x)?;
                x = candidate_output(ctx, x, h, &block.ops[slot.index()], segments)?;
            }
        }
        self.stem.output(ctx, x)
    }
}
