//! State-only trunk shared by the goal-free baselines: an embedding
//! layer over the observation stack and one hidden layer, sized like the
//! target-driven model's state stream.

use rand_chacha::ChaCha8Rng;

use crate::model::{ArchConfig, ModelError, ObservationStack};
use crate::numerics::{
    affine_relu_backward, affine_relu_forward, init_param_block, AffineCache, GradBlock, InitKind,
    ParamBlock,
};

/// Working copies of the two trunk blocks.
#[derive(Debug, Clone)]
pub(crate) struct Trunk {
    pub embed: ParamBlock,
    pub fc: ParamBlock,
}

#[derive(Debug, Clone)]
pub(crate) struct TrunkCache {
    pub embed: AffineCache,
    pub fc: AffineCache,
}

/// Fresh trunk blocks named `{embed_name}` / `{fc_name}`.
pub(crate) fn init_trunk(
    embed_name: &str,
    fc_name: &str,
    arch: &ArchConfig,
    rng: &mut ChaCha8Rng,
) -> Trunk {
    Trunk {
        embed: init_param_block(
            embed_name,
            arch.embed_dim,
            arch.stack_dim(),
            InitKind::UniformFanIn,
            rng,
        ),
        fc: init_param_block(fc_name, arch.fuse_dim, arch.embed_dim, InitKind::UniformFanIn, rng),
    }
}

/// Stack through embedding and hidden layer, both ReLU.
pub(crate) fn trunk_forward(
    trunk: &Trunk,
    stack: &ObservationStack,
) -> Result<(Vec<f32>, TrunkCache), ModelError> {
    if stack.as_slice().len() != trunk.embed.in_dim {
        return Err(ModelError::DimMismatch {
            what: "trunk input",
            expected: trunk.embed.in_dim,
            got: stack.as_slice().len(),
        });
    }
    let (embedded, embed_cache) = affine_relu_forward(&trunk.embed, stack.as_slice(), false)?;
    let (hidden, fc_cache) = affine_relu_forward(&trunk.fc, &embedded, false)?;
    Ok((
        hidden,
        TrunkCache {
            embed: embed_cache,
            fc: fc_cache,
        },
    ))
}

/// Accumulates one step's gradients below the heads.
pub(crate) fn trunk_backward(
    trunk: &Trunk,
    cache: &TrunkCache,
    dhidden: &[f32],
    dembed: &mut GradBlock,
    dfc: &mut GradBlock,
) -> Result<(), ModelError> {
    let dembedded = affine_relu_backward(&trunk.fc, &cache.fc, dhidden, false, dfc)?;
    affine_relu_backward(&trunk.embed, &cache.embed, &dembedded, false, dembed)?;
    Ok(())
}
