//! Parameter ownership and the per-scene branch registry.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{observe, Pose, Scene};
use crate::numerics::{
    init_param_block, load_checkpoint, save_checkpoint, Checkpoint, InitKind, OptimConfig,
    ParamStore, UpdateMode,
};
use crate::util::{fnv1a64, splitmix64};

use super::{
    ArchConfig, ModelError, ModelGrads, ObservationStack, SceneBranch, SiameseCore,
};

const EMBED_NAME: &str = "core/embed";
const FUSION_NAME: &str = "core/fusion";
const SINGLE_BRANCH_KEY: &str = "shared";

/// Replicates the goal view into a full stack so the shared embedding
/// block sees the same input shape on both streams.
pub fn make_goal_stack(scene: &Scene, goal: Pose) -> ObservationStack {
    ObservationStack::reset_history(&observe(scene, goal))
}

/// The model as a whole: architecture, the shared parameter store, and
/// the scene-branch registry. Workers take copies of the blocks through
/// [`NavModel::core`] and [`NavModel::branch_for`], compute on them
/// purely, and submit gradients back through [`NavModel::apply_gradients`].
pub struct NavModel {
    arch: ArchConfig,
    store: ParamStore,
    init_seed: u64,
    single_branch: bool,
}

impl NavModel {
    /// Fresh model: shared blocks initialized from `init_seed`, no
    /// branches yet. Branch parameters are derived from `init_seed` and
    /// the branch key alone, so creation order cannot perturb them.
    pub fn new(
        arch: ArchConfig,
        mode: UpdateMode,
        optim: OptimConfig,
        init_seed: u64,
        single_branch: bool,
    ) -> Result<NavModel, ModelError> {
        arch.validate()?;
        let store = ParamStore::new(mode, optim);
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        store.insert(init_param_block(
            EMBED_NAME,
            arch.embed_dim,
            arch.stack_dim(),
            InitKind::UniformFanIn,
            &mut rng,
        ))?;
        store.insert(init_param_block(
            FUSION_NAME,
            arch.fuse_dim,
            2 * arch.embed_dim,
            InitKind::UniformFanIn,
            &mut rng,
        ))?;
        Ok(NavModel {
            arch,
            store,
            init_seed,
            single_branch,
        })
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn single_branch(&self) -> bool {
        self.single_branch
    }

    /// The storage key a scene key resolves to: identity normally, one
    /// shared key under the single-branch ablation.
    pub fn storage_key<'a>(&self, scene_key: &'a str) -> &'a str {
        if self.single_branch {
            SINGLE_BRANCH_KEY
        } else {
            scene_key
        }
    }

    fn check_key(key: &str) -> Result<(), ModelError> {
        if key.is_empty() || key.contains('/') {
            return Err(ModelError::BadKey(key.to_string()));
        }
        Ok(())
    }

    /// Copies the shared trunk out of the store.
    pub fn core(&self) -> SiameseCore {
        SiameseCore {
            embed: self.store.read(EMBED_NAME).expect("core blocks exist"),
            fusion: self.store.read(FUSION_NAME).expect("core blocks exist"),
            goal_first: self.arch.goal_first,
        }
    }

    /// Refreshes a previously obtained core in place, reusing buffers.
    pub fn refresh_core(&self, core: &mut SiameseCore) {
        self.store.read_into(EMBED_NAME, &mut core.embed).expect("core blocks exist");
        self.store.read_into(FUSION_NAME, &mut core.fusion).expect("core blocks exist");
    }

    /// Returns the unique branch for `scene_key`, creating it (heads
    /// zeroed, hidden layer seeded from the key) when asked. Creation is
    /// atomic: racing workers observe exactly one branch.
    pub fn branch_for(&self, scene_key: &str, create_if_missing: bool) -> Result<SceneBranch, ModelError> {
        Self::check_key(scene_key)?;
        let key = self.storage_key(scene_key).to_string();
        let names = branch_names(&key);
        if !self.store.contains(&names.fc1) {
            if !create_if_missing {
                return Err(ModelError::UnknownBranch(scene_key.to_string()));
            }
            let seed = splitmix64(self.init_seed ^ fnv1a64(key.as_bytes()));
            let arch = self.arch;
            // One ensure per block; each closure derives from the same
            // deterministic per-key rng sequence.
            self.store.ensure_with(&names.fc1, || {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                init_param_block(&names.fc1, arch.fuse_dim, arch.fuse_dim, InitKind::UniformFanIn, &mut rng)
            });
            self.store.ensure_with(&names.policy, || {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed));
                init_param_block(&names.policy, 4, arch.fuse_dim, InitKind::Zero, &mut rng)
            });
            self.store.ensure_with(&names.value, || {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(splitmix64(seed)));
                init_param_block(&names.value, 1, arch.fuse_dim, InitKind::Zero, &mut rng)
            });
        }
        Ok(SceneBranch {
            key: key.clone(),
            fc1: self.store.read(&names.fc1)?,
            policy_head: self.store.read(&names.policy)?,
            value_head: self.store.read(&names.value)?,
        })
    }

    /// Refreshes a branch copy in place from the store.
    pub fn refresh_branch(&self, branch: &mut SceneBranch) -> Result<(), ModelError> {
        let names = branch_names(&branch.key);
        self.store.read_into(&names.fc1, &mut branch.fc1)?;
        self.store.read_into(&names.policy, &mut branch.policy_head)?;
        self.store.read_into(&names.value, &mut branch.value_head)?;
        Ok(())
    }

    /// Storage keys of every existing branch, sorted.
    pub fn branch_keys(&self) -> Vec<String> {
        self.store
            .names()
            .iter()
            .filter_map(|n| {
                n.strip_prefix("branch/")
                    .and_then(|rest| rest.strip_suffix("/fc1"))
                    .map(str::to_string)
            })
            .collect()
    }

    /// Submits one gradient set (global-norm clipped, shared RMSProp).
    pub fn apply_gradients(&self, grads: &mut ModelGrads) -> Result<crate::numerics::UpdateOutcome, ModelError> {
        Ok(self.store.apply_gradients(grads.pairs())?)
    }

    /// Freezes or thaws the generic (shared) layers; branch blocks are
    /// untouched. Returns how many blocks changed.
    pub fn set_core_frozen(&self, frozen: bool) -> usize {
        self.store.set_frozen_matching(|n| n.starts_with("core/"), frozen)
    }

    /// Saves every parameter block and the branch-key list.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        Ok(save_checkpoint(&self.store, &self.branch_keys(), path)?)
    }

    /// Rebuilds a model from a checkpoint file, inferring the
    /// architecture from the stored shapes and validating every block
    /// against it. `goal_first` and `single_branch` are behavioral flags
    /// not carried by the file, so the caller restates them.
    pub fn load(
        path: &Path,
        mode: UpdateMode,
        optim: OptimConfig,
        init_seed: u64,
        single_branch: bool,
        goal_first: bool,
    ) -> Result<NavModel, ModelError> {
        let ckpt = load_checkpoint(path)?;
        Self::from_checkpoint(&ckpt, mode, optim, init_seed, single_branch, goal_first)
    }

    pub fn from_checkpoint(
        ckpt: &Checkpoint,
        mode: UpdateMode,
        optim: OptimConfig,
        init_seed: u64,
        single_branch: bool,
        goal_first: bool,
    ) -> Result<NavModel, ModelError> {
        let find = |name: &str| {
            ckpt.blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| ModelError::MissingBlock(name.to_string()))
        };
        let embed = find(EMBED_NAME)?;
        if embed.in_dim % super::HISTORY_LEN != 0 {
            return Err(ModelError::BadEmbedShape(embed.in_dim));
        }
        let fusion = find(FUSION_NAME)?;
        let arch = ArchConfig {
            percept_dim: embed.in_dim / super::HISTORY_LEN,
            embed_dim: embed.out_dim,
            fuse_dim: fusion.out_dim,
            goal_first,
        };
        arch.validate()?;
        check_shape(fusion, arch.fuse_dim, 2 * arch.embed_dim)?;

        let mut expected: Vec<String> = vec![EMBED_NAME.to_string(), FUSION_NAME.to_string()];
        for key in &ckpt.branch_keys {
            Self::check_key(key)?;
            let names = branch_names(key);
            check_shape(find(&names.fc1)?, arch.fuse_dim, arch.fuse_dim)?;
            check_shape(find(&names.policy)?, 4, arch.fuse_dim)?;
            check_shape(find(&names.value)?, 1, arch.fuse_dim)?;
            expected.extend([names.fc1, names.policy, names.value]);
        }
        for block in &ckpt.blocks {
            if !expected.contains(&block.name) {
                return Err(ModelError::UnexpectedBlock(block.name.clone()));
            }
        }

        let store = ParamStore::new(mode, optim);
        for block in &ckpt.blocks {
            store.insert(block.clone())?;
        }
        Ok(NavModel {
            arch,
            store,
            init_seed,
            single_branch,
        })
    }
}

fn check_shape(
    block: &crate::numerics::ParamBlock,
    out_dim: usize,
    in_dim: usize,
) -> Result<(), ModelError> {
    if block.out_dim != out_dim || block.in_dim != in_dim {
        return Err(ModelError::ShapeMismatch {
            name: block.name.clone(),
            expected_out: out_dim,
            expected_in: in_dim,
            got_out: block.out_dim,
            got_in: block.in_dim,
        });
    }
    Ok(())
}

struct BranchNames {
    fc1: String,
    policy: String,
    value: String,
}

fn branch_names(key: &str) -> BranchNames {
    BranchNames {
        fc1: format!("branch/{key}/fc1"),
        policy: format!("branch/{key}/policy"),
        value: format!("branch/{key}/value"),
    }
}
