//! Scene persistence.
//!
//! Format `NAVSCN1`, little-endian throughout:
//!
//! ```text
//! magic          8 bytes  "NAVSCN1\n"
//! scene_id       u64
//! feature_seed   u64
//! width          u16
//! height         u16
//! percept_dim    u32
//! smoothing      f64 bits
//! density        f64 bits
//! n_targets      u32
//! targets        n_targets x (x: u16, y: u16, heading: u8)
//! obstacle bitmap ceil(width*height / 8) bytes, row-major, LSB first
//! ```
//!
//! Percept features are regenerated from the seeds on load, never stored.

use std::fs;
use std::path::Path;

use super::{Heading, Pose, Scene, SceneError};

pub const SCENE_MAGIC: &[u8; 8] = b"NAVSCN1\n";

/// Serializes a scene. Byte-identical output for equal scenes.
pub fn save_scene(scene: &Scene, path: &Path) -> Result<(), SceneError> {
    let mut buf = Vec::with_capacity(64 + scene.obstacle_mask().len() / 8 + 1);
    buf.extend_from_slice(SCENE_MAGIC);
    buf.extend_from_slice(&scene.scene_id().to_le_bytes());
    buf.extend_from_slice(&scene.feature_seed().to_le_bytes());
    buf.extend_from_slice(&scene.width().to_le_bytes());
    buf.extend_from_slice(&scene.height().to_le_bytes());
    buf.extend_from_slice(&(scene.percept_dim() as u32).to_le_bytes());
    buf.extend_from_slice(&scene.smoothing().to_bits().to_le_bytes());
    buf.extend_from_slice(&scene.obstacle_density().to_bits().to_le_bytes());
    buf.extend_from_slice(&(scene.targets().len() as u32).to_le_bytes());
    for t in scene.targets() {
        buf.extend_from_slice(&t.x.to_le_bytes());
        buf.extend_from_slice(&t.y.to_le_bytes());
        buf.push(t.heading.index() as u8);
    }
    let mask = scene.obstacle_mask();
    let mut byte = 0u8;
    for (i, &b) in mask.iter().enumerate() {
        if b {
            byte |= 1 << (i % 8);
        }
        if i % 8 == 7 {
            buf.push(byte);
            byte = 0;
        }
    }
    if mask.len() % 8 != 0 {
        buf.push(byte);
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    at: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], SceneError> {
        if self.at + n > self.bytes.len() {
            return Err(self.bad(&format!("truncated reading {what}")));
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16, SceneError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32, SceneError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, SceneError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64, SceneError> {
        Ok(f64::from_bits(self.u64(what)?))
    }

    fn bad(&self, reason: &str) -> SceneError {
        SceneError::Format {
            path: self.path.display().to_string(),
            reason: reason.to_string(),
        }
    }
}

/// Loads a scene, revalidating every invariant through `Scene::from_parts`.
pub fn load_scene(path: &Path) -> Result<Scene, SceneError> {
    let bytes = fs::read(path)?;
    let mut c = Cursor { bytes: &bytes, at: 0, path };
    if c.take(SCENE_MAGIC.len(), "magic")? != SCENE_MAGIC {
        return Err(c.bad("bad magic, not a NAVSCN1 file"));
    }
    let scene_id = c.u64("scene_id")?;
    let feature_seed = c.u64("feature_seed")?;
    let width = c.u16("width")?;
    let height = c.u16("height")?;
    let percept_dim = c.u32("percept_dim")? as usize;
    let smoothing = c.f64("smoothing")?;
    let density = c.f64("density")?;
    let n_targets = c.u32("n_targets")? as usize;
    let mut targets = Vec::with_capacity(n_targets);
    for _ in 0..n_targets {
        let x = c.u16("target x")?;
        let y = c.u16("target y")?;
        let h = c.take(1, "target heading")?[0];
        if h > 3 {
            return Err(c.bad(&format!("heading byte {h} outside 0..=3")));
        }
        targets.push(Pose::new(x, y, Heading::from_index(h as usize)));
    }
    let n_cells = width as usize * height as usize;
    let mask_bytes = c.take(n_cells.div_ceil(8), "obstacle bitmap")?;
    if c.at != bytes.len() {
        return Err(c.bad("trailing bytes after obstacle bitmap"));
    }
    let blocked: Vec<bool> = (0..n_cells)
        .map(|i| mask_bytes[i / 8] >> (i % 8) & 1 == 1)
        .collect();
    Scene::from_parts(
        scene_id,
        width,
        height,
        blocked,
        smoothing,
        percept_dim,
        feature_seed,
        density,
        targets,
    )
}

/// Loads every `*.navscn` file in a directory, sorted by file name so the
/// scene order is stable across platforms.
pub fn load_scene_dir(dir: &Path) -> Result<Vec<Scene>, SceneError> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|e| e == "navscn"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scene(p)).collect()
}
