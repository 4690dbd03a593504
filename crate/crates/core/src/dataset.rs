//! Transition dataset files.
//!
//! Layout (integers little-endian):
//!
//! ```text
//! magic       5 bytes "DSET1"
//! scenario    u32     scenario id
//! grid        u32     side length (24)
//! k           u32     number of actions
//! n           u32     next-state samples per (state, action) group
//! obstacles   u32     obstacle count per record
//! records     u64     total (x, a, x') tuple count = groups * n
//! per group (anchors * k groups):
//!   base image   576 x f32
//!   action       u8
//!   next images  n x 576 x f32
//!   controllable anchor  2 x u16
//!   obstacle anchors     obstacles x 2 x u16
//! ```
//!
//! Each group holds one base state, one action, and its `n` sampled next
//! images; the header's record count is the tuple count, so 2500 anchors at
//! k=4, n=20 give the stock 200000 training tuples.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gridworld::{Action, Gridworld, Image, Scenario, GRID, IMAGE_PIXELS, NUM_ACTIONS};
use crate::{Error, Result};

const MAGIC: &[u8; 5] = b"DSET1";

#[derive(Debug, Clone)]
pub struct TransitionGroup {
    pub base: Image,
    pub action: Action,
    pub next: Vec<Image>,
    pub controllable_anchor: (u16, u16),
    pub obstacle_anchors: Vec<(u16, u16)>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub scenario: Scenario,
    pub n: usize,
    pub groups: Vec<TransitionGroup>,
}

impl Dataset {
    /// Total (x, a, x') tuple count.
    pub fn record_count(&self) -> u64 {
        (self.groups.len() * self.n) as u64
    }
}

/// Sample `anchors` uniformly random base states and, for each action, `n`
/// next images, then write the file. Identical seeds give byte-identical
/// files.
pub fn generate(
    scenario: Scenario,
    anchors: usize,
    n: usize,
    seed: u64,
    path: &Path,
) -> Result<u64> {
    if anchors == 0 || n == 0 {
        return Err(Error::Config("anchors and n must be at least 1".into()));
    }
    let gw = Gridworld::new(scenario);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut groups = Vec::with_capacity(anchors * NUM_ACTIONS);
    for _ in 0..anchors {
        let state = gw.random_state(&mut rng);
        let base = gw.render(&state);
        let c = gw.config.controllable_index();
        let controllable_anchor = (state.anchors[c].0 as u16, state.anchors[c].1 as u16);
        let obstacle_anchors: Vec<(u16, u16)> = gw
            .config
            .obstacle_indices()
            .into_iter()
            .map(|o| (state.anchors[o].0 as u16, state.anchors[o].1 as u16))
            .collect();
        for action in Action::ALL {
            let sampler = state.reseeded(rng.gen());
            let next = gw.sample_next_states(&sampler, action, n);
            groups.push(TransitionGroup {
                base: base.clone(),
                action,
                next,
                controllable_anchor,
                obstacle_anchors: obstacle_anchors.clone(),
            });
        }
    }
    let ds = Dataset { scenario, n, groups };
    write(&ds, path)?;
    Ok(ds.record_count())
}

pub fn write(ds: &Dataset, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let obstacles = ds.groups.first().map_or(0, |g| g.obstacle_anchors.len());
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&(ds.scenario.id() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(GRID as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(NUM_ACTIONS as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(ds.n as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&(obstacles as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&ds.record_count().to_le_bytes()).map_err(io)?;
    for g in &ds.groups {
        for v in &g.base {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.write_all(&[g.action.index() as u8]).map_err(io)?;
        for img in &g.next {
            for v in img {
                w.write_all(&v.to_le_bytes()).map_err(io)?;
            }
        }
        w.write_all(&g.controllable_anchor.0.to_le_bytes()).map_err(io)?;
        w.write_all(&g.controllable_anchor.1.to_le_bytes()).map_err(io)?;
        for (x, y) in &g.obstacle_anchors {
            w.write_all(&x.to_le_bytes()).map_err(io)?;
            w.write_all(&y.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let bad = |msg: String| Error::Format(format!("{}: {msg}", path.display()));
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let scenario_id = read_u32(&mut r, path)?;
    let scenario = Scenario::from_id(scenario_id as u8)
        .ok_or_else(|| bad(format!("unknown scenario id {scenario_id}")))?;
    let grid = read_u32(&mut r, path)?;
    if grid != GRID as u32 {
        return Err(bad(format!("grid {grid}, expected {GRID}")));
    }
    let k = read_u32(&mut r, path)? as usize;
    if k != NUM_ACTIONS {
        return Err(bad(format!("k {k}, expected {NUM_ACTIONS}")));
    }
    let n = read_u32(&mut r, path)? as usize;
    let obstacles = read_u32(&mut r, path)? as usize;
    let mut records = [0u8; 8];
    r.read_exact(&mut records)
        .map_err(|e| bad(format!("truncated header: {e}")))?;
    let records = u64::from_le_bytes(records);
    if n == 0 || records % n as u64 != 0 {
        return Err(bad(format!("record count {records} not divisible by n {n}")));
    }
    let group_count = (records / n as u64) as usize;
    let mut groups = Vec::with_capacity(group_count);
    for _ in 0..group_count {
        let base = read_image(&mut r, path)?;
        let mut action = [0u8];
        r.read_exact(&mut action)
            .map_err(|e| bad(format!("truncated record: {e}")))?;
        if action[0] as usize >= NUM_ACTIONS {
            return Err(bad(format!("bad action byte {}", action[0])));
        }
        let mut next = Vec::with_capacity(n);
        for _ in 0..n {
            next.push(read_image(&mut r, path)?);
        }
        let controllable_anchor = (read_u16(&mut r, path)?, read_u16(&mut r, path)?);
        let mut obstacle_anchors = Vec::with_capacity(obstacles);
        for _ in 0..obstacles {
            obstacle_anchors.push((read_u16(&mut r, path)?, read_u16(&mut r, path)?));
        }
        groups.push(TransitionGroup {
            base,
            action: Action::from_index(action[0] as usize),
            next,
            controllable_anchor,
            obstacle_anchors,
        });
    }
    Ok(Dataset { scenario, n, groups })
}

fn read_u32(r: &mut impl Read, path: &Path) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("{}: truncated: {e}", path.display())))?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u16(r: &mut impl Read, path: &Path) -> Result<u16> {
    let mut buf = [0u8; 2];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("{}: truncated: {e}", path.display())))?;
    Ok(u16::from_le_bytes(buf))
}

fn read_image(r: &mut impl Read, path: &Path) -> Result<Image> {
    let mut buf = vec![0u8; IMAGE_PIXELS * 4];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("{}: truncated image: {e}", path.display())))?;
    Ok(buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp_path(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("dlab-dset-{}-{name}", std::process::id()));
        p
    }

    #[test]
    fn record_counting() {
        let path = temp_path("count");
        let records = generate(Scenario::Situation1, 3, 5, 0, &path).unwrap();
        assert_eq!(records, 3 * 4 * 5);
        let ds = read(&path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(ds.record_count(), records);
        assert_eq!(ds.groups.len(), 12);
        assert_eq!(ds.groups[0].next.len(), 5);
    }

    #[test]
    fn minimal_dataset_has_four_records() {
        let path = temp_path("minimal");
        let records = generate(Scenario::Simple, 1, 1, 7, &path).unwrap();
        std::fs::remove_file(&path).ok();
        assert_eq!(records, 4);
    }

    #[test]
    fn same_seed_gives_byte_identical_files() {
        let p1 = temp_path("det1");
        let p2 = temp_path("det2");
        generate(Scenario::Situation2, 2, 3, 99, &p1).unwrap();
        generate(Scenario::Situation2, 2, 3, 99, &p2).unwrap();
        let b1 = std::fs::read(&p1).unwrap();
        let b2 = std::fs::read(&p2).unwrap();
        std::fs::remove_file(&p1).ok();
        std::fs::remove_file(&p2).ok();
        assert_eq!(b1, b2);
    }

    #[test]
    fn bad_magic_rejected() {
        let path = temp_path("badmagic");
        std::fs::write(&path, b"WRONG___________").unwrap();
        assert!(matches!(read(&path), Err(Error::Format(_))));
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn anchors_in_file_match_rendered_base() {
        let path = temp_path("anchors");
        generate(Scenario::Situation1, 2, 2, 5, &path).unwrap();
        let ds = read(&path).unwrap();
        std::fs::remove_file(&path).ok();
        for g in &ds.groups {
            let (ax, ay) = g.controllable_anchor;
            // The 3x3 controllable mask must be lit at its anchor.
            for dy in 0..3u16 {
                for dx in 0..3u16 {
                    let idx = ((ay + dy) as usize) * 24 + (ax + dx) as usize;
                    assert_eq!(g.base[idx], 1.0);
                }
            }
        }
    }
}
