//! Online ring buffer, immutable offline dataset, uniform and mixed batch
//! sampling, and the "PEXD" dataset file format.
//!
//! PEXD layout (little-endian):
//!
//! ```text
//! magic "PEXD" | version u16 = 1 | env_id (u16 length + UTF-8) | grade u8 | seed u64
//! obs_dim u32 | act_dim u32 | count u64
//! count × [obs f64×obs_dim, action f64×act_dim, reward f64, next_obs f64×obs_dim, done u8, truncated u8]
//! CRC32 (u32) of every preceding byte
//! ```

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::binio::{ByteReader, ByteWriter};
use crate::envs::{BehaviorGrade, Transition};
use crate::error::{Error, FormatError, Result};
use crate::numcore::Matrix;

pub const DATASET_MAGIC: [u8; 4] = *b"PEXD";
pub const DATASET_VERSION: u16 = 1;

/// Which store a sampled transition came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleSource {
    Online,
    Offline,
}

/// Column-major transition storage shared by the buffer and the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionColumns {
    obs_dim: usize,
    act_dim: usize,
    obs: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    next_obs: Vec<f64>,
    dones: Vec<bool>,
    truncated: Vec<bool>,
}

impl TransitionColumns {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self {
            obs_dim,
            act_dim,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            next_obs: Vec::new(),
            dones: Vec::new(),
            truncated: Vec::new(),
        }
    }

    pub fn from_transitions(obs_dim: usize, act_dim: usize, transitions: &[Transition]) -> Result<Self> {
        let mut cols = Self::new(obs_dim, act_dim);
        for t in transitions {
            cols.check(t)?;
            cols.append(t);
        }
        Ok(cols)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    fn check(&self, t: &Transition) -> Result<()> {
        if t.obs.len() != self.obs_dim || t.next_obs.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(Error::shape(
                "transition",
                format!("obs {} / action {}", self.obs_dim, self.act_dim),
                format!("obs {} / next {} / action {}", t.obs.len(), t.next_obs.len(), t.action.len()),
            ));
        }
        if t.done && t.truncated {
            return Err(Error::InvalidArgument("transition cannot be both done and truncated".into()));
        }
        Ok(())
    }

    fn append(&mut self, t: &Transition) {
        self.obs.extend_from_slice(&t.obs);
        self.actions.extend_from_slice(&t.action);
        self.rewards.push(t.reward);
        self.next_obs.extend_from_slice(&t.next_obs);
        self.dones.push(t.done);
        self.truncated.push(t.truncated);
    }

    fn overwrite(&mut self, i: usize, t: &Transition) {
        let (o, a) = (self.obs_dim, self.act_dim);
        self.obs[i * o..(i + 1) * o].copy_from_slice(&t.obs);
        self.actions[i * a..(i + 1) * a].copy_from_slice(&t.action);
        self.rewards[i] = t.reward;
        self.next_obs[i * o..(i + 1) * o].copy_from_slice(&t.next_obs);
        self.dones[i] = t.done;
        self.truncated[i] = t.truncated;
    }

    pub fn get(&self, i: usize) -> Transition {
        let (o, a) = (self.obs_dim, self.act_dim);
        Transition {
            obs: self.obs[i * o..(i + 1) * o].to_vec(),
            action: self.actions[i * a..(i + 1) * a].to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs[i * o..(i + 1) * o].to_vec(),
            done: self.dones[i],
            truncated: self.truncated[i],
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Transition> + '_ {
        (0..self.len()).map(|i| self.get(i))
    }

    fn write_row(&self, i: usize, batch: &mut Batch, row: usize, source: SampleSource) {
        let (o, a) = (self.obs_dim, self.act_dim);
        batch.obs.row_mut(row).copy_from_slice(&self.obs[i * o..(i + 1) * o]);
        batch.actions.row_mut(row).copy_from_slice(&self.actions[i * a..(i + 1) * a]);
        batch.next_obs.row_mut(row).copy_from_slice(&self.next_obs[i * o..(i + 1) * o]);
        batch.rewards[row] = self.rewards[i];
        batch.dones[row] = self.dones[i];
        batch.truncated[row] = self.truncated[i];
        batch.sources[row] = source;
    }

    /// CRC32 over every column, used to confirm a dataset is never mutated.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for col in [&self.obs, &self.actions, &self.rewards, &self.next_obs] {
            for v in col.iter() {
                h.update(&v.to_le_bytes());
            }
        }
        for col in [&self.dones, &self.truncated] {
            h.update(&col.iter().map(|&b| b as u8).collect::<Vec<_>>());
        }
        h.finalize()
    }
}

/// A sampled minibatch in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub obs: Matrix,
    pub actions: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub dones: Vec<bool>,
    pub truncated: Vec<bool>,
    pub sources: Vec<SampleSource>,
}

impl Batch {
    pub fn with_capacity(n: usize, obs_dim: usize, act_dim: usize) -> Self {
        Self {
            obs: Matrix::zeros(n, obs_dim),
            actions: Matrix::zeros(n, act_dim),
            rewards: vec![0.0; n],
            next_obs: Matrix::zeros(n, obs_dim),
            dones: vec![false; n],
            truncated: vec![false; n],
            sources: vec![SampleSource::Offline; n],
        }
    }

    pub fn from_transitions(transitions: &[Transition], source: SampleSource) -> Result<Self> {
        let first = transitions
            .first()
            .ok_or(Error::EmptySource)?;
        let cols = TransitionColumns::from_transitions(first.obs.len(), first.action.len(), transitions)?;
        let mut b = Batch::with_capacity(cols.len(), cols.obs_dim, cols.act_dim);
        for i in 0..cols.len() {
            cols.write_row(i, &mut b, i, source);
        }
        Ok(b)
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            obs: self.obs.row(i).to_vec(),
            action: self.actions.row(i).to_vec(),
            reward: self.rewards[i],
            next_obs: self.next_obs.row(i).to_vec(),
            done: self.dones[i],
            truncated: self.truncated[i],
        }
    }

    pub fn count_from(&self, source: SampleSource) -> usize {
        self.sources.iter().filter(|&&s| s == source).count()
    }

    /// `1 − done` per element: zero only at true termination.
    pub fn not_done(&self) -> Vec<f64> {
        self.dones.iter().map(|&d| if d { 0.0 } else { 1.0 }).collect()
    }

    fn permute(&mut self, order: &[usize]) {
        self.obs = self.obs.select_rows(order);
        self.actions = self.actions.select_rows(order);
        self.next_obs = self.next_obs.select_rows(order);
        self.rewards = order.iter().map(|&i| self.rewards[i]).collect();
        self.dones = order.iter().map(|&i| self.dones[i]).collect();
        self.truncated = order.iter().map(|&i| self.truncated[i]).collect();
        self.sources = order.iter().map(|&i| self.sources[i]).collect();
    }
}

/// Anything uniform minibatches can be drawn from.
pub trait TransitionSource {
    fn columns(&self) -> &TransitionColumns;
    fn source_tag(&self) -> SampleSource;

    fn len(&self) -> usize {
        self.columns().len()
    }

    fn is_empty(&self) -> bool {
        self.columns().is_empty()
    }
}

/// Fixed-capacity FIFO store for online interaction data.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    columns: TransitionColumns,
    write_cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, obs_dim: usize, act_dim: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            capacity,
            columns: TransitionColumns::new(obs_dim, act_dim),
            write_cursor: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn size(&self) -> usize {
        self.columns.len()
    }

    pub fn write_cursor(&self) -> usize {
        self.write_cursor
    }

    /// Stores a transition, overwriting the oldest once full.
    pub fn push(&mut self, t: &Transition) -> Result<()> {
        self.columns.check(t)?;
        if self.columns.len() < self.capacity {
            self.columns.append(t);
        } else {
            self.columns.overwrite(self.write_cursor, t);
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
        Ok(())
    }
}

impl TransitionSource for ReplayBuffer {
    fn columns(&self) -> &TransitionColumns {
        &self.columns
    }

    fn source_tag(&self) -> SampleSource {
        SampleSource::Online
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub env_id: String,
    pub grade: BehaviorGrade,
    pub seed: u64,
}

/// Immutable offline transition store.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    meta: DatasetMeta,
    columns: TransitionColumns,
}

impl OfflineDataset {
    pub fn new(meta: DatasetMeta, obs_dim: usize, act_dim: usize, transitions: &[Transition]) -> Result<Self> {
        Ok(Self {
            meta,
            columns: TransitionColumns::from_transitions(obs_dim, act_dim, transitions)?,
        })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn obs_dim(&self) -> usize {
        self.columns.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.columns.act_dim
    }

    pub fn checksum(&self) -> u32 {
        self.columns.checksum()
    }

    pub fn transitions(&self) -> Vec<Transition> {
        self.columns.iter().collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let c = &self.columns;
        let mut w = ByteWriter::new();
        w.bytes(&DATASET_MAGIC);
        w.u16(DATASET_VERSION);
        w.str16(&self.meta.env_id)?;
        w.u8(self.meta.grade.code());
        w.u64(self.meta.seed);
        w.u32(c.obs_dim as u32);
        w.u32(c.act_dim as u32);
        w.u64(c.len() as u64);
        let (o, a) = (c.obs_dim, c.act_dim);
        for i in 0..c.len() {
            w.f64s(&c.obs[i * o..(i + 1) * o]);
            w.f64s(&c.actions[i * a..(i + 1) * a]);
            w.f64s(&[c.rewards[i]]);
            w.f64s(&c.next_obs[i * o..(i + 1) * o]);
            w.u8(c.dones[i] as u8);
            w.u8(c.truncated[i] as u8);
        }
        Ok(w.finish_with_crc())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        r.header(DATASET_MAGIC, DATASET_VERSION)?;
        let env_id = r.str16()?;
        let grade_code = r.u8()?;
        let seed = r.u64()?;
        let obs_dim = r.u32()? as usize;
        let act_dim = r.u32()? as usize;
        let count = r.u64()? as usize;
        let record = 8 * (2 * obs_dim + act_dim + 1) + 2;
        let needed = count.checked_mul(record).ok_or_else(|| FormatError::Malformed("record count overflow".into()))?;
        if bytes.len().saturating_sub(r.position()) < needed + 4 {
            return Err(FormatError::Truncated {
                offset: r.position(),
                needed: needed + 4,
            });
        }
        let mut cols = TransitionColumns::new(obs_dim, act_dim);
        for _ in 0..count {
            cols.obs.extend(r.f64s(obs_dim)?);
            cols.actions.extend(r.f64s(act_dim)?);
            cols.rewards.push(r.f64s(1)?[0]);
            cols.next_obs.extend(r.f64s(obs_dim)?);
            cols.dones.push(r.u8()? != 0);
            cols.truncated.push(r.u8()? != 0);
        }
        r.verify_crc()?;
        let grade = BehaviorGrade::from_code(grade_code)
            .ok_or_else(|| FormatError::Malformed(format!("unknown grade code {grade_code}")))?;
        Ok(Self {
            meta: DatasetMeta { env_id, grade, seed },
            columns: cols,
        })
    }
}

impl TransitionSource for OfflineDataset {
    fn columns(&self) -> &TransitionColumns {
        &self.columns
    }

    fn source_tag(&self) -> SampleSource {
        SampleSource::Offline
    }
}

pub fn save_dataset(dataset: &OfflineDataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, dataset.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<OfflineDataset> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(OfflineDataset::from_bytes(&bytes)?)
}

/// `n` independent uniform draws with replacement.
pub fn sample_batch<S: TransitionSource + ?Sized, R: Rng + ?Sized>(source: &S, n: usize, rng: &mut R) -> Result<Batch> {
    let cols = source.columns();
    let mut batch = Batch::with_capacity(n, cols.obs_dim, cols.act_dim);
    if n == 0 {
        return Ok(batch);
    }
    if cols.is_empty() {
        return Err(Error::EmptySource);
    }
    for row in 0..n {
        let i = rng.random_range(0..cols.len());
        cols.write_row(i, &mut batch, row, source.source_tag());
    }
    Ok(batch)
}

/// Draws `round(n · offline_fraction)` transitions from the offline dataset and
/// the rest from the online buffer, then shuffles. Falls back to a single
/// source when the other is empty or absent.
pub fn sample_mixed<R: Rng + ?Sized>(
    online: &ReplayBuffer,
    offline: Option<&OfflineDataset>,
    n: usize,
    offline_fraction: f64,
    rng: &mut R,
) -> Result<Batch> {
    let offline = offline.filter(|d| !d.is_empty());
    let n_offline = match (offline, online.is_empty()) {
        (None, true) => return Err(Error::EmptySource),
        (None, false) => 0,
        (Some(_), true) => n,
        (Some(_), false) => ((n as f64) * offline_fraction.clamp(0.0, 1.0)).round() as usize,
    };
    let n_online = n - n_offline;
    let cols = online.columns();
    let mut batch = Batch::with_capacity(n, cols.obs_dim, cols.act_dim);
    for row in 0..n_online {
        let i = rng.random_range(0..cols.len());
        cols.write_row(i, &mut batch, row, SampleSource::Online);
    }
    if let Some(d) = offline {
        let dc = d.columns();
        if dc.obs_dim != cols.obs_dim || dc.act_dim != cols.act_dim {
            return Err(Error::shape(
                "sample_mixed",
                format!("online dims {}/{}", cols.obs_dim, cols.act_dim),
                format!("offline dims {}/{}", dc.obs_dim, dc.act_dim),
            ));
        }
        for row in n_online..n {
            let i = rng.random_range(0..dc.len());
            dc.write_row(i, &mut batch, row, SampleSource::Offline);
        }
    }
    if n_online > 0 && n_offline > 0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        batch.permute(&order);
    }
    Ok(batch)
}
