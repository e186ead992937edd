//! Transition datasets `D = {(o, a, f(o, a), p(o))}` and random-policy
//! collection from the counting environment.
//!
//! On disk a dataset is a little-endian binary container:
//!
//! ```text
//! magic "BSLB" | version u32 | |O| u32 | |A| u32 | d_p u32 | records u64
//! then per record: source u32 | action u32 | successor u32 | d_p x f64
//! ```
//!
//! Rendered frames go to an optional sidecar: concatenated binary PPM (P6)
//! frames plus a CSV index mapping each record to its source and successor
//! frame.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;

use crate::env::{CountingEnv, CountingEnvConfig, Observation};
use crate::error::{Error, Result};
use crate::mdp::{DeterministicMdp, DEC, INC};
use crate::rng;

pub const DATASET_MAGIC: &[u8; 4] = b"BSLB";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionRecord {
    pub source: usize,
    pub action: usize,
    pub successor: usize,
    pub aux_value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub num_observations: usize,
    pub num_actions: usize,
    pub aux_dim: usize,
    pub records: Vec<TransitionRecord>,
}

impl TransitionDataset {
    pub fn new(num_observations: usize, num_actions: usize, aux_dim: usize) -> Self {
        Self {
            num_observations,
            num_actions,
            aux_dim,
            records: Vec::new(),
        }
    }

    /// Every `(o, a)` pair of `mdp`, in row-major order.
    pub fn full_coverage(mdp: &DeterministicMdp) -> Self {
        let mut ds = Self::new(mdp.num_observations, mdp.num_actions, mdp.aux_dim());
        for o in 0..mdp.num_observations {
            for a in 0..mdp.num_actions {
                ds.records.push(TransitionRecord {
                    source: o,
                    action: a,
                    successor: mdp.next(o, a),
                    aux_value: mdp.aux[o].clone(),
                });
            }
        }
        ds
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Checks index ranges, determinism (one successor per `(o, a)`) and aux
    /// consistency (one aux value per source).
    pub fn validate(&self) -> Result<()> {
        let mut successor: HashMap<(usize, usize), usize> = HashMap::new();
        let mut aux: HashMap<usize, &[f64]> = HashMap::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.source >= self.num_observations || r.successor >= self.num_observations {
                return Err(Error::InconsistentDataset(format!(
                    "record {i}: observation index out of range"
                )));
            }
            if r.action >= self.num_actions {
                return Err(Error::InconsistentDataset(format!(
                    "record {i}: action {} out of range",
                    r.action
                )));
            }
            if r.aux_value.len() != self.aux_dim {
                return Err(Error::InconsistentDataset(format!(
                    "record {i}: aux dimension {} != {}",
                    r.aux_value.len(),
                    self.aux_dim
                )));
            }
            if let Some(&prev) = successor.get(&(r.source, r.action)) {
                if prev != r.successor {
                    return Err(Error::InconsistentDataset(format!(
                        "determinism violated: f({}, {}) observed as both {prev} and {}",
                        r.source, r.action, r.successor
                    )));
                }
            } else {
                successor.insert((r.source, r.action), r.successor);
            }
            match aux.get(&r.source) {
                Some(prev) if *prev != r.aux_value.as_slice() => {
                    return Err(Error::InconsistentDataset(format!(
                        "aux consistency violated for observation {}",
                        r.source
                    )));
                }
                Some(_) => {}
                None => {
                    aux.insert(r.source, &r.aux_value);
                }
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_u32::<LittleEndian>(DATASET_VERSION)?;
        w.write_u32::<LittleEndian>(to_u32(self.num_observations)?)?;
        w.write_u32::<LittleEndian>(to_u32(self.num_actions)?)?;
        w.write_u32::<LittleEndian>(to_u32(self.aux_dim)?)?;
        w.write_u64::<LittleEndian>(self.records.len() as u64)?;
        for r in &self.records {
            w.write_u32::<LittleEndian>(to_u32(r.source)?)?;
            w.write_u32::<LittleEndian>(to_u32(r.action)?)?;
            w.write_u32::<LittleEndian>(to_u32(r.successor)?)?;
            for &v in &r.aux_value {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Format(format!("bad dataset magic {magic:?}")));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let num_observations = r.read_u32::<LittleEndian>()? as usize;
        let num_actions = r.read_u32::<LittleEndian>()? as usize;
        let aux_dim = r.read_u32::<LittleEndian>()? as usize;
        let count = r.read_u64::<LittleEndian>()? as usize;
        let mut ds = Self::new(num_observations, num_actions, aux_dim);
        ds.records.reserve(count.min(1 << 24));
        for _ in 0..count {
            let source = r.read_u32::<LittleEndian>()? as usize;
            let action = r.read_u32::<LittleEndian>()? as usize;
            let successor = r.read_u32::<LittleEndian>()? as usize;
            let aux_value = (0..aux_dim)
                .map(|_| r.read_f64::<LittleEndian>())
                .collect::<std::io::Result<Vec<_>>>()?;
            ds.records.push(TransitionRecord {
                source,
                action,
                successor,
                aux_value,
            });
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

fn to_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))
}

/// A count-level dataset with the rendered frames it was collected from.
#[derive(Debug, Clone)]
pub struct CollectedData {
    pub dataset: TransitionDataset,
    pub frames: Vec<Observation>,
    /// `(source_frame, successor_frame)` for each record.
    pub frame_index: Vec<(usize, usize)>,
    /// Number of fresh action draws made by the random policy.
    pub action_samples: usize,
}

impl CollectedData {
    pub fn source_frame(&self, record: usize) -> &Observation {
        &self.frames[self.frame_index[record].0]
    }

    pub fn successor_frame(&self, record: usize) -> &Observation {
        &self.frames[self.frame_index[record].1]
    }

    /// Writes all frames as concatenated P6 images and a CSV index
    /// `record,source_frame,successor_frame`.
    pub fn save_frames(&self, ppm_path: impl AsRef<Path>, index_path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(ppm_path)?);
        for frame in &self.frames {
            write!(w, "P6\n{} {}\n255\n", frame.size, frame.size)?;
            w.write_all(&frame.to_rgb())?;
        }
        w.flush()?;
        let mut idx = BufWriter::new(std::fs::File::create(index_path)?);
        writeln!(idx, "record,source_frame,successor_frame")?;
        for (i, (s, t)) in self.frame_index.iter().enumerate() {
            writeln!(idx, "{i},{s},{t}")?;
        }
        idx.flush()?;
        Ok(())
    }
}

/// Reads back a concatenated P6 stream as interleaved RGB buffers.
pub fn read_ppm_frames(path: impl AsRef<Path>) -> Result<Vec<(usize, usize, Vec<u8>)>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut frames = Vec::new();
    loop {
        if r.fill_buf()?.is_empty() {
            break;
        }
        let mut header = Vec::new();
        // "P6", width, height, maxval: four whitespace-separated tokens.
        while header.len() < 4 {
            let mut token = Vec::new();
            loop {
                let mut byte = [0u8; 1];
                r.read_exact(&mut byte)?;
                if byte[0].is_ascii_whitespace() {
                    if !token.is_empty() {
                        break;
                    }
                } else {
                    token.push(byte[0]);
                }
            }
            header.push(String::from_utf8_lossy(&token).into_owned());
        }
        if header[0] != "P6" || header[3] != "255" {
            return Err(Error::Format(format!("unsupported PPM header {header:?}")));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PPM dimension {s:?}")))
        };
        let (w, h) = (parse(&header[1])?, parse(&header[2])?);
        let mut data = vec![0u8; w * h * 3];
        r.read_exact(&mut data)?;
        frames.push((w, h, data));
    }
    Ok(frames)
}

pub fn binarize_action(action: f64) -> usize {
    if action >= 0.0 {
        INC
    } else {
        DEC
    }
}

/// Runs a uniform random policy on `[-1, 1]`, holding each draw for
/// `action_repeat` steps, and records exactly `steps` transitions.
///
/// Records are count-level: observation `k` is "k objects", the action is the
/// sign of the continuous action and the aux value is the reward of the
/// source. Episodes that end are reset in place; the action schedule carries
/// across resets.
pub fn collect_dataset(
    config: &CountingEnvConfig,
    steps: usize,
    action_repeat: usize,
) -> Result<CollectedData> {
    if steps == 0 {
        return Err(Error::InvalidConfig("steps must be positive".into()));
    }
    let action_repeat = action_repeat.max(1);
    let mut env = CountingEnv::new(config.clone())?;
    let mut policy = rng::seeded(rng::derive_seed(config.seed, rng::stream::POLICY));

    let mut dataset = TransitionDataset::new(config.max_count + 1, 2, 1);
    let mut frames = vec![env.reset()];
    let mut frame_index = Vec::with_capacity(steps);
    let mut action = 0.0;
    let mut action_samples = 0;

    for t in 0..steps {
        if t % action_repeat == 0 {
            action = policy.gen_range(-1.0..=1.0);
            action_samples += 1;
        }
        let src_frame = frames.len() - 1;
        let source = frames[src_frame].count;
        let outcome = env.step(action)?;
        let successor = outcome.observation.count;
        frames.push(outcome.observation);
        frame_index.push((src_frame, frames.len() - 1));
        dataset.records.push(TransitionRecord {
            source,
            action: binarize_action(action),
            successor,
            aux_value: vec![if source == config.target_n { 1.0 } else { 0.0 }],
        });
        if outcome.done && t + 1 < steps {
            frames.push(env.reset());
        }
    }

    Ok(CollectedData {
        dataset,
        frames,
        frame_index,
        action_samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::counting_abstract_mdp;

    fn cfg(seed: u64) -> CountingEnvConfig {
        CountingEnvConfig {
            seed,
            image_size: 16,
            ..Default::default()
        }
    }

    #[test]
    fn collection_sizes_and_action_schedule() {
        let one = collect_dataset(&cfg(1), 1, 4).unwrap();
        assert_eq!(one.dataset.len(), 1);
        let eight = collect_dataset(&cfg(1), 8, 4).unwrap();
        assert_eq!(eight.dataset.len(), 8);
        assert_eq!(eight.action_samples, 2);
    }

    #[test]
    fn collected_records_follow_the_abstract_mdp() {
        let data = collect_dataset(&cfg(3), 500, 4).unwrap();
        data.dataset.validate().unwrap();
        let mdp = counting_abstract_mdp(8, 4).unwrap();
        for (i, r) in data.dataset.records.iter().enumerate() {
            assert_eq!(mdp.next(r.source, r.action), r.successor);
            assert_eq!(r.aux_value, mdp.aux[r.source]);
            assert_eq!(data.source_frame(i).count, r.source);
            assert_eq!(data.successor_frame(i).count, r.successor);
        }
    }

    #[test]
    fn collection_is_seeded() {
        let a = collect_dataset(&cfg(7), 64, 4).unwrap();
        let b = collect_dataset(&cfg(7), 64, 4).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn validate_catches_nondeterminism_and_aux_conflicts() {
        let mut ds = TransitionDataset::new(3, 1, 1);
        let rec = |s, t, p: f64| TransitionRecord {
            source: s,
            action: 0,
            successor: t,
            aux_value: vec![p],
        };
        ds.records = vec![rec(0, 1, 0.0), rec(0, 2, 0.0)];
        assert!(matches!(ds.validate(), Err(Error::InconsistentDataset(_))));
        ds.records = vec![rec(0, 1, 0.0), rec(0, 1, 1.0)];
        assert!(matches!(ds.validate(), Err(Error::InconsistentDataset(_))));
        ds.records = vec![rec(0, 1, 0.0), rec(0, 1, 0.0), rec(1, 1, 1.0)];
        ds.validate().unwrap();
    }

    #[test]
    fn binary_format_header_layout() {
        let ds = TransitionDataset::full_coverage(&counting_abstract_mdp(2, 1).unwrap());
        let mut bytes = Vec::new();
        ds.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"BSLB");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 6);
        assert_eq!(bytes.len(), 28 + 6 * (12 + 8));
        assert_eq!(TransitionDataset::read_from(bytes.as_slice()).unwrap(), ds);

        let mut corrupt = bytes.clone();
        corrupt[0] = b'X';
        assert!(matches!(
            TransitionDataset::read_from(corrupt.as_slice()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn frame_sidecar_round_trip() {
        let data = collect_dataset(&cfg(2), 5, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let ppm = dir.path().join("frames.ppm");
        let idx = dir.path().join("frames.csv");
        data.save_frames(&ppm, &idx).unwrap();
        let frames = read_ppm_frames(&ppm).unwrap();
        assert_eq!(frames.len(), data.frames.len());
        for (f, obs) in frames.iter().zip(&data.frames) {
            assert_eq!((f.0, f.1), (16, 16));
            assert_eq!(f.2, obs.to_rgb());
        }
        let index = std::fs::read_to_string(&idx).unwrap();
        assert_eq!(index.lines().count(), 6);
    }
}
