use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{observe, rollout, StateVector, SystemSpec};
use crate::error::{Error, Result};
use crate::par;

const MAGIC: &[u8; 4] = b"CIPH";
const VERSION: u32 = 1;

/// One simulated episode: `states` is `N × d_s`, `observations` is `N × d_g`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub states: Array2<f64>,
    pub observations: Array2<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, states: Array2<f64>, observations: Array2<f64>) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Data(format!("trajectory dt must be positive, got {dt}")));
        }
        if states.nrows() != observations.nrows() {
            return Err(Error::Data(format!("{} states but {} observations", states.nrows(), observations.nrows())));
        }
        Ok(Trajectory { dt, states, observations })
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, k: usize) -> StateVector {
        StateVector([self.states[[k, 0]], self.states[[k, 1]]])
    }

    /// Observations as a `Vec` of rows.
    pub fn observation_rows(&self) -> Vec<Vec<f64>> {
        self.observations.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub spec: SystemSpec,
    pub seed: u64,
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[Trajectory] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Sizes of the 80/10/10 split by whole trajectory.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = n * 8 / 10;
    let val = n / 10;
    (train, val, n - train - val)
}

fn simulate(spec: &SystemSpec, seed: u64, index: usize) -> Result<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let r = &spec.init_region;
    let q0 = rng.gen_range(r.q[0]..r.q[1]);
    let p0 = rng.gen_range(r.p[0]..r.p[1]);
    let path = rollout(spec.slice_field(), &[q0, p0], spec.traj_len - 1, spec.dt)
        .map_err(|e| Error::Numerical(format!("trajectory {index}: {e}")))?;
    let n = path.len();
    let mut states = Array2::zeros((n, spec.state_dim()));
    let mut obs = Array2::zeros((n, spec.obs_dim()));
    for (k, s) in path.iter().enumerate() {
        states[[k, 0]] = s[0];
        states[[k, 1]] = s[1];
        let o = observe(StateVector([s[0], s[1]]), spec)?;
        for (j, v) in o.iter().enumerate() {
            obs[[k, j]] = *v;
        }
    }
    Trajectory::new(spec.dt, states, obs)
}

/// Simulates `spec.n_traj` episodes with one RNG stream per trajectory index
/// and splits them 80/10/10 in index order.
pub fn generate_dataset(spec: &SystemSpec, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    let mut all = par::try_map_range(spec.n_traj, |i| simulate(spec, seed, i))?;
    let (n_train, n_val, _) = split_sizes(spec.n_traj);
    let test = all.split_off(n_train + n_val);
    let val = all.split_off(n_train);
    Ok(Dataset { spec: spec.clone(), seed, train: all, val, test })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetFormat {
    Bin,
    Csv,
}

impl DatasetFormat {
    fn extension(self) -> &'static str {
        match self {
            DatasetFormat::Bin => "bin",
            DatasetFormat::Csv => "csv",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: SystemSpec,
    pub seed: u64,
    pub format: DatasetFormat,
    pub counts: BTreeMap<String, usize>,
    /// Relative path → SHA-256 of the file contents.
    pub checksums: BTreeMap<String, String>,
}

pub fn encode_trajectory(traj: &Trajectory) -> Vec<u8> {
    let (n, ds) = traj.states.dim();
    let dg = traj.observations.ncols();
    let mut buf = Vec::with_capacity(28 + 8 * n * (ds + dg));
    buf.extend_from_slice(MAGIC);
    for v in [VERSION, ds as u32, dg as u32, n as u32] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&traj.dt.to_le_bytes());
    for v in traj.states.iter().chain(traj.observations.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf
}

pub fn decode_trajectory(bytes: &[u8]) -> Result<Trajectory> {
    let mut r = bytes;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| Error::Data("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Data(format!("bad magic {magic:?}")));
    }
    let mut word = || -> Result<u32> {
        let mut b = [0u8; 4];
        r.read_exact(&mut b).map_err(|_| Error::Data("truncated header".into()))?;
        Ok(u32::from_le_bytes(b))
    };
    let version = word()?;
    if version != VERSION {
        return Err(Error::Data(format!("unsupported version {version}")));
    }
    let (ds, dg, n) = (word()? as usize, word()? as usize, word()? as usize);
    let body = &bytes[20..];
    let expected = 8 * (1 + n * (ds + dg));
    if body.len() != expected {
        return Err(Error::Data(format!("payload is {} bytes, header implies {expected}", body.len())));
    }
    let floats: Vec<f64> =
        body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let dt = floats[0];
    let states =
        Array2::from_shape_vec((n, ds), floats[1..1 + n * ds].to_vec()).map_err(|e| Error::Data(e.to_string()))?;
    let obs = Array2::from_shape_vec((n, dg), floats[1 + n * ds..].to_vec()).map_err(|e| Error::Data(e.to_string()))?;
    Trajectory::new(dt, states, obs)
}

fn encode_csv(traj: &Trajectory) -> Vec<u8> {
    let mut out = String::from("t,q,p,obs\n");
    for k in 0..traj.len() {
        // `{:?}` prints the shortest representation that round-trips exactly.
        out.push_str(&format!(
            "{:?},{:?},{:?},{:?}\n",
            k as f64 * traj.dt,
            traj.states[[k, 0]],
            traj.states[[k, 1]],
            traj.observations[[k, 0]]
        ));
    }
    out.into_bytes()
}

fn decode_csv(bytes: &[u8]) -> Result<Trajectory> {
    let reader = BufReader::new(bytes);
    let mut rows = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "t,q,p,obs" {
                return Err(Error::Data(format!("unexpected csv header {line:?}")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| Error::Data(format!("csv line {}: {e}", i + 1)))?;
        if vals.len() != 4 {
            return Err(Error::Data(format!("csv line {} has {} fields", i + 1, vals.len())));
        }
        rows.push(vals);
    }
    if rows.len() < 2 {
        return Err(Error::Data("csv trajectory needs at least two rows".into()));
    }
    let n = rows.len();
    let dt = rows[1][0] - rows[0][0];
    let states = Array2::from_shape_fn((n, 2), |(k, j)| rows[k][1 + j]);
    let obs = Array2::from_shape_fn((n, 1), |(k, _)| rows[k][3]);
    Trajectory::new(dt, states, obs)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory, format: DatasetFormat) -> Result<String> {
    let bytes = match format {
        DatasetFormat::Bin => encode_trajectory(traj),
        DatasetFormat::Csv => encode_csv(traj),
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let bytes = fs::read(path)?;
    let is_csv = path.extension().is_some_and(|e| e == "csv");
    if is_csv { decode_csv(&bytes) } else { decode_trajectory(&bytes) }.map_err(|e| match e {
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn traj_file(split: Split, i: usize, format: DatasetFormat) -> PathBuf {
    PathBuf::from(split.dir_name()).join(format!("traj_{i:05}.{}", format.extension()))
}

/// Writes one directory per split plus `manifest.json`. Returns the manifest.
pub fn write_dataset(dir: &Path, data: &Dataset, format: DatasetFormat) -> Result<DatasetManifest> {
    let mut checksums = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for split in Split::ALL {
        fs::create_dir_all(dir.join(split.dir_name()))?;
        let trajs = data.split(split);
        counts.insert(split.dir_name().to_string(), trajs.len());
        for (i, t) in trajs.iter().enumerate() {
            let rel = traj_file(split, i, format);
            let sum = write_trajectory(&dir.join(&rel), t, format)?;
            checksums.insert(rel.to_string_lossy().replace('\\', "/"), sum);
        }
    }
    let manifest = DatasetManifest { spec: data.spec.clone(), seed: data.seed, format, counts, checksums };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(dir.join("manifest.json"))
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", dir.join("manifest.json").display())))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("bad manifest: {e}")))?;
    let mut splits: BTreeMap<Split, Vec<Trajectory>> = BTreeMap::new();
    for split in Split::ALL {
        let n = manifest.counts.get(split.dir_name()).copied().unwrap_or(0);
        let mut trajs = Vec::with_capacity(n);
        for i in 0..n {
            let rel = traj_file(split, i, manifest.format);
            let path = dir.join(&rel);
            let bytes = fs::read(&path)?;
            let key = rel.to_string_lossy().replace('\\', "/");
            if let Some(expected) = manifest.checksums.get(&key) {
                let got = hex::encode(Sha256::digest(&bytes));
                if &got != expected {
                    return Err(Error::Data(format!("checksum mismatch for {key}")));
                }
            }
            trajs.push(read_trajectory(&path)?);
        }
        splits.insert(split, trajs);
    }
    Ok(Dataset {
        spec: manifest.spec,
        seed: manifest.seed,
        train: splits.remove(&Split::Train).unwrap_or_default(),
        val: splits.remove(&Split::Val).unwrap_or_default(),
        test: splits.remove(&Split::Test).unwrap_or_default(),
    })
}

impl PartialOrd for Split {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Split {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (*self as u8).cmp(&(*other as u8))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::odeint::SystemKind;

    fn small(kind: SystemKind, n: usize, len: usize) -> SystemSpec {
        let mut s = SystemSpec::for_kind(kind);
        s.n_traj = n;
        s.traj_len = len;
        s
    }

    #[test]
    fn split_sizes_match_table() {
        assert_eq!(split_sizes(500), (400, 50, 50));
        assert_eq!(split_sizes(100), (80, 10, 10));
    }

    #[test]
    fn pendulum_defaults_split_400_50_50() {
        let d = generate_dataset(&SystemSpec::pendulum(), 0).unwrap();
        assert_eq!((d.train.len(), d.val.len(), d.test.len()), (400, 50, 50));
        assert!(d.train.iter().all(|t| t.len() == 150));
    }

    #[test]
    fn duffing_lengths_are_100() {
        let d = generate_dataset(&SystemSpec::duffing(), 3).unwrap();
        assert!(d.train.iter().chain(&d.val).chain(&d.test).all(|t| t.len() == 100));
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = small(SystemKind::Duffing, 20, 30);
        let a = generate_dataset(&spec, 7).unwrap();
        let b = generate_dataset(&spec, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(&spec, 8).unwrap();
        assert_ne!(a.train[0].states, c.train[0].states);
    }

    #[test]
    fn observations_match_states() {
        let spec = small(SystemKind::Pendulum, 10, 40);
        let d = generate_dataset(&spec, 1).unwrap();
        for t in d.train.iter().chain(&d.test) {
            for k in 0..t.len() {
                assert_eq!(observe(t.state(k), &spec).unwrap(), vec![t.observations[[k, 0]]]);
            }
        }
    }

    #[test]
    fn initial_conditions_inside_region() {
        let spec = small(SystemKind::Pendulum, 50, 2);
        let d = generate_dataset(&spec, 2).unwrap();
        for t in d.train.iter().chain(&d.val).chain(&d.test) {
            let s = t.state(0);
            assert!((-2.5..2.5).contains(&s.q()) && (-2.0..2.0).contains(&s.p()));
        }
    }

    #[test]
    fn degenerate_region_rejected() {
        let mut spec = small(SystemKind::Duffing, 10, 10);
        spec.init_region.p = [0.5, -0.5];
        assert!(generate_dataset(&spec, 0).is_err());
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let spec = small(SystemKind::Pendulum, 10, 25);
        let d = generate_dataset(&spec, 4).unwrap();
        for format in [DatasetFormat::Bin, DatasetFormat::Csv] {
            let dir = tempfile::tempdir().unwrap();
            let m = write_dataset(dir.path(), &d, format).unwrap();
            assert_eq!(m.checksums.len(), 10);
            let back = read_dataset(dir.path()).unwrap();
            assert_eq!(back.train.len(), 8);
            for (a, b) in d.train.iter().zip(&back.train) {
                assert_eq!(a.states, b.states);
                assert_eq!(a.observations, b.observations);
            }
        }
    }

    #[test]
    fn binary_header_layout() {
        let spec = small(SystemKind::Duffing, 1, 3);
        let d = generate_dataset(&spec, 0).unwrap();
        let t = d.test.first().or(d.train.first()).unwrap();
        let bytes = encode_trajectory(t);
        assert_eq!(&bytes[0..4], b"CIPH");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[20..28].try_into().unwrap()), 0.05);
        assert_eq!(bytes.len(), 28 + 8 * 3 * 3);
        assert_eq!(decode_trajectory(&bytes).unwrap(), *t);
        assert!(decode_trajectory(&bytes[..30]).is_err());
    }
}
