//! Parameter checkpoints: a JSON manifest plus a flat little-endian `f64`
//! blob. The blob holds every value in manifest order, followed by the
//! AdamW first and second moments (again in manifest order) when
//! `moments` is set.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub names: Vec<String>,
    pub shapes: Vec<[usize; 2]>,
    pub trainable: Vec<bool>,
    pub step_count: u64,
    pub moments: bool,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("json"), stem.with_extension("bin"))
}

pub fn save_checkpoint(store: &ParamStore, stem: &Path, with_moments: bool) -> Result<()> {
    let manifest = CheckpointManifest {
        names: store.entries().iter().map(|e| e.name.clone()).collect(),
        shapes: store.entries().iter().map(|e| [e.value.nrows(), e.value.ncols()]).collect(),
        trainable: store.entries().iter().map(|e| e.trainable).collect(),
        step_count: store.step_count,
        moments: with_moments,
    };
    let mut blob = Vec::with_capacity(8 * store.num_scalars() * if with_moments { 3 } else { 1 });
    let mut put = |a: &Array2<f64>| {
        for v in a.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    };
    for e in store.entries() {
        put(&e.value);
    }
    if with_moments {
        for e in store.entries() {
            put(&e.m);
        }
        for e in store.entries() {
            put(&e.v);
        }
    }
    let (json, bin) = paths(stem);
    fs::write(json, serde_json::to_string_pretty(&manifest)?)?;
    fs::write(bin, blob)?;
    Ok(())
}

pub fn load_checkpoint(stem: &Path) -> Result<ParamStore> {
    let (json, bin) = paths(stem);
    let manifest: CheckpointManifest = serde_json::from_str(
        &fs::read_to_string(&json).map_err(|e| Error::Data(format!("cannot read {}: {e}", json.display())))?,
    )
    .map_err(|e| Error::Data(format!("bad checkpoint manifest {}: {e}", json.display())))?;
    if manifest.names.len() != manifest.shapes.len() || manifest.names.len() != manifest.trainable.len() {
        return Err(Error::Data("checkpoint manifest lists are inconsistent".into()));
    }
    let bytes = fs::read(&bin)?;
    let n: usize = manifest.shapes.iter().map(|s| s[0] * s[1]).sum();
    let expected = 8 * n * if manifest.moments { 3 } else { 1 };
    if bytes.len() != expected {
        return Err(Error::Data(format!("checkpoint blob is {} bytes, manifest implies {expected}", bytes.len())));
    }
    let floats: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    let mut store = ParamStore::new();
    let mut off = 0;
    let mut take = |shape: [usize; 2]| -> Array2<f64> {
        let len = shape[0] * shape[1];
        let a =
            Array2::from_shape_vec((shape[0], shape[1]), floats[off..off + len].to_vec()).expect("sized by manifest");
        off += len;
        a
    };
    let values: Vec<_> = manifest.shapes.iter().map(|&s| take(s)).collect();
    let ms: Vec<_> = if manifest.moments { manifest.shapes.iter().map(|&s| take(s)).collect() } else { vec![] };
    let vs: Vec<_> = if manifest.moments { manifest.shapes.iter().map(|&s| take(s)).collect() } else { vec![] };
    for (i, (name, value)) in manifest.names.iter().zip(values).enumerate() {
        let id = store.add(name, value)?;
        store.set_trainable(id, manifest.trainable[i]);
        if manifest.moments {
            let e = &mut store.entries_mut()[i];
            e.m = ms[i].clone();
            e.v = vs[i].clone();
        }
    }
    store.step_count = manifest.step_count;
    Ok(store)
}
