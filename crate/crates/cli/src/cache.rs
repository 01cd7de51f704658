//! On-disk cache of model evaluations.
//!
//! Entries are keyed by the input coordinates rounded to 12 significant
//! digits; the file name carries the model and KL hashes, so a cache file is
//! only ever read back for the same model. Format (little endian): entry
//! count `u64`, then per entry `dim: u32`, `dim` pairs `(i64, i32)`,
//! `len: u32`, `len` values `f64`. Entries are written in key order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use euq_core::models::StochasticModel;
use euq_core::sparsegrid::{node_key, NodeKey};
use euq_core::{ModelError, Point};

use crate::error::CliError;

type Store = BTreeMap<Vec<NodeKey>, Vec<f64>>;

pub struct CachedModel<'a> {
    inner: &'a dyn StochasticModel,
    store: Mutex<Store>,
    path: Option<PathBuf>,
}

impl<'a> CachedModel<'a> {
    /// In-memory cache only (nothing is read or written).
    pub fn ephemeral(inner: &'a dyn StochasticModel) -> Self {
        Self {
            inner,
            store: Mutex::new(Store::new()),
            path: None,
        }
    }

    /// Cache backed by `dir/<model_hash>-<kl_hash>.bin`.
    pub fn open(inner: &'a dyn StochasticModel, dir: &Path, model_hash: &str, kl_hash: &str) -> Result<Self, CliError> {
        let path = dir.join(format!("{}-{}.bin", &model_hash[..16], &kl_hash[..16]));
        let store = if path.exists() {
            let bytes = std::fs::read(&path).map_err(|source| CliError::Io {
                path: path.clone(),
                source,
            })?;
            decode(&bytes).ok_or_else(|| CliError::Io {
                path: path.clone(),
                source: std::io::Error::new(std::io::ErrorKind::InvalidData, "corrupt evaluation cache"),
            })?
        } else {
            Store::new()
        };
        Ok(Self {
            inner,
            store: Mutex::new(store),
            path: Some(path),
        })
    }

    pub fn len(&self) -> usize {
        self.store.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self) -> Result<(), CliError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
                path: dir.to_path_buf(),
                source,
            })?;
        }
        let bytes = encode(&self.store.lock().expect("cache lock"));
        std::fs::write(path, bytes).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })
    }
}

impl StochasticModel for CachedModel<'_> {
    fn stochastic_dim(&self) -> usize {
        self.inner.stochastic_dim()
    }

    fn spatial_points(&self) -> &[Point] {
        self.inner.spatial_points()
    }

    fn evaluate(&self, xi: &[f64]) -> Result<Vec<f64>, ModelError> {
        let key: Vec<NodeKey> = xi.iter().map(|&x| node_key(x)).collect();
        if let Some(v) = self.store.lock().expect("cache lock").get(&key) {
            return Ok(v.clone());
        }
        let v = self.inner.evaluate(xi)?;
        self.store.lock().expect("cache lock").insert(key, v.clone());
        Ok(v)
    }

    /// Evaluations of the underlying model (cache hits are free).
    fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }
}

fn encode(store: &Store) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(store.len() as u64).to_le_bytes());
    for (key, values) in store {
        out.extend_from_slice(&(key.len() as u32).to_le_bytes());
        for (m, e) in key {
            out.extend_from_slice(&m.to_le_bytes());
            out.extend_from_slice(&e.to_le_bytes());
        }
        out.extend_from_slice(&(values.len() as u32).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn decode(bytes: &[u8]) -> Option<Store> {
    struct Reader<'b>(&'b [u8]);
    impl Reader<'_> {
        fn take<const N: usize>(&mut self) -> Option<[u8; N]> {
            let (head, rest) = self.0.split_at_checked(N)?;
            self.0 = rest;
            head.try_into().ok()
        }
    }
    let mut r = Reader(bytes);
    let count = u64::from_le_bytes(r.take()?);
    let mut store = Store::new();
    for _ in 0..count {
        let dim = u32::from_le_bytes(r.take()?) as usize;
        let mut key = Vec::with_capacity(dim);
        for _ in 0..dim {
            key.push((i64::from_le_bytes(r.take()?), i32::from_le_bytes(r.take()?)));
        }
        let len = u32::from_le_bytes(r.take()?) as usize;
        let mut values = Vec::with_capacity(len);
        for _ in 0..len {
            values.push(f64::from_le_bytes(r.take()?));
        }
        store.insert(key, values);
    }
    r.0.is_empty().then_some(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use euq_core::models::{Link, SyntheticModel};

    #[test]
    fn hits_do_not_evaluate() {
        let m = SyntheticModel::decaying(Link::Exp, 2, 3, 0.3).unwrap();
        let c = CachedModel::ephemeral(&m);
        let a = c.evaluate(&[0.1, 0.2]).unwrap();
        let b = c.evaluate(&[0.1, 0.2 + 1e-15]).unwrap();
        assert_eq!(a, b);
        assert_eq!(c.evaluations(), 1);
        c.evaluate(&[0.1, 0.3]).unwrap();
        assert_eq!(c.evaluations(), 2);
    }

    #[test]
    fn encode_decode_round_trip() {
        let mut store = Store::new();
        store.insert(vec![(1, 2), (-3, -4)], vec![1.5, f64::MIN_POSITIVE]);
        store.insert(vec![(0, 0)], vec![]);
        let bytes = encode(&store);
        assert_eq!(decode(&bytes).unwrap(), store);
        assert!(decode(&bytes[..bytes.len() - 1]).is_none());
    }

    #[test]
    fn persisted_cache_is_reused() {
        let dir = tempfile::tempdir().unwrap();
        let m = SyntheticModel::decaying(Link::Exp, 2, 3, 0.3).unwrap();
        let hash = "0123456789abcdef0123";
        let c = CachedModel::open(&m, dir.path(), hash, hash).unwrap();
        c.evaluate(&[0.5, -0.5]).unwrap();
        c.save().unwrap();
        let m2 = SyntheticModel::decaying(Link::Exp, 2, 3, 0.3).unwrap();
        let c2 = CachedModel::open(&m2, dir.path(), hash, hash).unwrap();
        assert_eq!(c2.len(), 1);
        c2.evaluate(&[0.5, -0.5]).unwrap();
        assert_eq!(m2.evaluations(), 0);
    }
}
