//! JSON checkpoint: format version, config digest, iteration, and named
//! row-major parameter and Adam moment arrays.

use std::path::Path;

use deep2fbsde::net::NetworkParams;
use deep2fbsde::training::AdamState;
use deep2fbsde::{Error, Result};
use serde::{Deserialize, Serialize};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config_digest: String,
    pub iteration: usize,
    pub n_x: usize,
    pub hidden: Vec<usize>,
    pub params: Vec<NamedArray>,
    pub adam_step: u64,
    pub adam_m: Vec<NamedArray>,
    pub adam_v: Vec<NamedArray>,
}

fn split(params: &NetworkParams, flat: &[f64]) -> Vec<NamedArray> {
    params
        .groups()
        .iter()
        .map(|g| NamedArray { name: g.name.clone(), rows: g.rows, cols: g.cols, data: flat[g.range()].to_vec() })
        .collect()
}

impl Checkpoint {
    pub fn new(config_digest: &str, iteration: usize, params: &NetworkParams, adam: &AdamState) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            config_digest: config_digest.to_string(),
            iteration,
            n_x: params.n_x(),
            hidden: params.hidden().to_vec(),
            params: split(params, params.as_slice()),
            adam_step: adam.t,
            adam_m: split(params, &adam.m),
            adam_v: split(params, &adam.v),
        }
    }

    /// Rebuilds the network and optimizer state; every group must be present
    /// with its declared shape.
    pub fn restore(&self) -> Result<(NetworkParams, AdamState)> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", self.format_version)));
        }
        let mut params = NetworkParams::zeros(self.n_x, &self.hidden)?;
        let gather = |arrays: &[NamedArray], what: &str| -> Result<Vec<f64>> {
            let mut flat = vec![0.0; params.n_params()];
            if arrays.len() != params.groups().len() {
                return Err(Error::Checkpoint(format!("{what}: expected {} arrays, found {}", params.groups().len(), arrays.len())));
            }
            for g in params.groups() {
                let a = arrays
                    .iter()
                    .find(|a| a.name == g.name)
                    .ok_or_else(|| Error::Checkpoint(format!("{what}: missing `{}`", g.name)))?;
                if (a.rows, a.cols) != (g.rows, g.cols) || a.data.len() != g.len() {
                    return Err(Error::Checkpoint(format!(
                        "{what}: `{}` is {}×{}, expected {}×{}",
                        g.name, a.rows, a.cols, g.rows, g.cols
                    )));
                }
                flat[g.range()].copy_from_slice(&a.data);
            }
            Ok(flat)
        };
        let flat = gather(&self.params, "params")?;
        let m = gather(&self.adam_m, "adam_m")?;
        let v = gather(&self.adam_v, "adam_v")?;
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        params.as_mut_slice().copy_from_slice(&flat);
        Ok((params, AdamState { m, v, t: self.adam_step }))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use deep2fbsde::net::InitStrategy;

    #[test]
    fn round_trip_is_bit_exact() {
        let params = NetworkParams::init(InitStrategy::Xavier, 4, 2, &[3, 2], 0.1).unwrap();
        let mut adam = AdamState::new(params.n_params());
        adam.m.iter_mut().enumerate().for_each(|(i, m)| *m = (i as f64).sin() / 3.0);
        adam.t = 17;
        let ck = Checkpoint::new("abc", 17, &params, &adam);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let (p2, a2) = back.restore().unwrap();
        assert_eq!(p2.as_slice(), params.as_slice());
        assert_eq!(a2, adam);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let params = NetworkParams::init(InitStrategy::Xavier, 4, 2, &[3], 0.1).unwrap();
        let mut ck = Checkpoint::new("abc", 0, &params, &AdamState::new(params.n_params()));
        ck.params[0].data.pop();
        assert!(matches!(ck.restore(), Err(Error::Checkpoint(_))));
    }
}
