//! Named-tensor archives in the safetensors format.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::params::{Adam, ParamSet};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Archive {
    pub tensors: BTreeMap<String, Tensor>,
    pub metadata: BTreeMap<String, String>,
}

impl Archive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.metadata.insert(key.into(), value.into());
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).map(String::as_str)
    }

    pub fn insert_params(&mut self, prefix: &str, params: &ParamSet) {
        for p in params.iter() {
            self.insert(format!("{prefix}.{}", p.name), p.value.clone());
        }
    }

    /// Overwrite every parameter of `params` from `prefix.<name>` entries.
    pub fn load_params(&self, prefix: &str, params: &mut ParamSet) -> std::result::Result<(), String> {
        for p in params.iter_mut() {
            let key = format!("{prefix}.{}", p.name);
            let t = self.tensors.get(&key).ok_or_else(|| format!("missing tensor `{key}`"))?;
            if t.shape() != p.value.shape() {
                return Err(format!("tensor `{key}` has shape {:?}, expected {:?}", t.shape(), p.value.shape()));
            }
            p.value = t.clone();
        }
        Ok(())
    }

    pub fn insert_adam(&mut self, prefix: &str, params: &ParamSet, opt: &Adam) {
        for (i, p) in params.iter().enumerate() {
            self.insert(format!("{prefix}.m.{}", p.name), opt.m[i].clone());
            self.insert(format!("{prefix}.v.{}", p.name), opt.v[i].clone());
        }
        self.set_meta(format!("{prefix}.t"), opt.t.to_string());
    }

    pub fn load_adam(&self, prefix: &str, params: &ParamSet, opt: &mut Adam) -> std::result::Result<(), String> {
        for (i, p) in params.iter().enumerate() {
            for (kind, slot) in [("m", &mut opt.m[i]), ("v", &mut opt.v[i])] {
                let key = format!("{prefix}.{kind}.{}", p.name);
                let t = self.tensors.get(&key).ok_or_else(|| format!("missing tensor `{key}`"))?;
                *slot = t.clone();
            }
        }
        opt.t = self
            .meta(&format!("{prefix}.t"))
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format!("missing `{prefix}.t`"))?;
        Ok(())
    }

    pub fn to_bytes(&self) -> std::result::Result<Vec<u8>, String> {
        let bytes: Vec<(String, Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let b = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                (k.clone(), t.shape().to_vec(), b)
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(k, s, b)| TensorView::new(Dtype::F32, s.clone(), b).map(|v| (k.as_str(), v)))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        let meta: HashMap<String, String> = self.metadata.clone().into_iter().collect();
        safetensors::serialize(views, Some(meta)).map_err(|e| e.to_string())
    }

    pub fn from_bytes(buf: &[u8]) -> std::result::Result<Self, String> {
        let (_, header) = SafeTensors::read_metadata(buf).map_err(|e| e.to_string())?;
        let st = SafeTensors::deserialize(buf).map_err(|e| e.to_string())?;
        let mut out = Archive::new();
        if let Some(m) = header.metadata() {
            out.metadata = m.clone().into_iter().collect();
        }
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(format!("tensor `{name}` is not f32"));
            }
            let s = view.shape();
            if s.len() != 4 {
                return Err(format!("tensor `{name}` is not 4-dimensional"));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            out.insert(name, Tensor::from_vec([s[0], s[1], s[2], s[3]], data));
        }
        Ok(out)
    }

    /// Write through a temporary file so a crash never leaves a torn archive.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes().map_err(|e| Error::checkpoint(path, e))?;
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf).map_err(|e| Error::checkpoint(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut a = Archive::new();
        a.insert("w", Tensor::from_vec([1, 2, 1, 2], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE]));
        a.insert("b", Tensor::scalar(7.0));
        a.set_meta("step", "12");
        let bytes = a.to_bytes().unwrap();
        assert_eq!(Archive::from_bytes(&bytes).unwrap(), a);
        assert_eq!(a.to_bytes().unwrap(), bytes, "serialization is deterministic");
    }

    #[test]
    fn params_and_moments() {
        let mut ps = ParamSet::new();
        ps.push("conv.weight", Tensor::full([2, 1, 3, 3], 0.5));
        let mut opt = Adam::new(&ps, 0.5);
        opt.step(&mut ps, &[Some(Tensor::full([2, 1, 3, 3], 1.0))], 0.1);
        let mut a = Archive::new();
        a.insert_params("gen", &ps);
        a.insert_adam("opt", &ps, &opt);
        let b = Archive::from_bytes(&a.to_bytes().unwrap()).unwrap();
        let mut ps2 = ParamSet::new();
        ps2.push("conv.weight", Tensor::zeros([2, 1, 3, 3]));
        b.load_params("gen", &mut ps2).unwrap();
        assert_eq!(ps, ps2);
        let mut opt2 = Adam::new(&ps2, 0.5);
        b.load_adam("opt", &ps2, &mut opt2).unwrap();
        assert_eq!(opt, opt2);
        let mut wrong = ParamSet::new();
        wrong.push("conv.weight", Tensor::zeros([1, 1, 3, 3]));
        assert!(b.load_params("gen", &mut wrong).is_err());
    }
}
