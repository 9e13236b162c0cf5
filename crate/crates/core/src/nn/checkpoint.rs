//! Text checkpoint of named arrays.
//!
//! ```text
//! essdispatch-checkpoint 1
//! meta <key> <value to end of line>
//! array <name> <ndims> <d1> ... <dn>
//! <values separated by single spaces>
//! ```
//!
//! Keys and array names contain no whitespace. Values are written in the
//! shortest form that parses back to the identical `f64`, so a reload is
//! exact; `f32` data widens losslessly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamState, MlpParams};
use crate::scalar::Scalar;

pub const MAGIC: &str = "essdispatch-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Array {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub arrays: BTreeMap<String, Array>,
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(Error::Checkpoint(format!("invalid name {name:?}")));
    }
    Ok(())
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) -> Result<()> {
        check_name(key)?;
        let v = value.to_string();
        if v.contains('\n') {
            return Err(Error::Checkpoint(format!("meta {key} spans lines")));
        }
        self.meta.insert(key.to_string(), v);
        Ok(())
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Checkpoint(format!("missing meta {key}")))
    }

    pub fn meta_parse<V: std::str::FromStr>(&self, key: &str) -> Result<V> {
        let s = self.meta(key)?;
        s.parse()
            .map_err(|_| Error::Checkpoint(format!("meta {key} = {s:?} does not parse")))
    }

    pub fn put(&mut self, name: &str, dims: &[usize], data: Vec<f64>) -> Result<()> {
        check_name(name)?;
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Checkpoint(format!("array {name}: dims {dims:?} vs {} values", data.len())));
        }
        self.arrays.insert(
            name.to_string(),
            Array {
                dims: dims.to_vec(),
                data,
            },
        );
        Ok(())
    }

    pub fn put_vec<T: Scalar>(&mut self, name: &str, v: &[T]) -> Result<()> {
        self.put(name, &[v.len()], v.iter().map(|x| x.as_f64()).collect())
    }

    pub fn get(&self, name: &str) -> Result<&Array> {
        self.arrays
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array {name}")))
    }

    pub fn get_vec<T: Scalar>(&self, name: &str) -> Result<Vec<T>> {
        Ok(self.get(name)?.data.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MAGIC} {VERSION}\n");
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for (name, a) in &self.arrays {
            let _ = write!(s, "array {name} {}", a.dims.len());
            for d in &a.dims {
                let _ = write!(s, " {d}");
            }
            s.push('\n');
            for (i, x) in a.data.iter().enumerate() {
                if i > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{x:e}");
            }
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Checkpoint(format!("line {line}: {msg}"));
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let (_, head) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let mut hp = head.split_whitespace();
        if hp.next() != Some(MAGIC) {
            return Err(bad(1, "not a checkpoint"));
        }
        let ver: u32 = hp
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad(1, "missing version"))?;
        if ver != VERSION {
            return Err(bad(1, &format!("unsupported version {ver}")));
        }
        let mut ck = Checkpoint::new();
        while let Some((no, line)) = lines.next() {
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                ck.meta.insert(k.to_string(), v.to_string());
            } else if let Some(rest) = line.strip_prefix("array ") {
                let mut parts = rest.split_whitespace();
                let name = parts.next().ok_or_else(|| bad(no, "array without name"))?;
                let nd: usize = parts
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| bad(no, "bad rank"))?;
                let dims: Vec<usize> = parts
                    .map(|d| d.parse().map_err(|_| bad(no, "bad dimension")))
                    .collect::<Result<_>>()?;
                if dims.len() != nd {
                    return Err(bad(no, "rank does not match dimensions"));
                }
                let (vno, vals) = lines.next().ok_or_else(|| bad(no + 1, "missing values"))?;
                let data: Vec<f64> = vals
                    .split_whitespace()
                    .map(|x| x.parse::<f64>().map_err(|_| bad(vno, &format!("bad value {x:?}"))))
                    .collect::<Result<_>>()?;
                ck.put(name, &dims, data).map_err(|e| bad(vno, &e.to_string()))?;
            } else {
                return Err(bad(no, "unknown record"));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Stores a network under `prefix.sizes`, `prefix.params` and `prefix.acts`.
    pub fn put_net<T: Scalar>(&mut self, prefix: &str, net: &MlpParams<T>) -> Result<()> {
        let sizes: Vec<f64> = net.sizes().iter().map(|&s| s as f64).collect();
        self.put(&format!("{prefix}.sizes"), &[sizes.len()], sizes)?;
        self.put_vec(&format!("{prefix}.params"), net.params())?;
        let acts: Vec<&str> = net.activations().iter().map(|a| a.name()).collect();
        self.set_meta(&format!("{prefix}.acts"), acts.join(","))
    }

    pub fn get_net<T: Scalar>(&self, prefix: &str) -> Result<MlpParams<T>> {
        let sizes: Vec<usize> = self
            .get(&format!("{prefix}.sizes"))?
            .data
            .iter()
            .map(|&s| s as usize)
            .collect();
        let acts = self
            .meta(&format!("{prefix}.acts"))?
            .split(',')
            .map(|a| Activation::parse(a).ok_or_else(|| Error::Checkpoint(format!("unknown activation {a:?}"))))
            .collect::<Result<Vec<_>>>()?;
        MlpParams::from_flat(&sizes, &acts, self.get_vec(&format!("{prefix}.params"))?)
    }

    pub fn put_adam<T: Scalar>(&mut self, prefix: &str, a: &AdamState<T>) -> Result<()> {
        self.put_vec(&format!("{prefix}.m"), &a.m)?;
        self.put_vec(&format!("{prefix}.v"), &a.v)?;
        self.put_vec(
            &format!("{prefix}.hyper"),
            &[a.lr, a.weight_decay, a.beta1, a.beta2, a.eps],
        )?;
        self.set_meta(&format!("{prefix}.step"), a.step)
    }

    pub fn get_adam<T: Scalar>(&self, prefix: &str) -> Result<AdamState<T>> {
        let h: Vec<T> = self.get_vec(&format!("{prefix}.hyper"))?;
        if h.len() != 5 {
            return Err(Error::Checkpoint(format!("{prefix}.hyper needs 5 values")));
        }
        let m = self.get_vec(&format!("{prefix}.m"))?;
        let v: Vec<T> = self.get_vec(&format!("{prefix}.v"))?;
        if v.len() != m.len() {
            return Err(Error::Checkpoint(format!("{prefix}: moment lengths differ")));
        }
        Ok(AdamState {
            m,
            v,
            step: self.meta_parse(&format!("{prefix}.step"))?,
            lr: h[0],
            weight_decay: h[1],
            beta1: h[2],
            beta2: h[3],
            eps: h[4],
        })
    }
}
