//! Self-describing text checkpoints.
//!
//! ```text
//! reranklab-checkpoint 1
//! architecture evaluator
//! seed 42
//! meta hidden 32
//! tensor enc.l0.w 32,17
//! -1.2345678901234567e-1 ...
//! end
//! ```
//!
//! Values are written with 17 significant digits, which round-trips every
//! finite `f64` exactly.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "reranklab-checkpoint";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub architecture: String,
    pub seed: u64,
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Checkpoint {
    pub fn new(architecture: &str, seed: u64) -> Self {
        Checkpoint {
            architecture: architecture.to_string(),
            seed,
            meta: BTreeMap::new(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn from_params(architecture: &str, params: &ParameterSet) -> Self {
        let mut ck = Checkpoint::new(architecture, params.seed());
        for (name, e) in params.iter() {
            ck.tensors.insert(name.to_string(), e.value.clone());
        }
        ck
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.to_string(), value.to_string());
        self
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::config(format!("checkpoint `{}` lacks meta key `{key}`", self.architecture)))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.meta(key)?;
        raw.parse()
            .map_err(|_| Error::config(format!("checkpoint meta `{key}` = `{raw}` is not valid")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::config(format!("checkpoint `{}` lacks tensor `{name}`", self.architecture)))
    }

    /// Rebuild a parameter set; names must match `template` exactly.
    pub fn load_into(&self, template: &ParameterSet) -> Result<ParameterSet> {
        let mut p = ParameterSet::new(self.seed);
        for name in template.names() {
            let t = self.tensor(name)?;
            let want = template.value(name)?.shape();
            if t.shape() != want {
                return Err(Error::shape(format!("checkpoint tensor `{name}`"), want, t.shape()));
            }
            p.insert(name, t.clone())?;
        }
        if self.tensors.len() != template.len() {
            let extra: Vec<&str> = self
                .tensors
                .keys()
                .filter(|k| !template.contains(k))
                .map(String::as_str)
                .collect();
            return Err(Error::config(format!("checkpoint has unexpected tensors: {extra:?}")));
        }
        Ok(p)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(s, "architecture {}", self.architecture);
        let _ = writeln!(s, "seed {}", self.seed);
        for (k, v) in &self.meta {
            let _ = writeln!(s, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(s, "tensor {name} {}", dims.join(","));
            let vals: Vec<String> = t.data().iter().map(|&v| format_f64(v)).collect();
            let _ = writeln!(s, "{}", vals.join(" "));
        }
        s.push_str("end\n");
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, msg: &str| Error::parse(origin, line, msg);

        let (ln, header) = lines.next().ok_or_else(|| err(1, "empty checkpoint"))?;
        let version = header
            .strip_prefix(MAGIC)
            .map(str::trim)
            .ok_or_else(|| err(ln, "missing checkpoint header"))?;
        if version != FORMAT_VERSION.to_string() {
            return Err(err(ln, &format!("unsupported format version `{version}`")));
        }

        let mut architecture = None;
        let mut seed = None;
        let mut meta = BTreeMap::new();
        let mut tensors = BTreeMap::new();
        let mut ended = false;
        while let Some((ln, line)) = lines.next() {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            match key {
                "architecture" => architecture = Some(rest.to_string()),
                "seed" => seed = Some(rest.parse::<u64>().map_err(|_| err(ln, "bad seed"))?),
                "meta" => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    meta.insert(k.to_string(), v.to_string());
                }
                "tensor" => {
                    let (name, dims) = rest.split_once(' ').ok_or_else(|| err(ln, "tensor line needs name and shape"))?;
                    let shape: Vec<usize> = dims
                        .split(',')
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| err(ln, "bad tensor shape"))?;
                    let (vln, values) = lines.next().ok_or_else(|| err(ln, "tensor values missing"))?;
                    let data: Vec<f64> = if values.trim().is_empty() {
                        Vec::new()
                    } else {
                        values
                            .split(' ')
                            .map(str::parse::<f64>)
                            .collect::<std::result::Result<_, _>>()
                            .map_err(|_| err(vln, "bad tensor value"))?
                    };
                    let t = Tensor::from_vec(&shape, data).map_err(|e| err(vln, &e.to_string()))?;
                    tensors.insert(name.to_string(), t);
                }
                "end" => {
                    ended = true;
                    break;
                }
                "" => {}
                other => return Err(err(ln, &format!("unknown key `{other}`"))),
            }
        }
        if !ended {
            return Err(err(text.lines().count(), "truncated checkpoint (no `end`)"));
        }
        Ok(Checkpoint {
            architecture: architecture.ok_or_else(|| err(1, "missing architecture"))?,
            seed: seed.ok_or_else(|| err(1, "missing seed"))?,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::parse(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn params_round_trip_exactly() {
        let mut p = ParameterSet::new(77);
        p.insert_uniform("a.w", &[4, 3], 3).unwrap();
        p.insert_uniform("b", &[5], 1).unwrap();
        let ck = Checkpoint::from_params("toy", &p).with_meta("hidden", 4);
        let back = Checkpoint::parse(&ck.to_text(), "mem").unwrap();
        assert_eq!(back, ck);
        assert!(back.load_into(&p).unwrap().same_values(&p));
        assert_eq!(back.meta_parse::<usize>("hidden").unwrap(), 4);
    }

    #[test]
    fn truncated_text_is_rejected() {
        let ck = Checkpoint::new("x", 1);
        let text = ck.to_text().replace("end\n", "");
        assert!(Checkpoint::parse(&text, "mem").is_err());
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(Checkpoint::parse("reranklab-checkpoint 9\nend\n", "mem").is_err());
    }

    proptest! {
        #[test]
        fn any_finite_values_round_trip(vals in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..40)) {
            let mut ck = Checkpoint::new("p", 3);
            let n = vals.len();
            ck.tensors.insert("t".into(), Tensor::from_vec(&[n], vals).unwrap());
            let back = Checkpoint::parse(&ck.to_text(), "mem").unwrap();
            let a = ck.tensors["t"].data();
            let b = back.tensors["t"].data();
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
