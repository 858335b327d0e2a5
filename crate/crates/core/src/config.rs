//! Plain-text key-value configuration.
//!
//! One `key = value` pair per line; `#` starts a comment; lists are comma
//! separated. A system definition reads:
//!
//! ```text
//! system = mackey-glass
//! alpha = 0.2
//! beta = 0.1
//! gamma = 10
//! T = 17.5
//! N = 500        # or "dde" for the direct solver
//! ```
//!
//! Multi-delay systems give `delays = 10, 20`, `weights = 0.5, 0.5` and one
//! order per delay in `N`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::systems::{
    build_multi_chain, ChainSystem, Coupling, Delay, DelayModel, DelaySystem, LinearDelayParams, MackeyGlassParams,
};

/// Ordered key-value pairs with consuming accessors, so that keys left over
/// after every consumer has taken its share can be reported as unknown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Parses the text format; duplicate keys are an error.
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value', got '{line}'", no + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", no + 1)));
            }
            if map.entries.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", no + 1)));
            }
        }
        Ok(map)
    }

    /// Sets a key, replacing any earlier value.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: ConfigMap) {
        self.entries.extend(other.entries);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    pub fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        self.take(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| Error::Config(format!("key '{key}': cannot parse '{v}': {e}")))
            })
            .transpose()
    }

    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        self.take(key)
            .map(|v| {
                v.split(',')
                    .map(|item| {
                        let item = item.trim();
                        item.parse::<T>()
                            .map_err(|e| Error::Config(format!("key '{key}': cannot parse '{item}': {e}")))
                    })
                    .collect()
            })
            .transpose()
    }

    /// Errors out naming every key nobody consumed.
    pub fn reject_unknown(&self) -> Result<()> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.entries.keys().map(String::as_str).collect();
            Err(Error::Config(format!("unknown keys: {}", keys.join(", "))))
        }
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// The right-hand side family of a system definition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModelSpec {
    MackeyGlass(MackeyGlassParams),
    Linear(LinearDelayParams),
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::MackeyGlass(_) => "mackey-glass",
            ModelSpec::Linear(_) => "linear",
        }
    }

    pub fn model(&self) -> Arc<dyn DelayModel> {
        match self {
            ModelSpec::MackeyGlass(p) => Arc::new(*p),
            ModelSpec::Linear(p) => Arc::new(*p),
        }
    }
}

/// A validated system definition.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub model: ModelSpec,
    pub delays: Vec<f64>,
    pub weights: Vec<f64>,
    /// One chain order per delay, or `None` for the direct solver.
    pub orders: Option<Vec<usize>>,
}

impl SystemSpec {
    /// Consumes the system keys of `map`, filling in defaults.
    pub fn from_map(map: &mut ConfigMap) -> Result<Self> {
        let system = map.take("system").unwrap_or_else(|| "mackey-glass".to_string());
        let model = match system.as_str() {
            "mackey-glass" | "mackey_glass" | "mg" => {
                let d = MackeyGlassParams::default();
                let p = MackeyGlassParams {
                    alpha: map.take_parsed("alpha")?.unwrap_or(d.alpha),
                    beta: map.take_parsed("beta")?.unwrap_or(d.beta),
                    gamma: map.take_parsed("gamma")?.unwrap_or(d.gamma),
                };
                p.validate()?;
                ModelSpec::MackeyGlass(p)
            }
            "linear" => ModelSpec::Linear(LinearDelayParams {
                a: map.take_parsed("a")?.unwrap_or(0.4),
                b: map.take_parsed("b")?.unwrap_or(0.1),
                c: map.take_parsed("c")?.unwrap_or(0.0),
            }),
            other => return Err(Error::Config(format!("unknown system '{other}'"))),
        };

        let single: Option<f64> = map.take_parsed("T")?;
        let list: Option<Vec<f64>> = map.take_list("delays")?;
        let delays = match (single, list) {
            (Some(_), Some(_)) => return Err(Error::Config("give either 'T' or 'delays', not both".into())),
            (Some(t), None) => vec![t],
            (None, Some(l)) => l,
            (None, None) => return Err(Error::Config("missing delay: set 'T' or 'delays'".into())),
        };
        let weights = match map.take_list::<f64>("weights")? {
            Some(w) => w,
            None if delays.len() == 1 => vec![1.0],
            None => return Err(Error::Config("multi-delay systems need 'weights'".into())),
        };
        if weights.len() != delays.len() {
            return Err(Error::Config(format!(
                "{} delays but {} weights",
                delays.len(),
                weights.len()
            )));
        }

        let orders = match map.take("N") {
            None => Some(vec![500; delays.len()]),
            Some(v) if v.eq_ignore_ascii_case("dde") || v.eq_ignore_ascii_case("inf") => None,
            Some(v) => {
                let mut tmp = ConfigMap::new();
                tmp.set("N", v);
                let o: Vec<usize> = tmp.take_list("N")?.unwrap_or_default();
                if o.len() != delays.len() {
                    return Err(Error::Config(format!("{} delays but {} orders", delays.len(), o.len())));
                }
                if let Some(&bad) = o.iter().find(|&&n| n == 0) {
                    return Err(Error::InvalidOrder(bad));
                }
                Some(o)
            }
        };
        if orders.is_none() && delays.len() != 1 {
            return Err(Error::Config("the direct solver handles single-delay systems only".into()));
        }
        let spec = Self {
            model,
            delays,
            weights,
            orders,
        };
        spec.delay_system()?;
        Ok(spec)
    }

    pub fn delay_system(&self) -> Result<DelaySystem> {
        let delays = self
            .delays
            .iter()
            .zip(&self.weights)
            .map(|(&mean, &weight)| Delay { mean, weight })
            .collect();
        DelaySystem::new(self.model.model(), delays, Coupling::Weighted)
    }

    /// Chain realization, or `None` for the direct solver.
    pub fn chain(&self) -> Result<Option<ChainSystem>> {
        match &self.orders {
            None => Ok(None),
            Some(o) => Ok(Some(build_multi_chain(&self.delay_system()?, o)?)),
        }
    }

    pub fn is_single_delay(&self) -> bool {
        self.delays.len() == 1
    }

    /// Key-value pairs that reproduce this definition.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![("system".to_string(), self.model.name().to_string())];
        match self.model {
            ModelSpec::MackeyGlass(p) => {
                out.push(("alpha".into(), p.alpha.to_string()));
                out.push(("beta".into(), p.beta.to_string()));
                out.push(("gamma".into(), p.gamma.to_string()));
            }
            ModelSpec::Linear(p) => {
                out.push(("a".into(), p.a.to_string()));
                out.push(("b".into(), p.b.to_string()));
                out.push(("c".into(), p.c.to_string()));
            }
        }
        let join = |v: &[String]| v.join(", ");
        if self.is_single_delay() {
            out.push(("T".into(), self.delays[0].to_string()));
        } else {
            out.push(("delays".into(), join(&self.delays.iter().map(f64::to_string).collect::<Vec<_>>())));
            out.push(("weights".into(), join(&self.weights.iter().map(f64::to_string).collect::<Vec<_>>())));
        }
        out.push((
            "N".into(),
            match &self.orders {
                None => "dde".to_string(),
                Some(o) => join(&o.iter().map(usize::to_string).collect::<Vec<_>>()),
            },
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_lists() {
        let text = "# header\nsystem = linear\na = 0.5 # trailing\n\ndelays = 10, 20\nweights = 0.5,0.5\nN = 100, 200\n";
        let mut map = ConfigMap::parse(text).unwrap();
        let spec = SystemSpec::from_map(&mut map).unwrap();
        assert!(map.is_empty());
        assert_eq!(spec.delays, vec![10.0, 20.0]);
        assert_eq!(spec.orders, Some(vec![100, 200]));
        assert_eq!(spec.model, ModelSpec::Linear(LinearDelayParams { a: 0.5, b: 0.1, c: 0.0 }));
        assert_eq!(spec.chain().unwrap().unwrap().dimension(), 301);
    }

    #[test]
    fn defaults_to_mackey_glass_chain() {
        let mut map = ConfigMap::parse("T = 17.5").unwrap();
        let spec = SystemSpec::from_map(&mut map).unwrap();
        assert_eq!(spec.model, ModelSpec::MackeyGlass(MackeyGlassParams::default()));
        assert_eq!(spec.orders, Some(vec![500]));
    }

    #[test]
    fn dde_solver_is_single_delay_only() {
        let mut map = ConfigMap::parse("T = 14\nN = dde").unwrap();
        assert_eq!(SystemSpec::from_map(&mut map).unwrap().orders, None);
        let mut map = ConfigMap::parse("delays = 1, 2\nweights = 0.5, 0.5\nN = dde").unwrap();
        assert!(SystemSpec::from_map(&mut map).is_err());
    }

    #[test]
    fn rejects_malformed_input() {
        assert!(ConfigMap::parse("T 17").is_err());
        assert!(ConfigMap::parse("T = 1\nT = 2").is_err());
        assert!(SystemSpec::from_map(&mut ConfigMap::parse("T = abc").unwrap()).is_err());
        assert!(SystemSpec::from_map(&mut ConfigMap::parse("system = lorenz\nT = 1").unwrap()).is_err());
        assert!(SystemSpec::from_map(&mut ConfigMap::parse("N = 10").unwrap()).is_err());
        assert!(SystemSpec::from_map(&mut ConfigMap::parse("T = 1\nN = 0").unwrap()).is_err());
        assert!(SystemSpec::from_map(&mut ConfigMap::parse("delays = 1, 2\nweights = 0.7, 0.7").unwrap()).is_err());
    }

    #[test]
    fn leftover_keys_are_reported() {
        let mut map = ConfigMap::parse("T = 1\nbogus = 3").unwrap();
        SystemSpec::from_map(&mut map).unwrap();
        let err = map.reject_unknown().unwrap_err();
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn pairs_round_trip() {
        let mut map = ConfigMap::parse("system = mackey-glass\ngamma = 8\nT = 14\nN = dde").unwrap();
        let spec = SystemSpec::from_map(&mut map).unwrap();
        let mut again = ConfigMap::new();
        for (k, v) in spec.to_pairs() {
            again.set(k, v);
        }
        assert_eq!(SystemSpec::from_map(&mut again).unwrap(), spec);
    }
}
