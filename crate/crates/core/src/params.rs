//! `name[:key=value,...]` identifiers used for sources and strategies.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct KeyParams {
    pub name: String,
    params: BTreeMap<String, String>,
}

impl KeyParams {
    pub fn parse(key: &str) -> Result<Self> {
        let key = key.trim();
        let (name, rest) = match key.split_once(':') {
            Some((n, r)) => (n, r),
            None => (key, ""),
        };
        if name.is_empty() {
            return Err(Error::UnknownKey(key.to_string()));
        }
        let mut params = BTreeMap::new();
        for item in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("parameter '{item}' is not key=value")))?;
            if params.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::InvalidInput(format!("parameter '{k}' given twice")));
            }
        }
        Ok(Self {
            name: name.to_string(),
            params,
        })
    }

    /// Removes and parses a numeric parameter; accepts `pi` forms like `pi/4` or `3pi/2`.
    pub fn take_f64(&mut self, key: &str) -> Result<Option<f64>> {
        self.params.remove(key).map(|v| parse_real(&v)).transpose()
    }

    pub fn take_bool(&mut self, key: &str) -> Result<Option<bool>> {
        self.params
            .remove(key)
            .map(|v| match v.as_str() {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::InvalidInput(format!("'{key}' expects a boolean, got '{v}'"))),
            })
            .transpose()
    }

    pub fn take_str(&mut self, key: &str) -> Option<String> {
        self.params.remove(key)
    }

    /// Errors on any parameter not consumed by the caller.
    pub fn finish(self) -> Result<()> {
        match self.params.keys().next() {
            Some(k) => Err(Error::InvalidInput(format!(
                "unknown parameter '{k}' for '{}'",
                self.name
            ))),
            None => Ok(()),
        }
    }
}

pub(crate) fn parse_real(s: &str) -> Result<f64> {
    let bad = || Error::InvalidInput(format!("cannot parse '{s}' as a number"));
    let t = s.trim().to_ascii_lowercase().replace(['π'], "pi");
    if let Some(idx) = t.find("pi") {
        let (coef, rest) = t.split_at(idx);
        let coef = coef.trim_end_matches('*');
        let c = if coef.is_empty() {
            1.0
        } else if coef == "-" {
            -1.0
        } else {
            coef.parse::<f64>().map_err(|_| bad())?
        };
        let rest = &rest[2..];
        let d = if rest.is_empty() {
            1.0
        } else {
            rest.strip_prefix('/')
                .ok_or_else(bad)?
                .parse::<f64>()
                .map_err(|_| bad())?
        };
        return Ok(c * PI / d);
    }
    t.parse::<f64>().map_err(|_| bad())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_reals() {
        let mut k = KeyParams::parse("xy-mixed:lambda=0.25, theta=pi/4").unwrap();
        assert_eq!(k.name, "xy-mixed");
        assert_eq!(k.take_f64("lambda").unwrap(), Some(0.25));
        assert!((k.take_f64("theta").unwrap().unwrap() - PI / 4.0).abs() < 1e-15);
        k.finish().unwrap();
        assert!((parse_real("3pi/2").unwrap() - 1.5 * PI).abs() < 1e-15);
        assert!((parse_real("-pi").unwrap() + PI).abs() < 1e-15);
        assert!(parse_real("pix").is_err());
        let k = KeyParams::parse("ideal-ghz:bogus=1").unwrap();
        assert!(k.finish().is_err());
    }
}
