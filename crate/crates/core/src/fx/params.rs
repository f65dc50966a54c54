//! Parameter schemas and the unconstrained-to-bounded mapping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Linear,
    Logarithmic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    pub scale: Scale,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, unit: &str, min: f64, max: f64, scale: Scale) -> Self {
        assert!(min < max, "empty range");
        assert!(scale == Scale::Linear || min > 0.0, "log scale needs min > 0");
        ParamSpec {
            name: name.into(),
            unit: unit.to_string(),
            min,
            max,
            scale,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    /// Bounded value for raw optimizer coordinate `w`.
    pub fn map(&self, w: f64) -> f64 {
        let s = sigmoid(w);
        match self.scale {
            Scale::Linear => self.min + s * (self.max - self.min),
            Scale::Logarithmic => {
                let (lo, hi) = (self.min.ln(), self.max.ln());
                (lo + s * (hi - lo)).exp()
            }
        }
    }

    /// d map(w) / d w.
    pub fn map_derivative(&self, w: f64) -> f64 {
        let s = sigmoid(w);
        let ds = s * (1.0 - s);
        match self.scale {
            Scale::Linear => ds * (self.max - self.min),
            Scale::Logarithmic => self.map(w) * ds * (self.max.ln() - self.min.ln()),
        }
    }

    /// Raw coordinate that maps to `value`; `value` must lie strictly inside the range.
    pub fn unmap(&self, value: f64) -> f64 {
        let s = match self.scale {
            Scale::Linear => (value - self.min) / (self.max - self.min),
            Scale::Logarithmic => (value.ln() - self.min.ln()) / (self.max.ln() - self.min.ln()),
        };
        (s / (1.0 - s)).ln()
    }
}

pub(crate) fn sigmoid(w: f64) -> f64 {
    if w >= 0.0 {
        1.0 / (1.0 + (-w).exp())
    } else {
        let e = w.exp();
        e / (1.0 + e)
    }
}

/// Unconstrained parameter vector seen by the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RawParams(Vec<f64>);

impl RawParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("raw parameters must be finite".into()));
        }
        Ok(RawParams(values))
    }

    pub fn zeros(len: usize) -> Self {
        RawParams(vec![0.0; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MappedValue {
    #[serde(flatten)]
    pub spec: ParamSpec,
    pub value: f64,
}

/// Bounded, named effect values in chain order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MappedParams {
    pub(crate) entries: Vec<MappedValue>,
}

impl MappedParams {
    /// Pairs values with specs, rejecting anything outside `[min, max]`.
    pub fn from_values(specs: &[ParamSpec], values: &[f64]) -> Result<Self> {
        if specs.len() != values.len() {
            return Err(Error::ParamLength {
                expected: specs.len(),
                got: values.len(),
            });
        }
        let mut entries = Vec::with_capacity(specs.len());
        for (spec, &value) in specs.iter().zip(values) {
            if !value.is_finite() || !spec.contains(value) {
                return Err(Error::Schema {
                    field: spec.name.clone(),
                    reason: format!("{value} outside [{}, {}]", spec.min, spec.max),
                });
            }
            entries.push(MappedValue {
                spec: spec.clone(),
                value,
            });
        }
        Ok(MappedParams { entries })
    }

    pub fn entries(&self) -> &[MappedValue] {
        &self.entries
    }

    pub fn values(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| e.spec.name == name)
            .map(|e| e.value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Replace the value of the named parameter (first match). Used for
    /// hand-editing; range is checked.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let entry = self
            .entries
            .iter_mut()
            .find(|e| e.spec.name == name)
            .ok_or_else(|| Error::Schema {
                field: name.to_string(),
                reason: "unknown parameter".into(),
            })?;
        if !value.is_finite() || !entry.spec.contains(value) {
            return Err(Error::Schema {
                field: name.to_string(),
                reason: format!("{value} outside [{}, {}]", entry.spec.min, entry.spec.max),
            });
        }
        entry.value = value;
        Ok(())
    }

    pub(crate) fn slice(&self, start: usize, len: usize) -> &[MappedValue] {
        &self.entries[start..start + len]
    }
}

pub fn map_params(raw: &RawParams, specs: &[ParamSpec]) -> Result<MappedParams> {
    if raw.len() != specs.len() {
        return Err(Error::ParamLength {
            expected: specs.len(),
            got: raw.len(),
        });
    }
    Ok(MappedParams {
        entries: specs
            .iter()
            .zip(raw.as_slice())
            .map(|(spec, &w)| MappedValue {
                spec: spec.clone(),
                value: spec.map(w),
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn gain() -> ParamSpec {
        ParamSpec::new("g", "dB", -18.0, 18.0, Scale::Linear)
    }

    fn freq() -> ParamSpec {
        ParamSpec::new("f", "Hz", 20.0, 20000.0, Scale::Logarithmic)
    }

    #[test]
    fn midpoints() {
        assert_eq!(gain().map(0.0), 0.0);
        assert!((freq().map(0.0) - (20.0f64 * 20000.0).sqrt()).abs() < 1e-9);
        assert!((freq().map(0.0) - 632.455_532).abs() < 1e-5);
    }

    #[test]
    fn saturation() {
        let unit = ParamSpec::new("u", "ratio", 0.0, 1.0, Scale::Linear);
        assert!((unit.map(10.0) - 1.0).abs() < 1e-4);
        assert!(unit.map(-10.0) < 1e-4);
    }

    #[test]
    fn length_mismatch() {
        let raw = RawParams::zeros(3);
        assert!(matches!(
            map_params(&raw, &[gain(), freq()]),
            Err(Error::ParamLength { expected: 2, got: 3 })
        ));
    }

    #[test]
    fn out_of_range_value_names_field() {
        let err = MappedParams::from_values(&[gain()], &[19.0]).unwrap_err();
        match err {
            Error::Schema { field, .. } => assert_eq!(field, "g"),
            e => panic!("{e}"),
        }
    }

    proptest! {
        #[test]
        fn strictly_monotone_inside_open_interval(a in -25.0f64..25.0, delta in 1e-3f64..5.0) {
            for spec in [gain(), freq()] {
                let lo = spec.map(a);
                let hi = spec.map(a + delta);
                prop_assert!(hi > lo);
                prop_assert!(lo > spec.min && hi < spec.max);
            }
        }

        #[test]
        fn derivative_matches_differences(w in -8.0f64..8.0) {
            for spec in [gain(), freq()] {
                let h = 1e-5;
                let fd = (spec.map(w + h) - spec.map(w - h)) / (2.0 * h);
                let an = spec.map_derivative(w);
                prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1.0));
            }
        }

        #[test]
        fn unmap_inverts_map(w in -12.0f64..12.0) {
            for spec in [gain(), freq()] {
                prop_assert!((spec.unmap(spec.map(w)) - w).abs() < 1e-6);
            }
        }
    }
}
