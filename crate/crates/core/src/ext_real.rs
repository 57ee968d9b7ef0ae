//! Serde helpers for extended reals.
//!
//! JSON has no infinities, so `-inf` and `inf` travel as the strings `"-inf"`
//! and `"inf"`; finite values stay numbers.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct ExtReal(pub f64);

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0 == f64::NEG_INFINITY {
            s.serialize_str("-inf")
        } else if self.0 == f64::INFINITY {
            s.serialize_str("inf")
        } else if self.0.is_nan() {
            Err(serde::ser::Error::custom("NaN is not an extended real"))
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(x) => Ok(ExtReal(x)),
            Raw::Str(s) if s == "-inf" => Ok(ExtReal(f64::NEG_INFINITY)),
            Raw::Str(s) if s == "inf" => Ok(ExtReal(f64::INFINITY)),
            Raw::Str(s) => Err(de::Error::custom(format!("invalid extended real {s:?}"))),
        }
    }
}

pub(crate) mod scalar {
    use super::*;

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        ExtReal(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        ExtReal::deserialize(d).map(|x| x.0)
    }
}

pub(crate) mod trace {
    use super::*;

    pub fn serialize<S: Serializer>(xs: &[(u64, f64)], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(xs.iter().map(|&(n, b)| (n, ExtReal(b))))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(u64, f64)>, D::Error> {
        let raw = Vec::<(u64, ExtReal)>::deserialize(d)?;
        Ok(raw.into_iter().map(|(n, b)| (n, b.0)).collect())
    }
}
