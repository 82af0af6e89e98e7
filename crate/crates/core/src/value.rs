use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{DecodeError, Decoder, Encoder};

const TAG_NULL: u8 = 0;
const TAG_BOOL: u8 = 1;
const TAG_INT: u8 = 2;
const TAG_STR: u8 = 3;
const TAG_BYTES: u8 = 4;

/// Scalar stored under a state key, passed as a contract argument, or
/// produced by a policy expression.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Str(String),
    Bytes(Vec<u8>),
}

impl Value {
    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn type_name(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "bool",
            Value::Int(_) => "int",
            Value::Str(_) => "string",
            Value::Bytes(_) => "bytes",
        }
    }

    pub fn encode_into(&self, enc: &mut Encoder) {
        match self {
            Value::Null => {
                enc.u8(TAG_NULL);
            }
            Value::Bool(b) => {
                enc.u8(TAG_BOOL).u8(*b as u8);
            }
            Value::Int(v) => {
                enc.u8(TAG_INT).i64(*v);
            }
            Value::Str(s) => {
                enc.u8(TAG_STR).str(s);
            }
            Value::Bytes(b) => {
                enc.u8(TAG_BYTES).bytes(b);
            }
        }
    }

    /// Canonical byte form: tag, then the payload (fixed width for bool and
    /// int, length-prefixed for strings and bytes).
    pub fn canonical(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        self.encode_into(&mut enc);
        enc.finish()
    }

    pub fn decode_from(dec: &mut Decoder<'_>) -> Result<Self, DecodeError> {
        let offset = dec.position();
        match dec.u8()? {
            TAG_NULL => Ok(Value::Null),
            TAG_BOOL => match dec.u8()? {
                0 => Ok(Value::Bool(false)),
                1 => Ok(Value::Bool(true)),
                tag => Err(DecodeError::BadTag { tag, offset: offset + 1 }),
            },
            TAG_INT => Ok(Value::Int(dec.i64()?)),
            TAG_STR => Ok(Value::Str(dec.string()?)),
            TAG_BYTES => Ok(Value::Bytes(dec.bytes()?.to_vec())),
            tag => Err(DecodeError::BadTag { tag, offset }),
        }
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut dec = Decoder::new(bytes);
        let v = Self::decode_from(&mut dec)?;
        dec.finish()?;
        Ok(v)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => write!(f, "null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(v) => write!(f, "{v}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Bytes(b) => write!(f, "0x{}", hex::encode(b)),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v)
    }
}

/// Encode a list of values as `count(4) ‖ canonical*`.
pub fn encode_values(values: &[Value]) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.u32(values.len() as u32);
    for v in values {
        v.encode_into(&mut enc);
    }
    enc.finish()
}

pub fn decode_values(bytes: &[u8]) -> Result<Vec<Value>, DecodeError> {
    let mut dec = Decoder::new(bytes);
    let n = dec.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        out.push(Value::decode_from(&mut dec)?);
    }
    dec.finish()?;
    Ok(out)
}
