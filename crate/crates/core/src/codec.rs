//! Base64 encoding of numeric arrays (little-endian) for serde fields.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{de::Error as _, Deserialize, Deserializer, Serializer};

macro_rules! b64_array {
    ($name:ident, $t:ty, $width:expr) => {
        pub mod $name {
            use super::*;

            pub fn serialize<S: Serializer>(v: &[$t], s: S) -> Result<S::Ok, S::Error> {
                let mut bytes = Vec::with_capacity(v.len() * $width);
                for x in v {
                    bytes.extend_from_slice(&x.to_le_bytes());
                }
                s.serialize_str(&STANDARD.encode(bytes))
            }

            pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<$t>, D::Error> {
                let text = String::deserialize(d)?;
                let bytes = STANDARD.decode(text.as_bytes()).map_err(D::Error::custom)?;
                if bytes.len() % $width != 0 {
                    return Err(D::Error::custom("array byte length not a multiple of element width"));
                }
                Ok(bytes
                    .chunks_exact($width)
                    .map(|c| <$t>::from_le_bytes(c.try_into().expect("chunk width")))
                    .collect())
            }
        }
    };
}

b64_array!(f64s, f64, 8);
b64_array!(i32s, i32, 4);
b64_array!(u32s, u32, 4);
