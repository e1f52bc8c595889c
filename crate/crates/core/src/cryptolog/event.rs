use serde::{Deserialize, Serialize};

use crate::codec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Init,
    Update,
    DoFinal,
    NonsdkCall,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Encrypt,
    Decrypt,
    #[default]
    Unknown,
}

/// One hooked call on a cipher object, or one call of a non-SDK crypto
/// routine found by method name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherEvent {
    pub event_id: u64,
    /// Runtime identity of the cipher object; events sharing it belong to
    /// the same instance.
    pub object_id: String,
    pub ts: f64,
    pub method: Method,
    #[serde(default)]
    pub op_kind: OpKind,
    /// Transformation string such as `AES/CBC/PKCS5Padding`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<String>,
    #[serde(default, with = "codec::b64_opt", skip_serializing_if = "Option::is_none")]
    pub key: Option<Vec<u8>>,
    #[serde(default, with = "codec::b64_opt", skip_serializing_if = "Option::is_none")]
    pub iv: Option<Vec<u8>>,
    /// Modulus size for RSA keys when the hook could read it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_bits: Option<u32>,
    #[serde(default, with = "codec::b64_opt", skip_serializing_if = "Option::is_none")]
    pub input: Option<Vec<u8>>,
    #[serde(default, with = "codec::b64_opt", skip_serializing_if = "Option::is_none")]
    pub output: Option<Vec<u8>>,
    /// Arguments of a non-SDK call.
    #[serde(default, with = "codec::b64_list", skip_serializing_if = "Vec::is_empty")]
    pub args: Vec<Vec<u8>>,
    /// Hooked method name for non-SDK calls.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

impl CipherEvent {
    /// Checks the per-method field requirements.
    pub fn check(&self) -> Result<(), String> {
        match self.method {
            Method::Init if self.algorithm.is_none() => Err("init without algorithm".into()),
            Method::Init if self.key.is_none() => Err("init without key".into()),
            Method::Update | Method::DoFinal if self.input.is_none() && self.output.is_none() => {
                Err(format!("{:?} carries neither input nor output", self.method))
            }
            Method::NonsdkCall if self.args.is_empty() && self.output.is_none() => {
                Err("nonsdk_call carries neither args nor output".into())
            }
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_log_line() {
        let line = r#"{"event_id":3,"object_id":"0x1a2b","ts":1.5,"method":"do_final","op_kind":"encrypt","input":"aGk=","output":"AAEC"}"#;
        let e: CipherEvent = serde_json::from_str(line).unwrap();
        assert_eq!(e.method, Method::DoFinal);
        assert_eq!(e.input.as_deref(), Some(&b"hi"[..]));
        assert_eq!(e.output.as_deref(), Some(&[0u8, 1, 2][..]));
        assert!(e.check().is_ok());
        let back: CipherEvent = serde_json::from_str(&serde_json::to_string(&e).unwrap()).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn init_requires_key() {
        let line = r#"{"event_id":1,"object_id":"o","ts":0,"method":"init","algorithm":"AES"}"#;
        let e: CipherEvent = serde_json::from_str(line).unwrap();
        assert!(e.check().is_err());
    }
}
