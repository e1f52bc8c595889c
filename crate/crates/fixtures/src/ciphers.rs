//! Reference ciphers for building planted ciphertexts and for replaying
//! logged operations.
//!
//! AES, DES and 3DES come from the RustCrypto block cipher crates, RSA key
//! generation from the `rsa` crate. RC4 is implemented here. RSA encryption
//! is textbook `m^e mod n`, which is what `RSA/ECB/NoPadding` does.

use aes::cipher::block_padding::Pkcs7;
use aes::cipher::{BlockDecryptMut, BlockEncryptMut, KeyInit, KeyIvInit};
use aes_gcm::aead::consts::U12;
use aes_gcm::aead::Aead;
use aes_gcm::{AesGcm, Nonce};
use rand::RngCore;
use rsa::pkcs1::{DecodeRsaPublicKey, EncodeRsaPublicKey};
use rsa::traits::{PrivateKeyParts, PublicKeyParts};
use rsa::{BigUint, RsaPrivateKey, RsaPublicKey};

use crate::error::{FixtureError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Family {
    Aes,
    Des,
    TripleDes,
    Rc4,
    Rsa,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Mode {
    Cbc,
    Ecb,
    Gcm,
    /// RC4, and RSA without padding.
    None,
}

/// One supported transformation with its key size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CipherSpec {
    /// Transformation string as logged, e.g. `AES/CBC/PKCS5Padding`.
    pub transformation: String,
    pub family: Family,
    pub mode: Mode,
    pub key_bits: u32,
}

impl CipherSpec {
    /// Accepts the JCA names the generator can produce. Anything else is
    /// an [`FixtureError::UnsupportedCipher`] naming the request.
    pub fn parse(transformation: &str, key_bits: Option<u32>) -> Result<Self> {
        let unsupported = || FixtureError::UnsupportedCipher(transformation.to_string());
        let parts: Vec<String> = transformation.split('/').map(|p| p.trim().to_ascii_uppercase()).collect();
        let parts: Vec<&str> = parts.iter().map(String::as_str).collect();
        let (family, mode) = match parts.as_slice() {
            ["AES", "CBC", "PKCS5PADDING" | "PKCS7PADDING"] => (Family::Aes, Mode::Cbc),
            ["AES", "ECB", "PKCS5PADDING" | "PKCS7PADDING"] => (Family::Aes, Mode::Ecb),
            ["AES", "GCM", "NOPADDING"] => (Family::Aes, Mode::Gcm),
            ["DES", "CBC", "PKCS5PADDING"] => (Family::Des, Mode::Cbc),
            ["DES", "ECB", "PKCS5PADDING"] => (Family::Des, Mode::Ecb),
            ["DESEDE", "CBC", "PKCS5PADDING"] => (Family::TripleDes, Mode::Cbc),
            ["DESEDE", "ECB", "PKCS5PADDING"] => (Family::TripleDes, Mode::Ecb),
            ["RC4" | "ARCFOUR"] => (Family::Rc4, Mode::None),
            ["RSA", "ECB", "NOPADDING"] => (Family::Rsa, Mode::None),
            _ => return Err(unsupported()),
        };
        let key_bits = match (family, key_bits) {
            (Family::Aes, None) => 128,
            (Family::Aes, Some(b @ (128 | 192 | 256))) => b,
            (Family::Des, None | Some(64)) => 64,
            (Family::TripleDes, None | Some(192)) => 192,
            (Family::Rc4, None) => 128,
            (Family::Rc4, Some(b)) if (40..=2048).contains(&b) && b % 8 == 0 => b,
            (Family::Rsa, None) => 2048,
            (Family::Rsa, Some(b)) if (384..=4096).contains(&b) && b % 64 == 0 => b,
            (_, Some(b)) => {
                return Err(FixtureError::InvalidManifest(format!("{transformation} does not take a {b}-bit key")))
            }
        };
        Ok(CipherSpec { transformation: transformation.to_string(), family, mode, key_bits })
    }

    pub fn block_size(&self) -> Option<usize> {
        match self.family {
            Family::Aes => Some(16),
            Family::Des | Family::TripleDes => Some(8),
            Family::Rc4 | Family::Rsa => None,
        }
    }

    pub fn iv_len(&self) -> usize {
        match self.mode {
            Mode::Cbc => self.block_size().unwrap_or(0),
            Mode::Gcm => 12,
            Mode::Ecb | Mode::None => 0,
        }
    }

    /// Short label as used in reports: `AES/CBC`, `3DES/ECB`, `RC4`, `RSA-512`.
    pub fn label(&self) -> String {
        let name = match self.family {
            Family::Aes => "AES",
            Family::Des => "DES",
            Family::TripleDes => "3DES",
            Family::Rc4 => return "RC4".into(),
            Family::Rsa => return format!("RSA-{}", self.key_bits),
        };
        let mode = match self.mode {
            Mode::Cbc => "CBC",
            Mode::Ecb => "ECB",
            Mode::Gcm => "GCM",
            Mode::None => return name.into(),
        };
        format!("{name}/{mode}")
    }

    /// Weakness kinds the weak-algorithm list assigns to this spec.
    pub fn weaknesses(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        match self.family {
            Family::Des => out.push("weak_cipher_des"),
            Family::TripleDes => out.push("weak_cipher_3des"),
            Family::Rc4 => out.push("weak_cipher_rc4"),
            Family::Rsa => match self.key_bits {
                0..=384 => out.push("weak_rsa_384"),
                385..=512 => out.push("weak_rsa_512"),
                513..=768 => out.push("weak_rsa_768"),
                769..=1024 => out.push("rsa_1024"),
                _ => {}
            },
            Family::Aes => {}
        }
        if self.mode == Mode::Ecb {
            out.push("weak_mode_ecb");
        }
        out
    }

    /// Largest plaintext a single operation accepts, if bounded.
    pub fn max_plaintext(&self) -> Option<usize> {
        (self.family == Family::Rsa).then(|| self.key_bits as usize / 8 - 1)
    }
}

/// Key material for one operation. `logged` is what the hook records: the
/// raw secret key, or the PKCS#1 DER public key for RSA.
#[derive(Debug, Clone)]
pub struct KeyMaterial {
    pub logged: Vec<u8>,
    pub rsa_private: Option<RsaPrivateKey>,
}

pub fn generate_key<R: rand::CryptoRng + RngCore>(spec: &CipherSpec, rng: &mut R) -> Result<KeyMaterial> {
    if spec.family == Family::Rsa {
        let private = RsaPrivateKey::new(rng, spec.key_bits as usize).map_err(|e| FixtureError::Cipher {
            cipher: spec.transformation.clone(),
            reason: e.to_string(),
        })?;
        let der = RsaPublicKey::from(&private).to_pkcs1_der().map_err(|e| FixtureError::Cipher {
            cipher: spec.transformation.clone(),
            reason: e.to_string(),
        })?;
        return Ok(KeyMaterial { logged: der.as_bytes().to_vec(), rsa_private: Some(private) });
    }
    let mut key = vec![0u8; spec.key_bits as usize / 8];
    rng.fill_bytes(&mut key);
    Ok(KeyMaterial { logged: key, rsa_private: None })
}

/// Checks a caller-supplied key against the cipher's key size.
pub fn check_key(spec: &CipherSpec, key: &[u8]) -> Result<()> {
    let want = spec.key_bits as usize / 8;
    if spec.family != Family::Rsa && key.len() != want {
        return Err(FixtureError::InvalidManifest(format!(
            "{} needs a {}-byte key, got {}",
            spec.transformation,
            want,
            key.len()
        )));
    }
    Ok(())
}

fn failure(spec: &CipherSpec, reason: impl ToString) -> FixtureError {
    FixtureError::Cipher { cipher: spec.transformation.clone(), reason: reason.to_string() }
}

macro_rules! block_mode {
    ($spec:expr, $key:expr, $iv:expr, $data:expr, $cipher:ty, $encrypt:expr) => {{
        match ($spec.mode, $encrypt) {
            (Mode::Cbc, true) => cbc::Encryptor::<$cipher>::new_from_slices($key, $iv)
                .map_err(|e| failure($spec, e))?
                .encrypt_padded_vec_mut::<Pkcs7>($data),
            (Mode::Cbc, false) => cbc::Decryptor::<$cipher>::new_from_slices($key, $iv)
                .map_err(|e| failure($spec, e))?
                .decrypt_padded_vec_mut::<Pkcs7>($data)
                .map_err(|e| failure($spec, e))?,
            (Mode::Ecb, true) => ecb::Encryptor::<$cipher>::new_from_slice($key)
                .map_err(|e| failure($spec, e))?
                .encrypt_padded_vec_mut::<Pkcs7>($data),
            (Mode::Ecb, false) => ecb::Decryptor::<$cipher>::new_from_slice($key)
                .map_err(|e| failure($spec, e))?
                .decrypt_padded_vec_mut::<Pkcs7>($data)
                .map_err(|e| failure($spec, e))?,
            _ => unreachable!("block modes only"),
        }
    }};
}

fn gcm<C>(spec: &CipherSpec, key: &[u8], iv: &[u8], data: &[u8], encrypt: bool) -> Result<Vec<u8>>
where
    AesGcm<C, U12>: KeyInit + Aead,
{
    if iv.len() != 12 {
        return Err(failure(spec, format!("GCM nonce must be 12 bytes, got {}", iv.len())));
    }
    let c = <AesGcm<C, U12> as KeyInit>::new_from_slice(key).map_err(|e| failure(spec, e))?;
    let nonce = Nonce::from_slice(iv);
    if encrypt {
        c.encrypt(nonce, data).map_err(|e| failure(spec, e))
    } else {
        c.decrypt(nonce, data).map_err(|e| failure(spec, e))
    }
}

fn symmetric(spec: &CipherSpec, key: &[u8], iv: &[u8], data: &[u8], encrypt: bool) -> Result<Vec<u8>> {
    Ok(match (spec.family, spec.mode, key.len()) {
        (Family::Aes, Mode::Gcm, 16) => gcm::<aes::Aes128>(spec, key, iv, data, encrypt)?,
        (Family::Aes, Mode::Gcm, 24) => gcm::<aes::Aes192>(spec, key, iv, data, encrypt)?,
        (Family::Aes, Mode::Gcm, 32) => gcm::<aes::Aes256>(spec, key, iv, data, encrypt)?,
        (Family::Aes, _, 16) => block_mode!(spec, key, iv, data, aes::Aes128, encrypt),
        (Family::Aes, _, 24) => block_mode!(spec, key, iv, data, aes::Aes192, encrypt),
        (Family::Aes, _, 32) => block_mode!(spec, key, iv, data, aes::Aes256, encrypt),
        (Family::Des, _, 8) => block_mode!(spec, key, iv, data, des::Des, encrypt),
        (Family::TripleDes, _, 24) => block_mode!(spec, key, iv, data, des::TdesEde3, encrypt),
        (Family::Rc4, _, _) => Rc4::new(key).map_err(|e| failure(spec, e))?.apply(data),
        (_, _, n) => return Err(failure(spec, format!("unexpected {n}-byte key"))),
    })
}

/// Encrypts with the logged key and IV.
pub fn encrypt(spec: &CipherSpec, key: &[u8], iv: &[u8], plaintext: &[u8]) -> Result<Vec<u8>> {
    if spec.family == Family::Rsa {
        let public = RsaPublicKey::from_pkcs1_der(key).map_err(|e| failure(spec, e))?;
        return rsa_raw(spec, plaintext, public.e(), public.n());
    }
    symmetric(spec, key, iv, plaintext, true)
}

/// Inverse of [`encrypt`]. RSA needs the private half, which is never
/// logged.
pub fn decrypt(spec: &CipherSpec, key: &KeyMaterial, iv: &[u8], ciphertext: &[u8]) -> Result<Vec<u8>> {
    if spec.family == Family::Rsa {
        let private = key.rsa_private.as_ref().ok_or_else(|| failure(spec, "private key not available"))?;
        let full = rsa_raw(spec, ciphertext, private.d(), private.n())?;
        // NoPadding keeps leading zeros; callers know the plaintext length
        let start = full.iter().position(|&b| b != 0).unwrap_or(full.len());
        return Ok(full[start..].to_vec());
    }
    symmetric(spec, &key.logged, iv, ciphertext, false)
}

fn rsa_raw(spec: &CipherSpec, input: &[u8], exp: &BigUint, n: &BigUint) -> Result<Vec<u8>> {
    let k = (n.bits() + 7) / 8;
    let m = BigUint::from_bytes_be(input);
    if &m >= n {
        return Err(failure(spec, format!("{}-byte input does not fit the modulus", input.len())));
    }
    let c = m.modpow(exp, n).to_bytes_be();
    let mut out = vec![0u8; k - c.len()];
    out.extend_from_slice(&c);
    Ok(out)
}

/// RC4 keystream generator.
#[derive(Clone)]
pub struct Rc4 {
    s: [u8; 256],
    i: u8,
    j: u8,
}

impl Rc4 {
    pub fn new(key: &[u8]) -> std::result::Result<Self, &'static str> {
        if key.is_empty() || key.len() > 256 {
            return Err("RC4 key must be 1 to 256 bytes");
        }
        let mut s = [0u8; 256];
        for (i, v) in s.iter_mut().enumerate() {
            *v = i as u8;
        }
        let mut j = 0u8;
        for i in 0..256 {
            j = j.wrapping_add(s[i]).wrapping_add(key[i % key.len()]);
            s.swap(i, j as usize);
        }
        Ok(Rc4 { s, i: 0, j: 0 })
    }

    pub fn apply(&mut self, data: &[u8]) -> Vec<u8> {
        data.iter()
            .map(|&b| {
                self.i = self.i.wrapping_add(1);
                self.j = self.j.wrapping_add(self.s[self.i as usize]);
                self.s.swap(self.i as usize, self.j as usize);
                let k = self.s[self.s[self.i as usize].wrapping_add(self.s[self.j as usize]) as usize];
                b ^ k
            })
            .collect()
    }
}

/// Cut points for feeding `len` plaintext bytes through `parts` update
/// calls followed by a final call. Block ciphers are cut on block
/// boundaries so each update emits exactly the ciphertext of its input;
/// GCM and RSA are never cut.
pub fn split_points<R: RngCore>(spec: &CipherSpec, len: usize, parts: usize, rng: &mut R) -> Vec<usize> {
    if parts == 0 || matches!(spec.mode, Mode::Gcm) || spec.family == Family::Rsa {
        return Vec::new();
    }
    let unit = spec.block_size().unwrap_or(1);
    // the final call keeps at least one byte (stream) or the padding block
    let slots = if unit == 1 { len.saturating_sub(1) } else { len / unit };
    if slots == 0 {
        return Vec::new();
    }
    let mut cuts: Vec<usize> = (0..parts).map(|_| 1 + (rng.next_u32() as usize % slots)).map(|c| c * unit).collect();
    cuts.sort_unstable();
    cuts.dedup();
    cuts.retain(|&c| c > 0 && c <= len && (unit > 1 || c < len));
    cuts
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rc4_rfc6229_40_bit_key() {
        let mut rc4 = Rc4::new(&[0x01, 0x02, 0x03, 0x04, 0x05]).unwrap();
        let ks = rc4.apply(&[0u8; 32]);
        assert_eq!(hex::encode(&ks[..16]), "b2396305f03dc027ccc3524a0a1118a8");
        assert_eq!(hex::encode(&ks[16..]), "6982944f18fc82d589c403a47a0d0919");
    }

    #[test]
    fn rc4_rfc6229_128_bit_key() {
        let key: Vec<u8> = (1..=16).collect();
        let ks = Rc4::new(&key).unwrap().apply(&[0u8; 16]);
        assert_eq!(hex::encode(ks), "9ac7cc9a609d1ef7b2932899cde41b97");
    }

    #[test]
    fn unsupported_names_the_cipher() {
        let err = CipherSpec::parse("Blowfish/CBC/PKCS5Padding", None).unwrap_err();
        assert!(err.to_string().contains("Blowfish/CBC/PKCS5Padding"));
    }

    #[test]
    fn aes_cbc_known_vector() {
        // SP 800-38A CBC-AES128 vector, first block
        let spec = CipherSpec::parse("AES/CBC/PKCS5Padding", Some(128)).unwrap();
        let key = hex::decode("2b7e151628aed2a6abf7158809cf4f3c").unwrap();
        let iv = hex::decode("000102030405060708090a0b0c0d0e0f").unwrap();
        let pt = hex::decode("6bc1bee22e409f96e93d7e117393172a").unwrap();
        let ct = encrypt(&spec, &key, &iv, &pt).unwrap();
        assert_eq!(hex::encode(&ct[..16]), "7649abac8119b246cee98e9b12e9197d");
        assert_eq!(ct.len(), 32);
        let km = KeyMaterial { logged: key, rsa_private: None };
        assert_eq!(decrypt(&spec, &km, &iv, &ct).unwrap(), pt);
    }

    #[test]
    fn every_spec_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let names = [
            ("AES/CBC/PKCS5Padding", Some(256)),
            ("AES/ECB/PKCS5Padding", None),
            ("AES/GCM/NoPadding", Some(128)),
            ("DES/CBC/PKCS5Padding", None),
            ("DES/ECB/PKCS5Padding", None),
            ("DESede/CBC/PKCS5Padding", None),
            ("DESede/ECB/PKCS5Padding", None),
            ("RC4", None),
            ("RSA/ECB/NoPadding", Some(512)),
        ];
        for (name, bits) in names {
            let spec = CipherSpec::parse(name, bits).unwrap();
            let key = generate_key(&spec, &mut rng).unwrap();
            let mut iv = vec![0u8; spec.iv_len()];
            rng.fill_bytes(&mut iv);
            let pt = b"{\"v\":\"356938035643809\"}".to_vec();
            let ct = encrypt(&spec, &key.logged, &iv, &pt).unwrap();
            assert_ne!(ct, pt, "{name}");
            assert_eq!(decrypt(&spec, &key, &iv, &ct).unwrap(), pt, "{name}");
        }
    }

    #[test]
    fn labels_and_weaknesses() {
        let s = CipherSpec::parse("DES/ECB/PKCS5Padding", None).unwrap();
        assert_eq!(s.label(), "DES/ECB");
        assert_eq!(s.weaknesses(), ["weak_cipher_des", "weak_mode_ecb"]);
        let s = CipherSpec::parse("RSA/ECB/NoPadding", Some(768)).unwrap();
        assert_eq!(s.label(), "RSA-768");
        assert_eq!(s.weaknesses(), ["weak_rsa_768"]);
        assert!(CipherSpec::parse("AES/GCM/NoPadding", None).unwrap().weaknesses().is_empty());
        assert!(CipherSpec::parse("RSA/ECB/NoPadding", Some(2048)).unwrap().weaknesses().is_empty());
    }

    #[test]
    fn split_points_respect_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = CipherSpec::parse("AES/CBC/PKCS5Padding", None).unwrap();
        for len in 0..100 {
            for c in split_points(&spec, len, 3, &mut rng) {
                assert_eq!(c % 16, 0);
                assert!(c <= len);
            }
        }
        let rc4 = CipherSpec::parse("RC4", None).unwrap();
        for len in 0..50 {
            assert!(split_points(&rc4, len, 3, &mut rng).iter().all(|&c| c > 0 && c < len));
        }
    }
}
