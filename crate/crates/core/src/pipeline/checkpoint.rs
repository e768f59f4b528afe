//! Checkpoints: a binary blob of named sections plus a `key = value`
//! manifest beside it.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::config::hex;

const MAGIC: &[u8; 8] = b"BFCKPT1\n";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub seed: u64,
    pub iteration: u64,
    pub config_hash: String,
    pub loss_d: f64,
    pub loss_g: f64,
    pub sections: Vec<(String, Vec<u8>)>,
}

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint {path}: {reason}")]
    Format { path: String, reason: String },
}

pub fn encode_sections(sections: &[(String, Vec<u8>)]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&(sections.len() as u32).to_le_bytes());
    for (name, bytes) in sections {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(bytes);
    }
    out
}

pub fn decode_sections(bytes: &[u8]) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or("not a checkpoint blob")?;
    let mut take = |n: usize| -> Result<&[u8], String> {
        if rest.len() < n {
            return Err("truncated blob".into());
        }
        let (head, tail) = rest.split_at(n);
        rest = tail;
        Ok(head)
    };
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut out = Vec::new();
    for _ in 0..count {
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(n)?.to_vec()).map_err(|_| "section name is not UTF-8")?;
        let len = u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize;
        out.push((name, take(len)?.to_vec()));
    }
    if !rest.is_empty() {
        return Err("trailing bytes after last section".into());
    }
    Ok(out)
}

/// `(blob, manifest)` paths for a checkpoint given either file.
pub fn checkpoint_paths(path: &Path) -> (PathBuf, PathBuf) {
    (path.with_extension("ckpt"), path.with_extension("manifest"))
}

impl Checkpoint {
    pub fn section(&self, name: &str) -> Option<&[u8]> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, b)| b.as_slice())
    }

    pub fn manifest_text(&self, blob_name: &str, blob: &[u8]) -> String {
        format!(
            "model = {}\nseed = {}\niteration = {}\nconfig_hash = {}\nloss_d = {}\nloss_g = {}\nblob = {}\nblob_sha256 = {}\n",
            self.model,
            self.seed,
            self.iteration,
            self.config_hash,
            self.loss_d,
            self.loss_g,
            blob_name,
            hex(&Sha256::digest(blob))
        )
    }

    /// Writes `<dir>/<model>_<iteration>.ckpt` and `.manifest`; returns the
    /// manifest path.
    pub fn save(&self, dir: &Path) -> Result<PathBuf, CheckpointError> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |source| CheckpointError::Io { path, source }
        };
        std::fs::create_dir_all(dir).map_err(io(dir))?;
        let stem = format!("{}_{:06}", self.model, self.iteration);
        let (blob_path, manifest_path) = checkpoint_paths(&dir.join(&stem));
        let blob = encode_sections(&self.sections);
        std::fs::write(&blob_path, &blob).map_err(io(&blob_path))?;
        std::fs::write(&manifest_path, self.manifest_text(&format!("{stem}.ckpt"), &blob)).map_err(io(&manifest_path))?;
        Ok(manifest_path)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let (_, manifest_path) = checkpoint_paths(path);
        let shown = manifest_path.display().to_string();
        let fmt = |reason: String| CheckpointError::Format {
            path: shown.clone(),
            reason,
        };
        let text = std::fs::read_to_string(&manifest_path).map_err(|source| CheckpointError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| fmt(format!("bad manifest line {line:?}")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| fields.get(k).cloned().ok_or_else(|| fmt(format!("manifest lacks {k}")));
        let parse_u64 = |k: &str| get(k)?.parse::<u64>().map_err(|e| fmt(format!("{k}: {e}")));
        let parse_f64 = |k: &str| get(k)?.parse::<f64>().map_err(|e| fmt(format!("{k}: {e}")));
        let blob_path = manifest_path.with_file_name(get("blob")?);
        let blob = std::fs::read(&blob_path).map_err(|source| CheckpointError::Io {
            path: blob_path.display().to_string(),
            source,
        })?;
        if hex(&Sha256::digest(&blob)) != get("blob_sha256")? {
            return Err(fmt("blob checksum does not match the manifest".into()));
        }
        Ok(Checkpoint {
            model: get("model")?,
            seed: parse_u64("seed")?,
            iteration: parse_u64("iteration")?,
            config_hash: get("config_hash")?,
            loss_d: parse_f64("loss_d")?,
            loss_g: parse_f64("loss_g")?,
            sections: decode_sections(&blob).map_err(fmt)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ck = Checkpoint {
            model: "skin".into(),
            seed: 9,
            iteration: 12,
            config_hash: "abc".into(),
            loss_d: -0.25,
            loss_g: 1.5,
            sections: vec![("a".into(), vec![1, 2, 3]), ("b".into(), vec![])],
        };
        let path = ck.save(dir.path()).unwrap();
        assert!(path.ends_with("skin_000012.manifest"));
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert_eq!(Checkpoint::load(&path.with_extension("ckpt")).unwrap(), ck);

        let blob = path.with_extension("ckpt");
        let mut bytes = std::fs::read(&blob).unwrap();
        bytes[10] ^= 1;
        std::fs::write(&blob, bytes).unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::Format { .. })));
    }

    #[test]
    fn decode_rejects_garbage() {
        assert!(decode_sections(b"nope").is_err());
        let mut good = encode_sections(&[("x".into(), vec![7; 4])]);
        assert_eq!(decode_sections(&good).unwrap()[0].1, vec![7; 4]);
        good.push(0);
        assert!(decode_sections(&good).is_err());
        good.truncate(good.len() - 3);
        assert!(decode_sections(&good).is_err());
    }
}
