use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Container format detected from leading magic bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageFormat {
    Png,
    Jpeg,
    Gif,
    Webp,
    Unknown,
}

impl ImageFormat {
    pub fn sniff(bytes: &[u8]) -> Self {
        match bytes {
            [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a, ..] => ImageFormat::Png,
            [0xff, 0xd8, 0xff, ..] => ImageFormat::Jpeg,
            [b'G', b'I', b'F', b'8', ..] => ImageFormat::Gif,
            [b'R', b'I', b'F', b'F', _, _, _, _, b'W', b'E', b'B', b'P', ..] => ImageFormat::Webp,
            _ => ImageFormat::Unknown,
        }
    }

    pub fn from_image_ref(image_ref: &str) -> Self {
        match image_ref.rsplit_once('.').map(|(_, ext)| ext) {
            Some("png") => ImageFormat::Png,
            Some("jpg") => ImageFormat::Jpeg,
            Some("gif") => ImageFormat::Gif,
            Some("webp") => ImageFormat::Webp,
            _ => ImageFormat::Unknown,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Jpeg => "jpg",
            ImageFormat::Gif => "gif",
            ImageFormat::Webp => "webp",
            ImageFormat::Unknown => "bin",
        }
    }
}

/// Content-addressed directory of image files named `<sha256>.<ext>`.
#[derive(Debug, Clone)]
pub struct BlobStore {
    dir: PathBuf,
}

impl BlobStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(BlobStore { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(bytes: &[u8]) -> String {
        hex::encode(Sha256::digest(bytes))
    }

    /// Stores `bytes` unless an identical blob exists; returns the blob reference.
    pub fn put(&self, bytes: &[u8]) -> Result<(String, ImageFormat)> {
        let format = ImageFormat::sniff(bytes);
        let name = format!("{}.{}", Self::hash(bytes), format.extension());
        let path = self.dir.join(&name);
        if !path.exists() {
            let tmp = self.dir.join(format!(".{name}.{:016x}.tmp", rand::random::<u64>()));
            let mut f = fs::File::create(&tmp)?;
            f.write_all(bytes)?;
            f.sync_all()?;
            fs::rename(&tmp, &path)?;
        }
        Ok((name, format))
    }

    pub fn path(&self, image_ref: &str) -> PathBuf {
        self.dir.join(image_ref)
    }

    pub fn read(&self, image_ref: &str) -> Result<Vec<u8>> {
        fs::read(self.path(image_ref)).map_err(|_| Error::Blob(image_ref.to_owned()))
    }

    /// True when the blob exists and its bytes hash to its file stem.
    pub fn verify(&self, image_ref: &str) -> bool {
        let Some((stem, _)) = image_ref.split_once('.') else { return false };
        match fs::read(self.path(image_ref)) {
            Ok(bytes) => Self::hash(&bytes) == stem,
            Err(_) => false,
        }
    }

    /// Copies a blob from another blob directory after checking its hash.
    pub fn import_from(&self, source_dir: &Path, image_ref: &str) -> Result<()> {
        if self.verify(image_ref) {
            return Ok(());
        }
        let bytes = fs::read(source_dir.join(image_ref)).map_err(|_| Error::Blob(image_ref.to_owned()))?;
        let (name, _) = self.put(&bytes)?;
        if name != image_ref {
            return Err(Error::Blob(image_ref.to_owned()));
        }
        Ok(())
    }
}
