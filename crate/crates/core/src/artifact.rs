//! Content-addressed image artifacts.
//!
//! Images are never decoded beyond their dimensions. Every artifact lives
//! under a store root as `blobs/<sha256>.<ext>` and is referred to by a
//! path relative to that root, so run directories can be moved or compared
//! across machines.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::digest::sha256_hex;

/// Working resolution assumed when the bytes carry no decodable header.
pub const DEFAULT_RESOLUTION: (u32, u32) = (512, 512);

pub const BLOB_DIR: &str = "blobs";

#[derive(Debug, thiserror::Error)]
pub enum ArtifactError {
    #[error("cannot read image {path}: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image {uri} hash mismatch: expected {expected}, found {actual}")]
    HashMismatch {
        uri: String,
        expected: String,
        actual: String,
    },
    #[error("path {0} is outside the artifact store")]
    OutsideStore(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageArtifact {
    /// Path relative to the owning store root.
    pub uri: String,
    pub content_hash: String,
    pub width: u32,
    pub height: u32,
}

impl ImageArtifact {
    pub fn short_hash(&self) -> &str {
        &self.content_hash[..12.min(self.content_hash.len())]
    }
}

/// Reads width and height from an encoded image header, if there is one.
pub fn probe_dimensions(bytes: &[u8]) -> Option<(u32, u32)> {
    image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()
        .ok()?
        .into_dimensions()
        .ok()
}

fn extension_for(bytes: &[u8]) -> &'static str {
    match image::guess_format(bytes) {
        Ok(image::ImageFormat::Png) => "png",
        Ok(image::ImageFormat::Jpeg) => "jpg",
        _ => "img",
    }
}

#[derive(Debug, Clone)]
pub struct ImageStore {
    root: PathBuf,
}

impl ImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Stores `bytes` under its content hash. Re-ingesting identical bytes is a no-op.
    pub fn ingest(
        &self,
        bytes: &[u8],
        dims: Option<(u32, u32)>,
    ) -> Result<ImageArtifact, ArtifactError> {
        let hash = sha256_hex(bytes);
        let (width, height) = dims
            .or_else(|| probe_dimensions(bytes))
            .unwrap_or(DEFAULT_RESOLUTION);
        let uri = format!("{BLOB_DIR}/{hash}.{}", extension_for(bytes));
        let path = self.root.join(&uri);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(ImageArtifact {
            uri,
            content_hash: hash,
            width,
            height,
        })
    }

    /// Copies an external image file into the store.
    pub fn import(&self, path: &Path) -> Result<ImageArtifact, ArtifactError> {
        let bytes = fs::read(path).map_err(|source| ArtifactError::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
        self.ingest(&bytes, None)
    }

    pub fn resolve(&self, image: &ImageArtifact) -> PathBuf {
        self.root.join(&image.uri)
    }

    pub fn read(&self, image: &ImageArtifact) -> Result<Vec<u8>, ArtifactError> {
        let path = self.resolve(image);
        fs::read(&path).map_err(|source| ArtifactError::Unreadable { path, source })
    }

    /// Re-hashes the stored bytes; fails if the file is missing or altered.
    pub fn verify(&self, image: &ImageArtifact) -> Result<(), ArtifactError> {
        let actual = sha256_hex(&self.read(image)?);
        if actual != image.content_hash {
            return Err(ArtifactError::HashMismatch {
                uri: image.uri.clone(),
                expected: image.content_hash.clone(),
                actual,
            });
        }
        Ok(())
    }

    pub fn relativize(&self, path: &Path) -> Result<String, ArtifactError> {
        let rel = path
            .strip_prefix(&self.root)
            .map_err(|_| ArtifactError::OutsideStore(path.to_path_buf()))?;
        Ok(rel
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/"))
    }
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ArtifactError> {
    let err = |source| ArtifactError::Write {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(err)?;
    }
    // unique per call, so concurrent writers of the same content never share a temp file
    let n = TMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let name = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.{n}.tmp", std::process::id()));
    fs::write(&tmp, bytes).map_err(err)?;
    fs::rename(&tmp, path).map_err(err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ingest_is_content_addressed() {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::new(dir.path());
        let a = store.ingest(b"pixels", None).unwrap();
        let b = store.ingest(b"pixels", None).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.width, a.height), DEFAULT_RESOLUTION);
        assert!(a.uri.starts_with("blobs/"));
        store.verify(&a).unwrap();
    }

    #[test]
    fn verify_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let store = ImageStore::new(dir.path());
        let a = store.ingest(b"pixels", Some((4, 4))).unwrap();
        fs::write(store.resolve(&a), b"other").unwrap();
        assert!(matches!(
            store.verify(&a),
            Err(ArtifactError::HashMismatch { .. })
        ));
    }

    #[test]
    fn probes_png_dimensions() {
        let mut png = Vec::new();
        let img = image::RgbImage::new(3, 2);
        image::DynamicImage::ImageRgb8(img)
            .write_to(&mut Cursor::new(&mut png), image::ImageFormat::Png)
            .unwrap();
        assert_eq!(probe_dimensions(&png), Some((3, 2)));
        let dir = tempfile::tempdir().unwrap();
        let art = ImageStore::new(dir.path()).ingest(&png, None).unwrap();
        assert!(art.uri.ends_with(".png"));
        assert_eq!((art.width, art.height), (3, 2));
    }
}
