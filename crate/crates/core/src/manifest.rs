//! On-disk atom manifests: one JSON file per atom plus a scheme index, each
//! atom carrying a SHA-256 digest of its content.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::context::ContextSnapshot;
use crate::error::{Error, Result};
use crate::prepartition::{Atom, BenefitWeights, PartitionScheme};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const INDEX_FILE: &str = "scheme.json";
pub const ATOM_DIR: &str = "atoms";

/// Hex SHA-256 of the atom's canonical (compact JSON) form.
pub fn atom_digest(atom: &Atom) -> String {
    hex::encode(Sha256::digest(canonical(atom)))
}

fn canonical(atom: &Atom) -> Vec<u8> {
    serde_json::to_vec(atom).expect("atom serializes")
}

/// Size of the serialized network structure that must travel with an atom.
pub fn manifest_bytes(atom: &Atom) -> u64 {
    canonical(atom).len() as u64
}

/// Bytes moved when offloading an atom: structure plus parameters.
pub fn offload_bytes(atom: &Atom) -> u64 {
    manifest_bytes(atom) + atom.param_bytes
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomManifest {
    pub schema_version: u32,
    pub model: String,
    pub digest: String,
    pub atom: Atom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomEntry {
    pub id: usize,
    pub file: String,
    pub digest: String,
    pub ops: usize,
    pub param_bytes: u64,
    pub offload_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeIndex {
    pub schema_version: u32,
    pub model: String,
    /// Digest over the ordered atom digests.
    pub scheme_digest: String,
    pub retained: Vec<usize>,
    pub weights: BenefitWeights,
    pub ref_ctx: ContextSnapshot,
    pub atoms: Vec<AtomEntry>,
}

pub fn scheme_digest(scheme: &PartitionScheme) -> String {
    let mut h = Sha256::new();
    for atom in &scheme.atoms {
        h.update(atom_digest(atom).as_bytes());
    }
    hex::encode(h.finalize())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `atoms/atom_NN.json` for every atom and `scheme.json` under `out_dir`.
pub fn serialize_atoms(scheme: &PartitionScheme, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let atom_dir = out_dir.join(ATOM_DIR);
    fs::create_dir_all(&atom_dir).map_err(|e| Error::io(&atom_dir, e))?;
    let mut written = Vec::new();
    let mut entries = Vec::new();
    for atom in &scheme.atoms {
        let file = format!("{ATOM_DIR}/atom_{:02}.json", atom.id);
        let manifest = AtomManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            model: scheme.model.clone(),
            digest: atom_digest(atom),
            atom: atom.clone(),
        };
        let path = out_dir.join(&file);
        write(&path, &serde_json::to_string_pretty(&manifest)?)?;
        written.push(path);
        entries.push(AtomEntry {
            id: atom.id,
            file,
            digest: manifest.digest,
            ops: atom.ops.len(),
            param_bytes: atom.param_bytes,
            offload_bytes: offload_bytes(atom),
        });
    }
    let index = SchemeIndex {
        schema_version: MANIFEST_SCHEMA_VERSION,
        model: scheme.model.clone(),
        scheme_digest: scheme_digest(scheme),
        retained: scheme.retained.clone(),
        weights: scheme.weights,
        ref_ctx: scheme.ref_ctx.clone(),
        atoms: entries,
    };
    let path = out_dir.join(INDEX_FILE);
    write(&path, &serde_json::to_string_pretty(&index)?)?;
    written.push(path);
    Ok(written)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads a scheme written by [`serialize_atoms`], verifying every digest.
pub fn load_scheme(dir: &Path) -> Result<PartitionScheme> {
    let index: SchemeIndex = serde_json::from_str(&read(&dir.join(INDEX_FILE))?)?;
    if index.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::invalid(format!("unsupported manifest schema version {}", index.schema_version)));
    }
    let mut atoms = Vec::with_capacity(index.atoms.len());
    for (i, entry) in index.atoms.iter().enumerate() {
        let manifest: AtomManifest = serde_json::from_str(&read(&dir.join(&entry.file))?)?;
        let digest = atom_digest(&manifest.atom);
        if digest != manifest.digest || digest != entry.digest || manifest.atom.id != i {
            return Err(Error::invalid(format!("atom manifest {} fails its digest check", entry.file)));
        }
        atoms.push(manifest.atom);
    }
    let scheme = PartitionScheme {
        model: index.model,
        atoms,
        ref_ctx: index.ref_ctx,
        weights: index.weights,
        retained: index.retained,
    };
    if scheme_digest(&scheme) != index.scheme_digest {
        return Err(Error::invalid("scheme digest mismatch"));
    }
    Ok(scheme)
}
