//! Versioned, checksummed model archive.
//!
//! Layout: one header line of JSON with the format name, schema version and
//! the SHA-256 of the payload, then the JSON payload. Floats are written
//! in shortest round-trip form, so a load reproduces every number exactly.

use std::fs;
use std::path::Path;

use esfma::aggregate::ModelKind;
use esfma::AggregatedFit;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::error::CliError;

pub const FORMAT: &str = "esfma-model-archive";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("cannot read archive: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt archive: {0}")]
    Corrupt(String),
    #[error("archive checksum mismatch: header says {expected}, payload hashes to {actual}")]
    Checksum { expected: String, actual: String },
    #[error("unsupported archive version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        CliError::Input(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub software: String,
    pub version: String,
    pub seed: u64,
    /// SHA-256 of the input file, when the fit came from one.
    pub input_sha256: Option<String>,
}

/// The fit settings that affect numbers. Worker count and output paths are
/// left out on purpose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    pub input: String,
    pub coords: [String; 2],
    pub response: String,
    pub covariates: Vec<String>,
    pub svc: Vec<bool>,
    pub scheme: String,
    pub overlap: bool,
    pub include_global: bool,
    pub threshold_factor: f64,
    pub clusters: Option<usize>,
    pub target_size: usize,
    pub global_l: usize,
    pub local_l: Option<usize>,
    pub estimation_weights: String,
    pub seed: u64,
}

impl FitSettings {
    /// SHA-256 of the settings' JSON encoding.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("settings serialize")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubModelRecord {
    /// `local` or `global`.
    pub kind: String,
    pub cluster: Option<usize>,
    /// Ids of the sites with positive prior weight.
    pub member_ids: Vec<String>,
    pub range: f64,
    pub n_basis: usize,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Process variance relative to `sigma2`.
    pub tau2_rel: Vec<f64>,
    pub sigma2: f64,
    pub loglik: f64,
    pub total_weight: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantRecord {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedRecord {
    /// Per site, one value per coefficient.
    pub beta: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub constants: Vec<ConstantRecord>,
    pub loglik: f64,
    pub bic: f64,
    pub n_params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub provenance: Provenance,
    pub settings: FitSettings,
    pub config_hash: String,
    pub site_ids: Vec<String>,
    pub coords: Vec<[f64; 2]>,
    pub coefficient_names: Vec<String>,
    pub svc: Vec<bool>,
    pub sub_models: Vec<SubModelRecord>,
    pub fused: FusedRecord,
}

impl ModelArchive {
    pub fn from_fit(
        fit: &AggregatedFit,
        settings: FitSettings,
        provenance: Provenance,
        ids: &[String],
        coords: &[[f64; 2]],
        names: &[String],
    ) -> Self {
        let sub_models = fit
            .models
            .iter()
            .zip(&fit.sub_fits)
            .map(|(m, f)| {
                let (kind, cluster) = match m.kind {
                    ModelKind::Local(c) => ("local", Some(c)),
                    ModelKind::Global => ("global", None),
                };
                SubModelRecord {
                    kind: kind.into(),
                    cluster,
                    member_ids: m.support.iter().map(|&i| ids[i].clone()).collect(),
                    range: m.range,
                    n_basis: f.n_basis(),
                    b: f.b.clone(),
                    u: f.u.clone(),
                    alpha: f.params.alpha.clone(),
                    tau2_rel: f.params.tau2.clone(),
                    sigma2: f.sigma2,
                    loglik: f.loglik,
                    total_weight: f.total_weight,
                    iterations: f.iterations,
                    converged: f.converged,
                }
            })
            .collect();
        let beta = (0..fit.beta.nrows())
            .map(|i| (0..fit.beta.ncols()).map(|k| fit.beta[(i, k)]).collect())
            .collect();
        let constants = fit
            .constants
            .iter()
            .map(|c| ConstantRecord {
                name: names[c.covariate].clone(),
                estimate: c.estimate,
                se: c.se,
                t: c.t,
            })
            .collect();
        Self {
            provenance,
            config_hash: settings.hash(),
            settings,
            site_ids: ids.to_vec(),
            coords: coords.to_vec(),
            coefficient_names: names.to_vec(),
            svc: fit.svc.clone(),
            sub_models,
            fused: FusedRecord {
                beta,
                sigma2: fit.sigma2.clone(),
                constants,
                loglik: fit.loglik,
                bic: fit.bic,
                n_params: fit.n_params,
            },
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Archive bytes for `archive` under an explicit schema version.
pub fn encode(archive: &ModelArchive, version: u32) -> Vec<u8> {
    let payload = serde_json::to_vec(archive).expect("archive serializes");
    let header = Header {
        format: FORMAT.into(),
        version,
        sha256: hex(&Sha256::digest(&payload)),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<ModelArchive, ArchiveError> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| ArchiveError::Corrupt("missing header line".into()))?;
    let header: Header =
        serde_json::from_slice(&bytes[..split]).map_err(|e| ArchiveError::Corrupt(format!("header: {e}")))?;
    if header.format != FORMAT {
        return Err(ArchiveError::Corrupt(format!("not a model archive (format '{}')", header.format)));
    }
    if header.version != VERSION {
        return Err(ArchiveError::UnsupportedVersion {
            found: header.version,
            supported: VERSION,
        });
    }
    let payload = &bytes[split + 1..];
    let actual = hex(&Sha256::digest(payload));
    if actual != header.sha256 {
        return Err(ArchiveError::Checksum {
            expected: header.sha256,
            actual,
        });
    }
    serde_json::from_slice(payload).map_err(|e| ArchiveError::Corrupt(format!("payload: {e}")))
}

pub fn save_model(archive: &ModelArchive, path: &Path) -> Result<(), ArchiveError> {
    fs::write(path, encode(archive, VERSION))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelArchive, ArchiveError> {
    decode(&fs::read(path)?)
}
