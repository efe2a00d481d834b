//! Binary artifact files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"STMORBIN"  u32 format version  u32 header length  header (JSON, UTF-8)
//! u32 array count, then per array: u32 name length, name, u64 length, f64 values
//! 32-byte SHA-256 of everything before it
//! ```
//!
//! The header records the artifact kind, its schema version, the case id, the
//! mesh hash and the hashes of upstream artifacts. The trailing checksum is the
//! artifact's hash, which downstream artifacts embed.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::eim::{EimApproximation, FieldTag};
use crate::error::{Error, Result};
use crate::fom::FomSolution;
use crate::mesh::hex;
use crate::pod::{InnerProduct, ReducedBasis};
use crate::rom::{Dense, RomPackage};

pub const MAGIC: &[u8; 8] = b"STMORBIN";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub kind: String,
    pub schema_version: u32,
    pub case_id: String,
    pub mesh_hash: String,
    #[serde(default)]
    pub upstream: BTreeMap<String, String>,
    pub meta: serde_json::Value,
}

pub type Arrays = BTreeMap<String, Vec<f64>>;

pub fn encode(env: &Envelope, arrays: &Arrays) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(env).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(64 + header.len() + arrays.values().map(|a| 8 * a.len() + 32).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(header.len()).map_err(|_| Error::Format("header too large".into()))?.to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, values) in arrays {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(values.len() as u64).to_le_bytes());
        for v in values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Format("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses and checksums a file; returns its hash as well.
pub fn decode(bytes: &[u8]) -> Result<(Envelope, Arrays, String)> {
    if bytes.len() < MAGIC.len() + 32 || &bytes[..8] != MAGIC {
        return Err(Error::Format("not an stmor artifact (bad magic)".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Format("checksum mismatch, file is corrupt".into()));
    }
    let mut c = Cursor { bytes: body, pos: 8 };
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let hlen = c.u32()? as usize;
    let env: Envelope = serde_json::from_slice(c.take(hlen)?).map_err(|e| Error::Format(format!("header: {e}")))?;
    let count = c.u32()?;
    let mut arrays = Arrays::new();
    for _ in 0..count {
        let nlen = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(nlen)?).map_err(|e| Error::Format(e.to_string()))?.to_owned();
        let len = usize::try_from(c.u64()?).map_err(|_| Error::Format("array too long".into()))?;
        let raw = c.take(len.checked_mul(8).ok_or_else(|| Error::Format("array too long".into()))?)?;
        arrays.insert(name, raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect());
    }
    if c.pos != body.len() {
        return Err(Error::Format("trailing bytes after the last array".into()));
    }
    Ok((env, arrays, hex(digest)))
}

/// A typed artifact stored in the container format.
pub trait Artifact: Sized {
    const KIND: &'static str;
    const SCHEMA_VERSION: u32;

    fn to_parts(&self) -> Result<(Envelope, Arrays)>;
    fn from_parts(env: Envelope, arrays: Arrays) -> Result<Self>;

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let (env, arrays) = self.to_parts()?;
        encode(&env, &arrays)
    }

    /// The artifact and its hash.
    fn from_bytes(bytes: &[u8]) -> Result<(Self, String)> {
        let (env, arrays, hash) = decode(bytes)?;
        if env.kind != Self::KIND {
            return Err(Error::Format(format!("expected a {} artifact, found {}", Self::KIND, env.kind)));
        }
        if env.schema_version != Self::SCHEMA_VERSION {
            return Err(Error::Format(format!("{} schema version {}, expected {}", Self::KIND, env.schema_version, Self::SCHEMA_VERSION)));
        }
        Ok((Self::from_parts(env, arrays)?, hash))
    }

    /// Writes the file and returns its hash.
    fn save(&self, path: &Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(hex(&bytes[bytes.len() - 32..]))
    }

    fn load(path: &Path) -> Result<(Self, String)> {
        let bytes = std::fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Hash of an artifact that was just serialized.
pub fn hash_of<A: Artifact>(a: &A) -> Result<String> {
    let bytes = a.to_bytes()?;
    Ok(hex(&bytes[bytes.len() - 32..]))
}

/// Hash of an ordered list of artifact hashes.
pub fn set_hash(hashes: &[String]) -> String {
    let mut h = Sha256::new();
    for s in hashes {
        h.update(s.as_bytes());
        h.update([b'\n']);
    }
    hex(&h.finalize())
}

fn meta<T: Serialize>(m: &T) -> Result<serde_json::Value> {
    serde_json::to_value(m).map_err(|e| Error::Format(e.to_string()))
}

fn from_meta<T: DeserializeOwned>(v: serde_json::Value) -> Result<T> {
    serde_json::from_value(v).map_err(|e| Error::Format(format!("header: {e}")))
}

fn take(arrays: &mut Arrays, name: &str) -> Result<Vec<f64>> {
    arrays.remove(name).ok_or_else(|| Error::Format(format!("missing array `{name}`")))
}

fn take_len(arrays: &mut Arrays, name: &str, len: usize) -> Result<Vec<f64>> {
    let v = take(arrays, name)?;
    if v.len() != len {
        return Err(Error::Format(format!("array `{name}` has {} values, expected {len}", v.len())));
    }
    Ok(v)
}

/// Refuses an input artifact built for another mesh.
pub fn check_mesh(what: &str, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::StaleArtifact(format!("{what} was built for mesh {found}, current mesh is {expected}")));
    }
    Ok(())
}

/// Refuses an input whose recorded upstream hash differs from the actual one.
pub fn check_upstream(what: &str, recorded: &str, actual: &str) -> Result<()> {
    if recorded != actual {
        return Err(Error::StaleArtifact(format!("{what}: recorded hash {recorded} does not match {actual}")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotFile {
    pub case_id: String,
    pub mesh_hash: String,
    pub solution: FomSolution,
}

#[derive(Serialize, Deserialize)]
struct SnapshotMeta {
    mu: Vec<f64>,
    n_v: usize,
    n_p: usize,
    lift_coefficients: Vec<f64>,
    log: Vec<crate::fom::PicardStep>,
    seconds: f64,
}

impl Artifact for SnapshotFile {
    const KIND: &'static str = "snapshot";
    const SCHEMA_VERSION: u32 = 1;

    fn to_parts(&self) -> Result<(Envelope, Arrays)> {
        let s = &self.solution;
        let m = SnapshotMeta {
            mu: s.mu.0.clone(),
            n_v: s.v.len(),
            n_p: s.p.len(),
            lift_coefficients: s.lift_coefficients.clone(),
            log: s.log.clone(),
            seconds: s.seconds,
        };
        let env = Envelope {
            kind: Self::KIND.into(),
            schema_version: Self::SCHEMA_VERSION,
            case_id: self.case_id.clone(),
            mesh_hash: self.mesh_hash.clone(),
            upstream: BTreeMap::new(),
            meta: meta(&m)?,
        };
        Ok((env, Arrays::from([("v".into(), s.v.clone()), ("p".into(), s.p.clone())])))
    }

    fn from_parts(env: Envelope, mut arrays: Arrays) -> Result<Self> {
        let m: SnapshotMeta = from_meta(env.meta)?;
        let solution = FomSolution {
            mu: crate::constitutive::ParameterVector(m.mu),
            v: take_len(&mut arrays, "v", m.n_v)?,
            p: take_len(&mut arrays, "p", m.n_p)?,
            lift_coefficients: m.lift_coefficients,
            log: m.log,
            seconds: m.seconds,
        };
        Ok(SnapshotFile { case_id: env.case_id, mesh_hash: env.mesh_hash, solution })
    }
}

/// Content hash of a solution's coefficient vectors (timings excluded).
pub fn solution_hash(s: &FomSolution) -> String {
    let mut h = Sha256::new();
    for x in s.mu.0.iter().chain(&s.v).chain(&s.p) {
        h.update(x.to_le_bytes());
    }
    hex(&h.finalize())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasisFile {
    pub case_id: String,
    pub mesh_hash: String,
    /// [`set_hash`] of the snapshot files the basis was computed from.
    pub snapshots_hash: String,
    pub basis: ReducedBasis,
}

#[derive(Serialize, Deserialize)]
struct BasisMeta {
    n_lifts: usize,
    n_modes: usize,
    n_p: usize,
    len_v: usize,
    len_p: usize,
    inner_product: InnerProduct,
}

fn flatten(cols: &[Vec<f64>]) -> Vec<f64> {
    cols.concat()
}

fn split(v: Vec<f64>, len: usize, n: usize) -> Vec<Vec<f64>> {
    if len == 0 {
        return vec![Vec::new(); n];
    }
    v.chunks(len).map(<[f64]>::to_vec).collect()
}

impl Artifact for BasisFile {
    const KIND: &'static str = "basis";
    const SCHEMA_VERSION: u32 = 1;

    fn to_parts(&self) -> Result<(Envelope, Arrays)> {
        let b = &self.basis;
        let m = BasisMeta {
            n_lifts: b.n_lifts(),
            n_modes: b.velocity_modes.len(),
            n_p: b.n_p(),
            len_v: b.z_v_columns().next().map_or(0, <[f64]>::len),
            len_p: b.pressure_modes.first().map_or(0, Vec::len),
            inner_product: b.inner_product,
        };
        let env = Envelope {
            kind: Self::KIND.into(),
            schema_version: Self::SCHEMA_VERSION,
            case_id: self.case_id.clone(),
            mesh_hash: self.mesh_hash.clone(),
            upstream: BTreeMap::from([("snapshots".into(), self.snapshots_hash.clone())]),
            meta: meta(&m)?,
        };
        let arrays = Arrays::from([
            ("lifts".into(), flatten(&b.lifts)),
            ("velocity_modes".into(), flatten(&b.velocity_modes)),
            ("pressure_modes".into(), flatten(&b.pressure_modes)),
            ("velocity_spectrum".into(), b.velocity_spectrum.clone()),
            ("pressure_spectrum".into(), b.pressure_spectrum.clone()),
        ]);
        Ok((env, arrays))
    }

    fn from_parts(env: Envelope, mut arrays: Arrays) -> Result<Self> {
        let m: BasisMeta = from_meta(env.meta)?;
        let basis = ReducedBasis {
            lifts: split(take_len(&mut arrays, "lifts", m.n_lifts * m.len_v)?, m.len_v, m.n_lifts),
            velocity_modes: split(take_len(&mut arrays, "velocity_modes", m.n_modes * m.len_v)?, m.len_v, m.n_modes),
            pressure_modes: split(take_len(&mut arrays, "pressure_modes", m.n_p * m.len_p)?, m.len_p, m.n_p),
            velocity_spectrum: take(&mut arrays, "velocity_spectrum")?,
            pressure_spectrum: take(&mut arrays, "pressure_spectrum")?,
            inner_product: m.inner_product,
        };
        let snapshots_hash = env.upstream.get("snapshots").cloned().unwrap_or_default();
        Ok(BasisFile { case_id: env.case_id, mesh_hash: env.mesh_hash, snapshots_hash, basis })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EimFile {
    pub case_id: String,
    pub mesh_hash: String,
    pub snapshots_hash: String,
    pub approx: EimApproximation,
}

#[derive(Serialize, Deserialize)]
struct EimMeta {
    tag: FieldTag,
    q: usize,
    elements: usize,
    magic: Vec<usize>,
}

impl Artifact for EimFile {
    const KIND: &'static str = "eim";
    const SCHEMA_VERSION: u32 = 1;

    fn to_parts(&self) -> Result<(Envelope, Arrays)> {
        let a = &self.approx;
        let m = EimMeta { tag: a.tag, q: a.q(), elements: a.basis.first().map_or(0, Vec::len), magic: a.magic.clone() };
        let env = Envelope {
            kind: Self::KIND.into(),
            schema_version: Self::SCHEMA_VERSION,
            case_id: self.case_id.clone(),
            mesh_hash: self.mesh_hash.clone(),
            upstream: BTreeMap::from([("snapshots".into(), self.snapshots_hash.clone())]),
            meta: meta(&m)?,
        };
        let arrays = Arrays::from([("h".into(), flatten(&a.basis)), ("t".into(), flatten(&a.t)), ("history".into(), a.history.clone())]);
        Ok((env, arrays))
    }

    fn from_parts(env: Envelope, mut arrays: Arrays) -> Result<Self> {
        let m: EimMeta = from_meta(env.meta)?;
        if m.magic.len() != m.q {
            return Err(Error::Format("EIM header is inconsistent".into()));
        }
        let approx = EimApproximation {
            tag: m.tag,
            basis: split(take_len(&mut arrays, "h", m.q * m.elements)?, m.elements, m.q),
            magic: m.magic,
            t: split(take_len(&mut arrays, "t", m.q * m.q)?, m.q, m.q),
            history: take(&mut arrays, "history")?,
        };
        let snapshots_hash = env.upstream.get("snapshots").cloned().unwrap_or_default();
        Ok(EimFile { case_id: env.case_id, mesh_hash: env.mesh_hash, snapshots_hash, approx })
    }
}

fn dense_out(arrays: &mut Arrays, name: String, d: &mut Dense) {
    arrays.insert(name, std::mem::take(&mut d.data));
}

fn dense_in(arrays: &mut Arrays, name: &str, d: &mut Dense) -> Result<()> {
    d.data = take_len(arrays, name, d.rows * d.cols)?;
    Ok(())
}

/// Dense blocks travel as arrays; everything else as header metadata.
impl Artifact for RomPackage {
    const KIND: &'static str = "rom_package";
    const SCHEMA_VERSION: u32 = 1;

    fn to_parts(&self) -> Result<(Envelope, Arrays)> {
        let mut p = self.clone();
        let mut arrays = Arrays::new();
        dense_out(&mut arrays, "e".into(), &mut p.e);
        dense_out(&mut arrays, "b".into(), &mut p.b);
        arrays.insert("f".into(), std::mem::take(&mut p.f));
        for (q, m) in p.a_q.iter_mut().enumerate() {
            dense_out(&mut arrays, format!("a_q/{q}"), m);
        }
        for (q, m) in p.c_q.iter_mut().enumerate() {
            dense_out(&mut arrays, format!("c_q/{q}"), m);
        }
        for (q, m) in p.s_q.iter_mut().enumerate() {
            dense_out(&mut arrays, format!("s_q/{q}"), m);
        }
        for (q, v) in p.d_q.iter_mut().enumerate() {
            arrays.insert(format!("d_q/{q}"), std::mem::take(v));
        }
        for (k, m) in p.magic_elements.iter_mut().enumerate() {
            dense_out(&mut arrays, format!("magic/{k}/z_rows"), &mut m.z_rows);
        }
        let upstream = BTreeMap::from([
            ("basis".into(), p.provenance.basis_hash.clone()),
            ("eim_eta".into(), p.provenance.eta_hash.clone()),
            ("eim_tau".into(), p.provenance.tau_hash.clone()),
        ]);
        let env = Envelope {
            kind: Self::KIND.into(),
            schema_version: Self::SCHEMA_VERSION,
            case_id: p.provenance.case_id.clone(),
            mesh_hash: p.provenance.mesh_hash.clone(),
            upstream,
            meta: meta(&p)?,
        };
        Ok((env, arrays))
    }

    fn from_parts(env: Envelope, mut arrays: Arrays) -> Result<Self> {
        let mut p: RomPackage = from_meta(env.meta)?;
        if p.provenance.mesh_hash != env.mesh_hash || p.provenance.case_id != env.case_id {
            return Err(Error::Format("package header is inconsistent".into()));
        }
        dense_in(&mut arrays, "e", &mut p.e)?;
        dense_in(&mut arrays, "b", &mut p.b)?;
        p.f = take_len(&mut arrays, "f", p.n_u)?;
        for (q, m) in p.a_q.iter_mut().enumerate() {
            dense_in(&mut arrays, &format!("a_q/{q}"), m)?;
        }
        for (q, m) in p.c_q.iter_mut().enumerate() {
            dense_in(&mut arrays, &format!("c_q/{q}"), m)?;
        }
        for (q, m) in p.s_q.iter_mut().enumerate() {
            dense_in(&mut arrays, &format!("s_q/{q}"), m)?;
        }
        let np = p.n_p;
        for (q, v) in p.d_q.iter_mut().enumerate() {
            *v = take_len(&mut arrays, &format!("d_q/{q}"), np)?;
        }
        for (k, m) in p.magic_elements.iter_mut().enumerate() {
            dense_in(&mut arrays, &format!("magic/{k}/z_rows"), &mut m.z_rows)?;
        }
        let expected = (p.n_u, p.n_u);
        if p.e.shape() != expected || p.b.shape() != (p.n_p, p.n_u) || p.a_q.len() != p.eta.q() || p.c_q.len() != p.tau.q() {
            return Err(Error::Format("package blocks do not match its dimensions".into()));
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::ParameterVector;

    fn snapshot() -> SnapshotFile {
        SnapshotFile {
            case_id: "c".into(),
            mesh_hash: "m".into(),
            solution: FomSolution {
                mu: ParameterVector(vec![0.1, 0.2]),
                v: vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300],
                p: vec![std::f64::consts::PI],
                lift_coefficients: vec![1.0],
                log: vec![],
                seconds: 0.5,
            },
        }
    }

    #[test]
    fn snapshot_round_trip_is_bit_exact() {
        let s = snapshot();
        let bytes = s.to_bytes().unwrap();
        let (back, hash) = SnapshotFile::from_bytes(&bytes).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.solution.v[1].to_bits(), (-0.0f64).to_bits());
        assert_eq!(hash, hash_of(&s).unwrap());
    }

    #[test]
    fn corruption_and_wrong_kind_are_detected() {
        let mut bytes = snapshot().to_bytes().unwrap();
        assert!(matches!(BasisFile::from_bytes(&bytes), Err(Error::Format(_))));
        let k = bytes.len() - 40;
        bytes[k] ^= 1;
        assert!(matches!(SnapshotFile::from_bytes(&bytes), Err(Error::Format(_))));
        assert!(SnapshotFile::from_bytes(b"nonsense").is_err());
    }

    #[test]
    fn stale_checks() {
        assert!(check_mesh("basis", "a", "a").is_ok());
        assert!(matches!(check_mesh("basis", "a", "b"), Err(Error::StaleArtifact(_))));
        assert!(matches!(check_upstream("package", "x", "y"), Err(Error::StaleArtifact(_))));
    }
}
