//! Posterior documents.
//!
//! A document is a JSON header plus a binary payload. The header records the
//! dimensions, the hyperparameters and, for every sample, where each array
//! lives in the payload. Arrays are little-endian and column-major. On disk
//! the payload sits next to the header as `<path>.bin`.
//!
//! Header reals are written with the shortest representation that parses
//! back to the same `f64`, so both parts round-trip bit for bit.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::model::{
    GgpState, Hyperparameters, LatentTrajectory, ModelState, ObservationKind, ObservationNoise, ObservationState,
    PosteriorSample, TransitionState,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Header and payload of a posterior document.
#[derive(Clone, Debug, PartialEq)]
pub struct Document {
    pub header: Value,
    pub payload: Vec<u8>,
}

/// Samples of one or more chains together with the hyperparameters that
/// produced them.
#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub hyper: Hyperparameters,
    /// Length of the training series.
    pub t: usize,
    pub samples: Vec<PosteriorSample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Dtype {
    F64,
    U64,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 | Dtype::U64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ArrayRef {
    dtype: Dtype,
    offset: usize,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SampleEntry {
    chain: usize,
    iteration: usize,
    arrays: BTreeMap<String, ArrayRef>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct HyperRecord {
    gamma0: f64,
    alpha0: f64,
    beta0: f64,
    c: f64,
    c_rho: f64,
    c_tau: f64,
    a: f64,
    b: f64,
    iters: usize,
    burnin: usize,
    thin: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema_version: u32,
    #[serde(rename = "K")]
    k: usize,
    #[serde(rename = "S")]
    s: usize,
    #[serde(rename = "V")]
    v: usize,
    #[serde(rename = "T")]
    t: usize,
    observation_kind: String,
    hyperparameters: HyperRecord,
    wishart_scale: Vec<Vec<f64>>,
    m0: Vec<f64>,
    #[serde(rename = "H0")]
    h0: Vec<Vec<f64>>,
    seed: u64,
    layout: String,
    samples: Vec<SampleEntry>,
}

const LAYOUT: &str = "little-endian, column-major";

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], n: usize, path: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::shape(format!("`{path}` must be {n}x{n}")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

struct Writer<'a> {
    payload: &'a mut Vec<u8>,
    arrays: BTreeMap<String, ArrayRef>,
}

impl Writer<'_> {
    fn put(&mut self, key: &str, dtype: Dtype, shape: Vec<usize>, bytes: impl Iterator<Item = u8>) {
        let offset = self.payload.len();
        self.payload.extend(bytes);
        self.arrays.insert(key.to_string(), ArrayRef { dtype, offset, shape });
    }

    fn f64s(&mut self, key: &str, shape: Vec<usize>, xs: &[f64]) {
        self.put(key, Dtype::F64, shape, xs.iter().flat_map(|x| x.to_le_bytes()));
    }

    fn matrix(&mut self, key: &str, m: &DMatrix<f64>) {
        self.f64s(key, vec![m.nrows(), m.ncols()], m.as_slice());
    }

    fn vector(&mut self, key: &str, v: &DVector<f64>) {
        self.f64s(key, vec![v.len()], v.as_slice());
    }

    fn scalar(&mut self, key: &str, x: f64) {
        self.f64s(key, vec![], &[x]);
    }

    fn u64s(&mut self, key: &str, shape: Vec<usize>, xs: &[u64]) {
        self.put(key, Dtype::U64, shape, xs.iter().flat_map(|x| x.to_le_bytes()));
    }

    fn bools(&mut self, key: &str, m: &DMatrix<bool>) {
        self.put(key, Dtype::U8, vec![m.nrows(), m.ncols()], m.iter().map(|&b| b as u8));
    }
}

fn write_sample(sample: &PosteriorSample, payload: &mut Vec<u8>) -> SampleEntry {
    let st = sample.state();
    let mut w = Writer { payload, arrays: BTreeMap::new() };
    let g = &st.ggp;
    w.vector("ggp.r", &g.r);
    w.matrix("ggp.theta", &g.theta);
    w.matrix("ggp.psi", &g.psi);
    w.vector("ggp.rho", &g.rho);
    w.vector("ggp.tau", &g.tau);
    w.vector("ggp.e", &g.e);
    w.vector("ggp.f", &g.f);
    let tr = &st.trans;
    let (s, k) = (tr.s(), tr.k());
    w.matrix("trans.W", &tr.w);
    w.bools("trans.Z", &tr.z);
    w.u64s("trans.M", vec![s, s], tr.m.as_slice());
    w.u64s("trans.m_split", vec![s, s, k], &tr.m_split);
    w.matrix("trans.varphi", &tr.varphi);
    w.vector("trans.lambda", &tr.lambda);
    w.matrix("obs.D", &st.obs.d);
    match &st.obs.noise {
        ObservationNoise::Gaussian { precision } => w.matrix("obs.Phi", precision),
        ObservationNoise::NegativeBinomial { eta, alpha_eta, beta_eta, omega } => {
            w.scalar("obs.eta", *eta);
            w.scalar("obs.alpha_eta", *alpha_eta);
            w.scalar("obs.beta_eta", *beta_eta);
            w.matrix("obs.omega", omega);
        }
    }
    w.matrix("traj.X", &st.traj.x);
    w.vector("traj.x0", &st.traj.x0);
    SampleEntry { chain: sample.chain(), iteration: sample.iteration(), arrays: w.arrays }
}

struct Reader<'a> {
    entry: &'a SampleEntry,
    index: usize,
    payload: &'a [u8],
}

impl Reader<'_> {
    fn path(&self, key: &str) -> String {
        format!("samples[{}].arrays.{key}", self.index)
    }

    fn raw(&self, key: &str, dtype: Dtype, shape: &[usize]) -> Result<&[u8]> {
        let path = self.path(key);
        let a = self.entry.arrays.get(key).ok_or_else(|| Error::document(&path, "missing array"))?;
        if a.dtype != dtype {
            return Err(Error::document(&path, format!("expected dtype {dtype:?}, found {:?}", a.dtype)));
        }
        if a.shape != shape {
            return Err(Error::shape(format!("`{path}` has shape {:?}, header implies {:?}", a.shape, shape)));
        }
        let len = shape.iter().product::<usize>() * dtype.width();
        a.offset
            .checked_add(len)
            .and_then(|end| self.payload.get(a.offset..end))
            .ok_or_else(|| Error::document(&path, "array extends past the end of the payload"))
    }

    fn f64s(&self, key: &str, shape: &[usize]) -> Result<Vec<f64>> {
        let raw = self.raw(key, Dtype::F64, shape)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn matrix(&self, key: &str, r: usize, c: usize) -> Result<DMatrix<f64>> {
        Ok(DMatrix::from_vec(r, c, self.f64s(key, &[r, c])?))
    }

    fn vector(&self, key: &str, n: usize) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.f64s(key, &[n])?))
    }

    fn scalar(&self, key: &str) -> Result<f64> {
        Ok(self.f64s(key, &[])?[0])
    }

    fn u64s(&self, key: &str, shape: &[usize]) -> Result<Vec<u64>> {
        let raw = self.raw(key, Dtype::U64, shape)?;
        Ok(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn bools(&self, key: &str, r: usize, c: usize) -> Result<DMatrix<bool>> {
        let raw = self.raw(key, Dtype::U8, &[r, c])?;
        let path = self.path(key);
        let vals = raw
            .iter()
            .map(|&b| match b {
                0 => Ok(false),
                1 => Ok(true),
                _ => Err(Error::document(&path, format!("byte {b} is not a boolean"))),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DMatrix::from_vec(r, c, vals))
    }
}

fn read_sample(h: &Header, index: usize, kind: ObservationKind, payload: &[u8]) -> Result<PosteriorSample> {
    let entry = &h.samples[index];
    let rd = Reader { entry, index, payload };
    let (k, s, v, t) = (h.k, h.s, h.v, h.t);
    // checked first so a truncation mismatch is reported as such
    let r_len = entry.arrays.get("ggp.r").and_then(|a| a.shape.first().copied());
    if let Some(n) = r_len.filter(|&n| n != k) {
        return Err(Error::shape(format!("header K = {k} but `{}` has length {n}", rd.path("ggp.r"))));
    }
    let ggp = GgpState {
        r: rd.vector("ggp.r", k)?,
        theta: rd.matrix("ggp.theta", s, k)?,
        psi: rd.matrix("ggp.psi", s, k)?,
        rho: rd.vector("ggp.rho", s)?,
        tau: rd.vector("ggp.tau", s)?,
        e: rd.vector("ggp.e", k)?,
        f: rd.vector("ggp.f", k)?,
    };
    let m = rd.u64s("trans.M", &[s, s])?;
    let trans = TransitionState {
        w: rd.matrix("trans.W", s, s)?,
        z: rd.bools("trans.Z", s, s)?,
        m: DMatrix::from_vec(s, s, m),
        m_split: rd.u64s("trans.m_split", &[s, s, k])?,
        varphi: rd.matrix("trans.varphi", s, s)?,
        lambda: rd.vector("trans.lambda", s)?,
    };
    let noise = match kind {
        ObservationKind::Gaussian => ObservationNoise::Gaussian { precision: rd.matrix("obs.Phi", v, v)? },
        ObservationKind::NegativeBinomial => ObservationNoise::NegativeBinomial {
            eta: rd.scalar("obs.eta")?,
            alpha_eta: rd.scalar("obs.alpha_eta")?,
            beta_eta: rd.scalar("obs.beta_eta")?,
            omega: rd.matrix("obs.omega", v, t)?,
        },
    };
    let obs = ObservationState { d: rd.matrix("obs.D", v, s)?, noise };
    let traj = LatentTrajectory { x: rd.matrix("traj.X", s, t)?, x0: rd.vector("traj.x0", s)? };
    let state = ModelState { ggp, trans, obs, traj };
    Ok(PosteriorSample::new(state, entry.iteration, entry.chain))
}

fn header_error(e: serde_json::Error) -> Error {
    Error::document("header", e.to_string())
}

impl Posterior {
    pub fn new(hyper: Hyperparameters, t: usize, samples: Vec<PosteriorSample>) -> Self {
        Self { hyper, t, samples }
    }

    /// Distinct chain tags in order of first appearance.
    pub fn chains(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for s in &self.samples {
            if !out.contains(&s.chain()) {
                out.push(s.chain());
            }
        }
        out
    }

    /// Samples of one chain, or all of them pooled.
    pub fn select(&self, chain: Option<usize>) -> Vec<&PosteriorSample> {
        self.samples.iter().filter(|s| chain.is_none_or(|c| s.chain() == c)).collect()
    }

    pub fn to_document(&self) -> Document {
        let h = &self.hyper;
        let mut payload = Vec::new();
        let samples = self.samples.iter().map(|s| write_sample(s, &mut payload)).collect();
        let header = Header {
            schema_version: SCHEMA_VERSION,
            k: h.k,
            s: h.s,
            v: h.v,
            t: self.t,
            observation_kind: h.observation_kind.as_str().to_string(),
            hyperparameters: HyperRecord {
                gamma0: h.gamma0,
                alpha0: h.alpha0,
                beta0: h.beta0,
                c: h.c,
                c_rho: h.c_rho,
                c_tau: h.c_tau,
                a: h.a,
                b: h.b,
                iters: h.iters,
                burnin: h.burnin,
                thin: h.thin,
            },
            wishart_scale: rows(&h.wishart_scale),
            m0: h.m0.iter().copied().collect(),
            h0: rows(&h.h0),
            seed: h.seed,
            layout: LAYOUT.to_string(),
            samples,
        };
        let header = serde_json::to_value(header).expect("header serializes");
        Document { header, payload }
    }

    pub fn from_document(doc: &Document) -> Result<Self> {
        let version = doc
            .header
            .get("schema_version")
            .ok_or_else(|| Error::document("schema_version", "missing"))?;
        if version.as_u64() != Some(SCHEMA_VERSION as u64) {
            return Err(Error::document(
                "schema_version",
                format!("found {version}, this build reads version {SCHEMA_VERSION}"),
            ));
        }
        let h: Header = serde_json::from_value(doc.header.clone()).map_err(header_error)?;
        if h.layout != LAYOUT {
            return Err(Error::document("layout", format!("unsupported layout `{}`", h.layout)));
        }
        let kind = ObservationKind::parse(&h.observation_kind)?;
        let hp = &h.hyperparameters;
        let hyper = Hyperparameters {
            k: h.k,
            s: h.s,
            v: h.v,
            gamma0: hp.gamma0,
            alpha0: hp.alpha0,
            beta0: hp.beta0,
            c: hp.c,
            c_rho: hp.c_rho,
            c_tau: hp.c_tau,
            a: hp.a,
            b: hp.b,
            wishart_scale: from_rows(&h.wishart_scale, h.v, "wishart_scale")?,
            m0: DVector::from_vec(h.m0.clone()),
            h0: from_rows(&h.h0, h.s, "H0")?,
            iters: hp.iters,
            burnin: hp.burnin,
            thin: hp.thin,
            seed: h.seed,
            observation_kind: kind,
        };
        if hyper.m0.len() != h.s {
            return Err(Error::shape(format!("`m0` has length {}, header S = {}", hyper.m0.len(), h.s)));
        }
        let samples = (0..h.samples.len())
            .map(|i| read_sample(&h, i, kind, &doc.payload))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { hyper, t: h.t, samples })
    }

    /// Write `path` (header) and `path.bin` (payload).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let doc = self.to_document();
        let mut text = serde_json::to_string_pretty(&doc.header)?;
        text.push('\n');
        std::fs::write(path, text)?;
        std::fs::write(payload_path(path), &doc.payload)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let header: Value = serde_json::from_str(&text).map_err(header_error)?;
        let payload = std::fs::read(payload_path(path))?;
        Self::from_document(&Document { header, payload })
    }
}

/// Location of the binary payload belonging to the header at `path`.
pub fn payload_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".bin");
    PathBuf::from(p)
}

/// Document holding a single sample.
pub fn serialize(sample: &PosteriorSample, hyper: &Hyperparameters) -> Document {
    Posterior::new(hyper.clone(), sample.traj().t(), vec![sample.clone()]).to_document()
}

/// Inverse of [`serialize`]. Documents with several samples yield the first.
pub fn deserialize(doc: &Document) -> Result<(PosteriorSample, Hyperparameters)> {
    let p = Posterior::from_document(doc)?;
    let sample = p
        .samples
        .into_iter()
        .next()
        .ok_or_else(|| Error::document("samples", "document holds no samples"))?;
    Ok((sample, p.hyper))
}
