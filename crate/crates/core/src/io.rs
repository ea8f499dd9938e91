//! On-disk formats. Both files start with an 8-byte magic, a little-endian
//! `u32` version and a `u32`-length JSON header. Datasets follow with
//! `u64`-length-prefixed binary records; weight files with the raw
//! little-endian parameter values.

use std::io::{ErrorKind, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, FormatError, Result};
use crate::features::{FeatureMap, Standardizer, N_FEATURES};
use crate::geom::Sphere;
use crate::matching::GeometryNorm;
use crate::model::tape::Mat;
use crate::model::{Model, ModelConfig};
use crate::propagation::PathComponent;
use crate::scene::{Aabb, MaterialSpec, SceneRecord, SpherePrimitive};
use crate::vec3::Vec3;

pub const DATASET_MAGIC: &[u8; 8] = b"RFSPDATA";
pub const DATASET_VERSION: u32 = 1;
pub const WEIGHTS_MAGIC: &[u8; 8] = b"RFSPWGHT";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub version: u32,
    pub n_antennas: usize,
    pub n_features: usize,
    pub n_configs: usize,
    pub grid: (usize, usize),
    /// Codebook entries behind the feature blocks, in order.
    pub entries: Vec<usize>,
    pub materials: Vec<MaterialSpec>,
    pub includes_paths: bool,
}

impl DatasetHeader {
    pub fn new(grid: (usize, usize), entries: Vec<usize>, materials: Vec<MaterialSpec>, includes_paths: bool) -> Self {
        Self {
            version: DATASET_VERSION,
            n_antennas: grid.0 * grid.1,
            n_features: N_FEATURES,
            n_configs: entries.len(),
            grid,
            entries,
            materials,
            includes_paths,
        }
    }
}

/// Per configuration, per antenna path lists.
pub type RawPaths = Vec<Vec<Vec<PathComponent>>>;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub scene: SceneRecord,
    pub features: FeatureMap,
    pub paths: Option<RawPaths>,
}

fn write_preamble<W: Write>(w: &mut W, magic: &[u8; 8], version: u32, header: &impl Serialize) -> Result<()> {
    let json = serde_json::to_vec(header).map_err(|e| Error::InvalidInput(e.to_string()))?;
    w.write_all(magic)?;
    w.write_all(&version.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    Ok(())
}

fn read_preamble<R: Read, H: for<'de> Deserialize<'de>>(r: &mut R, magic: &[u8; 8], expected: u32) -> Result<H> {
    let corrupt = |m: String| Error::Format(FormatError::CorruptHeader(m));
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf).map_err(|e| corrupt(format!("missing magic: {e}")))?;
    if &buf != magic {
        return Err(corrupt("bad magic".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|e| corrupt(format!("missing version: {e}")))?;
    let found = u32::from_le_bytes(word);
    if found != expected {
        return Err(FormatError::VersionMismatch { found, expected }.into());
    }
    r.read_exact(&mut word).map_err(|e| corrupt(format!("missing header length: {e}")))?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json).map_err(|e| corrupt(format!("short header: {e}")))?;
    serde_json::from_slice(&json).map_err(|e| corrupt(e.to_string()))
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn vec3(&mut self, v: Vec3) {
        self.f64(v.x);
        self.f64(v.y);
        self.f64(v.z);
    }
}

struct Dec<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.buf.len() {
            return Err(format!("payload ends early at byte {}", self.pos));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> std::result::Result<u8, String> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> std::result::Result<usize, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn vec3(&mut self) -> std::result::Result<Vec3, String> {
        Ok(Vec3::new(self.f64()?, self.f64()?, self.f64()?))
    }
}

fn encode_record(h: &DatasetHeader, rec: &DatasetRecord) -> Result<Vec<u8>> {
    let f = &rec.features;
    if f.n_antennas != h.n_antennas || f.n_configs != h.n_configs || f.grid != h.grid || f.entries != h.entries {
        return Err(Error::InvalidInput("feature map shape differs from dataset header".into()));
    }
    if rec.paths.is_some() != h.includes_paths {
        return Err(Error::InvalidInput("raw paths presence differs from dataset header".into()));
    }
    let mut e = Enc::default();
    let s = &rec.scene;
    e.u64(s.rng_seed);
    e.vec3(s.bounds.min);
    e.vec3(s.bounds.max);
    e.f64(s.min_separation);
    e.u32(s.spheres.len());
    for p in &s.spheres {
        let idx = h
            .materials
            .iter()
            .position(|m| *m == p.material)
            .ok_or_else(|| Error::InvalidInput(format!("material {} not in dataset header", p.material.name)))?;
        e.vec3(p.sphere.center);
        e.f64(p.sphere.radius);
        e.u32(idx);
    }
    e.u64(f.scene_id);
    e.u32(f.degenerate_antennas);
    for v in &f.data {
        e.f64(*v);
    }
    match &rec.paths {
        Some(p) => {
            e.u8(1);
            let json = serde_json::to_vec(p).map_err(|err| Error::InvalidInput(err.to_string()))?;
            e.u64(json.len() as u64);
            e.0.extend_from_slice(&json);
        }
        None => e.u8(0),
    }
    Ok(e.0)
}

fn decode_record(h: &DatasetHeader, buf: &[u8]) -> std::result::Result<DatasetRecord, String> {
    let mut d = Dec { buf, pos: 0 };
    let rng_seed = d.u64()?;
    let bounds = Aabb { min: d.vec3()?, max: d.vec3()? };
    let min_separation = d.f64()?;
    let n = d.u32()?;
    let mut spheres = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let center = d.vec3()?;
        let radius = d.f64()?;
        let idx = d.u32()?;
        let material = h.materials.get(idx).ok_or_else(|| format!("material index {idx} out of range"))?.clone();
        spheres.push(SpherePrimitive { sphere: Sphere { center, radius }, material });
    }
    let scene_id = d.u64()?;
    let degenerate_antennas = d.u32()?;
    let len = h.n_antennas * h.n_features * h.n_configs;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        data.push(d.f64()?);
    }
    let paths = match d.u8()? {
        0 => None,
        1 => {
            let n = d.u64()? as usize;
            let json = d.take(n)?;
            Some(serde_json::from_slice(json).map_err(|e| e.to_string())?)
        }
        t => return Err(format!("bad paths tag {t}")),
    };
    if d.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - d.pos));
    }
    Ok(DatasetRecord {
        scene: SceneRecord { spheres, rng_seed, bounds, min_separation },
        features: FeatureMap {
            n_antennas: h.n_antennas,
            n_configs: h.n_configs,
            grid: h.grid,
            data,
            scene_id,
            entries: h.entries.clone(),
            degenerate_antennas,
        },
        paths,
    })
}

/// Append-only dataset writer.
pub struct DatasetWriter<W: Write> {
    inner: W,
    header: DatasetHeader,
    written: usize,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(mut inner: W, header: DatasetHeader) -> Result<Self> {
        write_preamble(&mut inner, DATASET_MAGIC, DATASET_VERSION, &header)?;
        Ok(Self { inner, header, written: 0 })
    }

    pub fn write(&mut self, rec: &DatasetRecord) -> Result<()> {
        let payload = encode_record(&self.header, rec)?;
        self.inner.write_all(&(payload.len() as u64).to_le_bytes())?;
        self.inner.write_all(&payload)?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Record-at-a-time dataset reader.
pub struct DatasetReader<R: Read> {
    inner: R,
    header: DatasetHeader,
    index: usize,
    done: bool,
}

impl<R: Read> DatasetReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header: DatasetHeader = read_preamble(&mut inner, DATASET_MAGIC, DATASET_VERSION)?;
        if header.version != DATASET_VERSION {
            return Err(FormatError::VersionMismatch { found: header.version, expected: DATASET_VERSION }.into());
        }
        if header.n_antennas != header.grid.0 * header.grid.1 || header.n_configs != header.entries.len() {
            return Err(FormatError::CorruptHeader("inconsistent shapes".into()).into());
        }
        Ok(Self { inner, header, index: 0, done: false })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    fn next_record(&mut self) -> Result<Option<DatasetRecord>> {
        let index = self.index;
        let mut len = [0u8; 8];
        let mut got = 0;
        while got < 8 {
            match self.inner.read(&mut len[got..]) {
                Ok(0) => break,
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
        if got == 0 {
            return Ok(None);
        }
        if got < 8 {
            return Err(FormatError::Truncated { index }.into());
        }
        let n = u64::from_le_bytes(len) as usize;
        let mut payload = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut payload)?;
        if payload.len() < n {
            return Err(FormatError::Truncated { index }.into());
        }
        let rec = decode_record(&self.header, &payload)
            .map_err(|detail| Error::Format(FormatError::CorruptRecord { index, detail }))?;
        self.index += 1;
        Ok(Some(rec))
    }
}

impl<R: Read> Iterator for DatasetReader<R> {
    type Item = Result<DatasetRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_record() {
            Ok(Some(r)) => Some(Ok(r)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn write_dataset(path: &std::path::Path, header: DatasetHeader, records: &[DatasetRecord]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut w = DatasetWriter::new(f, header)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_dataset(path: &std::path::Path) -> Result<(DatasetHeader, Vec<DatasetRecord>)> {
    let r = DatasetReader::new(std::io::BufReader::new(std::fs::File::open(path)?))?;
    let header = r.header().clone();
    let records = r.collect::<Result<Vec<_>>>()?;
    Ok((header, records))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsHeader {
    version: u32,
    config: ModelConfig,
    standardizer: Standardizer,
    norm: GeometryNorm,
    shapes: Vec<(String, usize, usize)>,
}

pub fn write_weights<W: Write>(mut w: W, model: &Model) -> Result<()> {
    let header = WeightsHeader {
        version: WEIGHTS_VERSION,
        config: model.config.clone(),
        standardizer: model.standardizer.clone(),
        norm: model.norm,
        shapes: model.param_specs().iter().map(|s| (s.name.clone(), s.rows, s.cols)).collect(),
    };
    write_preamble(&mut w, WEIGHTS_MAGIC, WEIGHTS_VERSION, &header)?;
    for p in &model.params {
        for v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_weights<R: Read>(mut r: R) -> Result<Model> {
    let header: WeightsHeader = read_preamble(&mut r, WEIGHTS_MAGIC, WEIGHTS_VERSION)?;
    let mut params = Vec::with_capacity(header.shapes.len());
    for (i, (_, rows, cols)) in header.shapes.iter().enumerate() {
        let mut buf = vec![0u8; rows * cols * 8];
        r.read_exact(&mut buf).map_err(|_| FormatError::Truncated { index: i })?;
        let data = buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        params.push(Mat::from_vec(*rows, *cols, data));
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(FormatError::CorruptRecord { index: params.len(), detail: "trailing bytes after weights".into() }.into());
    }
    let model = Model::from_parts(header.config, params, header.standardizer, header.norm)
        .map_err(|e| FormatError::CorruptHeader(e.to_string()))?;
    if model.param_specs().iter().zip(&header.shapes).any(|(s, h)| s.name != h.0) {
        return Err(FormatError::CorruptHeader("parameter names do not match configuration".into()).into());
    }
    Ok(model)
}

pub fn save_weights(path: &std::path::Path, model: &Model) -> Result<()> {
    write_weights(std::io::BufWriter::new(std::fs::File::create(path)?), model)
}

pub fn load_weights(path: &std::path::Path) -> Result<Model> {
    read_weights(std::io::BufReader::new(std::fs::File::open(path)?))
}
