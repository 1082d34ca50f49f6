//! Binary dataset container.
//!
//! Layout: magic `CKMD`, format version (u16 LE), header length (u32 LE), a
//! JSON header, then little-endian `f64` payload arrays with complex values
//! stored as interleaved (re, im): observations `T x P x M`, total channels
//! `T x N x M`, static channels `T x N x M`, per-slot static ray tables
//! `(tau, theta, phi, re, im)`, per-slot dynamic ray tables of the same
//! shape, and the per-slot synchronization errors.

use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{DynamicPath, GroundTruth, MeasurementSet, ScenarioConfig, Stage, SynthesisRequest, UserPose};
use crate::error::{Error, Result};
use crate::manifold::{ArrayDims, PathParams};
use crate::CMatrix;

pub const MAGIC: &[u8; 4] = b"CKMD";
pub const FORMAT_VERSION: u16 = 1;

/// A generated scenario together with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub config: ScenarioConfig,
    pub request: SynthesisRequest,
    pub measurements: MeasurementSet,
    pub truth: GroundTruth,
}

impl Dataset {
    pub fn generate(config: ScenarioConfig, request: SynthesisRequest) -> Result<Self> {
        let (measurements, truth) = super::synthesize_measurements(&config, &request)?;
        Ok(Dataset {
            config,
            request,
            measurements,
            truth,
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DynamicTag {
    scatterer: usize,
    active: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ScenarioConfig,
    request: SynthesisRequest,
    stage: Stage,
    dims: ArrayDims,
    grid_index: usize,
    n_slots: usize,
    pilots: Vec<usize>,
    noise_variance: f64,
    poses: Vec<UserPose>,
    static_counts: Vec<usize>,
    dynamic_tags: Vec<Vec<DynamicTag>>,
}

/// Human-readable mirror of the ground truth.
#[derive(Debug, Serialize)]
struct TruthSidecar<'a> {
    grid_index: usize,
    noise_variance: f64,
    sync_error: &'a [f64],
    slots: Vec<SidecarSlot>,
}

#[derive(Debug, Serialize)]
struct SidecarSlot {
    static_paths: Vec<SidecarRay>,
    dynamic_paths: Vec<SidecarDynamic>,
}

#[derive(Debug, Serialize)]
struct SidecarRay {
    tau: f64,
    theta: f64,
    phi: f64,
    coeff: [f64; 2],
}

#[derive(Debug, Serialize)]
struct SidecarDynamic {
    scatterer: usize,
    active: bool,
    tau: f64,
    theta: f64,
    phi: f64,
    coeff: [f64; 2],
}

struct Writer(Vec<u8>);

impl Writer {
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn complex(&mut self, c: Complex64) {
        self.f64(c.re);
        self.f64(c.im);
    }

    fn matrix(&mut self, m: &CMatrix) {
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                self.complex(m[(r, c)]);
            }
        }
    }

    fn ray(&mut self, p: &PathParams, c: Complex64) {
        self.f64(p.tau);
        self.f64(p.theta);
        self.f64(p.phi);
        self.complex(c);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                needed: self.pos + n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn complex(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<CMatrix> {
        let mut m = CMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.complex()?;
            }
        }
        Ok(m)
    }

    fn ray(&mut self) -> Result<(PathParams, Complex64)> {
        let p = PathParams {
            tau: self.f64()?,
            theta: self.f64()?,
            phi: self.f64()?,
        };
        Ok((p, self.complex()?))
    }
}

/// Serializes a dataset into the binary container.
pub fn to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let m = &ds.measurements;
    let t = &ds.truth;
    let header = Header {
        config: ds.config.clone(),
        request: ds.request,
        stage: m.stage,
        dims: m.dims,
        grid_index: m.grid_index,
        n_slots: m.n_slots(),
        pilots: m.pilots.clone(),
        noise_variance: t.noise_variance,
        poses: m.poses.clone(),
        static_counts: t.static_paths.iter().map(Vec::len).collect(),
        dynamic_tags: t
            .dynamic_paths
            .iter()
            .map(|slot| {
                slot.iter()
                    .map(|d| DynamicTag {
                        scatterer: d.scatterer,
                        active: d.active,
                    })
                    .collect()
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut w = Writer(Vec::with_capacity(json.len() + 64));
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.0.extend_from_slice(&(json.len() as u32).to_le_bytes());
    w.0.extend_from_slice(&json);
    for y in &m.observations {
        w.matrix(y);
    }
    for h in &t.channels {
        w.matrix(h);
    }
    for h in &t.static_channels {
        w.matrix(h);
    }
    for (paths, coeffs) in t.static_paths.iter().zip(&t.static_coeffs) {
        for (p, c) in paths.iter().zip(coeffs) {
            w.ray(p, *c);
        }
    }
    for slot in &t.dynamic_paths {
        for d in slot {
            w.ray(&d.params, d.coeff);
        }
    }
    for &e in &t.sync_error {
        w.f64(e);
    }
    Ok(w.0)
}

/// Parses the binary container.
pub fn from_bytes(bytes: &[u8]) -> Result<Dataset> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Format("bad magic bytes (expected CKMD)".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let len = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes")) as usize;
    let header: Header = serde_json::from_slice(r.take(len)?)?;
    let dims = header.dims;
    let (n, mm, p, t) = (dims.n, dims.m(), header.pilots.len(), header.n_slots);
    if header.static_counts.len() != t || header.dynamic_tags.len() != t || header.poses.len() != t {
        return Err(Error::Format("header slot counts disagree".into()));
    }
    let observations = (0..t).map(|_| r.matrix(p, mm)).collect::<Result<Vec<_>>>()?;
    let channels = (0..t).map(|_| r.matrix(n, mm)).collect::<Result<Vec<_>>>()?;
    let static_channels = (0..t).map(|_| r.matrix(n, mm)).collect::<Result<Vec<_>>>()?;
    let mut static_paths = Vec::with_capacity(t);
    let mut static_coeffs = Vec::with_capacity(t);
    for &count in &header.static_counts {
        let (ps, cs): (Vec<_>, Vec<_>) = (0..count).map(|_| r.ray()).collect::<Result<Vec<_>>>()?.into_iter().unzip();
        static_paths.push(ps);
        static_coeffs.push(cs);
    }
    let mut dynamic_paths = Vec::with_capacity(t);
    for tags in &header.dynamic_tags {
        let mut slot = Vec::with_capacity(tags.len());
        for tag in tags {
            let (params, coeff) = r.ray()?;
            slot.push(DynamicPath {
                scatterer: tag.scatterer,
                params,
                coeff,
                active: tag.active,
            });
        }
        dynamic_paths.push(slot);
    }
    let sync_error = (0..t).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload",
            bytes.len() - r.pos
        )));
    }
    let measurements = MeasurementSet {
        stage: header.stage,
        dims,
        grid_index: header.grid_index,
        pilots: header.pilots,
        observations,
        poses: header.poses,
    };
    measurements.validate()?;
    Ok(Dataset {
        config: header.config,
        request: header.request,
        measurements,
        truth: GroundTruth {
            static_paths,
            static_coeffs,
            dynamic_paths,
            sync_error,
            noise_variance: header.noise_variance,
            static_channels,
            channels,
        },
    })
}

/// Path of the ground-truth sidecar written next to a dataset.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

/// Writes the dataset and its JSON ground-truth sidecar.
pub fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    fs::write(path, to_bytes(ds)?)?;
    let t = &ds.truth;
    let sidecar = TruthSidecar {
        grid_index: ds.measurements.grid_index,
        noise_variance: t.noise_variance,
        sync_error: &t.sync_error,
        slots: (0..t.channels.len())
            .map(|s| SidecarSlot {
                static_paths: t.static_paths[s]
                    .iter()
                    .zip(&t.static_coeffs[s])
                    .map(|(p, c)| SidecarRay {
                        tau: p.tau,
                        theta: p.theta,
                        phi: p.phi,
                        coeff: [c.re, c.im],
                    })
                    .collect(),
                dynamic_paths: t.dynamic_paths[s]
                    .iter()
                    .map(|d| SidecarDynamic {
                        scatterer: d.scatterer,
                        active: d.active,
                        tau: d.params.tau,
                        theta: d.params.theta,
                        phi: d.params.phi,
                        coeff: [d.coeff.re, d.coeff.im],
                    })
                    .collect(),
            })
            .collect(),
    };
    fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    from_bytes(&fs::read(path)?)
}
