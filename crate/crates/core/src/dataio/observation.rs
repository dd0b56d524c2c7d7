//! Posed multi-view observations and their JSON manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::pnm;
use crate::geom::{Camera, Intrinsics, MatrixRows, Transform};
use crate::{Error, Result, Scalar};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum State {
    Source,
    Target,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ViewRecord {
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    pub world_from_camera: MatrixRows,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub state: State,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics<f64>,
    pub views: Vec<ViewRecord>,
}

/// One posed view: 8-bit RGB, binary mask (0/1), optional part labels
/// (0 = background, ℓ+1 = part ℓ).
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub world_from_camera: Transform<f64>,
    pub rgb: Vec<u8>,
    pub mask: Vec<u8>,
    pub labels: Option<Vec<u8>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationSet {
    pub state: State,
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics<f64>,
    pub views: Vec<View>,
}

fn json_err(path: &Path) -> impl FnOnce(serde_json::Error) -> Error + '_ {
    move |source| Error::Json {
        path: path.to_path_buf(),
        source,
    }
}

impl ObservationSet {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() {
            return Err(Error::invalid("observation set has no views"));
        }
        let n = self.width * self.height;
        for (i, v) in self.views.iter().enumerate() {
            if v.rgb.len() != 3 * n || v.mask.len() != n || v.labels.as_ref().is_some_and(|l| l.len() != n) {
                return Err(Error::invalid(format!("view {i}: image sizes differ from {}x{}", self.width, self.height)));
            }
            if v.mask.iter().any(|m| *m > 1) {
                return Err(Error::invalid(format!("view {i}: mask values must be 0 or 1")));
            }
            if !v.world_from_camera.is_rigid(1e-9) {
                return Err(Error::invalid(format!("view {i}: camera pose is not rigid")));
            }
        }
        self.camera(0)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn camera(&self, i: usize) -> Result<Camera<Scalar>> {
        let v = self.views.get(i).ok_or_else(|| Error::invalid(format!("no view {i}")))?;
        Camera::new(self.intrinsics.cast(), v.world_from_camera.cast(), self.width, self.height)
    }

    /// Pixel `p` of view `i` as RGB in [0, 1].
    #[inline]
    pub fn color(&self, i: usize, p: usize) -> [Scalar; 3] {
        let c = &self.views[i].rgb[3 * p..3 * p + 3];
        [c[0] as Scalar / 255.0, c[1] as Scalar / 255.0, c[2] as Scalar / 255.0]
    }

    /// Subset keeping the listed views in order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            views: idx.iter().map(|&i| self.views[i].clone()).collect(),
            ..self.clone_header()
        }
    }

    fn clone_header(&self) -> Self {
        Self {
            state: self.state,
            width: self.width,
            height: self.height,
            intrinsics: self.intrinsics,
            views: Vec::new(),
        }
    }

    /// Writes `manifest.json` plus `images/`, `masks/`, `labels/` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        for sub in ["images", "masks", "labels"] {
            let p = dir.join(sub);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let mut records = Vec::with_capacity(self.views.len());
        for (i, v) in self.views.iter().enumerate() {
            let image = format!("images/view_{i:03}.ppm");
            let mask = format!("masks/view_{i:03}.pgm");
            pnm::write(&dir.join(&image), self.width, self.height, 3, &v.rgb)?;
            pnm::write(&dir.join(&mask), self.width, self.height, 1, &v.mask)?;
            let labels = match &v.labels {
                Some(l) => {
                    let name = format!("labels/view_{i:03}.pgm");
                    pnm::write(&dir.join(&name), self.width, self.height, 1, l)?;
                    Some(name)
                }
                None => None,
            };
            records.push(ViewRecord {
                image,
                mask,
                labels,
                world_from_camera: MatrixRows::from(&v.world_from_camera),
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            state: self.state,
            width: self.width,
            height: self.height,
            intrinsics: self.intrinsics,
            views: records,
        };
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&manifest).map_err(json_err(&path))?;
        std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text).map_err(json_err(&path))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion {
                found: m.version,
                expected: MANIFEST_VERSION,
            });
        }
        if m.views.is_empty() {
            return Err(Error::invalid(format!("{}: empty views list", path.display())));
        }
        let load = |rel: &str, channels: usize| -> Result<Vec<u8>> {
            let p: PathBuf = dir.join(rel);
            let img = pnm::read(&p)?;
            if img.width != m.width || img.height != m.height || img.channels != channels {
                return Err(Error::Format {
                    path: p,
                    offset: 0,
                    msg: format!("expected {}x{} with {channels} channel(s)", m.width, m.height),
                });
            }
            Ok(img.data)
        };
        let mut views = Vec::with_capacity(m.views.len());
        for r in &m.views {
            let pose = Transform::from_matrix(r.world_from_camera.0)?;
            views.push(View {
                world_from_camera: pose,
                rgb: load(&r.image, 3)?,
                mask: load(&r.mask, 1)?,
                labels: r.labels.as_deref().map(|l| load(l, 1)).transpose()?,
            });
        }
        let set = Self {
            state: m.state,
            width: m.width,
            height: m.height,
            intrinsics: m.intrinsics,
            views,
        };
        set.validate()?;
        Ok(set)
    }
}
