//! Versioned little-endian checkpoint: field, optional head, motions, voxels.

use std::path::Path;

use crate::field::{FieldShape, RadianceField, SegmentationHead};
use crate::geom::{Aabb, Twist, Vec3};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ARTF";
pub const CHECKPOINT_VERSION: u32 = 1;

const FLAG_FROZEN: u32 = 1;
const FLAG_MOTIONS: u32 = 2;
const FLAG_VOXELS: u32 = 4;

/// Labeled occupied cells of a cubic grid over the field bounds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VoxelRecord {
    pub resolution: usize,
    /// `(linear cell index, label)`, sorted by index.
    pub cells: Vec<(u32, u8)>,
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub field: RadianceField<f64>,
    pub head: Option<SegmentationHead<f64>>,
    /// One twist per part; part 0 is zero.
    pub motions: Option<Vec<Twist<f64>>>,
    pub voxels: Option<VoxelRecord>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(self.bytes.len(), format!("truncated: need {n} bytes at offset {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, expected: usize, what: &str) -> Result<Vec<f64>> {
        let at = self.pos;
        let n = self.u64()? as usize;
        if n != expected {
            return Err(self.fail(at, format!("{what}: {n} values, expected {expected}")));
        }
        (0..n).map(|_| self.f64()).collect()
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, v: &[f64]) {
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn from_field(field: RadianceField<f64>) -> Self {
        Self {
            field,
            head: None,
            motions: None,
            voxels: None,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let shape = self.field.shape();
        let res = self.field.grid().resolution;
        let b = self.field.grid().bounds;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        put_u32(&mut out, CHECKPOINT_VERSION);
        for r in res {
            put_u32(&mut out, r as u32);
        }
        put_u32(&mut out, shape.feature_dim as u32);
        put_u32(&mut out, shape.color_hidden as u32);
        let (k, hidden) = self.head.as_ref().map_or((0, 0), |h| (h.shape().output, h.shape().hidden));
        put_u32(&mut out, k as u32);
        put_u32(&mut out, hidden as u32);
        for v in [b.min.x, b.min.y, b.min.z, b.max.x, b.max.y, b.max.z] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let mut flags = 0;
        if self.field.is_frozen() {
            flags |= FLAG_FROZEN;
        }
        if self.motions.is_some() {
            flags |= FLAG_MOTIONS;
        }
        if self.voxels.is_some() {
            flags |= FLAG_VOXELS;
        }
        put_u32(&mut out, flags);
        put_f64s(&mut out, self.field.params());
        if let Some(h) = &self.head {
            put_f64s(&mut out, h.params());
        }
        if let Some(m) = &self.motions {
            put_u32(&mut out, m.len() as u32);
            for t in m {
                for v in t.to_array() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        if let Some(v) = &self.voxels {
            put_u32(&mut out, v.resolution as u32);
            out.extend_from_slice(&(v.cells.len() as u64).to_le_bytes());
            for (i, l) in &v.cells {
                put_u32(&mut out, *i);
                out.push(*l);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(r.fail(0, "bad magic, expected ARTF"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let at = r.pos;
        let res = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
        if res[0] != res[1] || res[1] != res[2] || res[0] < 2 {
            return Err(r.fail(at, format!("unsupported grid resolution {res:?}")));
        }
        let feature_dim = r.u32()? as usize;
        let color_hidden = r.u32()? as usize;
        let k = r.u32()? as usize;
        let seg_hidden = r.u32()? as usize;
        let at = r.pos;
        let mut b = [0.0; 6];
        for v in b.iter_mut() {
            *v = r.f64()?;
        }
        let bounds = Aabb::new(Vec3::new(b[0], b[1], b[2]), Vec3::new(b[3], b[4], b[5])).map_err(|e| r.fail(at, e.to_string()))?;
        let flags = r.u32()?;
        let shape = FieldShape {
            resolution: res[0],
            feature_dim,
            color_hidden,
        };
        if feature_dim == 0 || feature_dim > crate::field::MAX_FEATURES || color_hidden == 0 || color_hidden > crate::field::MAX_WIDTH {
            return Err(r.fail(at, "field widths out of range"));
        }
        let expected = RadianceField::<f64>::param_count_for(res[0], shape);
        let at = r.pos;
        let params = r.f64s(expected, "field parameters")?;
        let mut field = RadianceField::from_params(bounds, shape, params).map_err(|e| r.fail(at, e.to_string()))?;
        if flags & FLAG_FROZEN != 0 {
            field.freeze();
        }
        let head = if k > 0 {
            if k > crate::field::MAX_PARTS || seg_hidden == 0 || seg_hidden > crate::field::MAX_WIDTH {
                return Err(r.fail(at, "segmentation head widths out of range"));
            }
            let at = r.pos;
            let n = crate::field::MlpShape::new(feature_dim, seg_hidden, k).len();
            let p = r.f64s(n, "head parameters")?;
            Some(SegmentationHead::from_params(feature_dim, seg_hidden, k, p).map_err(|e| r.fail(at, e.to_string()))?)
        } else {
            None
        };
        let motions = if flags & FLAG_MOTIONS != 0 {
            let at = r.pos;
            let n = r.u32()? as usize;
            if n == 0 || n > crate::field::MAX_PARTS || (k > 0 && n != k) {
                return Err(r.fail(at, format!("{n} motions for {k} parts")));
            }
            let mut m = Vec::with_capacity(n);
            for _ in 0..n {
                let mut a = [0.0; 6];
                for v in a.iter_mut() {
                    *v = r.f64()?;
                }
                m.push(Twist::from_array(a));
            }
            Some(m)
        } else {
            None
        };
        let voxels = if flags & FLAG_VOXELS != 0 {
            let resolution = r.u32()? as usize;
            let at = r.pos;
            let n = r.u64()? as usize;
            if n > resolution.pow(3) {
                return Err(r.fail(at, "more voxel cells than the grid holds"));
            }
            let mut cells = Vec::with_capacity(n);
            for _ in 0..n {
                let i = r.u32()?;
                let l = r.take(1)?[0];
                cells.push((i, l));
            }
            Some(VoxelRecord { resolution, cells })
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(r.fail(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            field,
            head,
            motions,
            voxels,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
