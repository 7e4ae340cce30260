//! Binary model file, little-endian:
//!
//! ```text
//! "SVMM" u32 version
//! u8 kernel  f64 gamma  f64 coef0  f64 C
//! u32 classes, then per class: u32 byte length, UTF-8 name
//! u32 dim  u8 standardized [f32 mean[dim]  f32 scale[dim]]
//! per class: u32 support count, f64 coef[count], f64 bias, f32 rows[count * dim]
//! ```

use std::path::Path;

use super::{BinarySvm, KernelKind, KernelSpec, Result, Standardizer, SvmError, SvmModel};

pub const SVM_MAGIC: &[u8; 4] = b"SVMM";
pub const SVM_VERSION: u32 = 1;

impl SvmModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(SVM_MAGIC);
        out.extend_from_slice(&SVM_VERSION.to_le_bytes());
        out.push(self.kernel.kind.tag());
        for v in [self.kernel.gamma, self.kernel.coef0, self.c] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(self.class_names.len() as u32).to_le_bytes());
        for name in &self.class_names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        match &self.standardizer {
            Some(s) => {
                out.push(1);
                for v in s.mean.iter().chain(&s.scale) {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            None => out.push(0),
        }
        for m in &self.machines {
            out.extend_from_slice(&(m.support.len() as u32).to_le_bytes());
            for v in m.coef.iter().chain(std::iter::once(&m.bias)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for v in m.support.iter().flatten() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != SVM_MAGIC {
            return Err(SvmError::Format("bad magic, not an SVM model".into()));
        }
        let version = r.u32()?;
        if version != SVM_VERSION {
            return Err(SvmError::Version(version));
        }
        let tag = r.take(1)?[0];
        let kind = KernelKind::from_tag(tag).ok_or_else(|| SvmError::Format(format!("unknown kernel tag {tag}")))?;
        let kernel = KernelSpec { kind, gamma: r.f64()?, coef0: r.f64()? };
        let c = r.f64()?;
        let classes = r.u32()? as usize;
        let class_names = (0..classes)
            .map(|_| {
                let len = r.u32()? as usize;
                String::from_utf8(r.take(len)?.to_vec()).map_err(|_| SvmError::Format("class name is not UTF-8".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let dim = r.u32()? as usize;
        let standardizer = match r.take(1)?[0] {
            0 => None,
            1 => Some(Standardizer { mean: r.f32s(dim)?, scale: r.f32s(dim)? }),
            b => return Err(SvmError::Format(format!("bad standardizer flag {b}"))),
        };
        let machines = (0..classes)
            .map(|_| {
                let count = r.u32()? as usize;
                let coef = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
                let bias = r.f64()?;
                let support = (0..count).map(|_| r.f32s(dim)).collect::<Result<Vec<_>>>()?;
                Ok(BinarySvm { kernel, c, dim, support, coef, bias })
            })
            .collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(SvmError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(SvmModel { class_names, kernel, c, standardizer, machines })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| SvmError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| SvmError::Format("size overflow".into()))?)?;
        Ok(raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn save_model(model: &SvmModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_bytes()).map_err(|source| SvmError::Io { path: path.display().to_string(), source })
}

pub fn load_model(path: &Path) -> Result<SvmModel> {
    let bytes = std::fs::read(path).map_err(|source| SvmError::Io { path: path.display().to_string(), source })?;
    SvmModel::from_bytes(&bytes)
}
