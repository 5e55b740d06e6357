//! Versioned binary container for trained models.
//!
//! Layout: magic `SDVD`, u32 LE version (= 1), u32 LE tensor count, then per
//! tensor: u16 LE name length, UTF-8 name, u8 rank, u32 LE dims, float32 LE
//! values in row-major order. The same container carries UBM, TV, PLDA, MLP
//! and LSTM models, distinguished by tensor name prefixes (`ubm.`, `tv.`,
//! `plda.`, `mlp.`, `lstm.`).

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{EngineError, Result};
use crate::nnet::{LstmLayer, LstmModel, MlpModel, SequenceModel};
use crate::speaker::{GmmUbm, PldaModel, TvMatrix};

pub const MAGIC: &[u8; 4] = b"SDVD";
pub const VERSION: u32 = 1;

/// A named row-major tensor as stored on disk (file precision is float32).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: Vec<f32>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, values: Vec<f32>) -> Self {
        let t = Self {
            name: name.into(),
            dims,
            values,
        };
        debug_assert_eq!(t.dims.iter().product::<usize>(), t.values.len());
        t
    }

    fn from_array1(name: &str, a: &Array1<f64>) -> Self {
        Self::new(name, vec![a.len()], a.iter().map(|&v| v as f32).collect())
    }

    fn from_array2(name: &str, a: &Array2<f64>) -> Self {
        Self::new(
            name,
            vec![a.nrows(), a.ncols()],
            a.iter().map(|&v| v as f32).collect(),
        )
    }

    fn to_array1(&self) -> Array1<f64> {
        Array1::from_iter(self.values.iter().map(|&v| v as f64))
    }

    fn to_array2(&self) -> Array2<f64> {
        Array2::from_shape_vec(
            (self.dims[0], self.dims[1]),
            self.values.iter().map(|&v| v as f64).collect(),
        )
        .expect("validated shape")
    }
}

fn format_err<T>(offset: u64, msg: impl Into<String>) -> Result<T> {
    Err(EngineError::Format {
        offset,
        msg: msg.into(),
    })
}

/// Serialize tensors in the given order.
pub fn write_tensors(path: &Path, tensors: &[Tensor]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        let name = t.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return format_err(buf.len() as u64, format!("tensor name too long: {}", t.name));
        }
        if t.dims.len() > u8::MAX as usize {
            return format_err(buf.len() as u64, format!("tensor rank too high: {}", t.name));
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(t.dims.len() as u8);
        for &d in &t.dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &t.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return format_err(
                self.pos as u64,
                format!("unexpected end of file while reading {what}"),
            );
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16_le(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32_le(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a model file into named tensors and their header byte offsets.
pub fn read_tensors_with_offsets(path: &Path) -> Result<Vec<(Tensor, u64)>> {
    let data = std::fs::read(path)?;
    let mut r = Reader {
        data: &data,
        pos: 0,
    };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return format_err(0, format!("bad magic {magic:?}, expected \"SDVD\""));
    }
    let version = r.u32_le("version")?;
    if version != VERSION {
        return format_err(4, format!("unsupported version {version}, expected {VERSION}"));
    }
    let count = r.u32_le("tensor count")? as usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let header_offset = r.pos as u64;
        let name_len = r.u16_le("name length")? as usize;
        let name_bytes = r.take(name_len, "tensor name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| EngineError::Format {
                offset: header_offset,
                msg: format!("tensor {i}: name is not valid UTF-8"),
            })?
            .to_string();
        let rank = r.take(1, "rank")?[0] as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u32_le("dimension")? as usize);
        }
        let len: usize = dims.iter().product();
        let bytes = r.take(len * 4, &format!("values of {name}"))?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((Tensor { name, dims, values }, header_offset));
    }
    if r.pos != data.len() {
        return format_err(r.pos as u64, "trailing bytes after last tensor");
    }
    Ok(out)
}

pub fn read_tensors(path: &Path) -> Result<Vec<Tensor>> {
    Ok(read_tensors_with_offsets(path)?
        .into_iter()
        .map(|(t, _)| t)
        .collect())
}

struct TensorMap {
    map: BTreeMap<String, (Tensor, u64)>,
}

impl TensorMap {
    fn load(path: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (t, off) in read_tensors_with_offsets(path)? {
            if map.insert(t.name.clone(), (t, off)).is_some() {
                return format_err(off, "duplicate tensor name");
            }
        }
        Ok(Self { map })
    }

    fn get(&self, name: &str, dims: usize) -> Result<&Tensor> {
        match self.map.get(name) {
            None => format_err(0, format!("missing tensor {name:?}")),
            Some((t, off)) if t.dims.len() != dims => format_err(
                *off,
                format!("tensor {name:?} has rank {}, expected {dims}", t.dims.len()),
            ),
            Some((t, _)) => Ok(t),
        }
    }

    fn get_checked(&self, name: &str, dims: &[usize]) -> Result<&Tensor> {
        let t = self.get(name, dims.len())?;
        if t.dims != dims {
            let off = self.map[name].1;
            return format_err(
                off,
                format!("tensor {name:?} has shape {:?}, expected {dims:?}", t.dims),
            );
        }
        Ok(t)
    }

    fn has(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }
}

pub fn save_ubm(path: &Path, ubm: &GmmUbm) -> Result<()> {
    write_tensors(
        path,
        &[
            Tensor::from_array1("ubm.weights", &ubm.weights),
            Tensor::from_array2("ubm.means", &ubm.means),
            Tensor::from_array2("ubm.variances", &ubm.variances),
        ],
    )
}

pub fn load_ubm(path: &Path) -> Result<GmmUbm> {
    let map = TensorMap::load(path)?;
    let weights = map.get("ubm.weights", 1)?;
    let c = weights.dims[0];
    let means = map.get("ubm.means", 2)?;
    let f = means.dims[1];
    let means = map.get_checked("ubm.means", &[c, f])?;
    let variances = map.get_checked("ubm.variances", &[c, f])?;
    Ok(GmmUbm {
        weights: weights.to_array1(),
        means: means.to_array2(),
        variances: variances.to_array2(),
    })
}

pub fn save_tv(path: &Path, tv: &TvMatrix) -> Result<()> {
    let t = Tensor::new(
        "tv.matrix",
        vec![tv.components, tv.feat_dim, tv.ivector_dim()],
        tv.mat.iter().map(|&v| v as f32).collect(),
    );
    write_tensors(path, &[t])
}

pub fn load_tv(path: &Path) -> Result<TvMatrix> {
    let map = TensorMap::load(path)?;
    let t = map.get("tv.matrix", 3)?;
    let (c, f, d) = (t.dims[0], t.dims[1], t.dims[2]);
    let mat = Array2::from_shape_vec((c * f, d), t.values.iter().map(|&v| v as f64).collect())
        .expect("validated shape");
    Ok(TvMatrix {
        mat,
        components: c,
        feat_dim: f,
    })
}

pub fn save_plda(path: &Path, plda: &PldaModel) -> Result<()> {
    let mut tensors = vec![
        Tensor::from_array1("plda.mean", &plda.mean),
        Tensor::from_array2("plda.between", &plda.between),
        Tensor::from_array2("plda.within", &plda.within),
    ];
    if let Some(th) = plda.sv_threshold {
        tensors.push(Tensor::new("plda.sv_threshold", vec![1], vec![th as f32]));
    }
    write_tensors(path, &tensors)
}

pub fn load_plda(path: &Path) -> Result<PldaModel> {
    let map = TensorMap::load(path)?;
    let mean = map.get("plda.mean", 1)?;
    let d = mean.dims[0];
    let between = map.get_checked("plda.between", &[d, d])?;
    let within = map.get_checked("plda.within", &[d, d])?;
    let sv_threshold = if map.has("plda.sv_threshold") {
        Some(map.get_checked("plda.sv_threshold", &[1])?.values[0] as f64)
    } else {
        None
    };
    Ok(PldaModel {
        mean: mean.to_array1(),
        between: between.to_array2(),
        within: within.to_array2(),
        sv_threshold,
    })
}

pub fn save_sequence_model(path: &Path, model: &SequenceModel) -> Result<()> {
    let mut tensors = Vec::new();
    match model {
        SequenceModel::Mlp(mlp) => {
            for (i, (w, b)) in mlp.layers.iter().enumerate() {
                tensors.push(Tensor::from_array2(&format!("mlp.{i}.weight"), w));
                tensors.push(Tensor::from_array1(&format!("mlp.{i}.bias"), b));
            }
        }
        SequenceModel::Lstm(lstm) => {
            for (i, l) in lstm.layers.iter().enumerate() {
                let named: [(&str, &Array2<f64>); 8] = [
                    ("w_xi", &l.w_xi),
                    ("w_hi", &l.w_hi),
                    ("w_xf", &l.w_xf),
                    ("w_hf", &l.w_hf),
                    ("w_xo", &l.w_xo),
                    ("w_ho", &l.w_ho),
                    ("w_xg", &l.w_xg),
                    ("w_hg", &l.w_hg),
                ];
                for (suffix, m) in named {
                    tensors.push(Tensor::from_array2(&format!("lstm.{i}.{suffix}"), m));
                }
                let biases: [(&str, &Array1<f64>); 4] = [
                    ("b_i", &l.b_i),
                    ("b_f", &l.b_f),
                    ("b_o", &l.b_o),
                    ("b_g", &l.b_g),
                ];
                for (suffix, v) in biases {
                    tensors.push(Tensor::from_array1(&format!("lstm.{i}.{suffix}"), v));
                }
            }
            tensors.push(Tensor::from_array2("lstm.out.weight", &lstm.w_out));
            tensors.push(Tensor::from_array1("lstm.out.bias", &lstm.b_out));
        }
    }
    write_tensors(path, &tensors)
}

pub fn load_sequence_model(path: &Path) -> Result<SequenceModel> {
    let map = TensorMap::load(path)?;
    if map.has("mlp.0.weight") {
        let mut layers = Vec::new();
        let mut i = 0;
        while map.has(&format!("mlp.{i}.weight")) {
            let w = map.get(&format!("mlp.{i}.weight"), 2)?;
            let b = map.get_checked(&format!("mlp.{i}.bias"), &[w.dims[0]])?;
            if let Some((prev_w, _)) = layers.last() {
                let prev: &Array2<f64> = prev_w;
                if prev.nrows() != w.dims[1] {
                    return format_err(
                        map.map[&format!("mlp.{i}.weight")].1,
                        format!(
                            "layer {i} expects input {}, previous layer outputs {}",
                            w.dims[1],
                            prev.nrows()
                        ),
                    );
                }
            }
            layers.push((w.to_array2(), b.to_array1()));
            i += 1;
        }
        if layers.is_empty() {
            return format_err(0, "MLP model has no layers");
        }
        if layers.last().unwrap().0.nrows() != 2 {
            return format_err(0, "MLP output layer must have 2 classes");
        }
        return Ok(SequenceModel::Mlp(MlpModel { layers }));
    }
    if map.has("lstm.0.w_xi") {
        let mut layers = Vec::new();
        let mut i = 0;
        while map.has(&format!("lstm.{i}.w_xi")) {
            let w_xi = map.get(&format!("lstm.{i}.w_xi"), 2)?;
            let (hidden, input) = (w_xi.dims[0], w_xi.dims[1]);
            let get2 = |s: &str| map.get_checked(&format!("lstm.{i}.{s}"), &[hidden, input]);
            let get2h = |s: &str| map.get_checked(&format!("lstm.{i}.{s}"), &[hidden, hidden]);
            let get1 = |s: &str| map.get_checked(&format!("lstm.{i}.{s}"), &[hidden]);
            layers.push(LstmLayer {
                w_xi: w_xi.to_array2(),
                w_hi: get2h("w_hi")?.to_array2(),
                b_i: get1("b_i")?.to_array1(),
                w_xf: get2("w_xf")?.to_array2(),
                w_hf: get2h("w_hf")?.to_array2(),
                b_f: get1("b_f")?.to_array1(),
                w_xo: get2("w_xo")?.to_array2(),
                w_ho: get2h("w_ho")?.to_array2(),
                b_o: get1("b_o")?.to_array1(),
                w_xg: get2("w_xg")?.to_array2(),
                w_hg: get2h("w_hg")?.to_array2(),
                b_g: get1("b_g")?.to_array1(),
            });
            i += 1;
        }
        let hidden = layers.last().map(|l| l.b_i.len()).unwrap_or(0);
        let w_out = map.get_checked("lstm.out.weight", &[2, hidden])?;
        let b_out = map.get_checked("lstm.out.bias", &[2])?;
        return Ok(SequenceModel::Lstm(LstmModel {
            layers,
            w_out: w_out.to_array2(),
            b_out: b_out.to_array1(),
        }));
    }
    format_err(8, "file contains neither mlp.* nor lstm.* tensors")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{LstmModel, MlpModel};

    fn quantize(model: &mut SequenceModel) {
        let params: Vec<f64> = model
            .params_flat()
            .iter()
            .map(|&v| v as f32 as f64)
            .collect();
        model.set_params_flat(&params).unwrap();
    }

    #[test]
    fn mlp_round_trip_is_bit_exact_at_file_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mdl");
        let mut model = SequenceModel::Mlp(MlpModel::new(6, &[4, 3], 1));
        quantize(&mut model);
        save_sequence_model(&path, &model).unwrap();
        let back = load_sequence_model(&path).unwrap();
        assert_eq!(back.params_flat(), model.params_flat());
        // File-level round trip is byte-identical.
        let bytes = std::fs::read(&path).unwrap();
        let path2 = dir.path().join("m2.mdl");
        save_sequence_model(&path2, &back).unwrap();
        assert_eq!(std::fs::read(&path2).unwrap(), bytes);
    }

    #[test]
    fn lstm_round_trip_is_bit_exact_at_file_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.mdl");
        let mut model = SequenceModel::Lstm(LstmModel::new(5, 4, 2, 2));
        quantize(&mut model);
        save_sequence_model(&path, &model).unwrap();
        let back = load_sequence_model(&path).unwrap();
        assert_eq!(back.params_flat(), model.params_flat());
    }

    #[test]
    fn truncated_file_is_rejected_without_partial_model() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.mdl");
        let model = SequenceModel::Mlp(MlpModel::new(4, &[3], 0));
        save_sequence_model(&path, &model).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [3usize, 9, 15, bytes.len() - 2] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            match load_sequence_model(&path) {
                Err(EngineError::Format { .. }) => {}
                other => panic!("expected format error at cut {cut}, got {other:?}"),
            }
        }
    }

    #[test]
    fn wrong_magic_names_the_expected_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.mdl");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match load_sequence_model(&path) {
            Err(EngineError::Format { offset, msg }) => {
                assert_eq!(offset, 0);
                assert!(msg.contains("SDVD"), "message should name the magic: {msg}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_version_is_rejected_at_offset_4() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.mdl");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&7u32.to_le_bytes());
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::write(&path, bytes).unwrap();
        match read_tensors(&path) {
            Err(EngineError::Format { offset, .. }) => assert_eq!(offset, 4),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn shape_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.mdl");
        // plda.within deliberately non-square.
        write_tensors(
            &path,
            &[
                Tensor::new("plda.mean", vec![2], vec![0.0; 2]),
                Tensor::new("plda.between", vec![2, 2], vec![0.0; 4]),
                Tensor::new("plda.within", vec![2, 3], vec![0.0; 6]),
            ],
        )
        .unwrap();
        assert!(matches!(
            load_plda(&path),
            Err(EngineError::Format { .. })
        ));
    }

    #[test]
    fn ubm_tv_plda_round_trip() {
        use ndarray::{arr1, arr2};
        let dir = tempfile::tempdir().unwrap();

        let ubm = GmmUbm {
            weights: arr1(&[0.25, 0.75]),
            means: arr2(&[[1.0, 2.0], [3.0, 4.0]]),
            variances: arr2(&[[0.5, 0.5], [1.5, 2.5]]),
        };
        let p = dir.path().join("u.mdl");
        save_ubm(&p, &ubm).unwrap();
        assert_eq!(load_ubm(&p).unwrap(), ubm);

        let tv = TvMatrix {
            mat: arr2(&[[0.5, -0.5], [1.25, 2.0], [3.0, 4.5], [-1.0, 0.25]]),
            components: 2,
            feat_dim: 2,
        };
        let p = dir.path().join("t.mdl");
        save_tv(&p, &tv).unwrap();
        assert_eq!(load_tv(&p).unwrap(), tv);

        let plda = PldaModel {
            mean: arr1(&[0.5, -0.25]),
            between: arr2(&[[1.0, 0.25], [0.25, 2.0]]),
            within: arr2(&[[0.5, 0.0], [0.0, 0.75]]),
            sv_threshold: Some(1.5),
        };
        let p = dir.path().join("p.mdl");
        save_plda(&p, &plda).unwrap();
        assert_eq!(load_plda(&p).unwrap(), plda);
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.mdl");
        write_tensors(&path, &[Tensor::new("a", vec![1], vec![1.0])]).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_tensors(&path),
            Err(EngineError::Format { .. })
        ));
    }
}
