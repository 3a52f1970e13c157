use std::path::Path;

use crate::error::{Error, Result};
use crate::perturb::ImagePatch;
use crate::tensor_io::npy::{self, Dtype, NpyArray, NpyData};

/// Tolerance on per-pixel channel sums of multiclass probability maps.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

/// Integer segmentation output; 0 is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    values: Vec<u32>,
    dtype: Dtype,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, values: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Invalid(
                "label map dimensions must be positive".into(),
            ));
        }
        if values.len() != height * width {
            return Err(Error::Invalid(format!(
                "label map has {} values, expected {}x{}",
                values.len(),
                height,
                width
            )));
        }
        let max = values.iter().copied().max().unwrap_or(0);
        let dtype = if max <= u32::from(u8::MAX) {
            Dtype::Uint8
        } else if max <= u32::from(u16::MAX) {
            Dtype::Uint16
        } else {
            Dtype::Uint32
        };
        Ok(LabelMap {
            height,
            width,
            values,
            dtype,
        })
    }

    pub fn from_mask(height: usize, width: usize, mask: &[bool]) -> Result<Self> {
        Self::new(height, width, mask.iter().map(|&m| u32::from(m)).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dtype(&self) -> Dtype {
        self.dtype
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v != 0).count()
    }

    pub fn max_label(&self) -> u32 {
        self.values.iter().copied().max().unwrap_or(0)
    }

    /// Semantic-mode check: every label below `num_classes`.
    pub fn check_classes(&self, num_classes: u32) -> Result<()> {
        match self.values.iter().find(|&&v| v >= num_classes) {
            Some(v) => Err(Error::Invalid(format!(
                "label {v} out of range for {num_classes} classes"
            ))),
            None => Ok(()),
        }
    }

    fn to_npy(&self) -> NpyArray {
        NpyArray {
            dtype: self.dtype,
            shape: vec![self.height, self.width],
            data: NpyData::Int(self.values.iter().map(|&v| i64::from(v)).collect()),
        }
    }
}

/// Per-pixel class probabilities, channel-major `classes × height × width`.
///
/// A single-channel map (`classes == 1`) holds the foreground probability of a
/// binary task.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMap {
    classes: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
    dtype: Dtype,
    /// Written back as `(H, W)` rather than `(1, H, W)`.
    flat: bool,
}

impl ProbMap {
    pub fn new(classes: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        let map = ProbMap {
            classes,
            height,
            width,
            values,
            dtype: Dtype::Float64,
            flat: classes == 1,
        };
        map.validate().map_err(Error::Invalid)?;
        Ok(map)
    }

    /// Binary map from foreground probabilities.
    pub fn binary(height: usize, width: usize, foreground: Vec<f64>) -> Result<Self> {
        Self::new(1, height, width, foreground)
    }

    pub fn with_dtype(mut self, dtype: Dtype) -> Self {
        assert!(dtype.is_float());
        if dtype == Dtype::Float32 {
            for v in &mut self.values {
                *v = f64::from(*v as f32);
            }
        }
        self.dtype = dtype;
        self
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.classes == 0 || self.height == 0 || self.width == 0 {
            return Err("probability map dimensions must be positive".into());
        }
        let n = self.height * self.width;
        if self.values.len() != self.classes * n {
            return Err(format!(
                "probability map has {} values, expected {}x{}x{}",
                self.values.len(),
                self.classes,
                self.height,
                self.width
            ));
        }
        for &v in &self.values {
            if !v.is_finite() {
                return Err(format!("non-finite probability {v}"));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(format!("value out of [0,1]: {v}"));
            }
        }
        if self.classes >= 2 {
            for i in 0..n {
                let s: f64 = (0..self.classes).map(|c| self.values[c * n + i]).sum();
                if (s - 1.0).abs() > PROB_SUM_TOLERANCE {
                    return Err(format!("channel sum {s} at pixel {i} is not 1"));
                }
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Probability of `class` at flat pixel index `i`.
    pub fn prob(&self, class: u32, i: usize) -> f64 {
        let n = self.height * self.width;
        if self.classes == 1 {
            let p = self.values[i];
            match class {
                0 => 1.0 - p,
                _ => p,
            }
        } else {
            self.values[class as usize * n + i]
        }
    }

    /// Largest class index this map can describe.
    pub fn max_class(&self) -> u32 {
        if self.classes == 1 {
            1
        } else {
            self.classes as u32 - 1
        }
    }

    fn to_npy(&self) -> NpyArray {
        let shape = if self.flat {
            vec![self.height, self.width]
        } else {
            vec![self.classes, self.height, self.width]
        };
        NpyArray {
            dtype: self.dtype,
            shape,
            data: NpyData::Float(self.values.clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArrayKind {
    Label,
    Prob,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Array {
    Label(LabelMap),
    Prob(ProbMap),
}

fn invalid(path: &Path, reason: impl Into<String>) -> Error {
    Error::InvalidArray {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Read and validate one array. Integer files become label maps, floating
/// files become probability maps; asking for the other kind is an error.
pub fn read_array(path: impl AsRef<Path>, expected: ArrayKind) -> Result<Array> {
    let path = path.as_ref();
    let raw = npy::read_npy(path)?;
    match (expected, raw.data) {
        (ArrayKind::Label, NpyData::Int(values)) => {
            let [h, w] = raw.shape[..] else {
                return Err(invalid(
                    path,
                    format!("label map must be 2-D, got shape {:?}", raw.shape),
                ));
            };
            if h == 0 || w == 0 {
                return Err(invalid(path, "label map dimensions must be positive"));
            }
            let mut labels = Vec::with_capacity(values.len());
            for v in values {
                if v < 0 {
                    return Err(invalid(path, format!("negative label {v}")));
                }
                labels.push(
                    u32::try_from(v)
                        .map_err(|_| invalid(path, format!("label {v} exceeds u32")))?,
                );
            }
            Ok(Array::Label(LabelMap {
                height: h,
                width: w,
                values: labels,
                dtype: raw.dtype,
            }))
        }
        (ArrayKind::Prob, NpyData::Float(values)) => {
            let (classes, h, w, flat) = match raw.shape[..] {
                [h, w] => (1, h, w, true),
                [c, h, w] => (c, h, w, false),
                _ => {
                    return Err(invalid(
                        path,
                        format!(
                            "probability map must be 2-D or 3-D, got shape {:?}",
                            raw.shape
                        ),
                    ))
                }
            };
            let map = ProbMap {
                classes,
                height: h,
                width: w,
                values,
                dtype: raw.dtype,
                flat,
            };
            map.validate().map_err(|r| invalid(path, r))?;
            Ok(Array::Prob(map))
        }
        (ArrayKind::Label, NpyData::Float(_)) => Err(invalid(
            path,
            format!("expected an integer label map, found dtype {}", raw.dtype),
        )),
        (ArrayKind::Prob, NpyData::Int(_)) => Err(invalid(
            path,
            format!(
                "expected a floating probability map, found dtype {}",
                raw.dtype
            ),
        )),
    }
}

pub fn read_label_map(path: impl AsRef<Path>) -> Result<LabelMap> {
    match read_array(path, ArrayKind::Label)? {
        Array::Label(m) => Ok(m),
        Array::Prob(_) => unreachable!(),
    }
}

pub fn read_prob_map(path: impl AsRef<Path>) -> Result<ProbMap> {
    match read_array(path, ArrayKind::Prob)? {
        Array::Prob(m) => Ok(m),
        Array::Label(_) => unreachable!(),
    }
}

pub fn write_array(path: impl AsRef<Path>, array: &Array) -> Result<()> {
    match array {
        Array::Label(m) => npy::write_npy(path, &m.to_npy()),
        Array::Prob(m) => npy::write_npy(path, &m.to_npy()),
    }
}

pub fn write_label_map(path: impl AsRef<Path>, map: &LabelMap) -> Result<()> {
    npy::write_npy(path, &map.to_npy())
}

pub fn write_prob_map(path: impl AsRef<Path>, map: &ProbMap) -> Result<()> {
    npy::write_npy(path, &map.to_npy())
}

/// Images: float NPY, `(H, W)` or `(C, H, W)`, any finite values.
pub fn read_image(path: impl AsRef<Path>) -> Result<ImagePatch> {
    let path = path.as_ref();
    let raw = npy::read_npy(path)?;
    let NpyData::Float(values) = raw.data else {
        return Err(invalid(
            path,
            format!("image must be floating point, found {}", raw.dtype),
        ));
    };
    let (c, h, w) = match raw.shape[..] {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(invalid(
                path,
                format!("image must be 2-D or 3-D, got shape {:?}", raw.shape),
            ))
        }
    };
    ImagePatch::new(c, h, w, values).map_err(|e| invalid(path, e.to_string()))
}

/// Writes `(H, W)` for single-channel images, `(C, H, W)` otherwise.
pub fn write_image(path: impl AsRef<Path>, image: &ImagePatch, dtype: Dtype) -> Result<()> {
    let path = path.as_ref();
    if !dtype.is_float() {
        return Err(invalid(path, "images are written as float32 or float64"));
    }
    let shape = if image.channels == 1 {
        vec![image.height, image.width]
    } else {
        vec![image.channels, image.height, image.width]
    };
    npy::write_npy(
        path,
        &NpyArray {
            dtype,
            shape,
            data: NpyData::Float(image.values.clone()),
        },
    )
}
