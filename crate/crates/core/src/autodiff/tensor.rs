use serde::{Deserialize, Serialize};

use super::AdError;

/// Shape of a tensor. Rank is capped at two.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dims {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Dims {
    pub fn len(self) -> usize {
        match self {
            Dims::Scalar => 1,
            Dims::Vector(n) => n,
            Dims::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn to_vec(self) -> Vec<usize> {
        match self {
            Dims::Scalar => vec![],
            Dims::Vector(n) => vec![n],
            Dims::Matrix(r, c) => vec![r, c],
        }
    }

    pub fn from_slice(shape: &[usize]) -> Result<Self, AdError> {
        match *shape {
            [] => Ok(Dims::Scalar),
            [n] => Ok(Dims::Vector(n)),
            [r, c] => Ok(Dims::Matrix(r, c)),
            _ => Err(AdError::Shape {
                op: "tensor",
                detail: format!("rank {} unsupported (max 2)", shape.len()),
            }),
        }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Dims::Scalar => write!(f, "[]"),
            Dims::Vector(n) => write!(f, "[{n}]"),
            Dims::Matrix(r, c) => write!(f, "[{r}x{c}]"),
        }
    }
}

/// Dense row-major tensor detached from any tape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, AdError> {
        let dims = Dims::from_slice(&shape)?;
        if dims.len() != data.len() {
            return Err(AdError::Shape {
                op: "tensor",
                detail: format!("shape {dims} needs {} values, got {}", dims.len(), data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(x: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AdError> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Result<Self, AdError> {
        let n = Dims::from_slice(shape)?.len();
        Self::new(shape.to_vec(), vec![0.0; n])
    }

    pub(crate) fn from_dims(dims: Dims, data: Vec<f64>) -> Self {
        debug_assert_eq!(dims.len(), data.len());
        Self {
            shape: dims.to_vec(),
            data,
        }
    }

    pub fn dims(&self) -> Dims {
        // shape is validated on construction
        Dims::from_slice(&self.shape).expect("validated shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }
}
