use serde::{Deserialize, Serialize};

/// A named, trainable tensor together with its accumulated gradient.
///
/// Values are stored flat in row-major order. The gradient buffer is
/// allocated on first use so that large frozen models do not pay for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    grad: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        Param {
            name: name.into(),
            shape,
            value,
            grad: Vec::new(),
        }
    }

    pub fn filled(name: impl Into<String>, shape: Vec<usize>, fill: f64) -> Self {
        let len = shape.iter().product();
        Param::new(name, shape, vec![fill; len])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    /// Accumulated gradient, or zeros if nothing was accumulated yet.
    pub fn grad(&self) -> std::borrow::Cow<'_, [f64]> {
        if self.grad.is_empty() {
            std::borrow::Cow::Owned(vec![0.0; self.value.len()])
        } else {
            std::borrow::Cow::Borrowed(&self.grad)
        }
    }

    pub fn grad_mut(&mut self) -> &mut [f64] {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn shape_meta(&self) -> TensorMeta {
        TensorMeta {
            name: self.name.clone(),
            shape: self.shape.clone(),
        }
    }
}

/// A named non-trainable state tensor (batch-norm running statistics).
#[derive(Clone, Debug, PartialEq)]
pub struct Buffer {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
}

impl Buffer {
    pub fn filled(name: impl Into<String>, shape: Vec<usize>, fill: f64) -> Self {
        let len = shape.iter().product();
        Buffer {
            name: name.into(),
            shape,
            value: vec![fill; len],
        }
    }

    pub fn shape_meta(&self) -> TensorMeta {
        TensorMeta {
            name: self.name.clone(),
            shape: self.shape.clone(),
        }
    }
}

/// Name and shape of a stored tensor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Anything that owns parameters and buffers.
pub trait Module {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>);
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>);

    fn collect_buffers<'a>(&'a self, _out: &mut Vec<&'a Buffer>) {}
    fn collect_buffers_mut<'a>(&'a mut self, _out: &mut Vec<&'a mut Buffer>) {}

    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        self.collect_params(&mut out);
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        self.collect_params_mut(&mut out);
        out
    }

    fn buffers(&self) -> Vec<&Buffer> {
        let mut out = Vec::new();
        self.collect_buffers(&mut out);
        out
    }

    fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        let mut out = Vec::new();
        self.collect_buffers_mut(&mut out);
        out
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
