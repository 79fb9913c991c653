use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use super::param::{Buffer, Module, Param};
use super::tensor::FeatureMap;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Training mode uses batch statistics in batch norm and updates the running
/// estimates; evaluation mode uses the running estimates and is a pure
/// function of its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

fn uniform(rng: &mut Rng, len: usize, bound: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-bound..bound)).collect()
}

fn view2<'a>(p: &'a Param, rows: usize, cols: usize) -> ArrayView2<'a, f64> {
    ArrayView2::from_shape((rows, cols), &p.value).expect("parameter shape")
}

fn accumulate(p: &mut Param, delta: impl IntoIterator<Item = f64>) {
    for (g, d) in p.grad_mut().iter_mut().zip(delta) {
        *g += d;
    }
}

/// Fully connected layer, `y = x Wᵀ + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    pub fn new(prefix: &str, in_dim: usize, out_dim: usize, bias: bool, rng: &mut Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Param::new(
            format!("{prefix}.weight"),
            vec![out_dim, in_dim],
            uniform(rng, out_dim * in_dim, bound),
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{prefix}.bias"),
                vec![out_dim],
                uniform(rng, out_dim, bound),
            )
        });
        Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        if x.ncols() != self.in_dim {
            return Err(Error::Dimension(format!(
                "{}: expected {} input features, got {}",
                self.weight.name,
                self.in_dim,
                x.ncols()
            )));
        }
        let mut y = x.dot(&view2(&self.weight, self.out_dim, self.in_dim).t());
        if let Some(b) = &self.bias {
            y += &ArrayView2::from_shape((1, self.out_dim), &b.value).expect("bias shape");
        }
        Ok(y)
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let dw = dy.t().dot(x);
        accumulate(&mut self.weight, dw.iter().copied());
        if let Some(b) = &mut self.bias {
            accumulate(b, dy.sum_axis(Axis(0)).iter().copied());
        }
        dy.dot(&view2(&self.weight, self.out_dim, self.in_dim))
    }
}

impl Module for Linear {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.weight);
        out.extend(self.bias.as_ref());
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.extend(self.bias.as_mut());
    }
}

/// Batch normalization over the columns of a `rows × channels` matrix.
///
/// Serves both the 1-d case (rows = batch) and the spatial case (rows = batch
/// × height × width).
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Buffer,
    pub running_var: Buffer,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Clone, Debug)]
pub struct BatchNormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(prefix: &str, channels: usize) -> Self {
        BatchNorm {
            gamma: Param::filled(format!("{prefix}.weight"), vec![channels], 1.0),
            beta: Param::filled(format!("{prefix}.bias"), vec![channels], 0.0),
            running_mean: Buffer::filled(format!("{prefix}.running_mean"), vec![channels], 0.0),
            running_var: Buffer::filled(format!("{prefix}.running_var"), vec![channels], 1.0),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, BatchNormCache)> {
        let c = self.channels();
        if x.ncols() != c {
            return Err(Error::Dimension(format!(
                "{}: expected {c} channels, got {}",
                self.gamma.name,
                x.ncols()
            )));
        }
        let rows = x.nrows();
        let (mean, var) = match mode {
            Mode::Train => {
                if rows == 0 {
                    return Err(Error::Empty("batch norm over zero rows".into()));
                }
                let mean = x.mean_axis(Axis(0)).expect("non-empty");
                let centered = x - &mean.view().insert_axis(Axis(0));
                let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
                let unbiased = if rows > 1 {
                    rows as f64 / (rows - 1) as f64
                } else {
                    1.0
                };
                let m = self.momentum;
                for i in 0..c {
                    let rm = &mut self.running_mean.value[i];
                    *rm = (1.0 - m) * *rm + m * mean[i];
                    let rv = &mut self.running_var.value[i];
                    *rv = (1.0 - m) * *rv + m * var[i] * unbiased;
                }
                (mean, var)
            }
            Mode::Eval => (
                Array1::from(self.running_mean.value.clone()),
                Array1::from(self.running_var.value.clone()),
            ),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let xhat = (x - &mean.view().insert_axis(Axis(0))) * &inv_std.view().insert_axis(Axis(0));
        let gamma = Array1::from(self.gamma.value.clone());
        let beta = Array1::from(self.beta.value.clone());
        let y = &xhat * &gamma.view().insert_axis(Axis(0)) + &beta.view().insert_axis(Axis(0));
        Ok((y, BatchNormCache { xhat, inv_std, mode }))
    }

    pub fn backward(&mut self, cache: &BatchNormCache, dy: &Array2<f64>) -> Array2<f64> {
        let rows = dy.nrows() as f64;
        let dbeta = dy.sum_axis(Axis(0));
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        accumulate(&mut self.gamma, dgamma.iter().copied());
        accumulate(&mut self.beta, dbeta.iter().copied());

        let gamma = Array1::from(self.gamma.value.clone());
        let dxhat = dy * &gamma.view().insert_axis(Axis(0));
        match cache.mode {
            Mode::Eval => dxhat * &cache.inv_std.view().insert_axis(Axis(0)),
            Mode::Train => {
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                let mut dx = dxhat;
                Zip::from(dx.rows_mut())
                    .and(cache.xhat.rows())
                    .for_each(|mut row, xh| {
                        for i in 0..row.len() {
                            row[i] = cache.inv_std[i] / rows
                                * (rows * row[i] - sum_dxhat[i] - xh[i] * sum_dxhat_xhat[i]);
                        }
                    });
                dx
            }
        }
    }
}

impl Module for BatchNorm {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.gamma);
        out.push(&self.beta);
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.gamma);
        out.push(&mut self.beta);
    }
    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Buffer>) {
        out.push(&self.running_mean);
        out.push(&self.running_var);
    }
    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Buffer>) {
        out.push(&mut self.running_mean);
        out.push(&mut self.running_var);
    }
}

pub fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient of ReLU given its output.
pub fn relu_backward(y: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    Zip::from(&mut dx).and(y).for_each(|d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

/// 2-d convolution over NHWC feature maps, computed as an im2col product.
///
/// The weight is stored as `[out, k, k, in]`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Option<Param>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct Conv2dCache {
    cols: Array2<f64>,
    in_shape: [usize; 4],
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        prefix: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = (6.0 / fan_in as f64).sqrt();
        let weight = Param::new(
            format!("{prefix}.weight"),
            vec![out_channels, kernel, kernel, in_channels],
            uniform(rng, out_channels * fan_in, bound),
        );
        let bias = bias.then(|| {
            Param::new(
                format!("{prefix}.bias"),
                vec![out_channels],
                uniform(rng, out_channels, 1.0 / (fan_in as f64).sqrt()),
            )
        });
        Conv2d {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_size(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        let span = |d: usize| -> Option<usize> {
            (d + 2 * self.padding)
                .checked_sub(self.kernel)
                .map(|v| v / self.stride + 1)
        };
        match (span(h), span(w)) {
            (Some(oh), Some(ow)) => Ok((oh, ow)),
            _ => Err(Error::Dimension(format!(
                "{}: input {h}x{w} smaller than kernel {}",
                self.weight.name, self.kernel
            ))),
        }
    }

    fn im2col(&self, x: &FeatureMap, oh: usize, ow: usize) -> Array2<f64> {
        let c = self.in_channels;
        let k = self.kernel;
        let mut cols = Array2::<f64>::zeros((x.n * oh * ow, k * k * c));
        let src = x.data.as_slice().expect("standard layout");
        let dst = cols.as_slice_mut().expect("standard layout");
        let row_len = k * k * c;
        for n in 0..x.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let r = (n * oh + oy) * ow + ox;
                    let row = &mut dst[r * row_len..(r + 1) * row_len];
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= x.w as isize {
                                continue;
                            }
                            let s = ((n * x.h + iy as usize) * x.w + ix as usize) * c;
                            let d = (ky * k + kx) * c;
                            row[d..d + c].copy_from_slice(&src[s..s + c]);
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, dcols: &Array2<f64>, in_shape: [usize; 4], oh: usize, ow: usize) -> FeatureMap {
        let [n_, h, w, c] = in_shape;
        let k = self.kernel;
        let mut dx = FeatureMap::zeros(n_, h, w, c);
        let dst = dx.data.as_slice_mut().expect("standard layout");
        let src = dcols.as_slice().expect("standard layout");
        let row_len = k * k * c;
        for n in 0..n_ {
            for oy in 0..oh {
                for ox in 0..ow {
                    let r = (n * oh + oy) * ow + ox;
                    let row = &src[r * row_len..(r + 1) * row_len];
                    for ky in 0..k {
                        let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..k {
                            let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let d = ((n * h + iy as usize) * w + ix as usize) * c;
                            let s = (ky * k + kx) * c;
                            for (o, v) in dst[d..d + c].iter_mut().zip(&row[s..s + c]) {
                                *o += v;
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn forward(&self, x: &FeatureMap) -> Result<(FeatureMap, Conv2dCache)> {
        if x.channels() != self.in_channels {
            return Err(Error::Dimension(format!(
                "{}: expected {} input channels, got {}",
                self.weight.name,
                self.in_channels,
                x.channels()
            )));
        }
        let (oh, ow) = self.output_size(x.h, x.w)?;
        let cols = if self.kernel == 1 && self.stride == 1 && self.padding == 0 {
            x.data.clone()
        } else {
            self.im2col(x, oh, ow)
        };
        let fan_in = self.kernel * self.kernel * self.in_channels;
        let mut y = cols.dot(&view2(&self.weight, self.out_channels, fan_in).t());
        if let Some(b) = &self.bias {
            y += &ArrayView2::from_shape((1, self.out_channels), &b.value).expect("bias shape");
        }
        Ok((
            FeatureMap {
                n: x.n,
                h: oh,
                w: ow,
                data: y,
            },
            Conv2dCache {
                cols,
                in_shape: x.shape(),
            },
        ))
    }

    pub fn backward(&mut self, cache: &Conv2dCache, dy: &FeatureMap) -> FeatureMap {
        self.backward_params(cache, dy);
        self.input_grad(cache, dy)
    }

    /// Accumulates weight and bias gradients only.
    pub fn backward_params(&mut self, cache: &Conv2dCache, dy: &FeatureMap) {
        let dw = dy.data.t().dot(&cache.cols);
        accumulate(&mut self.weight, dw.iter().copied());
        if let Some(b) = &mut self.bias {
            accumulate(b, dy.data.sum_axis(Axis(0)).iter().copied());
        }
    }

    pub fn input_grad(&self, cache: &Conv2dCache, dy: &FeatureMap) -> FeatureMap {
        let fan_in = self.kernel * self.kernel * self.in_channels;
        let dcols = dy
            .data
            .dot(&view2(&self.weight, self.out_channels, fan_in));
        if self.kernel == 1 && self.stride == 1 && self.padding == 0 {
            let [n, h, w, _] = cache.in_shape;
            FeatureMap { n, h, w, data: dcols }
        } else {
            self.col2im(&dcols, cache.in_shape, dy.h, dy.w)
        }
    }
}

impl Module for Conv2d {
    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        out.push(&self.weight);
        out.extend(self.bias.as_ref());
    }
    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        out.push(&mut self.weight);
        out.extend(self.bias.as_mut());
    }
}

/// Max pooling with square window.
#[derive(Clone, Debug)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    argmax: Vec<usize>,
    in_shape: [usize; 4],
}

impl MaxPool2d {
    pub fn forward(&self, x: &FeatureMap) -> Result<(FeatureMap, MaxPoolCache)> {
        let span = |d: usize| {
            (d + 2 * self.padding)
                .checked_sub(self.kernel)
                .map(|v| v / self.stride + 1)
        };
        let (oh, ow) = match (span(x.h), span(x.w)) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(Error::Dimension(format!(
                    "max pool: input {}x{} smaller than window",
                    x.h, x.w
                )))
            }
        };
        let c = x.channels();
        let mut y = FeatureMap::zeros(x.n, oh, ow, c);
        let mut argmax = vec![0usize; x.n * oh * ow * c];
        let src = x.data.as_slice().expect("standard layout");
        let dst = y.data.as_slice_mut().expect("standard layout");
        for n in 0..x.n {
            for oy in 0..oh {
                for ox in 0..ow {
                    let o = ((n * oh + oy) * ow + ox) * c;
                    for ch in 0..c {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.padding as isize;
                            if iy < 0 || iy >= x.h as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.padding as isize;
                                if ix < 0 || ix >= x.w as isize {
                                    continue;
                                }
                                let idx = ((n * x.h + iy as usize) * x.w + ix as usize) * c + ch;
                                if src[idx] > best {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        dst[o + ch] = best;
                        argmax[o + ch] = best_idx;
                    }
                }
            }
        }
        Ok((
            y,
            MaxPoolCache {
                argmax,
                in_shape: x.shape(),
            },
        ))
    }

    pub fn backward(&self, cache: &MaxPoolCache, dy: &FeatureMap) -> FeatureMap {
        let [n, h, w, c] = cache.in_shape;
        let mut dx = FeatureMap::zeros(n, h, w, c);
        let dst = dx.data.as_slice_mut().expect("standard layout");
        for (g, &idx) in dy.data.iter().zip(&cache.argmax) {
            dst[idx] += g;
        }
        dx
    }
}

/// Mean over spatial positions: `N×H×W×C → N×C`.
pub fn global_avg_pool(x: &FeatureMap) -> Array2<f64> {
    let per = x.h * x.w;
    let mut out = Array2::zeros((x.n, x.channels()));
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        row.assign(&x.sample(i).mean_axis(Axis(0)).expect("non-empty map"));
    }
    debug_assert!(per > 0);
    out
}

pub fn global_avg_pool_backward(dy: &Array2<f64>, shape: [usize; 4]) -> FeatureMap {
    let [n, h, w, c] = shape;
    let per = (h * w) as f64;
    let mut dx = FeatureMap::zeros(n, h, w, c);
    for i in 0..n {
        let g = dy.row(i).mapv(|v| v / per);
        let start = i * h * w;
        for r in 0..h * w {
            dx.data.row_mut(start + r).assign(&g);
        }
    }
    dx
}
