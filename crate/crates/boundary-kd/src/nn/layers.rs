//! Layer implementations and the batched tensor they pass around.

use ndarray::{Array1, Array2, Array4, Axis};
use rand_chacha::ChaCha8Rng;

use super::{conv_output, Element, LayerSpec, TensorDims};
use crate::error::{Error, Result};

/// Activations flowing between layers.
pub(crate) enum Batch<F> {
    /// `(n, features)`
    Flat(Array2<F>),
    /// `(n, channels, height, width)`, standard layout
    Spatial(Array4<F>),
}

impl<F: Element> Batch<F> {
    pub(crate) fn into_flat(self) -> Result<Array2<F>> {
        match self {
            Batch::Flat(a) => Ok(a),
            Batch::Spatial(_) => Err(Error::InvalidConfig(
                "network output is spatial; add a flatten layer".into(),
            )),
        }
    }

    fn map_values(&self, f: impl Fn(F) -> F) -> Batch<F> {
        match self {
            Batch::Flat(a) => Batch::Flat(a.mapv(|v| f(v))),
            Batch::Spatial(a) => Batch::Spatial(a.mapv(|v| f(v))),
        }
    }
}

fn uniform_he<F: Element>(rng: &mut ChaCha8Rng, fan_in: usize, len: usize) -> Vec<F> {
    use rand::Rng;
    let limit = (6.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| F::from_f64((2.0 * rng.random::<f64>() - 1.0) * limit))
        .collect()
}

pub(crate) struct ConvLayer<F> {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    /// `(out_c, in_c*k*k)`
    w: Array2<F>,
    b: Array1<F>,
    gw: Array2<F>,
    gb: Array1<F>,
    cached_cols: Option<Array2<F>>,
    cached_n: usize,
}

impl<F: Element> ConvLayer<F> {
    fn new(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let (out_h, out_w) = conv_output(in_h, in_w, k, stride, pad)
            .ok_or_else(|| Error::InvalidConfig("conv kernel does not fit input".into()))?;
        let ckk = in_c * k * k;
        let w = Array2::from_shape_vec((out_c, ckk), uniform_he(rng, ckk, out_c * ckk))
            .expect("shape matches");
        Ok(ConvLayer {
            in_c,
            in_h,
            in_w,
            out_c,
            k,
            stride,
            pad,
            out_h,
            out_w,
            w,
            b: Array1::zeros(out_c),
            gw: Array2::zeros((out_c, ckk)),
            gb: Array1::zeros(out_c),
            cached_cols: None,
            cached_n: 0,
        })
    }

    /// Unfold `x` into `(in_c*k*k, n*out_h*out_w)`; padding cells stay zero.
    fn im2col(&self, x: &Array4<F>) -> Array2<F> {
        let n = x.shape()[0];
        let (c, h, w) = (self.in_c, self.in_h, self.in_w);
        let (k, stride, pad) = (self.k, self.stride, self.pad);
        let (oh, ow) = (self.out_h, self.out_w);
        let src = x.as_slice().expect("spatial batches are standard layout");
        let mut cols = Array2::<F>::zeros((c * k * k, n * oh * ow));
        let cols_w = n * oh * ow;
        let dst = cols.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let row_base = row * cols_w;
                    for ni in 0..n {
                        let plane = ((ni * c) + ci) * h * w;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = plane + iy as usize * w;
                            let dst_row = row_base + (ni * oh + oy) * ow;
                            if stride == 1 {
                                // ix = ox + kx - pad stays contiguous in ox
                                let shift = kx as isize - pad as isize;
                                let ox0 = (-shift).max(0) as usize;
                                let ox1 = ow.min(((w as isize) - shift).max(0) as usize);
                                if ox0 < ox1 {
                                    let ix0 = (ox0 as isize + shift) as usize;
                                    dst[dst_row + ox0..dst_row + ox1].copy_from_slice(
                                        &src[src_row + ix0..src_row + ix0 + (ox1 - ox0)],
                                    );
                                }
                            } else {
                                for ox in 0..ow {
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if ix >= 0 && ix < w as isize {
                                        dst[dst_row + ox] = src[src_row + ix as usize];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    /// Fold `(in_c*k*k, n*out_h*out_w)` gradients back onto the input grid.
    fn col2im(&self, gcols: &Array2<F>, n: usize) -> Array4<F> {
        let (c, h, w) = (self.in_c, self.in_h, self.in_w);
        let (k, stride, pad) = (self.k, self.stride, self.pad);
        let (oh, ow) = (self.out_h, self.out_w);
        let mut gin = Array4::<F>::zeros((n, c, h, w));
        let dst = gin.as_slice_mut().expect("fresh array");
        let src = gcols.as_slice().expect("gemm output is standard layout");
        let cols_w = n * oh * ow;
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    let row_base = row * cols_w;
                    for ni in 0..n {
                        let plane = ((ni * c) + ci) * h * w;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let dst_row = plane + iy as usize * w;
                            let src_row = row_base + (ni * oh + oy) * ow;
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dst[dst_row + ix as usize] =
                                        dst[dst_row + ix as usize] + src[src_row + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        gin
    }

    fn apply(&self, cols: &Array2<F>, n: usize) -> Array4<F> {
        // (out_c, n*oh*ow)
        let mut out = self.w.dot(cols);
        for (mut row, &bias) in out.rows_mut().into_iter().zip(self.b.iter()) {
            row.mapv_inplace(|v| v + bias);
        }
        let out4 = out
            .into_shape_with_order((self.out_c, n, self.out_h, self.out_w))
            .expect("shape matches");
        out4.permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned()
    }

    fn forward(&self, x: &Array4<F>) -> Array4<F> {
        let n = x.shape()[0];
        self.apply(&self.im2col(x), n)
    }

    fn forward_train(&mut self, x: &Array4<F>) -> Array4<F> {
        let n = x.shape()[0];
        let cols = self.im2col(x);
        let out = self.apply(&cols, n);
        self.cached_cols = Some(cols);
        self.cached_n = n;
        out
    }

    fn backward(&mut self, gout: &Array4<F>) -> Array4<F> {
        let n = self.cached_n;
        let cols = self
            .cached_cols
            .take()
            .expect("backward without forward_train");
        // (n, oc, oh, ow) -> (oc, n*oh*ow)
        let g2 = gout
            .view()
            .permuted_axes([1, 0, 2, 3])
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order((self.out_c, n * self.out_h * self.out_w))
            .expect("shape matches");
        self.gw = &self.gw + &g2.dot(&cols.t());
        self.gb = &self.gb + &g2.sum_axis(Axis(1));
        let gcols = self.w.t().dot(&g2);
        self.col2im(&gcols, n)
    }
}

pub(crate) struct PoolLayer<F> {
    c: usize,
    in_h: usize,
    in_w: usize,
    k: usize,
    stride: usize,
    out_h: usize,
    out_w: usize,
    /// Flat input index of each output cell's max, cached by forward_train.
    argmax: Vec<usize>,
    cached_n: usize,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Element> PoolLayer<F> {
    fn new(c: usize, in_h: usize, in_w: usize, k: usize, stride: usize) -> Result<Self> {
        let (out_h, out_w) = conv_output(in_h, in_w, k, stride, 0)
            .ok_or_else(|| Error::InvalidConfig("maxpool kernel does not fit input".into()))?;
        Ok(PoolLayer {
            c,
            in_h,
            in_w,
            k,
            stride,
            out_h,
            out_w,
            argmax: Vec::new(),
            cached_n: 0,
            _marker: std::marker::PhantomData,
        })
    }

    fn pool(&self, x: &Array4<F>, mut record: Option<&mut Vec<usize>>) -> Array4<F> {
        let n = x.shape()[0];
        let (c, h, w) = (self.c, self.in_h, self.in_w);
        let (oh, ow) = (self.out_h, self.out_w);
        let src = x.as_slice().expect("spatial batches are standard layout");
        let mut out = Array4::<F>::zeros((n, c, oh, ow));
        let dst = out.as_slice_mut().expect("fresh array");
        if let Some(rec) = record.as_deref_mut() {
            rec.clear();
            rec.resize(n * c * oh * ow, 0);
        }
        for ni in 0..n {
            for ci in 0..c {
                let plane = ((ni * c) + ci) * h * w;
                let out_plane = ((ni * c) + ci) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let iy0 = oy * self.stride;
                        let ix0 = ox * self.stride;
                        let mut best = src[plane + iy0 * w + ix0];
                        let mut best_idx = plane + iy0 * w + ix0;
                        for ky in 0..self.k {
                            let row = plane + (iy0 + ky) * w + ix0;
                            for kx in 0..self.k {
                                let v = src[row + kx];
                                if v > best {
                                    best = v;
                                    best_idx = row + kx;
                                }
                            }
                        }
                        dst[out_plane + oy * ow + ox] = best;
                        if let Some(rec) = record.as_deref_mut() {
                            rec[out_plane + oy * ow + ox] = best_idx;
                        }
                    }
                }
            }
        }
        out
    }

    fn forward(&self, x: &Array4<F>) -> Array4<F> {
        self.pool(x, None)
    }

    fn forward_train(&mut self, x: &Array4<F>) -> Array4<F> {
        let n = x.shape()[0];
        let mut argmax = std::mem::take(&mut self.argmax);
        let out = self.pool(x, Some(&mut argmax));
        self.argmax = argmax;
        self.cached_n = n;
        out
    }

    fn backward(&self, gout: &Array4<F>) -> Array4<F> {
        let n = self.cached_n;
        let mut gin = Array4::<F>::zeros((n, self.c, self.in_h, self.in_w));
        let dst = gin.as_slice_mut().expect("fresh array");
        let src = gout.as_slice().expect("standard layout");
        for (i, &idx) in self.argmax.iter().enumerate() {
            dst[idx] = dst[idx] + src[i];
        }
        gin
    }
}

pub(crate) struct DenseLayer<F> {
    /// `(in, out)`
    w: Array2<F>,
    b: Array1<F>,
    gw: Array2<F>,
    gb: Array1<F>,
    cached_input: Option<Array2<F>>,
}

impl<F: Element> DenseLayer<F> {
    fn new(input: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = Array2::from_shape_vec((input, width), uniform_he(rng, input, input * width))
            .expect("shape matches");
        DenseLayer {
            w,
            b: Array1::zeros(width),
            gw: Array2::zeros((input, width)),
            gb: Array1::zeros(width),
            cached_input: None,
        }
    }

    fn forward(&self, x: &Array2<F>) -> Array2<F> {
        x.dot(&self.w) + &self.b
    }

    fn backward(&mut self, gout: &Array2<F>) -> Array2<F> {
        let x = self
            .cached_input
            .take()
            .expect("backward without forward_train");
        self.gw = &self.gw + &x.t().dot(gout);
        self.gb = &self.gb + &gout.sum_axis(Axis(0));
        gout.dot(&self.w.t())
    }
}

pub(crate) struct ReluLayer<F> {
    mask: Option<Batch<F>>,
}

pub(crate) struct FlattenLayer {
    dims: (usize, usize, usize),
    cached_n: usize,
}

pub(crate) enum LayerNode<F> {
    Conv(ConvLayer<F>),
    Pool(PoolLayer<F>),
    Dense(DenseLayer<F>),
    Relu(ReluLayer<F>),
    Flatten(FlattenLayer),
}

impl<F: Element> LayerNode<F> {
    pub(crate) fn build(
        spec: &LayerSpec,
        dims: TensorDims,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Self, TensorDims)> {
        match (spec, dims) {
            (
                LayerSpec::Conv {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                },
                TensorDims::Spatial { c, h, w },
            ) => {
                let layer =
                    ConvLayer::new(c, h, w, *out_channels, *kernel, *stride, *padding, rng)?;
                let next = TensorDims::Spatial {
                    c: *out_channels,
                    h: layer.out_h,
                    w: layer.out_w,
                };
                Ok((LayerNode::Conv(layer), next))
            }
            (LayerSpec::Maxpool { kernel, stride }, TensorDims::Spatial { c, h, w }) => {
                let layer = PoolLayer::new(c, h, w, *kernel, *stride)?;
                let next = TensorDims::Spatial {
                    c,
                    h: layer.out_h,
                    w: layer.out_w,
                };
                Ok((LayerNode::Pool(layer), next))
            }
            (LayerSpec::Dense { width }, TensorDims::Flat(input)) => Ok((
                LayerNode::Dense(DenseLayer::new(input, *width, rng)),
                TensorDims::Flat(*width),
            )),
            (LayerSpec::Relu, d) => Ok((LayerNode::Relu(ReluLayer { mask: None }), d)),
            (LayerSpec::Flatten, TensorDims::Spatial { c, h, w }) => Ok((
                LayerNode::Flatten(FlattenLayer {
                    dims: (c, h, w),
                    cached_n: 0,
                }),
                TensorDims::Flat(c * h * w),
            )),
            (spec, d) => Err(Error::InvalidConfig(format!(
                "{spec:?} cannot follow {d:?}"
            ))),
        }
    }

    pub(crate) fn forward(&self, batch: &Batch<F>) -> Result<Batch<F>> {
        match (self, batch) {
            (LayerNode::Conv(l), Batch::Spatial(x)) => Ok(Batch::Spatial(l.forward(x))),
            (LayerNode::Pool(l), Batch::Spatial(x)) => Ok(Batch::Spatial(l.forward(x))),
            (LayerNode::Dense(l), Batch::Flat(x)) => Ok(Batch::Flat(l.forward(x))),
            (LayerNode::Relu(_), x) => {
                Ok(x.map_values(|v| if v > F::zero() { v } else { F::zero() }))
            }
            (LayerNode::Flatten(l), Batch::Spatial(x)) => {
                let n = x.shape()[0];
                let flat = x
                    .to_owned()
                    .into_shape_with_order((n, l.dims.0 * l.dims.1 * l.dims.2))
                    .expect("validated shape");
                Ok(Batch::Flat(flat))
            }
            _ => Err(Error::InvalidConfig(
                "layer applied to tensor of the wrong kind".into(),
            )),
        }
    }

    pub(crate) fn forward_train(&mut self, batch: Batch<F>) -> Result<Batch<F>> {
        match (self, batch) {
            (LayerNode::Conv(l), Batch::Spatial(x)) => Ok(Batch::Spatial(l.forward_train(&x))),
            (LayerNode::Pool(l), Batch::Spatial(x)) => Ok(Batch::Spatial(l.forward_train(&x))),
            (LayerNode::Dense(l), Batch::Flat(x)) => {
                let out = l.forward(&x);
                l.cached_input = Some(x);
                Ok(Batch::Flat(out))
            }
            (LayerNode::Relu(l), x) => {
                let one = F::one();
                let zero = F::zero();
                let mask = x.map_values(|v| if v > zero { one } else { zero });
                let out = match (&x, &mask) {
                    (Batch::Flat(a), Batch::Flat(m)) => Batch::Flat(a * m),
                    (Batch::Spatial(a), Batch::Spatial(m)) => Batch::Spatial(a * m),
                    _ => unreachable!("mask mirrors input kind"),
                };
                l.mask = Some(mask);
                Ok(out)
            }
            (LayerNode::Flatten(l), Batch::Spatial(x)) => {
                let n = x.shape()[0];
                l.cached_n = n;
                let flat = x
                    .into_shape_with_order((n, l.dims.0 * l.dims.1 * l.dims.2))
                    .expect("validated shape");
                Ok(Batch::Flat(flat))
            }
            _ => Err(Error::InvalidConfig(
                "layer applied to tensor of the wrong kind".into(),
            )),
        }
    }

    pub(crate) fn backward(&mut self, grad: Batch<F>) -> Result<Batch<F>> {
        match (self, grad) {
            (LayerNode::Conv(l), Batch::Spatial(g)) => Ok(Batch::Spatial(l.backward(&g))),
            (LayerNode::Pool(l), Batch::Spatial(g)) => Ok(Batch::Spatial(l.backward(&g))),
            (LayerNode::Dense(l), Batch::Flat(g)) => Ok(Batch::Flat(l.backward(&g))),
            (LayerNode::Relu(l), g) => {
                let mask = l.mask.take().expect("backward without forward_train");
                match (g, mask) {
                    (Batch::Flat(g), Batch::Flat(m)) => Ok(Batch::Flat(g * m)),
                    (Batch::Spatial(g), Batch::Spatial(m)) => Ok(Batch::Spatial(g * m)),
                    _ => Err(Error::InvalidConfig(
                        "relu gradient does not match cached mask".into(),
                    )),
                }
            }
            (LayerNode::Flatten(l), Batch::Flat(g)) => {
                let spatial = g
                    .into_shape_with_order((l.cached_n, l.dims.0, l.dims.1, l.dims.2))
                    .expect("validated shape");
                Ok(Batch::Spatial(spatial))
            }
            _ => Err(Error::InvalidConfig(
                "gradient applied to layer of the wrong kind".into(),
            )),
        }
    }

    pub(crate) fn param_len(&self) -> usize {
        match self {
            LayerNode::Conv(l) => l.w.len() + l.b.len(),
            LayerNode::Dense(l) => l.w.len() + l.b.len(),
            _ => 0,
        }
    }

    pub(crate) fn write_params(&self, out: &mut Vec<F>) {
        match self {
            LayerNode::Conv(l) => {
                out.extend(l.w.iter().copied());
                out.extend(l.b.iter().copied());
            }
            LayerNode::Dense(l) => {
                out.extend(l.w.iter().copied());
                out.extend(l.b.iter().copied());
            }
            _ => {}
        }
    }

    pub(crate) fn read_params(&mut self, src: &[F]) -> usize {
        match self {
            LayerNode::Conv(l) => {
                let nw = l.w.len();
                let nb = l.b.len();
                l.w.iter_mut().zip(&src[..nw]).for_each(|(d, &s)| *d = s);
                l.b.iter_mut()
                    .zip(&src[nw..nw + nb])
                    .for_each(|(d, &s)| *d = s);
                nw + nb
            }
            LayerNode::Dense(l) => {
                let nw = l.w.len();
                let nb = l.b.len();
                l.w.iter_mut().zip(&src[..nw]).for_each(|(d, &s)| *d = s);
                l.b.iter_mut()
                    .zip(&src[nw..nw + nb])
                    .for_each(|(d, &s)| *d = s);
                nw + nb
            }
            _ => 0,
        }
    }

    pub(crate) fn write_grads(&self, out: &mut Vec<F>) {
        match self {
            LayerNode::Conv(l) => {
                out.extend(l.gw.iter().copied());
                out.extend(l.gb.iter().copied());
            }
            LayerNode::Dense(l) => {
                out.extend(l.gw.iter().copied());
                out.extend(l.gb.iter().copied());
            }
            _ => {}
        }
    }

    pub(crate) fn zero_grads(&mut self) {
        match self {
            LayerNode::Conv(l) => {
                l.gw.fill(F::zero());
                l.gb.fill(F::zero());
            }
            LayerNode::Dense(l) => {
                l.gw.fill(F::zero());
                l.gb.fill(F::zero());
            }
            _ => {}
        }
    }
}
