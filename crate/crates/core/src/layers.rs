//! Grouped 3-D convolution over `C×T×H×W` volumes, small conv stacks and
//! element-wise activations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{silu, silu_grad, Real, Rng, Tensor};
use crate::params::ParamSet;

/// Convolution with zero padding `k/2` per axis. Kernel extents must be odd;
/// with unit stride the output keeps the input's spatial-temporal shape.
///
/// `weight` is `[c_out, c_in / groups, kt, kh, kw]`; `groups == c_in == c_out`
/// gives a depthwise convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub groups: usize,
    pub stride: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Activation {
    #[default]
    Silu,
    Identity,
}

impl Activation {
    pub fn apply<T: Real>(self, x: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Silu => x.map(silu),
            Activation::Identity => x.clone(),
        }
    }

    /// `dy ⊙ act'(x)`.
    pub fn backward<T: Real>(self, x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
        match self {
            Activation::Silu => {
                let data = x.data().iter().zip(dy.data()).map(|(&xi, &g)| g * silu_grad(xi)).collect();
                Tensor::new(x.dims().to_vec(), data).expect("same shape")
            }
            Activation::Identity => dy.clone(),
        }
    }
}

pub(crate) fn volume_dims<T: Real>(v: &Tensor<T>, what: &str) -> Result<[usize; 4]> {
    match *v.dims() {
        [c, t, h, w] => Ok([c, t, h, w]),
        _ => Err(Error::Shape(format!("{what}: expected C×T×H×W, got {:?}", v.dims()))),
    }
}

impl<T: Real> Conv3d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, groups: usize, stride: [usize; 3]) -> Result<Self> {
        let conv = Conv3d { weight, bias, groups, stride };
        conv.validate()?;
        Ok(conv)
    }

    /// He-style random init, zero bias.
    pub fn init(c_in: usize, c_out: usize, kernel: [usize; 3], groups: usize, stride: [usize; 3], rng: &mut Rng) -> Result<Self> {
        if groups == 0 || c_in % groups != 0 || c_out % groups != 0 {
            return Err(Error::Invalid(format!("{groups} groups do not divide {c_in}→{c_out} channels")));
        }
        let fan_in = (c_in / groups) * kernel.iter().product::<usize>();
        let std = (1.0 / fan_in as f64).sqrt();
        let weight = rng.normal_tensor(vec![c_out, c_in / groups, kernel[0], kernel[1], kernel[2]], std);
        Conv3d::new(weight, Tensor::zeros(vec![c_out]), groups, stride)
    }

    pub fn zeros(c_in: usize, c_out: usize, kernel: [usize; 3], groups: usize) -> Self {
        Conv3d {
            weight: Tensor::zeros(vec![c_out, c_in / groups, kernel[0], kernel[1], kernel[2]]),
            bias: Tensor::zeros(vec![c_out]),
            groups,
            stride: [1, 1, 1],
        }
    }

    pub fn c_out(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn c_in(&self) -> usize {
        self.weight.dims()[1] * self.groups
    }

    pub fn kernel(&self) -> [usize; 3] {
        let d = self.weight.dims();
        [d[2], d[3], d[4]]
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.weight.dims();
        if d.len() != 5 {
            return Err(Error::Shape(format!("conv weight must be 5-D, got {d:?}")));
        }
        if d[2..].iter().any(|k| k % 2 == 0) {
            return Err(Error::Invalid(format!("kernel extents must be odd, got {:?}", &d[2..])));
        }
        if self.groups == 0 || d[0] % self.groups != 0 {
            return Err(Error::Invalid(format!("{} groups vs {} output channels", self.groups, d[0])));
        }
        if self.bias.dims() != [d[0]] {
            return Err(Error::Shape(format!("bias {:?} vs {} output channels", self.bias.dims(), d[0])));
        }
        if self.stride.contains(&0) {
            return Err(Error::Invalid("zero stride".into()));
        }
        Ok(())
    }

    pub fn output_dims(&self, input: [usize; 4]) -> [usize; 4] {
        let k = self.kernel();
        let mut out = [self.c_out(), 0, 0, 0];
        for a in 0..3 {
            let pad = k[a] / 2;
            out[a + 1] = (input[a + 1] + 2 * pad - k[a]) / self.stride[a] + 1;
        }
        out
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<[usize; 4]> {
        let dims = volume_dims(x, "conv input")?;
        if dims[0] != self.c_in() {
            return Err(Error::Shape(format!("conv expects {} input channels, got {}", self.c_in(), dims[0])));
        }
        Ok(dims)
    }

    /// Visits every (output voxel, input voxel, weight) triple, grouped so the
    /// innermost loop runs along W.
    fn for_each_tap(&self, input: [usize; 4], mut f: impl FnMut(usize, usize, usize)) {
        let out = self.output_dims(input);
        let [kt, kh, kw] = self.kernel();
        let [pt, ph, pw] = [kt / 2, kh / 2, kw / 2];
        let [st, sh, sw] = self.stride;
        let c_out = out[0];
        let cin_g = self.weight.dims()[1];
        let cout_g = c_out / self.groups;
        let in_vol = input[1] * input[2] * input[3];
        let out_vol = out[1] * out[2] * out[3];
        for co in 0..c_out {
            let g = co / cout_g;
            for cil in 0..cin_g {
                let ci = g * cin_g + cil;
                for dt in 0..kt {
                    for dh in 0..kh {
                        for dw in 0..kw {
                            let w_idx = (((co * cin_g + cil) * kt + dt) * kh + dh) * kw + dw;
                            for ot in 0..out[1] {
                                let it = (ot * st + dt) as isize - pt as isize;
                                if it < 0 || it >= input[1] as isize {
                                    continue;
                                }
                                for oh in 0..out[2] {
                                    let ih = (oh * sh + dh) as isize - ph as isize;
                                    if ih < 0 || ih >= input[2] as isize {
                                        continue;
                                    }
                                    let in_row = ci * in_vol + (it as usize * input[2] + ih as usize) * input[3];
                                    let out_row = co * out_vol + (ot * out[2] + oh) * out[3];
                                    for ow in 0..out[3] {
                                        let iw = (ow * sw + dw) as isize - pw as isize;
                                        if iw < 0 || iw >= input[3] as isize {
                                            continue;
                                        }
                                        f(out_row + ow, in_row + iw as usize, w_idx);
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.validate()?;
        let input = self.check_input(x)?;
        let out_dims = self.output_dims(input);
        let out_vol = out_dims[1] * out_dims[2] * out_dims[3];
        let mut out = Tensor::from_fn(out_dims.to_vec(), |i| self.bias[i / out_vol]);
        let (xd, wd) = (x.data(), self.weight.data());
        let od = out.data_mut();
        self.for_each_tap(input, |o, i, w| od[o] = od[o] + wd[w] * xd[i]);
        Ok(out)
    }

    /// Returns `(∂L/∂x, ∂L/∂weights)`.
    pub fn backward(&self, x: &Tensor<T>, dout: &Tensor<T>) -> Result<(Tensor<T>, Conv3d<T>)> {
        let input = self.check_input(x)?;
        let out_dims = self.output_dims(input);
        dout.ensure_dims(&out_dims, "conv dout")?;
        let mut dx = Tensor::zeros(x.dims().to_vec());
        let mut grad = Conv3d {
            weight: Tensor::zeros(self.weight.dims().to_vec()),
            bias: Tensor::zeros(vec![self.c_out()]),
            groups: self.groups,
            stride: self.stride,
        };
        let out_vol = out_dims[1] * out_dims[2] * out_dims[3];
        for (co, chunk) in dout.data().chunks(out_vol).enumerate() {
            grad.bias[co] = chunk.iter().copied().sum();
        }
        let (xd, wd, gd) = (x.data(), self.weight.data(), dout.data());
        let dxd = dx.data_mut();
        let gw = grad.weight.data_mut();
        self.for_each_tap(input, |o, i, w| {
            dxd[i] = dxd[i] + gd[o] * wd[w];
            gw[w] = gw[w] + gd[o] * xd[i];
        });
        Ok((dx, grad))
    }

    pub fn cast<U: Real>(&self) -> Conv3d<U> {
        Conv3d { weight: self.weight.cast(), bias: self.bias.cast(), groups: self.groups, stride: self.stride }
    }
}

impl<T: Real> ParamSet<T> for Conv3d<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        f(self.weight.data());
        f(self.bias.data());
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        f(self.weight.data_mut());
        f(self.bias.data_mut());
    }
}

/// Convolutions with an activation between consecutive layers (none after the last).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack<T> {
    pub layers: Vec<Conv3d<T>>,
    pub activation: Activation,
}

/// Per-layer inputs and pre-activation outputs saved by [`ConvStack::forward_traced`].
#[derive(Debug, Clone)]
pub struct ConvStackTrace<T> {
    inputs: Vec<Tensor<T>>,
    pre: Vec<Tensor<T>>,
}

impl<T: Real> ConvStack<T> {
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_traced(x)?.0)
    }

    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ConvStackTrace<T>)> {
        let mut trace = ConvStackTrace { inputs: Vec::new(), pre: Vec::new() };
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&cur)?;
            let next = if i + 1 < self.layers.len() { self.activation.apply(&pre) } else { pre.clone() };
            trace.inputs.push(std::mem::replace(&mut cur, next));
            trace.pre.push(pre);
        }
        Ok((cur, trace))
    }

    pub fn backward(&self, trace: &ConvStackTrace<T>, dout: &Tensor<T>) -> Result<(Tensor<T>, ConvStack<T>)> {
        if trace.inputs.len() != self.layers.len() {
            return Err(Error::MissingPrerequisite("conv stack trace from a different model".into()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = dout.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                g = self.activation.backward(&trace.pre[i], &g);
            }
            let (dx, gw) = self.layers[i].backward(&trace.inputs[i], &g)?;
            grads.push(gw);
            g = dx;
        }
        grads.reverse();
        Ok((g, ConvStack { layers: grads, activation: self.activation }))
    }

    pub fn cast<U: Real>(&self) -> ConvStack<U> {
        ConvStack { layers: self.layers.iter().map(Conv3d::cast).collect(), activation: self.activation }
    }
}

impl<T: Real> ParamSet<T> for ConvStack<T> {
    fn visit(&self, f: &mut dyn FnMut(&[T])) {
        self.layers.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut [T])) {
        self.layers.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop reference in f64.
    fn reference(conv: &Conv3d<f64>, x: &Tensor<f64>) -> Tensor<f64> {
        let [c, t, h, w] = volume_dims(x, "x").unwrap();
        let out = conv.output_dims([c, t, h, w]);
        let [kt, kh, kw] = conv.kernel();
        let cin_g = conv.weight.dims()[1];
        let cout_g = out[0] / conv.groups;
        let mut y = Tensor::zeros(out.to_vec());
        for co in 0..out[0] {
            for ot in 0..out[1] {
                for oh in 0..out[2] {
                    for ow in 0..out[3] {
                        let mut acc = conv.bias[co];
                        for cil in 0..cin_g {
                            let ci = (co / cout_g) * cin_g + cil;
                            for a in 0..kt {
                                for b in 0..kh {
                                    for d in 0..kw {
                                        let it = (ot * conv.stride[0] + a) as isize - (kt / 2) as isize;
                                        let ih = (oh * conv.stride[1] + b) as isize - (kh / 2) as isize;
                                        let iw = (ow * conv.stride[2] + d) as isize - (kw / 2) as isize;
                                        if it < 0 || ih < 0 || iw < 0 || it >= t as isize || ih >= h as isize || iw >= w as isize {
                                            continue;
                                        }
                                        let wv = conv.weight[(((co * cin_g + cil) * kt + a) * kh + b) * kw + d];
                                        let xv = x[((ci * t + it as usize) * h + ih as usize) * w + iw as usize];
                                        acc += wv * xv;
                                    }
                                }
                            }
                        }
                        y[((co * out[1] + ot) * out[2] + oh) * out[3] + ow] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn grouped_and_strided_forward_match_reference() {
        let mut rng = Rng::new(21);
        for (cin, cout, groups, kernel, stride) in [
            (2, 2, 2, [3, 3, 3], [1, 1, 1]),
            (3, 4, 1, [1, 3, 3], [1, 2, 2]),
            (4, 2, 2, [3, 1, 5], [1, 1, 2]),
        ] {
            let mut conv = Conv3d::<f64>::init(cin, cout, kernel, groups, stride, &mut rng).unwrap();
            conv.bias = rng.normal_tensor(vec![cout], 1.0);
            let x = rng.normal_tensor::<f64>(vec![cin, 3, 5, 6], 1.0);
            let fast = conv.forward(&x).unwrap();
            let slow = reference(&conv, &x);
            assert_eq!(fast.dims(), slow.dims());
            assert!(fast.max_abs_diff(&slow) < 1e-12);
        }
    }

    #[test]
    fn even_kernel_and_channel_mismatch_rejected() {
        let w = Tensor::<f32>::zeros(vec![2, 1, 2, 3, 3]);
        assert!(Conv3d::new(w, Tensor::zeros(vec![2]), 2, [1, 1, 1]).is_err());
        let conv = Conv3d::<f32>::zeros(2, 2, [3, 3, 3], 2);
        assert!(conv.forward(&Tensor::zeros(vec![3, 2, 2, 2])).is_err());
    }

    #[test]
    fn conv_stack_backward_matches_finite_differences() {
        use crate::numerics::{finite_diff_flat, max_rel_error};
        let mut rng = Rng::new(5);
        let stack = ConvStack {
            layers: vec![
                Conv3d::<f64>::init(2, 3, [1, 3, 3], 1, [1, 1, 1], &mut rng).unwrap(),
                Conv3d::<f64>::init(3, 2, [1, 3, 3], 1, [1, 2, 2], &mut rng).unwrap(),
            ],
            activation: Activation::Silu,
        };
        let x = rng.normal_tensor::<f64>(vec![2, 1, 5, 4], 1.0);
        let (y, trace) = stack.forward_traced(&x).unwrap();
        let wts = rng.normal_tensor::<f64>(y.dims().to_vec(), 1.0);
        let (_, grads) = stack.backward(&trace, &wts).unwrap();
        let numeric = finite_diff_flat(
            |p| {
                let mut s = stack.clone();
                s.load_flat(p.data()).unwrap();
                let out = s.forward(&x).unwrap();
                out.data().iter().zip(wts.data()).map(|(a, b)| a * b).sum()
            },
            &stack.flatten(),
            1e-5,
        )
        .unwrap();
        assert!(max_rel_error(&grads.flatten(), &numeric) < 1e-3);
    }
}
