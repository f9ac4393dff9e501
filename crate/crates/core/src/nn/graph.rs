//! A recorded forward pass that can be differentiated in reverse.

use super::conv::{conv2d_backward, conv2d_forward, ConvGeometry};
use super::{ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const INSTANCE_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy)]
enum Op {
    Input,
    Conv { input: NodeId, weight: usize, bias: usize, stride: usize, pad: usize },
    Relu(NodeId),
    LeakyRelu(NodeId, f64),
    MaxPool2(NodeId),
    Upsample2(NodeId),
    Concat(NodeId, NodeId),
    Sigmoid(NodeId),
    InstanceNorm(NodeId),
}

struct Node<T> {
    op: Op,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Forward computation over a fixed parameter store.
pub struct Graph<'p, T> {
    params: &'p ParamStore<T>,
    nodes: Vec<Node<T>>,
}

/// Result of a reverse pass.
pub struct Gradients<T> {
    /// Indexed like the parameter store; `None` for untouched parameters.
    pub params: Vec<Option<Tensor<T>>>,
    inputs: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to an input registered with `requires_grad`.
    pub fn input(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.inputs.get(id.0).and_then(Option::as_ref)
    }

    pub fn take_input(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.inputs.get_mut(id.0).and_then(Option::take)
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Graph { params, nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, op: Op, value: Tensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn grad_flows(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> NodeId {
        assert_eq!(value.shape().len(), 4, "graph inputs are NCHW");
        self.push(Op::Input, value, requires_grad)
    }

    /// Convolution with parameters `weight` (`[out, in, k, k]`) and `bias` (`[out]`).
    pub fn conv(&mut self, input: NodeId, weight: usize, bias: usize, stride: usize, pad: usize) -> Result<NodeId> {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4();
        let wt = self.params.get(weight);
        let (oc, ic, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
        if ic != c {
            return Err(Error::Shape(format!("`{}` expects {ic} input channels, got {c}", self.params.name(weight))));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(Error::Shape(format!("{h}x{w} input is smaller than a {k}x{k} kernel")));
        }
        let g = ConvGeometry { in_channels: c, height: h, width: w, kernel: k, stride, pad };
        let out = conv2d_forward(x.data(), n, &g, wt.data(), self.params.get(bias).data(), oc);
        let value = Tensor::new(vec![n, oc, g.out_height(), g.out_width()], out)?;
        Ok(self.push(Op::Conv { input, weight, bias, stride, pad }, value, true))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(T::zero())).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.grad_flows(input);
        self.push(Op::Relu(input), value, rg)
    }

    pub fn leaky_relu(&mut self, input: NodeId, slope: f64) -> NodeId {
        let s = T::lit(slope);
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > T::zero() { v } else { v * s }).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.grad_flows(input);
        self.push(Op::LeakyRelu(input, slope), value, rg)
    }

    /// 2×2 max pooling with stride 2 (odd trailing rows/columns are dropped).
    pub fn max_pool2(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in x.data().chunks_exact(h * w) {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (i, j) = (2 * oy, 2 * ox);
                    let m = plane[i * w + j]
                        .max(plane[i * w + j + 1])
                        .max(plane[(i + 1) * w + j])
                        .max(plane[(i + 1) * w + j + 1]);
                    out.push(m);
                }
            }
        }
        let value = Tensor::new(vec![n, c, oh, ow], out).expect("sized");
        let rg = self.grad_flows(input);
        self.push(Op::MaxPool2(input), value, rg)
    }

    /// Nearest-neighbour ×2 upsampling.
    pub fn upsample2(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let (n, c, h, w) = x.dims4();
        let mut out = Vec::with_capacity(n * c * h * w * 4);
        for plane in x.data().chunks_exact(h * w) {
            for i in 0..2 * h {
                let row = &plane[(i / 2) * w..(i / 2 + 1) * w];
                for &v in row {
                    out.push(v);
                    out.push(v);
                }
            }
        }
        let value = Tensor::new(vec![n, c, 2 * h, 2 * w], out).expect("sized");
        let rg = self.grad_flows(input);
        self.push(Op::Upsample2(input), value, rg)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = Tensor::concat_channels(self.value(a), self.value(b))?;
        let rg = self.grad_flows(a) || self.grad_flows(b);
        Ok(self.push(Op::Concat(a, b), value, rg))
    }

    pub fn sigmoid(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| crate::losses::sigmoid(v)).collect();
        let value = Tensor::new(x.shape().to_vec(), data).expect("same shape");
        let rg = self.grad_flows(input);
        self.push(Op::Sigmoid(input), value, rg)
    }

    /// Per-sample, per-channel normalization to zero mean and unit variance
    /// (no affine parameters).
    pub fn instance_norm(&mut self, input: NodeId) -> NodeId {
        let x = self.value(input);
        let (_, _, h, w) = x.dims4();
        let mut out = Vec::with_capacity(x.len());
        for plane in x.data().chunks_exact(h * w) {
            let (mean, inv_std) = plane_stats(plane);
            out.extend(plane.iter().map(|&v| (v - mean) * inv_std));
        }
        let value = Tensor::new(x.shape().to_vec(), out).expect("same shape");
        let rg = self.grad_flows(input);
        self.push(Op::InstanceNorm(input), value, rg)
    }

    /// Back-propagates `grad` (shaped like `output`) through the recorded ops.
    pub fn backward(&self, output: NodeId, grad: Tensor<T>) -> Result<Gradients<T>> {
        if grad.shape() != self.value(output).shape() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                grad.shape(),
                self.value(output).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params: Vec<Option<Tensor<T>>> = (0..self.params.len()).map(|_| None).collect();
        grads[output.0] = Some(grad);

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Input) {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            match node.op {
                Op::Input => unreachable!(),
                Op::Conv { input, weight, bias, stride, pad } => {
                    let x = self.value(input);
                    let (n, c, h, w) = x.dims4();
                    let wt = self.params.get(weight);
                    let (oc, k) = (wt.shape()[0], wt.shape()[2]);
                    let g = ConvGeometry { in_channels: c, height: h, width: w, kernel: k, stride, pad };
                    let mut dw_data =
                        params[weight].take().map_or_else(|| vec![T::zero(); wt.len()], Tensor::into_data);
                    let mut db_data = params[bias].take().map_or_else(|| vec![T::zero(); oc], Tensor::into_data);
                    let mut dx = self.grad_flows(input).then(|| vec![T::zero(); x.len()]);
                    conv2d_backward(
                        x.data(),
                        n,
                        &g,
                        wt.data(),
                        oc,
                        dy.data(),
                        &mut dw_data,
                        &mut db_data,
                        dx.as_deref_mut(),
                    );
                    params[weight] = Some(Tensor::new(wt.shape().to_vec(), dw_data)?);
                    params[bias] = Some(Tensor::new(vec![oc], db_data)?);
                    if let Some(dx) = dx {
                        accumulate(&mut grads, input, Tensor::new(x.shape().to_vec(), dx)?);
                    }
                }
                Op::Relu(input) => {
                    let y = &node.value;
                    let data = dy
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                        .collect();
                    accumulate(&mut grads, input, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::LeakyRelu(input, slope) => {
                    let s = T::lit(slope);
                    let x = self.value(input);
                    let data =
                        dy.data().iter().zip(x.data()).map(|(&g, &v)| if v > T::zero() { g } else { g * s }).collect();
                    accumulate(&mut grads, input, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::MaxPool2(input) => {
                    let x = self.value(input);
                    let (_, _, h, w) = x.dims4();
                    let (oh, ow) = (h / 2, w / 2);
                    let mut dx = vec![T::zero(); x.len()];
                    for ((plane, dplane), gplane) in x
                        .data()
                        .chunks_exact(h * w)
                        .zip(dx.chunks_exact_mut(h * w))
                        .zip(dy.data().chunks_exact(oh * ow))
                    {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                let cands = [
                                    (2 * oy) * w + 2 * ox,
                                    (2 * oy) * w + 2 * ox + 1,
                                    (2 * oy + 1) * w + 2 * ox,
                                    (2 * oy + 1) * w + 2 * ox + 1,
                                ];
                                let mut best = cands[0];
                                for &p in &cands[1..] {
                                    if plane[p] > plane[best] {
                                        best = p;
                                    }
                                }
                                dplane[best] += gplane[oy * ow + ox];
                            }
                        }
                    }
                    accumulate(&mut grads, input, Tensor::new(x.shape().to_vec(), dx)?);
                }
                Op::Upsample2(input) => {
                    let x = self.value(input);
                    let (_, _, h, w) = x.dims4();
                    let mut dx = vec![T::zero(); x.len()];
                    for (dplane, gplane) in dx.chunks_exact_mut(h * w).zip(dy.data().chunks_exact(4 * h * w)) {
                        for i in 0..2 * h {
                            for j in 0..2 * w {
                                dplane[(i / 2) * w + j / 2] += gplane[i * 2 * w + j];
                            }
                        }
                    }
                    accumulate(&mut grads, input, Tensor::new(x.shape().to_vec(), dx)?);
                }
                Op::Concat(a, b) => {
                    let (n, ca, h, w) = self.value(a).dims4();
                    let cb = self.value(b).shape()[1];
                    let plane = h * w;
                    let mut da = Vec::with_capacity(n * ca * plane);
                    let mut db = Vec::with_capacity(n * cb * plane);
                    for chunk in dy.data().chunks_exact((ca + cb) * plane) {
                        da.extend_from_slice(&chunk[..ca * plane]);
                        db.extend_from_slice(&chunk[ca * plane..]);
                    }
                    if self.grad_flows(a) {
                        accumulate(&mut grads, a, Tensor::new(vec![n, ca, h, w], da)?);
                    }
                    if self.grad_flows(b) {
                        accumulate(&mut grads, b, Tensor::new(vec![n, cb, h, w], db)?);
                    }
                }
                Op::Sigmoid(input) => {
                    let y = &node.value;
                    let data = dy.data().iter().zip(y.data()).map(|(&g, &s)| g * s * (T::one() - s)).collect();
                    accumulate(&mut grads, input, Tensor::new(dy.shape().to_vec(), data)?);
                }
                Op::InstanceNorm(input) => {
                    let x = self.value(input);
                    let (_, _, h, w) = x.dims4();
                    let m = T::lit((h * w) as f64);
                    let mut dx = Vec::with_capacity(x.len());
                    for ((plane, yplane), gplane) in x
                        .data()
                        .chunks_exact(h * w)
                        .zip(node.value.data().chunks_exact(h * w))
                        .zip(dy.data().chunks_exact(h * w))
                    {
                        let (_, inv_std) = plane_stats(plane);
                        let mean_g = gplane.iter().copied().sum::<T>() / m;
                        let mean_gy = gplane.iter().zip(yplane).map(|(&g, &y)| g * y).sum::<T>() / m;
                        dx.extend(gplane.iter().zip(yplane).map(|(&g, &y)| inv_std * (g - mean_g - y * mean_gy)));
                    }
                    accumulate(&mut grads, input, Tensor::new(x.shape().to_vec(), dx)?);
                }
            }
        }

        let inputs = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| if matches!(self.nodes[i].op, Op::Input) && self.nodes[i].requires_grad { g } else { None })
            .collect();
        Ok(Gradients { params, inputs })
    }
}

fn plane_stats<T: Scalar>(plane: &[T]) -> (T, T) {
    let m = T::lit(plane.len() as f64);
    let mean = plane.iter().copied().sum::<T>() / m;
    let var = plane.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / m;
    (mean, T::one() / (var + T::lit(INSTANCE_NORM_EPS)).sqrt())
}

fn accumulate<T: Scalar>(grads: &mut [Option<Tensor<T>>], id: NodeId, g: Tensor<T>) {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::nn::params::normal_tensor;

    /// Small network touching every op; returns `sum(out · probe)`.
    fn objective<'a>(
        params: &'a ParamStore<f64>,
        x: &Tensor<f64>,
        probe: &[f64],
    ) -> (f64, Graph<'a, f64>, NodeId, NodeId) {
        let mut g = Graph::new(params);
        let inp = g.input(x.clone(), true);
        let c1 = g.conv(inp, 0, 1, 1, 1).unwrap();
        let a1 = g.leaky_relu(c1, 0.2);
        let n1 = g.instance_norm(a1);
        let p1 = g.max_pool2(n1);
        let u1 = g.upsample2(p1);
        let r1 = g.relu(u1);
        let cat = g.concat(r1, inp).unwrap();
        let c2 = g.conv(cat, 2, 3, 2, 1).unwrap();
        let out = g.sigmoid(c2);
        let v: f64 = g.value(out).data().iter().zip(probe).map(|(a, b)| a * b).sum();
        (v, g, inp, out)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut params = ParamStore::new();
        params.add("c1.w", normal_tensor(&[3, 2, 3, 3], 0.5, &mut rng));
        params.add("c1.b", normal_tensor(&[3], 0.1, &mut rng));
        params.add("c2.w", normal_tensor(&[2, 5, 4, 4], 0.5, &mut rng));
        params.add("c2.b", normal_tensor(&[2], 0.1, &mut rng));
        let x: Tensor<f64> = normal_tensor(&[1, 2, 6, 6], 1.0, &mut rng);
        let (_, g0, inp, out) = objective(&params, &x, &[0.0; 64]);
        let probe: Vec<f64> = normal_tensor::<f64, _>(g0.value(out).shape(), 1.0, &mut rng).into_data();
        drop(g0);

        let (_, g, inp2, out2) = objective(&params, &x, &probe);
        assert_eq!((inp, out), (inp2, out2));
        let grad_out = Tensor::new(g.value(out).shape().to_vec(), probe.clone()).unwrap();
        let grads = g.backward(out, grad_out).unwrap();
        let analytic_x = grads.input(inp).unwrap().clone();
        let analytic_p: Vec<Tensor<f64>> = grads.params.iter().map(|t| t.clone().unwrap()).collect();
        drop(g);

        let h = 1e-6;
        for i in (0..x.len()).step_by(5) {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (objective(&params, &xp, &probe).0 - objective(&params, &xm, &probe).0) / (2.0 * h);
            let an = analytic_x.data()[i];
            assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "x[{i}]: fd {fd} vs {an}");
        }
        for (pid, analytic) in analytic_p.iter().enumerate() {
            for i in (0..params.get(pid).len()).step_by(7) {
                let mut pp = params.clone();
                pp.get_mut(pid).data_mut()[i] += h;
                let mut pm = params.clone();
                pm.get_mut(pid).data_mut()[i] -= h;
                let fd = (objective(&pp, &x, &probe).0 - objective(&pm, &x, &probe).0) / (2.0 * h);
                let an = analytic.data()[i];
                assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "{}[{i}]: fd {fd} vs {an}", params.name(pid));
            }
        }
    }

    #[test]
    fn inputs_without_grad_are_not_reported() {
        let mut params = ParamStore::<f64>::new();
        params.add("w", Tensor::filled(&[1, 1, 1, 1], 2.0));
        params.add("b", Tensor::zeros(&[1]));
        let mut g = Graph::new(&params);
        let x = g.input(Tensor::filled(&[1, 1, 2, 2], 1.0), false);
        let y = g.conv(x, 0, 1, 1, 0).unwrap();
        let grads = g.backward(y, Tensor::filled(&[1, 1, 2, 2], 1.0)).unwrap();
        assert!(grads.input(x).is_none());
        assert_eq!(grads.params[0].as_ref().unwrap().data(), &[4.0]);
        assert_eq!(grads.params[1].as_ref().unwrap().data(), &[4.0]);
    }
}
