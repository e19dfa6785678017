//! Dense reverse-mode automatic differentiation.
//!
//! A [`Tape`] records a forward pass as a flat list of nodes; `backward`
//! walks it in reverse and accumulates gradients into node buffers and into
//! the [`Params`] store. The op set is exactly what the diagnosis network
//! needs: 1-D convolution, dense layers, ReLU, inverted dropout, softmax,
//! mean cross-entropy, gradient scaling (gradient reversal when negative),
//! the multilinear feature/prediction map, row mixing for mixup, plus a few
//! small glue ops. Heavy contractions go through `matrixmultiply`, which
//! dispatches SIMD kernels at runtime and is deterministic for fixed inputs.
//!
//! The engine is generic over `f32` (training) and `f64` (gradient checks).

use std::io::{Read, Write};
use std::path::Path;

use num_traits::Float;
use rand::Rng;

use crate::error::{Error, Result};

/// Element type of tensors: `f32` or `f64`.
pub trait Scalar: Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// `c[m,n] = alpha * a[m,k] * b[k,n] + beta * c` with explicit row/column
    /// strides, row-major buffers.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

fn check_strides(len: usize, rows: usize, cols: usize, rs: isize, cs: isize, what: &str) {
    assert!(rs >= 0 && cs >= 0, "negative strides unsupported");
    if rows == 0 || cols == 0 {
        return;
    }
    let max = (rows - 1) * rs as usize + (cols - 1) * cs as usize;
    assert!(max < len, "{what}: index {max} out of bounds ({len})");
}

macro_rules! impl_scalar {
    ($ty:ty, $gemm:path) => {
        impl Scalar for $ty {
            fn from_f64(v: f64) -> Self {
                v as $ty
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_strides(a.len(), m, k, rsa, csa, "gemm lhs");
                check_strides(b.len(), k, n, rsb, csb, "gemm rhs");
                check_strides(c.len(), m, n, rsc, csc, "gemm out");
                if m == 0 || n == 0 || k == 0 {
                    return;
                }
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, matrixmultiply::sgemm);
impl_scalar!(f64, matrixmultiply::dgemm);

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

/// Named trainable tensors with gradient buffers.
#[derive(Debug, Clone, Default)]
pub struct Params<T> {
    items: Vec<ParamTensor<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn new() -> Self {
        Self { items: Vec::new() }
    }

    pub fn add(&mut self, name: &str, shape: &[usize], value: Vec<T>) -> Result<ParamId> {
        if value.len() != numel(shape) {
            return Err(Error::shape(format!(
                "param `{name}`: {} values for shape {shape:?}",
                value.len()
            )));
        }
        let grad = vec![T::zero(); value.len()];
        self.items.push(ParamTensor { name: name.to_string(), shape: shape.to_vec(), value, grad });
        Ok(ParamId(self.items.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &ParamTensor<T> {
        &self.items[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParamTensor<T> {
        &mut self.items[id.0]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.items.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParamTensor<T>> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor<T>> {
        self.items.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.items.iter().map(|p| p.value.len()).sum()
    }
}

// ---------------------------------------------------------------------------
// Tape
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    Add { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Sum { x: NodeId },
    Relu { x: NodeId },
    Dropout { x: NodeId, mask: Vec<T> },
    Flatten { x: NodeId },
    Conv1d { x: NodeId, w: ParamId, b: ParamId },
    Dense { x: NodeId, w: ParamId, b: ParamId },
    Softmax { x: NodeId },
    CrossEntropy { probs: NodeId, targets: Vec<usize> },
    GradScale { x: NodeId, factor: T },
    Detach,
    Multilinear { e: NodeId, y: NodeId },
    MixRows { x: NodeId, perm: Vec<usize>, lambdas: Vec<T> },
    ConcatRows { a: NodeId, b: NodeId },
}

#[derive(Debug)]
struct Node<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    grad: Vec<T>,
    op: Op<T>,
}

/// A recorded forward pass. Build nodes with the op methods, call
/// [`Tape::backward`] once on a scalar loss, then read gradients.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    spent: bool,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), spent: false }
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<T>, op: Op<T>) -> NodeId {
        debug_assert_eq!(data.len(), numel(&shape));
        self.nodes.push(Node { shape, data, grad: Vec::new(), op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].data
    }

    /// Scalar value of a 1-element node, as f64.
    pub fn scalar(&self, id: NodeId) -> f64 {
        debug_assert_eq!(numel(&self.nodes[id.0].shape), 1);
        self.nodes[id.0].data[0].to_f64()
    }

    /// Gradient of the last backward pass; `None` before backward.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        let g = &self.nodes[id.0].grad;
        if g.is_empty() {
            None
        } else {
            Some(g)
        }
    }

    // -- leaf nodes ---------------------------------------------------------

    pub fn input(&mut self, shape: &[usize], data: Vec<T>) -> Result<NodeId> {
        if data.len() != numel(shape) {
            return Err(Error::shape(format!(
                "input: {} values for shape {shape:?}",
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, Op::Input))
    }

    /// Materialize a parameter as a node (used by small elementwise graphs;
    /// the layer ops read parameters in place instead).
    pub fn param(&mut self, params: &Params<T>, id: ParamId) -> NodeId {
        let p = params.get(id);
        self.push(p.shape.clone(), p.value.clone(), Op::Param(id))
    }

    // -- elementwise and shape ops -------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape("add: operand shapes differ"));
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x + y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Add { a, b }))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::shape("mul: operand shapes differ"));
        }
        let data: Vec<T> = self.nodes[a.0]
            .data
            .iter()
            .zip(&self.nodes[b.0].data)
            .map(|(&x, &y)| x * y)
            .collect();
        Ok(self.push(self.nodes[a.0].shape.clone(), data, Op::Mul { a, b }))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let total = self.nodes[x.0].data.iter().fold(T::zero(), |acc, &v| acc + v);
        self.push(vec![], vec![total], Op::Sum { x })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let data: Vec<T> =
            self.nodes[x.0].data.iter().map(|&v| if v > T::zero() { v } else { T::zero() }).collect();
        self.push(self.nodes[x.0].shape.clone(), data, Op::Relu { x })
    }

    /// Inverted dropout: in training, zero each element with probability
    /// `rate` and scale survivors by 1/(1-rate); identity at inference.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::parameter(format!("dropout rate {rate} not in [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let keep_scale = T::from_f64(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.nodes[x.0].data.len())
            .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep_scale })
            .collect();
        let data: Vec<T> =
            self.nodes[x.0].data.iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        Ok(self.push(self.nodes[x.0].shape.clone(), data, Op::Dropout { x, mask }))
    }

    /// `[batch, ...]` to `[batch, prod(...)]`.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = &self.nodes[x.0].shape;
        if shape.len() < 2 {
            return Err(Error::shape("flatten needs a batch dimension"));
        }
        let b = shape[0];
        let rest = numel(&shape[1..]);
        let data = self.nodes[x.0].data.clone();
        Ok(self.push(vec![b, rest], data, Op::Flatten { x }))
    }

    // -- layers ---------------------------------------------------------------

    /// Valid cross-correlation, stride 1: `x [B, Cin, L]`, `w [Cout, Cin, K]`,
    /// `b [Cout]` to `[B, Cout, L-K+1]`.
    pub fn conv1d(
        &mut self,
        params: &Params<T>,
        x: NodeId,
        w: ParamId,
        b: ParamId,
    ) -> Result<NodeId> {
        let xs = self.nodes[x.0].shape.clone();
        let wp = params.get(w);
        let bp = params.get(b);
        if xs.len() != 3 || wp.shape.len() != 3 {
            return Err(Error::shape("conv1d expects x [B,C,L] and w [Co,Ci,K]"));
        }
        let (batch, cin, len) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, k) = (wp.shape[0], wp.shape[1], wp.shape[2]);
        if wcin != cin {
            return Err(Error::shape(format!("conv1d: {cin} input channels vs kernel {wcin}")));
        }
        if bp.shape != [cout] {
            return Err(Error::shape("conv1d: bias shape must be [Cout]"));
        }
        if len < k {
            return Err(Error::shape(format!("conv1d: length {len} shorter than kernel {k}")));
        }
        let lout = len - k + 1;
        let mut out = vec![T::zero(); batch * cout * lout];
        let mut col = vec![T::zero(); cin * k * lout];
        let xdata = &self.nodes[x.0].data;
        for bi in 0..batch {
            im2col(&xdata[bi * cin * len..(bi + 1) * cin * len], cin, len, k, &mut col);
            T::gemm(
                cout,
                cin * k,
                lout,
                T::one(),
                &wp.value,
                (cin * k) as isize,
                1,
                &col,
                lout as isize,
                1,
                T::zero(),
                &mut out[bi * cout * lout..(bi + 1) * cout * lout],
                lout as isize,
                1,
            );
            for co in 0..cout {
                let bias = bp.value[co];
                let row = &mut out[bi * cout * lout + co * lout..][..lout];
                row.iter_mut().for_each(|v| *v = *v + bias);
            }
        }
        Ok(self.push(vec![batch, cout, lout], out, Op::Conv1d { x, w, b }))
    }

    /// Affine layer: `x [B, In]`, `w [In, Out]`, `b [Out]` to `[B, Out]`.
    pub fn dense(
        &mut self,
        params: &Params<T>,
        x: NodeId,
        w: ParamId,
        b: ParamId,
    ) -> Result<NodeId> {
        let xs = self.nodes[x.0].shape.clone();
        let wp = params.get(w);
        let bp = params.get(b);
        if xs.len() != 2 || wp.shape.len() != 2 {
            return Err(Error::shape("dense expects x [B,In] and w [In,Out]"));
        }
        let (batch, d_in) = (xs[0], xs[1]);
        let (w_in, d_out) = (wp.shape[0], wp.shape[1]);
        if d_in != w_in {
            return Err(Error::shape(format!("dense: input width {d_in} vs weight {w_in}")));
        }
        if bp.shape != [d_out] {
            return Err(Error::shape("dense: bias shape must be [Out]"));
        }
        let mut out = vec![T::zero(); batch * d_out];
        T::gemm(
            batch,
            d_in,
            d_out,
            T::one(),
            &self.nodes[x.0].data,
            d_in as isize,
            1,
            &wp.value,
            d_out as isize,
            1,
            T::zero(),
            &mut out,
            d_out as isize,
            1,
        );
        for bi in 0..batch {
            let row = &mut out[bi * d_out..(bi + 1) * d_out];
            for (v, &bias) in row.iter_mut().zip(&bp.value) {
                *v = *v + bias;
            }
        }
        Ok(self.push(vec![batch, d_out], out, Op::Dense { x, w, b }))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::shape("softmax expects [B, K]"));
        }
        let (batch, k) = (shape[0], shape[1]);
        let mut out = vec![T::zero(); batch * k];
        for bi in 0..batch {
            let row = &self.nodes[x.0].data[bi * k..(bi + 1) * k];
            let max = row.iter().fold(T::neg_infinity(), |a, &b| if b > a { b } else { a });
            let mut denom = T::zero();
            for (o, &v) in out[bi * k..(bi + 1) * k].iter_mut().zip(row) {
                *o = (v - max).exp();
                denom = denom + *o;
            }
            out[bi * k..(bi + 1) * k].iter_mut().for_each(|v| *v = *v / denom);
        }
        Ok(self.push(shape, out, Op::Softmax { x }))
    }

    /// Mean negative log-likelihood of the target class probabilities.
    pub fn cross_entropy(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        let shape = self.nodes[probs.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::shape("cross_entropy expects probabilities [B, K]"));
        }
        let (batch, k) = (shape[0], shape[1]);
        if targets.len() != batch {
            return Err(Error::shape(format!(
                "cross_entropy: {} targets for batch {batch}",
                targets.len()
            )));
        }
        if targets.iter().any(|&t| t >= k) {
            return Err(Error::parameter("cross_entropy: target class out of range"));
        }
        let floor = T::min_positive_value();
        let mut loss = T::zero();
        for (bi, &t) in targets.iter().enumerate() {
            let p = self.nodes[probs.0].data[bi * k + t];
            let p_safe = if p > floor { p } else { floor };
            loss = loss - p_safe.ln();
        }
        loss = loss / T::from_f64(batch as f64);
        Ok(self.push(vec![], vec![loss], Op::CrossEntropy { probs, targets: targets.to_vec() }))
    }

    /// Identity forward; multiplies the incoming gradient by `factor` in the
    /// backward pass. A negative factor realizes gradient reversal.
    pub fn grad_scale(&mut self, x: NodeId, factor: T) -> NodeId {
        let data = self.nodes[x.0].data.clone();
        self.push(self.nodes[x.0].shape.clone(), data, Op::GradScale { x, factor })
    }

    /// Identity forward; blocks gradient flow.
    pub fn detach(&mut self, x: NodeId) -> NodeId {
        let data = self.nodes[x.0].data.clone();
        self.push(self.nodes[x.0].shape.clone(), data, Op::Detach)
    }

    /// Per-row outer product, flattened feature-major:
    /// `z[b, i*K + k] = e[b, i] * y[b, k]`.
    pub fn multilinear(&mut self, e: NodeId, y: NodeId) -> Result<NodeId> {
        let es = self.nodes[e.0].shape.clone();
        let ys = self.nodes[y.0].shape.clone();
        if es.len() != 2 || ys.len() != 2 || es[0] != ys[0] {
            return Err(Error::shape("multilinear expects e [B,F] and y [B,K]"));
        }
        let (batch, f, k) = (es[0], es[1], ys[1]);
        let mut out = vec![T::zero(); batch * f * k];
        for bi in 0..batch {
            let erow = &self.nodes[e.0].data[bi * f..(bi + 1) * f];
            let yrow = &self.nodes[y.0].data[bi * k..(bi + 1) * k];
            let zrow = &mut out[bi * f * k..(bi + 1) * f * k];
            for (i, &ev) in erow.iter().enumerate() {
                for (j, &yv) in yrow.iter().enumerate() {
                    zrow[i * k + j] = ev * yv;
                }
            }
        }
        Ok(self.push(vec![batch, f * k], out, Op::Multilinear { e, y }))
    }

    /// Convex row mixing: `out[r] = lam[r]*x[r] + (1-lam[r])*x[perm[r]]`.
    pub fn mix_rows(&mut self, x: NodeId, perm: &[usize], lambdas: &[T]) -> Result<NodeId> {
        let shape = self.nodes[x.0].shape.clone();
        if shape.len() != 2 {
            return Err(Error::shape("mix_rows expects [B, F]"));
        }
        let (batch, f) = (shape[0], shape[1]);
        if perm.len() != batch || lambdas.len() != batch {
            return Err(Error::shape("mix_rows: perm/lambda length must equal batch"));
        }
        let mut seen = vec![false; batch];
        for &p in perm {
            if p >= batch || seen[p] {
                return Err(Error::parameter("mix_rows: perm is not a permutation"));
            }
            seen[p] = true;
        }
        let mut out = vec![T::zero(); batch * f];
        for r in 0..batch {
            let lam = lambdas[r];
            let a = &self.nodes[x.0].data[r * f..(r + 1) * f];
            let b = &self.nodes[x.0].data[perm[r] * f..(perm[r] + 1) * f];
            for ((o, &av), &bv) in out[r * f..(r + 1) * f].iter_mut().zip(a).zip(b) {
                *o = lam * av + (T::one() - lam) * bv;
            }
        }
        Ok(self.push(shape, out, Op::MixRows { x, perm: perm.to_vec(), lambdas: lambdas.to_vec() }))
    }

    /// Stack two `[B, F]` blocks along the batch dimension.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let sa = self.nodes[a.0].shape.clone();
        let sb = self.nodes[b.0].shape.clone();
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[1] {
            return Err(Error::shape("concat_rows expects [Ba,F] and [Bb,F]"));
        }
        let mut data = Vec::with_capacity((sa[0] + sb[0]) * sa[1]);
        data.extend_from_slice(&self.nodes[a.0].data);
        data.extend_from_slice(&self.nodes[b.0].data);
        Ok(self.push(vec![sa[0] + sb[0], sa[1]], data, Op::ConcatRows { a, b }))
    }

    // -- backward --------------------------------------------------------------

    /// Reverse pass from a scalar loss. Gradients accumulate into node
    /// buffers and `params.grad`; call `params.zero_grads()` beforehand.
    /// A tape can be walked backward only once.
    pub fn backward(&mut self, loss: NodeId, params: &mut Params<T>) -> Result<()> {
        if self.spent {
            return Err(Error::State(
                "backward already ran on this tape; record a new forward pass".into(),
            ));
        }
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(Error::State("backward without a recorded forward pass".into()));
        }
        if numel(&self.nodes[loss.0].shape) != 1 {
            return Err(Error::State("backward needs a scalar loss".into()));
        }
        self.spent = true;
        for node in &mut self.nodes[..=loss.0] {
            node.grad = vec![T::zero(); node.data.len()];
        }
        self.nodes[loss.0].grad[0] = T::one();

        for idx in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            if node.grad.iter().all(|g| *g == T::zero()) {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param(pid) => {
                    let grad = &mut params.get_mut(*pid).grad;
                    for (g, &ng) in grad.iter_mut().zip(&node.grad) {
                        *g = *g + ng;
                    }
                }
                Op::Add { a, b } => {
                    for (g, &ng) in before[a.0].grad.iter_mut().zip(&node.grad) {
                        *g = *g + ng;
                    }
                    for (g, &ng) in before[b.0].grad.iter_mut().zip(&node.grad) {
                        *g = *g + ng;
                    }
                }
                Op::Mul { a, b } => {
                    let (fst, snd) = if a.0 < b.0 {
                        let (x, y) = before.split_at_mut(b.0);
                        (&mut x[a.0], &mut y[0])
                    } else {
                        let (x, y) = before.split_at_mut(a.0);
                        (&mut y[0], &mut x[b.0])
                    };
                    // fst is node a, snd is node b (a != b enforced by tape order use).
                    for i in 0..node.grad.len() {
                        fst.grad[i] = fst.grad[i] + node.grad[i] * snd.data[i];
                        snd.grad[i] = snd.grad[i] + node.grad[i] * fst.data[i];
                    }
                }
                Op::Sum { x } => {
                    let g = node.grad[0];
                    for gx in before[x.0].grad.iter_mut() {
                        *gx = *gx + g;
                    }
                }
                Op::Relu { x } => {
                    let xin = before[x.0].data.as_ptr();
                    let xn = &mut before[x.0];
                    for i in 0..node.grad.len() {
                        // data read via ptr to appease the borrow of grad
                        let v = unsafe { *xin.add(i) };
                        if v > T::zero() {
                            xn.grad[i] = xn.grad[i] + node.grad[i];
                        }
                    }
                }
                Op::Dropout { x, mask } => {
                    let xn = &mut before[x.0];
                    for i in 0..node.grad.len() {
                        xn.grad[i] = xn.grad[i] + node.grad[i] * mask[i];
                    }
                }
                Op::Flatten { x } => {
                    let xn = &mut before[x.0];
                    for (g, &ng) in xn.grad.iter_mut().zip(&node.grad) {
                        *g = *g + ng;
                    }
                }
                Op::Conv1d { x, w, b } => {
                    let xs = &before[x.0].shape;
                    let (batch, cin, len) = (xs[0], xs[1], xs[2]);
                    let wshape = params.get(*w).shape.clone();
                    let (cout, k) = (wshape[0], wshape[2]);
                    let lout = len - k + 1;
                    let mut col = vec![T::zero(); cin * k * lout];
                    let mut dcol = vec![T::zero(); cin * k * lout];
                    for bi in 0..batch {
                        let dy = &node.grad[bi * cout * lout..(bi + 1) * cout * lout];
                        // Bias gradient.
                        {
                            let gb = &mut params.get_mut(*b).grad;
                            for co in 0..cout {
                                let mut acc = T::zero();
                                for &g in &dy[co * lout..(co + 1) * lout] {
                                    acc = acc + g;
                                }
                                gb[co] = gb[co] + acc;
                            }
                        }
                        // Weight gradient: dW += dY * col^T.
                        im2col(
                            &before[x.0].data[bi * cin * len..(bi + 1) * cin * len],
                            cin,
                            len,
                            k,
                            &mut col,
                        );
                        T::gemm(
                            cout,
                            lout,
                            cin * k,
                            T::one(),
                            dy,
                            lout as isize,
                            1,
                            &col,
                            1,
                            lout as isize,
                            T::one(),
                            &mut params.get_mut(*w).grad,
                            (cin * k) as isize,
                            1,
                        );
                        // Input gradient: dcol = W^T * dY, then col2im.
                        T::gemm(
                            cin * k,
                            cout,
                            lout,
                            T::one(),
                            &params.get(*w).value,
                            1,
                            (cin * k) as isize,
                            dy,
                            lout as isize,
                            1,
                            T::zero(),
                            &mut dcol,
                            lout as isize,
                            1,
                        );
                        let dx = &mut before[x.0].grad[bi * cin * len..(bi + 1) * cin * len];
                        for ci in 0..cin {
                            for kk in 0..k {
                                let src = &dcol[(ci * k + kk) * lout..(ci * k + kk + 1) * lout];
                                let dst = &mut dx[ci * len + kk..ci * len + kk + lout];
                                for (d, &s) in dst.iter_mut().zip(src) {
                                    *d = *d + s;
                                }
                            }
                        }
                    }
                }
                Op::Dense { x, w, b } => {
                    let xs = &before[x.0].shape;
                    let (batch, d_in) = (xs[0], xs[1]);
                    let d_out = params.get(*w).shape[1];
                    // dB.
                    {
                        let gb = &mut params.get_mut(*b).grad;
                        for bi in 0..batch {
                            for o in 0..d_out {
                                gb[o] = gb[o] + node.grad[bi * d_out + o];
                            }
                        }
                    }
                    // dW += x^T * dY.
                    T::gemm(
                        d_in,
                        batch,
                        d_out,
                        T::one(),
                        &before[x.0].data,
                        1,
                        d_in as isize,
                        &node.grad,
                        d_out as isize,
                        1,
                        T::one(),
                        &mut params.get_mut(*w).grad,
                        d_out as isize,
                        1,
                    );
                    // dX += dY * W^T.
                    T::gemm(
                        batch,
                        d_out,
                        d_in,
                        T::one(),
                        &node.grad,
                        d_out as isize,
                        1,
                        &params.get(*w).value,
                        1,
                        d_out as isize,
                        T::one(),
                        &mut before[x.0].grad,
                        d_in as isize,
                        1,
                    );
                }
                Op::Softmax { x } => {
                    let k = node.shape[1];
                    let batch = node.shape[0];
                    let xn = &mut before[x.0];
                    for bi in 0..batch {
                        let p = &node.data[bi * k..(bi + 1) * k];
                        let g = &node.grad[bi * k..(bi + 1) * k];
                        let mut dot = T::zero();
                        for i in 0..k {
                            dot = dot + p[i] * g[i];
                        }
                        let gx = &mut xn.grad[bi * k..(bi + 1) * k];
                        for i in 0..k {
                            gx[i] = gx[i] + p[i] * (g[i] - dot);
                        }
                    }
                }
                Op::CrossEntropy { probs, targets } => {
                    let k = before[probs.0].shape[1];
                    let batch = targets.len();
                    let g = node.grad[0];
                    let floor = T::min_positive_value();
                    let inv_b = T::one() / T::from_f64(batch as f64);
                    let pn = &mut before[probs.0];
                    for (bi, &t) in targets.iter().enumerate() {
                        let p = pn.data[bi * k + t];
                        if p > floor {
                            pn.grad[bi * k + t] = pn.grad[bi * k + t] - g * inv_b / p;
                        }
                    }
                }
                Op::GradScale { x, factor } => {
                    let f = *factor;
                    let xn = &mut before[x.0];
                    for (gx, &ng) in xn.grad.iter_mut().zip(&node.grad) {
                        *gx = *gx + f * ng;
                    }
                }
                Op::Detach => {}
                Op::Multilinear { e, y } => {
                    let (batch, f) = (before[e.0].shape[0], before[e.0].shape[1]);
                    let k = before[y.0].shape[1];
                    let (en, yn) = if e.0 < y.0 {
                        let (a, b) = before.split_at_mut(y.0);
                        (&mut a[e.0], &mut b[0])
                    } else {
                        let (a, b) = before.split_at_mut(e.0);
                        (&mut b[0], &mut a[y.0])
                    };
                    for bi in 0..batch {
                        let gz = &node.grad[bi * f * k..(bi + 1) * f * k];
                        for i in 0..f {
                            let ev = en.data[bi * f + i];
                            let mut ge = T::zero();
                            for j in 0..k {
                                let g = gz[i * k + j];
                                ge = ge + g * yn.data[bi * k + j];
                                yn.grad[bi * k + j] = yn.grad[bi * k + j] + g * ev;
                            }
                            en.grad[bi * f + i] = en.grad[bi * f + i] + ge;
                        }
                    }
                }
                Op::MixRows { x, perm, lambdas } => {
                    let f = node.shape[1];
                    let xn = &mut before[x.0];
                    for (r, (&p, &lam)) in perm.iter().zip(lambdas.iter()).enumerate() {
                        let g = &node.grad[r * f..(r + 1) * f];
                        for (i, &gv) in g.iter().enumerate() {
                            xn.grad[r * f + i] = xn.grad[r * f + i] + lam * gv;
                            xn.grad[p * f + i] = xn.grad[p * f + i] + (T::one() - lam) * gv;
                        }
                    }
                }
                Op::ConcatRows { a, b } => {
                    let na = before[a.0].data.len();
                    for (g, &ng) in before[a.0].grad.iter_mut().zip(&node.grad[..na]) {
                        *g = *g + ng;
                    }
                    for (g, &ng) in before[b.0].grad.iter_mut().zip(&node.grad[na..]) {
                        *g = *g + ng;
                    }
                }
            }
        }
        Ok(())
    }
}

/// Unfold `x [Cin, L]` into `col [Cin*K, L-K+1]` for kernel size `k`.
fn im2col<T: Scalar>(x: &[T], cin: usize, len: usize, k: usize, col: &mut [T]) {
    let lout = len - k + 1;
    debug_assert_eq!(col.len(), cin * k * lout);
    for ci in 0..cin {
        for kk in 0..k {
            let src = &x[ci * len + kk..ci * len + kk + lout];
            col[(ci * k + kk) * lout..(ci * k + kk + 1) * lout].copy_from_slice(src);
        }
    }
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(lr: f64) -> Self {
        Self { learning_rate: lr, ..Self::default() }
    }
}

/// Per-parameter first/second moment buffers plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    pub step_count: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &Params<T>, config: AdamConfig) -> Self {
        let m = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        let v = params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self { m, v, step_count: 0, config }
    }

    /// One bias-corrected Adam update from the gradients stored in `params`.
    pub fn step(&mut self, params: &mut Params<T>) -> Result<()> {
        if self.m.len() != params.len() {
            return Err(Error::shape("optimizer state does not match parameter count"));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c = &self.config;
        let b1 = T::from_f64(c.beta1);
        let b2 = T::from_f64(c.beta2);
        let one = T::one();
        let eps = T::from_f64(c.epsilon);
        let bc1 = T::from_f64(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(t));
        let lr = T::from_f64(c.learning_rate);
        for (i, p) in params.iter_mut().enumerate() {
            if self.m[i].len() != p.value.len() {
                return Err(Error::shape(format!(
                    "optimizer state for `{}` does not match its shape",
                    p.name
                )));
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.value.len() {
                let g = p.grad[j];
                m[j] = b1 * m[j] + (one - b1) * g;
                v[j] = b2 * v[j] + (one - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                p.value[j] = p.value[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoint format
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Header fields recorded alongside the parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CheckpointMeta {
    /// Discriminator wiring tag (0 = marginal, 1 = conditional).
    pub mode: u8,
    pub class_count: u32,
}

/// Versioned binary checkpoint: magic, version, mode, class count, then a
/// named tensor table with little-endian f32 values.
pub fn save_checkpoint<T: Scalar>(
    path: &Path,
    params: &Params<T>,
    meta: CheckpointMeta,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(meta.mode);
    out.extend_from_slice(&meta.class_count.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params.iter() {
        let name = p.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
        for &d in &p.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &p.value {
            out.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(Params<T>, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if cursor + n > bytes.len() {
            return Err(Error::format("checkpoint truncated"));
        }
        let s = &bytes[cursor..cursor + n];
        cursor += n;
        Ok(s)
    };
    if take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::format("bad checkpoint magic"));
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let mode = take(1)?[0];
    let class_count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap());
    let mut params = Params::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(name_len)?.to_vec())
            .map_err(|_| Error::format("checkpoint name is not UTF-8"))?;
        let ndim = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize);
        }
        let n = numel(&shape);
        let mut value = Vec::with_capacity(n);
        for _ in 0..n {
            let v = f32::from_le_bytes(take(4)?.try_into().unwrap());
            value.push(T::from_f64(v as f64));
        }
        params.add(&name, &shape, value)?;
    }
    Ok((params, CheckpointMeta { mode, class_count }))
}
