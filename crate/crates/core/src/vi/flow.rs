//! Conditional coupling flows.
//!
//! Each flow is a context-conditioned elementwise affine head followed by
//! coupling layers whose conditioner networks see the pass-through half
//! plus the context vector. Transforms are either affine or monotone
//! rational-quadratic splines with linear tails. The flow maps a standard
//! normal base to the unconstrained parameter space; terminal blocks map
//! samples into the model domain when reporting.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::{Node, NodeRange, Tape};
use crate::rng::StreamKey;
use crate::smi::Terminal;

/// Default spline knot offset making softplus(raw + offset) = 1 at raw 0.
const DERIV_OFFSET: f64 = 0.5413248546129181;
const MIN_BIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub enum TransformKind {
    Affine,
    /// Rational-quadratic spline with `bins` bins on [-bound, bound].
    Spline { bins: usize, bound: f64 },
}

impl TransformKind {
    fn params_per_coord(&self) -> usize {
        match *self {
            TransformKind::Affine => 2,
            TransformKind::Spline { bins, .. } => 3 * bins - 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Number of coupling layers (the context head is extra).
    pub n_layers: usize,
    /// Conditioner hidden width (two hidden layers).
    pub hidden: usize,
    pub transform: TransformKind,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            n_layers: 4,
            hidden: 64,
            transform: TransformKind::Affine,
        }
    }
}

/// Shapes of one conditioner MLP: in -> hidden -> hidden -> out.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct MlpShape {
    input: usize,
    hidden: usize,
    output: usize,
}

impl MlpShape {
    fn param_count(&self) -> usize {
        self.hidden * self.input
            + self.hidden
            + self.hidden * self.hidden
            + self.hidden
            + self.output * self.hidden
            + self.output
    }
}

/// One coupling layer: `mask_lo..mask_hi` style split by parity of the
/// layer index; the transformed half is listed explicitly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct LayerArch {
    /// Coordinates passed through unchanged.
    pass: Vec<usize>,
    /// Coordinates transformed elementwise.
    transform: Vec<usize>,
    mlp: MlpShape,
    offset: usize,
}

/// Architecture of one conditional flow over `dim` coordinates.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FlowArch {
    pub dim: usize,
    pub context_dim: usize,
    pub transform: TransformKind,
    /// Context head MLP producing (scale, shift) per coordinate.
    head: MlpShape,
    layers: Vec<LayerArch>,
    param_count: usize,
}

impl FlowArch {
    pub fn new(dim: usize, context_dim: usize, config: &FlowConfig) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("flow dimension must be positive"));
        }
        if let TransformKind::Spline { bins, bound } = config.transform {
            if bins < 2 || !(bound > 0.0) {
                return Err(Error::invalid("spline needs >= 2 bins and a positive bound"));
            }
        }
        let head = MlpShape {
            input: context_dim.max(1),
            hidden: config.hidden,
            output: 2 * dim,
        };
        let mut offset = head.param_count();
        let mut layers = Vec::new();
        if dim >= 2 {
            for l in 0..config.n_layers {
                let (pass, transform): (Vec<usize>, Vec<usize>) = if l % 2 == 0 {
                    ((0..dim / 2).collect(), (dim / 2..dim).collect())
                } else {
                    ((dim / 2..dim).collect(), (0..dim / 2).collect())
                };
                let mlp = MlpShape {
                    input: pass.len() + context_dim,
                    hidden: config.hidden,
                    output: transform.len() * config.transform.params_per_coord(),
                };
                let count = mlp.param_count();
                layers.push(LayerArch {
                    pass,
                    transform,
                    mlp,
                    offset,
                });
                offset += count;
            }
        }
        Ok(FlowArch {
            dim,
            context_dim,
            transform: config.transform,
            head,
            layers,
            param_count: offset,
        })
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    /// Initialize parameters: hidden layers with scaled random weights,
    /// output layers at zero so the whole flow starts as the identity.
    pub fn init_params(&self, key: StreamKey) -> Vec<f64> {
        let mut rng = key.rng();
        let mut params = vec![0.0; self.param_count];
        let mut init_mlp = |params: &mut [f64], shape: &MlpShape, offset: usize| {
            let mut pos = offset;
            let s1 = (2.0 / (shape.input + shape.hidden) as f64).sqrt();
            for _ in 0..shape.hidden * shape.input {
                params[pos] = rng.gen_range(-s1..s1);
                pos += 1;
            }
            pos += shape.hidden; // b1 = 0
            let s2 = (2.0 / (2 * shape.hidden) as f64).sqrt();
            for _ in 0..shape.hidden * shape.hidden {
                params[pos] = rng.gen_range(-s2..s2);
                pos += 1;
            }
            // b2, W3, b3 stay zero
        };
        init_mlp(&mut params, &self.head, 0);
        for layer in &self.layers {
            init_mlp(&mut params, &layer.mlp, layer.offset);
        }
        params
    }
}

// ---------------------------------------------------------------------
// f64 evaluation
// ---------------------------------------------------------------------

fn mlp_forward_f64(shape: &MlpShape, params: &[f64], input: &[f64], out: &mut Vec<f64>) {
    debug_assert_eq!(input.len(), shape.input);
    let (n_in, n_h, n_out) = (shape.input, shape.hidden, shape.output);
    let w1 = &params[..n_h * n_in];
    let b1 = &params[n_h * n_in..n_h * n_in + n_h];
    let off2 = n_h * n_in + n_h;
    let w2 = &params[off2..off2 + n_h * n_h];
    let b2 = &params[off2 + n_h * n_h..off2 + n_h * n_h + n_h];
    let off3 = off2 + n_h * n_h + n_h;
    let w3 = &params[off3..off3 + n_out * n_h];
    let b3 = &params[off3 + n_out * n_h..off3 + n_out * n_h + n_out];

    let mut h1 = vec![0.0; n_h];
    for j in 0..n_h {
        let mut acc = b1[j];
        for i in 0..n_in {
            acc += w1[j * n_in + i] * input[i];
        }
        h1[j] = acc.tanh();
    }
    let mut h2 = vec![0.0; n_h];
    for j in 0..n_h {
        let mut acc = b2[j];
        for i in 0..n_h {
            acc += w2[j * n_h + i] * h1[i];
        }
        h2[j] = acc.tanh();
    }
    out.clear();
    out.reserve(n_out);
    for j in 0..n_out {
        let mut acc = b3[j];
        for i in 0..n_h {
            acc += w3[j * n_h + i] * h2[i];
        }
        out.push(acc);
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Knot layout of a rational-quadratic spline from raw parameters.
struct SplineKnots {
    xs: Vec<f64>,
    ys: Vec<f64>,
    derivs: Vec<f64>,
    bound: f64,
}

fn spline_knots(raw: &[f64], bins: usize, bound: f64) -> SplineKnots {
    let wraw = &raw[..bins];
    let hraw = &raw[bins..2 * bins];
    let draw = &raw[2 * bins..3 * bins - 1];
    let norm = |vals: &[f64]| -> Vec<f64> {
        let m = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = vals.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.iter()
            .map(|e| MIN_BIN + (1.0 - MIN_BIN * bins as f64) * e / s)
            .collect()
    };
    let widths = norm(wraw);
    let heights = norm(hraw);
    let mut xs = Vec::with_capacity(bins + 1);
    let mut ys = Vec::with_capacity(bins + 1);
    xs.push(-bound);
    ys.push(-bound);
    let mut cx = -bound;
    let mut cy = -bound;
    for k in 0..bins {
        cx += 2.0 * bound * widths[k];
        cy += 2.0 * bound * heights[k];
        xs.push(cx);
        ys.push(cy);
    }
    xs[bins] = bound;
    ys[bins] = bound;
    let mut derivs = Vec::with_capacity(bins + 1);
    derivs.push(1.0);
    for &d in draw {
        derivs.push(softplus(d + DERIV_OFFSET));
    }
    derivs.push(1.0);
    SplineKnots {
        xs,
        ys,
        derivs,
        bound,
    }
}

fn spline_forward_f64(k: &SplineKnots, x: f64) -> (f64, f64) {
    if x.abs() >= k.bound {
        return (x, 0.0);
    }
    let bins = k.xs.len() - 1;
    let mut bin = bins - 1;
    for b in 0..bins {
        if x < k.xs[b + 1] {
            bin = b;
            break;
        }
    }
    let (x0, x1) = (k.xs[bin], k.xs[bin + 1]);
    let (y0, y1) = (k.ys[bin], k.ys[bin + 1]);
    let (d0, d1) = (k.derivs[bin], k.derivs[bin + 1]);
    let w = x1 - x0;
    let h = y1 - y0;
    let s = h / w;
    let xi = (x - x0) / w;
    let omxi = 1.0 - xi;
    let q = xi * omxi;
    let denom = s + (d1 + d0 - 2.0 * s) * q;
    let y = y0 + h * (s * xi * xi + d0 * q) / denom;
    let deriv = s * s * (d1 * xi * xi + 2.0 * s * q + d0 * omxi * omxi) / (denom * denom);
    (y, deriv.ln())
}

fn spline_inverse_f64(k: &SplineKnots, y: f64) -> (f64, f64) {
    if y.abs() >= k.bound {
        return (y, 0.0);
    }
    let bins = k.ys.len() - 1;
    let mut bin = bins - 1;
    for b in 0..bins {
        if y < k.ys[b + 1] {
            bin = b;
            break;
        }
    }
    let (x0, x1) = (k.xs[bin], k.xs[bin + 1]);
    let (y0, y1) = (k.ys[bin], k.ys[bin + 1]);
    let (d0, d1) = (k.derivs[bin], k.derivs[bin + 1]);
    let w = x1 - x0;
    let h = y1 - y0;
    let s = h / w;
    let dy = y - y0;
    // solve the quadratic a xi^2 + b xi + c = 0 (Durkan et al.)
    let a = h * (s - d0) + dy * (d1 + d0 - 2.0 * s);
    let b = h * d0 - dy * (d1 + d0 - 2.0 * s);
    let c = -s * dy;
    let disc = (b * b - 4.0 * a * c).max(0.0);
    let xi = 2.0 * c / (-b - disc.sqrt());
    let xi = xi.clamp(0.0, 1.0);
    let x = x0 + w * xi;
    let q = xi * (1.0 - xi);
    let denom = s + (d1 + d0 - 2.0 * s) * q;
    let deriv = s * s * (d1 * xi * xi + 2.0 * s * q + d0 * (1.0 - xi) * (1.0 - xi))
        / (denom * denom);
    (x, -deriv.ln())
}

fn affine_from_raw(raw_s: f64, raw_t: f64) -> (f64, f64) {
    // bounded log-scale keeps the layer invertible and training stable
    (3.0 * raw_s.tanh(), raw_t)
}

/// Forward pass of the flow in plain f64: z -> x with log |det dx/dz|.
pub fn flow_forward_f64(
    arch: &FlowArch,
    params: &[f64],
    z: &[f64],
    context: &[f64],
) -> (Vec<f64>, f64) {
    assert_eq!(params.len(), arch.param_count);
    assert_eq!(z.len(), arch.dim);
    assert_eq!(context.len(), arch.context_dim);
    let mut x = z.to_vec();
    let mut logdet = 0.0;
    // context head
    let head_in: Vec<f64> = if arch.context_dim == 0 {
        vec![1.0]
    } else {
        context.to_vec()
    };
    let mut out = Vec::new();
    mlp_forward_f64(&arch.head, &params[..arch.head.param_count()], &head_in, &mut out);
    for i in 0..arch.dim {
        let (ls, t) = affine_from_raw(out[i], out[arch.dim + i]);
        x[i] = x[i] * ls.exp() + t;
        logdet += ls;
    }
    // coupling layers
    for layer in &arch.layers {
        let mut mlp_in: Vec<f64> = layer.pass.iter().map(|&i| x[i]).collect();
        mlp_in.extend_from_slice(context);
        mlp_forward_f64(
            &layer.mlp,
            &params[layer.offset..layer.offset + layer.mlp.param_count()],
            &mlp_in,
            &mut out,
        );
        let ppc = arch.transform.params_per_coord();
        for (j, &i) in layer.transform.iter().enumerate() {
            let raw = &out[j * ppc..(j + 1) * ppc];
            match arch.transform {
                TransformKind::Affine => {
                    let (ls, t) = affine_from_raw(raw[0], raw[1]);
                    x[i] = x[i] * ls.exp() + t;
                    logdet += ls;
                }
                TransformKind::Spline { bins, bound } => {
                    let knots = spline_knots(raw, bins, bound);
                    let (y, ld) = spline_forward_f64(&knots, x[i]);
                    x[i] = y;
                    logdet += ld;
                }
            }
        }
    }
    (x, logdet)
}

/// Inverse pass: x -> z with log |det dz/dx|.
pub fn flow_inverse_f64(
    arch: &FlowArch,
    params: &[f64],
    x: &[f64],
    context: &[f64],
) -> (Vec<f64>, f64) {
    let mut z = x.to_vec();
    let mut logdet = 0.0;
    let mut out = Vec::new();
    let ppc = arch.transform.params_per_coord();
    for layer in arch.layers.iter().rev() {
        let mut mlp_in: Vec<f64> = layer.pass.iter().map(|&i| z[i]).collect();
        mlp_in.extend_from_slice(context);
        mlp_forward_f64(
            &layer.mlp,
            &params[layer.offset..layer.offset + layer.mlp.param_count()],
            &mlp_in,
            &mut out,
        );
        for (j, &i) in layer.transform.iter().enumerate() {
            let raw = &out[j * ppc..(j + 1) * ppc];
            match arch.transform {
                TransformKind::Affine => {
                    let (ls, t) = affine_from_raw(raw[0], raw[1]);
                    z[i] = (z[i] - t) * (-ls).exp();
                    logdet -= ls;
                }
                TransformKind::Spline { bins, bound } => {
                    let knots = spline_knots(raw, bins, bound);
                    let (v, ld) = spline_inverse_f64(&knots, z[i]);
                    z[i] = v;
                    logdet += ld;
                }
            }
        }
    }
    let head_in: Vec<f64> = if arch.context_dim == 0 {
        vec![1.0]
    } else {
        context.to_vec()
    };
    mlp_forward_f64(&arch.head, &params[..arch.head.param_count()], &head_in, &mut out);
    for i in 0..arch.dim {
        let (ls, t) = affine_from_raw(out[i], out[arch.dim + i]);
        z[i] = (z[i] - t) * (-ls).exp();
        logdet -= ls;
    }
    (z, logdet)
}

// ---------------------------------------------------------------------
// tape evaluation
// ---------------------------------------------------------------------

fn build_softplus(t: &mut Tape, x: Node) -> Node {
    let a = t.abs(x);
    let na = t.neg(a);
    let e = t.exp(na);
    let l = t.ln_1p(e);
    let sum = t.add(x, a);
    let relu = t.mul_c(sum, 0.5);
    t.add(relu, l)
}

fn build_mlp(
    t: &mut Tape,
    shape: &MlpShape,
    params: NodeRange,
    offset: usize,
    input: &[Node],
) -> Vec<Node> {
    debug_assert_eq!(input.len(), shape.input);
    let (n_in, n_h, n_out) = (shape.input, shape.hidden, shape.output);
    let p = |i: usize| Node(params.start + (offset + i) as u32);
    let x = t.gather(input);
    let b1_off = n_h * n_in;
    let mut h1 = Vec::with_capacity(n_h);
    for j in 0..n_h {
        let d = t.dot_nodes(p(j * n_in), Node(x.start), n_in);
        let a = t.add(d, p(b1_off + j));
        h1.push(t.tanh(a));
    }
    let h1 = t.gather(&h1);
    let off2 = b1_off + n_h;
    let b2_off = off2 + n_h * n_h;
    let mut h2 = Vec::with_capacity(n_h);
    for j in 0..n_h {
        let d = t.dot_nodes(p(off2 + j * n_h), Node(h1.start), n_h);
        let a = t.add(d, p(b2_off + j));
        h2.push(t.tanh(a));
    }
    let h2 = t.gather(&h2);
    let off3 = b2_off + n_h;
    let b3_off = off3 + n_out * n_h;
    let mut out = Vec::with_capacity(n_out);
    for j in 0..n_out {
        let d = t.dot_nodes(p(off3 + j * n_h), Node(h2.start), n_h);
        out.push(t.add(d, p(b3_off + j)));
    }
    out
}

fn build_affine(t: &mut Tape, x: Node, raw_s: Node, raw_t: Node) -> (Node, Node) {
    let th = t.tanh(raw_s);
    let ls = t.mul_c(th, 3.0);
    let sc = t.exp(ls);
    let sx = t.mul(x, sc);
    let y = t.add(sx, raw_t);
    (y, ls)
}

fn build_spline(
    t: &mut Tape,
    x: Node,
    raw: &[Node],
    bins: usize,
    bound: f64,
) -> (Node, Node) {
    let xv = t.val(x);
    if xv.abs() >= bound {
        let zero = t.constant(0.0);
        return (x, zero);
    }
    // normalized widths and heights via softmax with floor
    let cum = |t: &mut Tape, raw: &[Node]| -> Vec<Node> {
        let m = raw.iter().map(|&r| t.val(r)).fold(f64::NEG_INFINITY, f64::max);
        let shifted_start = t.len() as u32;
        for &r in raw {
            t.add_c(r, -m);
        }
        let exp_start = t.len() as u32;
        for i in 0..raw.len() {
            t.exp(Node(shifted_start + i as u32));
        }
        let s = t.sum_range(Node(exp_start), raw.len());
        let scale = 1.0 - MIN_BIN * bins as f64;
        let mut knots = Vec::with_capacity(bins + 1);
        let mut acc = t.constant(-bound);
        knots.push(acc);
        for i in 0..raw.len() {
            let frac = t.div(Node(exp_start + i as u32), s);
            let scaled = t.mul_c(frac, scale);
            let w = t.add_c(scaled, MIN_BIN);
            let step = t.mul_c(w, 2.0 * bound);
            acc = t.add(acc, step);
            knots.push(acc);
        }
        knots
    };
    let xs = cum(t, &raw[..bins]);
    let ys = cum(t, &raw[bins..2 * bins]);
    let mut derivs = Vec::with_capacity(bins + 1);
    derivs.push(t.constant(1.0));
    for &r in &raw[2 * bins..3 * bins - 1] {
        let shifted = t.add_c(r, DERIV_OFFSET);
        derivs.push(build_softplus(t, shifted));
    }
    derivs.push(t.constant(1.0));

    // locate the bin on eager values
    let mut bin = bins - 1;
    for b in 0..bins {
        if xv < t.val(xs[b + 1]) {
            bin = b;
            break;
        }
    }
    let x0 = xs[bin];
    let x1 = xs[bin + 1];
    let y0 = ys[bin];
    let y1 = ys[bin + 1];
    let d0 = derivs[bin];
    let d1 = derivs[bin + 1];
    let w = t.sub(x1, x0);
    let h = t.sub(y1, y0);
    let s = t.div(h, w);
    let dx = t.sub(x, x0);
    let xi = t.div(dx, w);
    let one = t.constant(1.0);
    let omxi = t.sub(one, xi);
    let q = t.mul(xi, omxi);
    let two_s = t.mul_c(s, 2.0);
    let dsum = t.add(d1, d0);
    let dd = t.sub(dsum, two_s);
    let ddq = t.mul(dd, q);
    let denom = t.add(s, ddq);
    let xi2 = t.mul(xi, xi);
    let sxi2 = t.mul(s, xi2);
    let d0q = t.mul(d0, q);
    let num = t.add(sxi2, d0q);
    let frac = t.div(num, denom);
    let hfrac = t.mul(h, frac);
    let y = t.add(y0, hfrac);
    // derivative
    let d1xi2 = t.mul(d1, xi2);
    let sq = t.mul(two_s, q);
    let omxi2 = t.mul(omxi, omxi);
    let d0om = t.mul(d0, omxi2);
    let dn1 = t.add(d1xi2, sq);
    let dnum = t.add(dn1, d0om);
    let s2 = t.mul(s, s);
    let top = t.mul(s2, dnum);
    let den2 = t.mul(denom, denom);
    let deriv = t.div(top, den2);
    let ld = t.ln(deriv);
    (y, ld)
}

/// Forward pass on the tape. Returns the output block (contiguous) and
/// the log-determinant node.
pub fn build_flow_forward(
    t: &mut Tape,
    arch: &FlowArch,
    params: NodeRange,
    z: &[f64],
    context: &[Node],
) -> (NodeRange, Node) {
    assert_eq!(params.len(), arch.param_count);
    assert_eq!(z.len(), arch.dim);
    assert_eq!(context.len(), arch.context_dim);
    let mut x: Vec<Node> = z.iter().map(|&v| t.constant(v)).collect();
    let mut ld_terms: Vec<Node> = Vec::new();
    let head_in: Vec<Node> = if arch.context_dim == 0 {
        vec![t.constant(1.0)]
    } else {
        context.to_vec()
    };
    let out = build_mlp(t, &arch.head, params, 0, &head_in);
    for i in 0..arch.dim {
        let (y, ls) = build_affine(t, x[i], out[i], out[arch.dim + i]);
        x[i] = y;
        ld_terms.push(ls);
    }
    let ppc = arch.transform.params_per_coord();
    for layer in &arch.layers {
        let mut mlp_in: Vec<Node> = layer.pass.iter().map(|&i| x[i]).collect();
        mlp_in.extend_from_slice(context);
        let out = build_mlp(t, &layer.mlp, params, layer.offset, &mlp_in);
        for (j, &i) in layer.transform.iter().enumerate() {
            let raw = &out[j * ppc..(j + 1) * ppc];
            match arch.transform {
                TransformKind::Affine => {
                    let (y, ls) = build_affine(t, x[i], raw[0], raw[1]);
                    x[i] = y;
                    ld_terms.push(ls);
                }
                TransformKind::Spline { bins, bound } => {
                    let (y, ld) = build_spline(t, x[i], raw, bins, bound);
                    x[i] = y;
                    ld_terms.push(ld);
                }
            }
        }
    }
    let block = t.gather(&x);
    let ld = t.sum_nodes(&ld_terms);
    (block, ld)
}

/// log N(z; 0, I).
pub fn std_normal_logpdf(z: &[f64]) -> f64 {
    let d = z.len() as f64;
    -0.5 * z.iter().map(|v| v * v).sum::<f64>() - 0.5 * d * (2.0 * std::f64::consts::PI).ln()
}

/// Sample a flow and report draws in the model domain with their log
/// density (terminal-block Jacobians included).
pub fn flow_sample_and_logpdf(
    arch: &FlowArch,
    params: &[f64],
    terminals: &[Terminal],
    context: &[f64],
    n: usize,
    key: StreamKey,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if terminals.len() != arch.dim {
        return Err(Error::dims("one terminal per flow coordinate"));
    }
    if context.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("non-finite context"));
    }
    let mut rng = key.rng();
    let mut draws = Vec::with_capacity(n);
    let mut logqs = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..arch.dim)
            .map(|_| rng.sample(rand_distr::StandardNormal))
            .collect();
        let (u, logdet) = flow_forward_f64(arch, params, &z, context);
        let mut logq = std_normal_logpdf(&z) - logdet;
        let x: Vec<f64> = u
            .iter()
            .zip(terminals)
            .map(|(&ui, term)| {
                logq -= term.log_abs_det(ui);
                term.apply(ui)
            })
            .collect();
        if x.iter().any(|v| !v.is_finite()) || !logq.is_finite() {
            return Err(Error::numerical("non-finite flow sample"));
        }
        draws.push(x);
        logqs.push(logq);
    }
    Ok((draws, logqs))
}
