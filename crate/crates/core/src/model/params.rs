//! Global parameters and the unconstrained reparameterization samplers
//! operate on.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::grad::{Node, NodeRange, Tape};

use super::catalog::ItemCatalog;
use super::profiles::Region;

/// Global parameters psi = (mu, zeta, a, W, Gamma(X_U)).
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalParams {
    /// Per-item intensity, > 0.
    pub mu: Vec<f64>,
    /// Per-item zeroing probability in [0, 1].
    pub zeta: Vec<f64>,
    /// Offsets a_{i,f}, length d_phi, with a_{i,1} pinned to 0.
    pub offsets: Vec<f64>,
    /// LMC weights, length d_phi * B, laid out [flat_form * B + b].
    pub weights: Vec<f64>,
    /// Inducing values, length B * U, laid out [b * U + u].
    pub inducing_values: Vec<f64>,
    pub n_basis: usize,
    pub n_inducing: usize,
}

impl GlobalParams {
    pub fn validate(&self, catalog: &ItemCatalog) -> Result<()> {
        let i = catalog.n_items();
        let d = catalog.d_phi();
        if self.mu.len() != i || self.zeta.len() != i {
            return Err(Error::dims("mu/zeta length must equal the item count"));
        }
        if self.offsets.len() != d {
            return Err(Error::dims("offsets length must equal d_phi"));
        }
        if self.weights.len() != d * self.n_basis {
            return Err(Error::dims("weights length must equal d_phi * B"));
        }
        if self.inducing_values.len() != self.n_basis * self.n_inducing {
            return Err(Error::dims("inducing values length must equal B * U"));
        }
        for item in 0..i {
            let first = catalog.offset(item);
            if self.offsets[first] != 0.0 {
                return Err(Error::validation(format!(
                    "offset for the first form of item {} must be 0",
                    item
                )));
            }
        }
        Ok(())
    }

    pub fn weight(&self, flat_form: usize, basis: usize) -> f64 {
        self.weights[flat_form * self.n_basis + basis]
    }

    pub fn inducing(&self, basis: usize) -> &[f64] {
        &self.inducing_values[basis * self.n_inducing..(basis + 1) * self.n_inducing]
    }
}

/// Index map from named parameter blocks into the flat unconstrained vector.
///
/// Block order: log mu | logit zeta | free offsets | weights | inducing
/// values | logit-box float locations (x0, y0, x1, y1, ...).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub n_items: usize,
    pub d_phi: usize,
    pub n_basis: usize,
    pub n_inducing: usize,
    pub n_floats: usize,
    pub mu: Range<usize>,
    pub zeta: Range<usize>,
    pub offsets: Range<usize>,
    pub weights: Range<usize>,
    pub inducing: Range<usize>,
    pub locations: Range<usize>,
    /// Flat form indices that carry a free offset (everything except the
    /// first form of each item), in block order.
    free_offset_forms: Vec<usize>,
}

impl ParamLayout {
    pub fn new(catalog: &ItemCatalog, n_basis: usize, n_inducing: usize, n_floats: usize) -> Self {
        let i = catalog.n_items();
        let d = catalog.d_phi();
        let mut free_offset_forms = Vec::with_capacity(d - i);
        for item in 0..i {
            for form in 1..catalog.form_count(item) {
                free_offset_forms.push(catalog.flat_index(item, form));
            }
        }
        let mu = 0..i;
        let zeta = mu.end..mu.end + i;
        let offsets = zeta.end..zeta.end + (d - i);
        let weights = offsets.end..offsets.end + d * n_basis;
        let inducing = weights.end..weights.end + n_basis * n_inducing;
        let locations = inducing.end..inducing.end + 2 * n_floats;
        ParamLayout {
            n_items: i,
            d_phi: d,
            n_basis,
            n_inducing,
            n_floats,
            mu,
            zeta,
            offsets,
            weights,
            inducing,
            locations,
            free_offset_forms,
        }
    }

    /// Total dimension including locations.
    pub fn dim(&self) -> usize {
        self.locations.end
    }

    /// Dimension of the psi block alone.
    pub fn psi_dim(&self) -> usize {
        self.inducing.end
    }

    pub fn free_offset_forms(&self) -> &[usize] {
        &self.free_offset_forms
    }

    /// Human-readable name per coordinate, used by chain CSV headers.
    pub fn coordinate_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.dim());
        for i in 0..self.n_items {
            names.push(format!("mu.{i}"));
        }
        for i in 0..self.n_items {
            names.push(format!("zeta.{i}"));
        }
        for &f in &self.free_offset_forms {
            names.push(format!("offset.{f}"));
        }
        for f in 0..self.d_phi {
            for b in 0..self.n_basis {
                names.push(format!("weight.{f}.{b}"));
            }
        }
        for b in 0..self.n_basis {
            for u in 0..self.n_inducing {
                names.push(format!("inducing.{b}.{u}"));
            }
        }
        for m in 0..self.n_floats {
            names.push(format!("loc.{m}.x"));
            names.push(format!("loc.{m}.y"));
        }
        names
    }
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Map (psi, locations) to the flat unconstrained vector.
///
/// Boundary values (zeta in {0, 1}, locations on the region edge, mu <= 0)
/// map to infinities and are rejected.
pub fn unconstrain(
    params: &GlobalParams,
    locations: &[(f64, f64)],
    region: &Region,
    layout: &ParamLayout,
) -> Result<Vec<f64>> {
    if locations.len() != layout.n_floats {
        return Err(Error::dims("location count does not match layout"));
    }
    let mut theta = vec![0.0; layout.dim()];
    for (i, &m) in params.mu.iter().enumerate() {
        if !(m > 0.0) {
            return Err(Error::invalid(format!("mu[{i}] = {m} must be positive")));
        }
        theta[layout.mu.start + i] = m.ln();
    }
    for (i, &z) in params.zeta.iter().enumerate() {
        if !(z > 0.0 && z < 1.0) {
            return Err(Error::invalid(format!(
                "zeta[{i}] = {z} is on the boundary of [0, 1]"
            )));
        }
        theta[layout.zeta.start + i] = logit(z);
    }
    for (k, &f) in layout.free_offset_forms.iter().enumerate() {
        theta[layout.offsets.start + k] = params.offsets[f];
    }
    theta[layout.weights.clone()].copy_from_slice(&params.weights);
    theta[layout.inducing.clone()].copy_from_slice(&params.inducing_values);
    for (m, &(x, y)) in locations.iter().enumerate() {
        if !(x > 0.0 && x < region.width && y > 0.0 && y < region.height) {
            return Err(Error::invalid(format!(
                "location {m} = ({x}, {y}) is on or outside the region boundary"
            )));
        }
        theta[layout.locations.start + 2 * m] = logit(x / region.width);
        theta[layout.locations.start + 2 * m + 1] = logit(y / region.height);
    }
    Ok(theta)
}

/// Inverse of [`unconstrain`].
pub fn constrain(
    theta: &[f64],
    layout: &ParamLayout,
    region: &Region,
) -> (GlobalParams, Vec<(f64, f64)>) {
    assert_eq!(theta.len(), layout.dim());
    let mu: Vec<f64> = theta[layout.mu.clone()].iter().map(|u| u.exp()).collect();
    let zeta: Vec<f64> = theta[layout.zeta.clone()].iter().map(|u| sigmoid(*u)).collect();
    let mut offsets = vec![0.0; layout.d_phi];
    for (k, &f) in layout.free_offset_forms.iter().enumerate() {
        offsets[f] = theta[layout.offsets.start + k];
    }
    let weights = theta[layout.weights.clone()].to_vec();
    let inducing_values = theta[layout.inducing.clone()].to_vec();
    let locations: Vec<(f64, f64)> = (0..layout.n_floats)
        .map(|m| {
            (
                region.width * sigmoid(theta[layout.locations.start + 2 * m]),
                region.height * sigmoid(theta[layout.locations.start + 2 * m + 1]),
            )
        })
        .collect();
    (
        GlobalParams {
            mu,
            zeta,
            offsets,
            weights,
            inducing_values,
            n_basis: layout.n_basis,
            n_inducing: layout.n_inducing,
        },
        locations,
    )
}

/// Log-Jacobian of [`constrain`] at `theta`.
pub fn log_jacobian(theta: &[f64], layout: &ParamLayout, region: &Region) -> f64 {
    let mut lj = 0.0;
    for &u in &theta[layout.mu.clone()] {
        lj += u; // d mu / d u = e^u
    }
    for &u in &theta[layout.zeta.clone()] {
        let s = sigmoid(u);
        lj += (s * (1.0 - s)).ln();
    }
    for m in 0..layout.n_floats {
        let ux = theta[layout.locations.start + 2 * m];
        let uy = theta[layout.locations.start + 2 * m + 1];
        let sx = sigmoid(ux);
        let sy = sigmoid(uy);
        lj += region.width.ln() + (sx * (1.0 - sx)).ln();
        lj += region.height.ln() + (sy * (1.0 - sy)).ln();
    }
    lj
}

/// Tape nodes of the constrained psi block, plus the transform
/// log-Jacobian.
pub struct PsiNodes {
    pub mu: Vec<Node>,
    /// Unconstrained log-mu nodes (handy for the Gamma prior).
    pub log_mu: Vec<Node>,
    pub zeta: Vec<Node>,
    pub one_minus_zeta: Vec<Node>,
    /// Offset node per flat form; `None` is the pinned zero.
    pub offsets: Vec<Option<Node>>,
    /// Weight nodes, contiguous, layout [flat_form * B + b].
    pub weights: NodeRange,
    /// Inducing-value nodes, contiguous, layout [b * U + u].
    pub inducing: NodeRange,
    pub log_jacobian: Node,
}

/// Tape nodes of constrained float locations.
pub struct LocationNodes {
    /// (x, y) per float, in region units.
    pub xy: Vec<(Node, Node)>,
    pub log_jacobian: Node,
}

/// Build constrained psi nodes from an unconstrained block laid out as the
/// psi prefix of `layout`.
pub fn build_constrain_psi(t: &mut Tape, psi: NodeRange, layout: &ParamLayout) -> PsiNodes {
    assert_eq!(psi.len(), layout.psi_dim());
    let at = |i: usize| Node(psi.start + i as u32);
    let mut jac_terms: Vec<Node> = Vec::new();

    let mut mu = Vec::with_capacity(layout.n_items);
    let mut log_mu = Vec::with_capacity(layout.n_items);
    for i in layout.mu.clone() {
        let u = at(i);
        log_mu.push(u);
        mu.push(t.exp(u));
        jac_terms.push(u);
    }

    let mut zeta = Vec::with_capacity(layout.n_items);
    let mut one_minus_zeta = Vec::with_capacity(layout.n_items);
    for i in layout.zeta.clone() {
        let u = at(i);
        let s = t.sigmoid(u);
        let one = t.constant(1.0);
        let oms = t.sub(one, s);
        zeta.push(s);
        one_minus_zeta.push(oms);
        let prod = t.mul(s, oms);
        jac_terms.push(t.ln(prod));
    }

    let mut offsets: Vec<Option<Node>> = vec![None; layout.d_phi];
    for (k, &f) in layout.free_offset_forms().iter().enumerate() {
        offsets[f] = Some(at(layout.offsets.start + k));
    }

    let weights = NodeRange {
        start: psi.start + layout.weights.start as u32,
        len: layout.weights.len() as u32,
    };
    let inducing = NodeRange {
        start: psi.start + layout.inducing.start as u32,
        len: layout.inducing.len() as u32,
    };

    let log_jacobian = t.sum_nodes(&jac_terms);
    PsiNodes {
        mu,
        log_mu,
        zeta,
        one_minus_zeta,
        offsets,
        weights,
        inducing,
        log_jacobian,
    }
}

/// Build constrained location nodes from an unconstrained block of
/// interleaved (x, y) coordinates.
pub fn build_constrain_locations(t: &mut Tape, locs: NodeRange, region: &Region) -> LocationNodes {
    assert_eq!(locs.len() % 2, 0);
    let n = locs.len() / 2;
    let mut xy = Vec::with_capacity(n);
    let mut jac_terms: Vec<Node> = Vec::with_capacity(2 * n);
    for m in 0..n {
        let ux = locs.at(2 * m);
        let uy = locs.at(2 * m + 1);
        let sx = t.sigmoid(ux);
        let sy = t.sigmoid(uy);
        let x = t.mul_c(sx, region.width);
        let y = t.mul_c(sy, region.height);
        xy.push((x, y));
        let one = t.constant(1.0);
        let omx = t.sub(one, sx);
        let px = t.mul(sx, omx);
        let lx = t.ln(px);
        jac_terms.push(t.add_c(lx, region.width.ln()));
        let omy = t.sub(one, sy);
        let py = t.mul(sy, omy);
        let ly = t.ln(py);
        jac_terms.push(t.add_c(ly, region.height.ln()));
    }
    let log_jacobian = t.sum_nodes(&jac_terms);
    LocationNodes { xy, log_jacobian }
}

/// Combined constrained view over one contiguous unconstrained vector.
pub struct ConstrainedNodes {
    pub psi: PsiNodes,
    pub locations: LocationNodes,
    pub log_jacobian: Node,
}

/// Build constrained-parameter nodes from the full unconstrained block
/// `theta` (psi followed by locations).
pub fn build_constrain(
    t: &mut Tape,
    theta: NodeRange,
    layout: &ParamLayout,
    region: &Region,
) -> ConstrainedNodes {
    assert_eq!(theta.len(), layout.dim());
    let psi_range = NodeRange {
        start: theta.start,
        len: layout.psi_dim() as u32,
    };
    let loc_range = NodeRange {
        start: theta.start + layout.psi_dim() as u32,
        len: (2 * layout.n_floats) as u32,
    };
    let psi = build_constrain_psi(t, psi_range, layout);
    let locations = build_constrain_locations(t, loc_range, region);
    let log_jacobian = t.add(psi.log_jacobian, locations.log_jacobian);
    ConstrainedNodes {
        psi,
        locations,
        log_jacobian,
    }
}
