//! The sparse field model: Monte-Carlo likelihood bounds over inducing
//! values, the powered joint density, and a dense exact-joint oracle for
//! small instances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::grad::{Node, NodeRange, PoolSlice, Tape};
use crate::model::catalog::ItemCatalog;
use crate::model::likelihood::{build_profile_loglik, ItemNodes};
use crate::model::params::{
    build_constrain_locations, build_constrain_psi, constrain, log_jacobian, GlobalParams,
    ParamLayout, PsiNodes,
};
use crate::model::prior::{build_log_prior, log_prior, PriorConfig};
use crate::model::profiles::ProfileSet;
use crate::rng::{Domain, StreamKey};
use crate::smi::{PsiSource, SmiModel, Terminal};

use super::conditional::{stabilized_cholesky, DEGENERATE_COV_EPS, JITTER_LADDER};
use super::inducing::InducingGrid;
use super::kernel::kernel_matrix;

/// Default number of Monte-Carlo field draws per bound evaluation.
pub const DEFAULT_MC_SAMPLES: usize = 100;

/// Frozen Monte-Carlo noise for one evaluation context: standard-normal
/// draws for the float fields, and the anchor draws already pushed through
/// the anchor conditional factor (which is parameter-independent).
pub struct FieldNoise {
    pub s: usize,
    /// [s][b][p] anchor shifts L_A z.
    anchor_shift: Vec<f64>,
    /// [s][b][m] raw float noise.
    float_z: Vec<f64>,
}

/// The sparse approximate joint model over anchors and floats.
pub struct FieldModel {
    pub catalog: ItemCatalog,
    pub data: ProfileSet,
    pub prior: PriorConfig,
    pub grid: InducingGrid,
    pub layout: ParamLayout,
    pub s_mc: usize,
    pub noise_seed: u64,
    /// K_{A,U} K_U^{-1}, rows per anchor.
    m_a: DMatrix<f64>,
    /// Lower Cholesky factor of the anchor conditional covariance (zero in
    /// the knot-coincident degenerate case).
    l_a: DMatrix<f64>,
}

impl FieldModel {
    pub fn new(
        catalog: ItemCatalog,
        data: ProfileSet,
        prior: PriorConfig,
        s_mc: usize,
        noise_seed: u64,
    ) -> Result<Self> {
        prior.validate()?;
        data.validate(&catalog)?;
        if s_mc == 0 {
            return Err(Error::invalid("need at least one Monte-Carlo sample"));
        }
        let grid = InducingGrid::lattice(prior.inducing_grid, &data.region, &prior.kernel)?;
        let layout = ParamLayout::new(&catalog, prior.n_basis, grid.len(), data.n_floats());
        let anchors = data.anchor_locations();
        let k_au = kernel_matrix(&anchors, grid.points(), grid.kernel(), false)?;
        let v = grid.cholesky().solve(&k_au.transpose());
        let m_a = v.transpose();
        let k_a = kernel_matrix(&anchors, &anchors, grid.kernel(), false)?;
        let mut cov = &k_a - &k_au * v;
        for i in 0..cov.nrows() {
            for j in 0..i {
                let s = 0.5 * (cov[(i, j)] + cov[(j, i)]);
                cov[(i, j)] = s;
                cov[(j, i)] = s;
            }
        }
        let (l_a, _) = stabilized_cholesky(&cov)?;
        Ok(FieldModel {
            catalog,
            data,
            prior,
            grid,
            layout,
            s_mc,
            noise_seed,
            m_a,
            l_a,
        })
    }

    pub fn n_anchors(&self) -> usize {
        self.data.n_anchors()
    }

    pub fn n_floats(&self) -> usize {
        self.data.n_floats()
    }

    pub fn n_basis(&self) -> usize {
        self.prior.n_basis
    }

    /// Draw a frozen noise set with `s` samples from the given stream.
    pub fn noise_from_key(&self, s: usize, key: StreamKey) -> FieldNoise {
        let mut rng = key.rng();
        let n = self.n_anchors();
        let m = self.n_floats();
        let b = self.n_basis();
        let mut anchor_shift = vec![0.0; s * b * n];
        let mut z = vec![0.0; n];
        for block in 0..s * b {
            for zi in z.iter_mut() {
                *zi = rng.sample(StandardNormal);
            }
            let base = block * n;
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..=i {
                    acc += self.l_a[(i, k)] * z[k];
                }
                anchor_shift[base + i] = acc;
            }
        }
        let float_z: Vec<f64> = (0..s * b * m).map(|_| rng.sample(StandardNormal)).collect();
        FieldNoise {
            s,
            anchor_shift,
            float_z,
        }
    }

    /// Constrained-psi node view from raw values (no transform, no
    /// gradient into psi).
    fn psi_view_from_values(&self, t: &mut Tape, psi: &GlobalParams) -> Result<PsiView> {
        psi.validate(&self.catalog)?;
        let log_mu: Vec<f64> = psi.mu.iter().map(|m| m.ln()).collect();
        let mu = t.constants(&psi.mu);
        let log_mu = t.constants(&log_mu);
        let zeta = t.constants(&psi.zeta);
        let one = t.constant(1.0);
        let omz_start = t.len() as u32;
        for i in 0..psi.zeta.len() {
            t.sub(one, zeta.at(i));
        }
        let mut offsets: Vec<Option<Node>> = vec![None; self.catalog.d_phi()];
        for item in 0..self.catalog.n_items() {
            for form in 1..self.catalog.form_count(item) {
                let f = self.catalog.flat_index(item, form);
                offsets[f] = Some(t.constant(psi.offsets[f]));
            }
        }
        let weights = t.constants(&psi.weights);
        let inducing = t.constants(&psi.inducing_values);
        let one_minus_zeta: Vec<Node> = (0..psi.zeta.len())
            .map(|i| Node(omz_start + i as u32))
            .collect();
        let ln_omz: Vec<Node> = one_minus_zeta.iter().map(|&n| t.ln(n)).collect();
        Ok(PsiView {
            items: ItemNodes {
                mu: mu.iter().collect(),
                zeta: zeta.iter().collect(),
                one_minus_zeta,
                ln_one_minus_zeta: ln_omz,
            },
            log_mu: log_mu.iter().collect(),
            offsets,
            weights,
            inducing,
        })
    }

    fn psi_view_from_nodes(&self, t: &mut Tape, nodes: &PsiNodes) -> PsiView {
        PsiView {
            items: ItemNodes::from_constrained(t, nodes),
            log_mu: nodes.log_mu.clone(),
            offsets: nodes.offsets.clone(),
            weights: nodes.weights,
            inducing: nodes.inducing,
        }
    }

    /// Monte-Carlo anchor likelihood bound (value form).
    pub fn mc_bound_anchor(&self, psi: &GlobalParams, noise: &FieldNoise) -> Result<f64> {
        let mut t = Tape::new();
        let view = self.psi_view_from_values(&mut t, psi)?;
        let node = self.build_anchor_bound(&mut t, &view, noise);
        Ok(t.val(node))
    }

    /// Monte-Carlo float likelihood bound (value form); locations are free
    /// parameters supplied by the caller.
    pub fn mc_bound_float(
        &self,
        psi: &GlobalParams,
        locations: &[(f64, f64)],
        noise: &FieldNoise,
    ) -> Result<f64> {
        if locations.len() != self.n_floats() {
            return Err(Error::dims("location count must match the float count"));
        }
        if self.n_floats() == 0 {
            return Ok(0.0);
        }
        let mut t = Tape::new();
        let view = self.psi_view_from_values(&mut t, psi)?;
        let xy: Vec<(Node, Node)> = locations
            .iter()
            .map(|&(x, y)| (t.constant(x), t.constant(y)))
            .collect();
        let node = self.build_float_bound(&mut t, &view, &xy, noise)?;
        Ok(t.val(node))
    }

    /// log p_pow,eta on constrained parameters:
    /// anchor bound + eta * float bound + log prior(psi) + log prior(X).
    pub fn approx_joint_logpdf(
        &self,
        psi: &GlobalParams,
        locations: &[(f64, f64)],
        eta: f64,
        noise: &FieldNoise,
    ) -> Result<f64> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::invalid("eta must lie in [0, 1]"));
        }
        for &(x, y) in locations {
            if !self.data.region.contains(x, y) {
                return Ok(f64::NEG_INFINITY);
            }
        }
        let lp = log_prior(psi, &self.prior, &self.grid, &self.catalog);
        if lp == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let anchor = self.mc_bound_anchor(psi, noise)?;
        let float = if self.n_floats() > 0 {
            self.mc_bound_float(psi, locations, noise)?
        } else {
            0.0
        };
        let loc_prior = -(self.data.region.area().ln()) * self.n_floats() as f64;
        Ok(anchor + eta * float + lp + loc_prior)
    }

    /// Anchor-bound tape builder. The anchor conditional factor is
    /// parameter-independent, so draws are conditional mean plus a frozen
    /// shift.
    fn build_anchor_bound(&self, t: &mut Tape, view: &PsiView, noise: &FieldNoise) -> Node {
        let n = self.n_anchors();
        let b_count = self.n_basis();
        let u = self.grid.len();
        // pooled rows of M_A
        let rows: Vec<PoolSlice> = (0..n)
            .map(|p| {
                let row: Vec<f64> = (0..u).map(|c| self.m_a[(p, c)]).collect();
                t.pool(&row)
            })
            .collect();
        // conditional means per basis, contiguous per basis
        let mut means: Vec<NodeRange> = Vec::with_capacity(b_count);
        for b in 0..b_count {
            let gb = Node(view.inducing.start + (b * u) as u32);
            let start = t.len() as u32;
            for row in rows.iter() {
                t.dot_pooled(*row, gb, u);
            }
            means.push(NodeRange {
                start,
                len: n as u32,
            });
        }
        let mut sample_lls: Vec<Node> = Vec::with_capacity(noise.s);
        for s in 0..noise.s {
            // field draws at anchors: mean + frozen shift
            let mut draws: Vec<Vec<Node>> = Vec::with_capacity(b_count);
            for b in 0..b_count {
                let base = (s * b_count + b) * n;
                let col: Vec<Node> = (0..n)
                    .map(|p| t.add_c(means[b].at(p), noise.anchor_shift[base + p]))
                    .collect();
                draws.push(col);
            }
            let mut profile_lls: Vec<Node> = Vec::with_capacity(n);
            for (p, anchor) in self.data.anchors.iter().enumerate() {
                let basis_at_point: Vec<Node> = (0..b_count).map(|b| draws[b][p]).collect();
                profile_lls.push(build_profile_loglik(
                    t,
                    &self.catalog,
                    &anchor.indicators,
                    &view.items,
                    &view.offsets,
                    view.weights,
                    &basis_at_point,
                ));
            }
            sample_lls.push(t.sum_nodes(&profile_lls));
        }
        let total = t.sum_nodes(&sample_lls);
        t.mul_c(total, 1.0 / noise.s as f64)
    }

    /// Float-bound tape builder; locations enter as differentiable nodes,
    /// so the kernel matrices, conditional mean and conditional Cholesky
    /// factor are all recorded on the tape.
    fn build_float_bound(
        &self,
        t: &mut Tape,
        view: &PsiView,
        xy: &[(Node, Node)],
        noise: &FieldNoise,
    ) -> Result<Node> {
        let m = xy.len();
        let b_count = self.n_basis();
        let u = self.grid.len();
        let kernel = self.grid.kernel();
        let amp2 = kernel.amplitude * kernel.amplitude;
        let neg_inv_2l2 = -1.0 / (2.0 * kernel.length_scale * kernel.length_scale);

        // pooled inverse of K_U
        let inv_ku = self.grid.inv_k_u();
        let inv_rows: Vec<PoolSlice> = (0..u)
            .map(|r| {
                let row: Vec<f64> = (0..u).map(|c| inv_ku[(r, c)]).collect();
                t.pool(&row)
            })
            .collect();

        // cross-covariance rows K_{X,U}[m][:] as contiguous blocks
        let mut k_xu_rows: Vec<NodeRange> = Vec::with_capacity(m);
        for &(x, y) in xy {
            let mut entries: Vec<Node> = Vec::with_capacity(u);
            for &(ux, uy) in self.grid.points() {
                let dx = t.add_c(x, -ux);
                let dx2 = t.mul(dx, dx);
                let dy = t.add_c(y, -uy);
                let dy2 = t.mul(dy, dy);
                let d2 = t.add(dx2, dy2);
                let sc = t.mul_c(d2, neg_inv_2l2);
                let e = t.exp(sc);
                entries.push(t.mul_c(e, amp2));
            }
            k_xu_rows.push(t.gather(&entries));
        }

        // alpha_m = K_U^{-1} k_m, contiguous per m
        let mut alphas: Vec<NodeRange> = Vec::with_capacity(m);
        for row in &k_xu_rows {
            let start = t.len() as u32;
            for r in inv_rows.iter() {
                t.dot_pooled(*r, Node(row.start), u);
            }
            alphas.push(NodeRange {
                start,
                len: u as u32,
            });
        }

        // conditional covariance C = K_X - K_XU K_U^{-1} K_XU^t
        let mut c = vec![vec![Node(0); m]; m];
        for i in 0..m {
            for j in 0..=i {
                let q = t.dot_nodes(Node(k_xu_rows[i].start), Node(alphas[j].start), u);
                let kx = if i == j {
                    t.constant(amp2)
                } else {
                    let dx = t.sub(xy[i].0, xy[j].0);
                    let dx2 = t.mul(dx, dx);
                    let dy = t.sub(xy[i].1, xy[j].1);
                    let dy2 = t.mul(dy, dy);
                    let d2 = t.add(dx2, dy2);
                    let sc = t.mul_c(d2, neg_inv_2l2);
                    let e = t.exp(sc);
                    t.mul_c(e, amp2)
                };
                let cij = t.sub(kx, q);
                c[i][j] = cij;
                c[j][i] = cij;
            }
        }

        // degenerate covariance: draws collapse to the conditional mean
        let max_abs = c
            .iter()
            .flatten()
            .map(|&n| t.val(n).abs())
            .fold(0.0f64, f64::max);
        let l_rows: Option<Vec<NodeRange>> = if max_abs < DEGENERATE_COV_EPS {
            None
        } else {
            Some(self.build_cholesky_ladder(t, &c)?)
        };

        // conditional means per basis
        let mut means: Vec<Vec<Node>> = Vec::with_capacity(b_count);
        for b in 0..b_count {
            let gb = Node(view.inducing.start + (b * u) as u32);
            let beta_start = t.len() as u32;
            for r in inv_rows.iter() {
                t.dot_pooled(*r, gb, u);
            }
            let mean_b: Vec<Node> = (0..m)
                .map(|i| t.dot_nodes(Node(k_xu_rows[i].start), Node(beta_start), u))
                .collect();
            means.push(mean_b);
        }

        let mut sample_lls: Vec<Node> = Vec::with_capacity(noise.s);
        for s in 0..noise.s {
            let mut draws: Vec<Vec<Node>> = Vec::with_capacity(b_count);
            for b in 0..b_count {
                let base = (s * b_count + b) * m;
                let z_block = t.constants(&noise.float_z[base..base + m]);
                let col: Vec<Node> = (0..m)
                    .map(|i| match &l_rows {
                        Some(rows) => {
                            let lz = t.dot_nodes(Node(rows[i].start), Node(z_block.start), i + 1);
                            t.add(means[b][i], lz)
                        }
                        None => means[b][i],
                    })
                    .collect();
                draws.push(col);
            }
            let mut profile_lls: Vec<Node> = Vec::with_capacity(m);
            for (i, float) in self.data.floats.iter().enumerate() {
                let basis_at_point: Vec<Node> = (0..b_count).map(|b| draws[b][i]).collect();
                profile_lls.push(build_profile_loglik(
                    t,
                    &self.catalog,
                    &float.indicators,
                    &view.items,
                    &view.offsets,
                    view.weights,
                    &basis_at_point,
                ));
            }
            sample_lls.push(t.sum_nodes(&profile_lls));
        }
        let total = t.sum_nodes(&sample_lls);
        Ok(t.mul_c(total, 1.0 / noise.s as f64))
    }

    /// Scalar Cholesky on the tape with jitter escalation. Rows are
    /// gathered contiguously so draw transforms can use fused dots.
    fn build_cholesky_ladder(&self, t: &mut Tape, c: &[Vec<Node>]) -> Result<Vec<NodeRange>> {
        let m = c.len();
        'ladder: for &jit in &JITTER_LADDER {
            let mut rows: Vec<NodeRange> = Vec::with_capacity(m);
            let mut entries: Vec<Vec<Node>> = vec![Vec::new(); m];
            for i in 0..m {
                for j in 0..=i {
                    let base = if i == j { t.add_c(c[i][j], jit) } else { c[i][j] };
                    // subtract sum_k L[i][k] L[j][k]
                    let mut acc = base;
                    for k in 0..j {
                        let prod = t.mul(entries[i][k], entries[j][k]);
                        acc = t.sub(acc, prod);
                    }
                    if i == j {
                        let v = t.val(acc);
                        if !(v > 0.0) || !v.is_finite() {
                            continue 'ladder;
                        }
                        entries[i].push(t.sqrt(acc));
                    } else {
                        let e = t.div(acc, entries[j][j]);
                        entries[i].push(e);
                    }
                }
                let row = t.gather(&entries[i]);
                // use gathered nodes from here on so prefix dots stay
                // contiguous
                entries[i] = row.iter().collect();
                rows.push(row);
            }
            return Ok(rows);
        }
        Err(Error::numerical(
            "float conditional covariance not positive definite after jitter escalation",
        ))
    }
}

/// Constrained psi as tape nodes, however obtained.
pub struct PsiView {
    pub items: ItemNodes,
    pub log_mu: Vec<Node>,
    pub offsets: Vec<Option<Node>>,
    pub weights: NodeRange,
    pub inducing: NodeRange,
}

impl SmiModel for FieldModel {
    type Noise = FieldNoise;

    fn psi_dim(&self) -> usize {
        self.layout.psi_dim()
    }

    fn theta_dim(&self) -> usize {
        2 * self.n_floats()
    }

    fn make_noise(&self, key: StreamKey) -> FieldNoise {
        self.noise_from_key(self.s_mc, key)
    }

    fn build_pow(
        &self,
        t: &mut Tape,
        psi: NodeRange,
        theta: NodeRange,
        eta: f64,
        noise: &FieldNoise,
    ) -> Result<Node> {
        let psi_nodes = build_constrain_psi(t, psi, &self.layout);
        let prior = build_log_prior(t, &psi_nodes, &self.prior, &self.grid);
        let view = self.psi_view_from_nodes(t, &psi_nodes);
        let anchor = self.build_anchor_bound(t, &view, noise);
        let mut terms = vec![anchor, prior, psi_nodes.log_jacobian];
        if self.n_floats() > 0 {
            let locs = build_constrain_locations(t, theta, &self.data.region);
            let float = self.build_float_bound(t, &view, &locs.xy, noise)?;
            let powered = t.mul_c(float, eta);
            terms.push(powered);
            terms.push(locs.log_jacobian);
            let loc_prior =
                t.constant(-(self.data.region.area().ln()) * self.n_floats() as f64);
            terms.push(loc_prior);
        }
        Ok(t.sum_nodes(&terms))
    }

    fn build_float_term(
        &self,
        t: &mut Tape,
        psi: PsiSource<'_>,
        theta: NodeRange,
        noise: &FieldNoise,
    ) -> Result<Node> {
        let view = match psi {
            PsiSource::Nodes(range) => {
                let nodes = build_constrain_psi(t, range, &self.layout);
                self.psi_view_from_nodes(t, &nodes)
            }
            PsiSource::Values(vals) => {
                // detached: constants sever every gradient path through psi
                let consts = t.constants(vals);
                let nodes = build_constrain_psi(t, consts, &self.layout);
                self.psi_view_from_nodes(t, &nodes)
            }
        };
        let locs = build_constrain_locations(t, theta, &self.data.region);
        let float = self.build_float_bound(t, &view, &locs.xy, noise)?;
        let loc_prior = t.constant(-(self.data.region.area().ln()) * self.n_floats() as f64);
        let terms = [float, loc_prior, locs.log_jacobian];
        Ok(t.sum_nodes(&terms))
    }

    fn logp_psi_value(&self, psi_unc: &[f64]) -> f64 {
        let mut full = psi_unc.to_vec();
        full.resize(self.layout.dim(), 0.0);
        let (params, _) = constrain(&full, &self.layout, &self.data.region);
        let mut lp = log_prior(&params, &self.prior, &self.grid, &self.catalog);
        // psi-block Jacobian only
        let psi_only_layout = ParamLayout::new(
            &self.catalog,
            self.prior.n_basis,
            self.grid.len(),
            0,
        );
        lp += log_jacobian(psi_unc, &psi_only_layout, &self.data.region);
        lp
    }

    fn psi_feature_dim(&self) -> usize {
        2 * self.catalog.n_items() + 4
    }

    fn psi_features(&self, psi_unc: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let mut f = Vec::with_capacity(self.psi_feature_dim());
        f.extend_from_slice(&psi_unc[l.mu.clone()]);
        f.extend_from_slice(&psi_unc[l.zeta.clone()]);
        for range in [l.weights.clone(), l.inducing.clone()] {
            let xs = &psi_unc[range];
            let n = xs.len() as f64;
            let mean = xs.iter().sum::<f64>() / n;
            let meansq = xs.iter().map(|v| v * v).sum::<f64>() / n;
            let sd = (meansq - mean * mean + 1e-8).sqrt();
            f.push(mean);
            f.push(sd);
        }
        f
    }

    fn build_psi_features(&self, t: &mut Tape, psi: NodeRange) -> Vec<Node> {
        let l = &self.layout;
        let mut f = Vec::with_capacity(self.psi_feature_dim());
        for i in l.mu.clone().chain(l.zeta.clone()) {
            f.push(psi.at(i));
        }
        for range in [l.weights.clone(), l.inducing.clone()] {
            let start = Node(psi.start + range.start as u32);
            let n = range.len();
            let s = t.sum_range(start, n);
            let mean = t.mul_c(s, 1.0 / n as f64);
            let d = t.dot_nodes(start, start, n);
            let meansq = t.mul_c(d, 1.0 / n as f64);
            let m2 = t.mul(mean, mean);
            let var = t.sub(meansq, m2);
            let vare = t.add_c(var, 1e-8);
            let sd = t.sqrt(vare);
            f.push(mean);
            f.push(sd);
        }
        f
    }

    fn psi_terminals(&self) -> Vec<Terminal> {
        let l = &self.layout;
        let mut t = Vec::with_capacity(l.psi_dim());
        t.extend(std::iter::repeat(Terminal::Exp).take(l.mu.len()));
        t.extend(std::iter::repeat(Terminal::Sigmoid).take(l.zeta.len()));
        t.extend(
            std::iter::repeat(Terminal::Identity)
                .take(l.offsets.len() + l.weights.len() + l.inducing.len()),
        );
        t
    }

    fn theta_terminals(&self) -> Vec<Terminal> {
        let mut t = Vec::with_capacity(2 * self.n_floats());
        for _ in 0..self.n_floats() {
            t.push(Terminal::ScaledSigmoid(self.data.region.width));
            t.push(Terminal::ScaledSigmoid(self.data.region.height));
        }
        t
    }
}

/// Exact joint density of the dense model (small-instance oracle): the
/// fields at all profile locations enter explicitly, with an exact
/// GP prior N(0, K_P) per basis field and the exact likelihood.
///
/// `basis_at_profiles` is laid out [b * p_total + p] with anchors first,
/// then floats. Inducing values in `psi` play no role here.
pub fn exact_joint_logpdf(
    catalog: &ItemCatalog,
    data: &ProfileSet,
    float_locations: &[(f64, f64)],
    psi: &GlobalParams,
    basis_at_profiles: &[f64],
    prior: &PriorConfig,
) -> Result<f64> {
    let p_total = data.n_anchors() + data.n_floats();
    if p_total > 200 {
        return Err(Error::invalid(format!(
            "exact joint oracle capped at 200 profiles, got {p_total}"
        )));
    }
    if float_locations.len() != data.n_floats() {
        return Err(Error::dims("float location count mismatch"));
    }
    let b_count = prior.n_basis;
    if basis_at_profiles.len() != b_count * p_total {
        return Err(Error::dims("basis_at_profiles must have length B * P"));
    }
    for &(x, y) in float_locations {
        if !data.region.contains(x, y) {
            return Ok(f64::NEG_INFINITY);
        }
    }
    let mut pts = data.anchor_locations();
    pts.extend_from_slice(float_locations);
    let k_p = kernel_matrix(&pts, &pts, &prior.kernel, true)?;
    let chol = nalgebra::Cholesky::new(k_p)
        .ok_or_else(|| Error::numerical("K_P + jitter I is not positive definite"))?;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();

    let mut lp = 0.0;
    for b in 0..b_count {
        let g = DVector::from_column_slice(&basis_at_profiles[b * p_total..(b + 1) * p_total]);
        let alpha = chol.solve(&g);
        lp += -0.5 * g.dot(&alpha)
            - 0.5 * log_det
            - 0.5 * p_total as f64 * (2.0 * std::f64::consts::PI).ln();
    }

    // likelihood, profile by profile
    let gammas = crate::model::likelihood::lmc_intensities(
        basis_at_profiles,
        &psi.offsets,
        &psi.weights,
        b_count,
        p_total,
        catalog,
    )?;
    let d = catalog.d_phi();
    for (p, indicators) in data
        .anchors
        .iter()
        .map(|a| &a.indicators)
        .chain(data.floats.iter().map(|f| &f.indicators))
        .enumerate()
    {
        let mut phi = vec![0.0; d];
        for item in 0..catalog.n_items() {
            let off = catalog.offset(item);
            let n_forms = catalog.form_count(item);
            let sm = crate::model::likelihood::softmax_fields(
                &gammas[p * d + off..p * d + off + n_forms],
            )?;
            phi[off..off + n_forms].copy_from_slice(&sm);
        }
        lp += crate::model::likelihood::loglik_binary(catalog, indicators, &psi.mu, &psi.zeta, &phi)?;
    }

    // priors on (mu, zeta, a, W) and uniform float locations; no inducing
    // term in the dense model
    for &m in &psi.mu {
        lp += crate::model::prior::gamma_logpdf(m, prior.gamma_shape, prior.gamma_rate);
    }
    for &z in &psi.zeta {
        if !(0.0..=1.0).contains(&z) {
            return Ok(f64::NEG_INFINITY);
        }
    }
    let norm_const = -0.5 * (2.0 * std::f64::consts::PI).ln() - prior.sigma_a.ln();
    for item in 0..catalog.n_items() {
        for form in 1..catalog.form_count(item) {
            let a = psi.offsets[catalog.flat_index(item, form)];
            lp += norm_const - 0.5 * a * a / (prior.sigma_a * prior.sigma_a);
        }
    }
    for &w in &psi.weights {
        lp += -(2.0 * prior.sigma_w).ln() - w.abs() / prior.sigma_w;
    }
    lp += -(data.region.area().ln()) * data.n_floats() as f64;
    Ok(lp)
}

/// Stream index for field noise during gradient-checked evaluations.
pub fn noise_key(seed: u64, iteration: u64) -> StreamKey {
    StreamKey::new(seed, Domain::FieldNoise, iteration)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::catalog::ItemRecord;
    use crate::model::profiles::{AnchorProfile, FloatProfile, Region};
    use crate::smi::{FloatTarget, PowTarget};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_catalog() -> ItemCatalog {
        ItemCatalog::new(vec![
            ItemRecord {
                item_id: "i0".into(),
                form_ids: vec!["a".into(), "b".into()],
            },
            ItemRecord {
                item_id: "i1".into(),
                form_ids: vec!["a".into(), "b".into(), "c".into()],
            },
        ])
        .unwrap()
    }

    fn small_model(n_anchors: usize, n_floats: usize, s_mc: usize, seed: u64) -> FieldModel {
        let catalog = small_catalog();
        let region = Region::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = catalog.d_phi();
        let anchors = (0..n_anchors)
            .map(|k| AnchorProfile {
                id: format!("a{k}"),
                x: rng.gen_range(0.05..region.width - 0.05),
                y: rng.gen_range(0.05..region.height - 0.05),
                indicators: (0..d).map(|_| rng.gen_range(0..2) as u8).collect(),
            })
            .collect();
        let floats = (0..n_floats)
            .map(|k| FloatProfile {
                id: format!("f{k}"),
                indicators: (0..d).map(|_| rng.gen_range(0..2) as u8).collect(),
            })
            .collect();
        let data = ProfileSet {
            region,
            anchors,
            floats,
        };
        let prior = PriorConfig {
            n_basis: 2,
            inducing_grid: 2,
            ..PriorConfig::default()
        };
        FieldModel::new(catalog, data, prior, s_mc, seed).unwrap()
    }

    fn random_point(model: &FieldModel, rng: &mut ChaCha8Rng, with_theta: bool) -> Vec<f64> {
        let d = if with_theta {
            model.psi_dim() + model.theta_dim()
        } else {
            model.psi_dim()
        };
        (0..d).map(|_| rng.gen_range(-1.2..1.2)).collect()
    }

    #[test]
    fn pow_target_gradient_matches_fd() {
        let model = small_model(5, 3, 3, 42);
        let target = PowTarget::new(&model, 0.6, 42, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..3 {
            let x = random_point(&model, &mut rng, true);
            let rep = crate::grad::fd_check(&target, &x, 1e-5);
            assert!(
                rep.max_rel_error <= 1e-5,
                "pow target FD mismatch: {} at coord {}",
                rep.max_rel_error,
                rep.argmax
            );
        }
    }

    #[test]
    fn float_target_gradient_matches_fd() {
        let model = small_model(4, 3, 4, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let psi = random_point(&model, &mut rng, false);
        let target = FloatTarget::new(&model, psi, 11, 0);
        for _ in 0..3 {
            let x: Vec<f64> = (0..model.theta_dim())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let rep = crate::grad::fd_check(&target, &x, 1e-5);
            assert!(
                rep.max_rel_error <= 1e-5,
                "float target FD mismatch: {} at coord {}",
                rep.max_rel_error,
                rep.argmax
            );
        }
    }

    #[test]
    fn approx_joint_is_affine_in_eta() {
        let model = small_model(5, 3, 4, 9);
        let noise = model.noise_from_key(4, noise_key(9, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_point(&model, &mut rng, true);
        let (psi, locs) = constrain(&x, &model.layout, &model.data.region);
        let v0 = model.approx_joint_logpdf(&psi, &locs, 0.0, &noise).unwrap();
        let vh = model.approx_joint_logpdf(&psi, &locs, 0.5, &noise).unwrap();
        let v1 = model.approx_joint_logpdf(&psi, &locs, 1.0, &noise).unwrap();
        assert!(
            (vh - 0.5 * (v0 + v1)).abs() < 1e-12,
            "affinity violated: {} vs {}",
            vh,
            0.5 * (v0 + v1)
        );
    }

    #[test]
    fn eta_zero_ignores_float_indicators() {
        let mut model = small_model(5, 3, 4, 5);
        let noise = model.noise_from_key(4, noise_key(5, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_point(&model, &mut rng, true);
        let (psi, locs) = constrain(&x, &model.layout, &model.data.region);
        let v_before = model.approx_joint_logpdf(&psi, &locs, 0.0, &noise).unwrap();
        for f in model.data.floats.iter_mut() {
            for y in f.indicators.iter_mut() {
                *y = 1 - *y;
            }
        }
        let v_after = model.approx_joint_logpdf(&psi, &locs, 0.0, &noise).unwrap();
        assert_eq!(v_before, v_after);
        // outside the region -> -inf
        let mut bad = locs.clone();
        bad[0] = (2.0, 0.1);
        assert_eq!(
            model.approx_joint_logpdf(&psi, &bad, 0.5, &noise).unwrap(),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn zero_floats_bound_is_zero() {
        let model = small_model(4, 0, 4, 13);
        let noise = model.noise_from_key(4, noise_key(13, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_point(&model, &mut rng, true);
        let (psi, _) = constrain(&x, &model.layout, &model.data.region);
        assert_eq!(model.mc_bound_float(&psi, &[], &noise).unwrap(), 0.0);
    }

    #[test]
    fn anchor_and_float_bounds_agree_on_same_inputs() {
        // same locations and indicators, anchor route vs float route
        let catalog = small_catalog();
        let region = Region::default();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let d = catalog.d_phi();
        let n = 4;
        let locs: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                (
                    rng.gen_range(0.05..region.width - 0.05),
                    rng.gen_range(0.05..region.height - 0.05),
                )
            })
            .collect();
        let inds: Vec<Vec<u8>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(0..2) as u8).collect())
            .collect();
        let prior = PriorConfig {
            n_basis: 2,
            inducing_grid: 2,
            ..PriorConfig::default()
        };
        // anchor-route model: profiles are anchors (plus one throwaway
        // anchor is not needed since n >= 1)
        let m_anchor = FieldModel::new(
            catalog.clone(),
            ProfileSet {
                region,
                anchors: locs
                    .iter()
                    .zip(&inds)
                    .enumerate()
                    .map(|(k, (&(x, y), ind))| AnchorProfile {
                        id: format!("p{k}"),
                        x,
                        y,
                        indicators: ind.clone(),
                    })
                    .collect(),
                floats: vec![],
            },
            prior.clone(),
            3,
            31,
        )
        .unwrap();
        // float-route model: one far-away dummy anchor, same profiles as
        // floats
        let m_float = FieldModel::new(
            catalog,
            ProfileSet {
                region,
                anchors: vec![AnchorProfile {
                    id: "dummy".into(),
                    x: 0.01,
                    y: 0.01,
                    indicators: vec![0; d],
                }],
                floats: inds
                    .iter()
                    .enumerate()
                    .map(|(k, ind)| FloatProfile {
                        id: format!("p{k}"),
                        indicators: ind.clone(),
                    })
                    .collect(),
            },
            prior,
            3,
            31,
        )
        .unwrap();

        // shared psi and z draws
        let mut prng = ChaCha8Rng::seed_from_u64(77);
        let psi_unc: Vec<f64> = (0..m_anchor.psi_dim()).map(|_| prng.gen_range(-1.0..1.0)).collect();
        let (psi, _) = constrain(
            &{
                let mut v = psi_unc.clone();
                v.resize(m_anchor.layout.dim(), 0.0);
                v
            },
            &m_anchor.layout,
            &region,
        );
        let s = 3;
        let b = 2;
        let z: Vec<f64> = (0..s * b * n).map(|_| prng.gen_range(-1.5..1.5)).collect();
        // anchor noise: push z through the anchor factor
        let mut anchor_shift = vec![0.0; s * b * n];
        for block in 0..s * b {
            for i in 0..n {
                let mut acc = 0.0;
                for k in 0..=i {
                    acc += m_anchor.l_a[(i, k)] * z[block * n + k];
                }
                anchor_shift[block * n + i] = acc;
            }
        }
        let noise_a = FieldNoise {
            s,
            anchor_shift,
            float_z: vec![],
        };
        let noise_f = FieldNoise {
            s,
            anchor_shift: vec![0.0; s * b],
            float_z: z,
        };
        let ba = m_anchor.mc_bound_anchor(&psi, &noise_a).unwrap();
        let bf = m_float.mc_bound_float(&psi, &locs, &noise_f).unwrap();
        assert!(
            (ba - bf).abs() < 1e-6,
            "anchor route {ba} vs float route {bf}"
        );
    }

    #[test]
    fn knot_coincident_locations_give_plug_in_likelihood() {
        // anchors and floats sit exactly on inducing points: the
        // conditional covariance vanishes and the bound equals the plug-in
        // log-likelihood at the conditional mean (the inducing values).
        let catalog = small_catalog();
        let region = Region::default();
        let prior = PriorConfig {
            n_basis: 1,
            inducing_grid: 2,
            kernel: crate::gp::kernel::KernelConfig {
                jitter: 0.0,
                ..Default::default()
            },
            ..PriorConfig::default()
        };
        let grid = InducingGrid::lattice(2, &region, &prior.kernel).unwrap();
        let pts = grid.points().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = catalog.d_phi();
        let n_anchor = 5;
        let n_float = 2;
        let data = ProfileSet {
            region,
            anchors: pts[..n_anchor]
                .iter()
                .enumerate()
                .map(|(k, &(x, y))| AnchorProfile {
                    id: format!("a{k}"),
                    x,
                    y,
                    indicators: (0..d).map(|_| rng.gen_range(0..2) as u8).collect(),
                })
                .collect(),
            floats: (0..n_float)
                .map(|k| FloatProfile {
                    id: format!("f{k}"),
                    indicators: (0..d).map(|_| rng.gen_range(0..2) as u8).collect(),
                })
                .collect(),
        };
        let model = FieldModel::new(catalog.clone(), data, prior, 7, 4).unwrap();
        let noise = model.noise_from_key(7, noise_key(4, 0));
        let mut prng = ChaCha8Rng::seed_from_u64(6);
        let psi_unc: Vec<f64> = (0..model.psi_dim()).map(|_| prng.gen_range(-1.0..1.0)).collect();
        let mut full = psi_unc.clone();
        full.resize(model.layout.dim(), 0.0);
        let (psi, _) = constrain(&full, &model.layout, &region);

        // plug-in: conditional mean at a knot is the inducing value there
        let u = grid.len();
        let mut plug_anchor = 0.0;
        for (p, a) in model.data.anchors.iter().enumerate() {
            let idx = grid
                .points()
                .iter()
                .position(|&q| q == (a.x, a.y))
                .unwrap();
            let basis: Vec<f64> = (0..model.n_basis())
                .map(|b| psi.inducing_values[b * u + idx])
                .collect();
            let gam = crate::model::likelihood::lmc_intensities(
                &basis,
                &psi.offsets,
                &psi.weights,
                model.n_basis(),
                1,
                &catalog,
            )
            .unwrap();
            let mut phi = vec![0.0; d];
            for item in 0..catalog.n_items() {
                let off = catalog.offset(item);
                let nf = catalog.form_count(item);
                phi[off..off + nf].copy_from_slice(
                    &crate::model::likelihood::softmax_fields(&gam[off..off + nf]).unwrap(),
                );
            }
            plug_anchor += crate::model::likelihood::loglik_binary(
                &catalog,
                &model.data.anchors[p].indicators,
                &psi.mu,
                &psi.zeta,
                &phi,
            )
            .unwrap();
        }
        let bound = model.mc_bound_anchor(&psi, &noise).unwrap();
        assert!(
            (bound - plug_anchor).abs() < 1e-9,
            "bound {bound} vs plug-in {plug_anchor}"
        );

        // float side: place the floats on two other inducing points
        let float_locs = [pts[n_anchor], pts[n_anchor + 1]];
        let bound_f = model.mc_bound_float(&psi, &float_locs, &noise).unwrap();
        let mut plug_float = 0.0;
        for (k, f) in model.data.floats.iter().enumerate() {
            let idx = n_anchor + k;
            let basis: Vec<f64> = (0..model.n_basis())
                .map(|b| psi.inducing_values[b * u + idx])
                .collect();
            let gam = crate::model::likelihood::lmc_intensities(
                &basis,
                &psi.offsets,
                &psi.weights,
                model.n_basis(),
                1,
                &catalog,
            )
            .unwrap();
            let mut phi = vec![0.0; d];
            for item in 0..catalog.n_items() {
                let off = catalog.offset(item);
                let nf = catalog.form_count(item);
                phi[off..off + nf].copy_from_slice(
                    &crate::model::likelihood::softmax_fields(&gam[off..off + nf]).unwrap(),
                );
            }
            plug_float += crate::model::likelihood::loglik_binary(
                &catalog,
                &f.indicators,
                &psi.mu,
                &psi.zeta,
                &phi,
            )
            .unwrap();
        }
        assert!(
            (bound_f - plug_float).abs() < 1e-9,
            "float bound {bound_f} vs plug-in {plug_float}"
        );
    }

    #[test]
    fn exact_joint_matches_approx_at_full_knot_coincidence() {
        // anchors at every inducing point, no floats: the exact dense joint
        // equals the sparse approximation evaluated plug-in, because
        // K_P = K_U and the conditional covariance vanishes.
        let catalog = small_catalog();
        let region = Region::default();
        let prior = PriorConfig {
            n_basis: 2,
            inducing_grid: 2,
            kernel: crate::gp::kernel::KernelConfig {
                jitter: 0.0,
                ..Default::default()
            },
            ..PriorConfig::default()
        };
        let grid = InducingGrid::lattice(2, &region, &prior.kernel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = catalog.d_phi();
        let data = ProfileSet {
            region,
            anchors: grid
                .points()
                .iter()
                .enumerate()
                .map(|(k, &(x, y))| AnchorProfile {
                    id: format!("a{k}"),
                    x,
                    y,
                    indicators: (0..d).map(|_| rng.gen_range(0..2) as u8).collect(),
                })
                .collect(),
            floats: vec![],
        };
        let model = FieldModel::new(catalog.clone(), data.clone(), prior.clone(), 2, 8).unwrap();
        let noise = model.noise_from_key(2, noise_key(8, 0));
        let mut prng = ChaCha8Rng::seed_from_u64(10);
        let psi_unc: Vec<f64> = (0..model.psi_dim()).map(|_| prng.gen_range(-1.0..1.0)).collect();
        let (psi, _) = constrain(&psi_unc, &model.layout, &region);

        let approx = model.approx_joint_logpdf(&psi, &[], 1.0, &noise).unwrap();
        // dense route: fields at profiles are the inducing values
        let exact = exact_joint_logpdf(
            &catalog,
            &data,
            &[],
            &psi,
            &psi.inducing_values,
            &prior,
        )
        .unwrap();
        assert!(
            (approx - exact).abs() < 1e-8,
            "approx {approx} vs exact {exact}"
        );
    }

    #[test]
    fn exact_joint_gp_term_at_zero_fields() {
        let catalog = small_catalog();
        let region = Region::default();
        let prior = PriorConfig {
            n_basis: 1,
            inducing_grid: 2,
            ..PriorConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = catalog.d_phi();
        let data = ProfileSet {
            region,
            anchors: (0..3)
                .map(|k| AnchorProfile {
                    id: format!("a{k}"),
                    x: 0.1 + 0.3 * k as f64,
                    y: 0.2,
                    indicators: (0..d).map(|_| rng.gen_range(0..2) as u8).collect(),
                })
                .collect(),
            floats: vec![],
        };
        let psi = GlobalParams {
            mu: vec![1.0, 1.0],
            zeta: vec![0.5, 0.5],
            offsets: vec![0.0; d],
            weights: vec![0.0; d],
            inducing_values: vec![0.0; 9],
            n_basis: 1,
            n_inducing: 9,
        };
        let fields = vec![0.0; 3];
        let v = exact_joint_logpdf(&catalog, &data, &[], &psi, &fields, &prior).unwrap();
        // the GP prior term at zero fields is -1/2 log det(2 pi K_P)
        let pts = data.anchor_locations();
        let k_p = kernel_matrix(&pts, &pts, &prior.kernel, true).unwrap();
        let chol = nalgebra::Cholesky::new(k_p).unwrap();
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|x| x.ln()).sum::<f64>();
        let gp_term = -0.5 * log_det - 0.5 * 3.0 * (2.0 * std::f64::consts::PI).ln();
        // subtract everything else and compare
        let mut rest = 0.0;
        for &m in &psi.mu {
            rest += crate::model::prior::gamma_logpdf(m, 3.0, 3.0);
        }
        let norm_const = -0.5 * (2.0 * std::f64::consts::PI).ln();
        rest += 3.0 * norm_const; // three free offsets at 0, sigma_a = 1
        rest += d as f64 * -(2.0f64.ln()); // weights at Laplace mode
        for a in &data.anchors {
            // fields zero -> uniform softmax per item
            let phi = vec![0.5, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0];
            rest += crate::model::likelihood::loglik_binary(
                &catalog,
                &a.indicators,
                &psi.mu,
                &psi.zeta,
                &phi,
            )
            .unwrap();
        }
        assert!(
            (v - (gp_term + rest)).abs() < 1e-9,
            "{v} vs {}",
            gp_term + rest
        );

        // cap enforcement
        let mut big = data;
        for k in 0..200 {
            big.anchors.push(AnchorProfile {
                id: format!("x{k}"),
                x: 0.001 * k as f64 + 0.01,
                y: 0.5,
                indicators: vec![0; d],
            });
        }
        assert!(exact_joint_logpdf(&catalog, &big, &[], &psi, &vec![0.0; 203], &prior).is_err());
    }

    /// Gauss-Hermite nodes and weights by Golub-Welsch.
    fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut m = DMatrix::zeros(n, n);
        for i in 1..n {
            let b = (i as f64 / 2.0).sqrt();
            m[(i - 1, i)] = b;
            m[(i, i - 1)] = b;
        }
        let eig = nalgebra::SymmetricEigen::new(m);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|j| {
                let node = eig.eigenvalues[j];
                let v0 = eig.eigenvectors[(0, j)];
                (node, v0 * v0 * std::f64::consts::PI.sqrt())
            })
            .collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        (
            pairs.iter().map(|p| p.0).collect(),
            pairs.iter().map(|p| p.1).collect(),
        )
    }

    #[test]
    fn gauss_hermite_integrates_polynomials() {
        let (x, w) = gauss_hermite(20);
        // integral over exp(-x^2): 1 dx -> sqrt(pi); x^2 -> sqrt(pi)/2
        let s0: f64 = w.iter().sum();
        assert!((s0 - std::f64::consts::PI.sqrt()).abs() < 1e-10);
        let s2: f64 = x.iter().zip(&w).map(|(xi, wi)| xi * xi * wi).sum();
        assert!((s2 - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-10);
    }

    #[test]
    fn jensen_bound_against_quadrature_oracle() {
        // tiny instance: one anchor, one item with two forms, one basis
        let catalog = ItemCatalog::new(vec![ItemRecord {
            item_id: "i".into(),
            form_ids: vec!["a".into(), "b".into()],
        }])
        .unwrap();
        let region = Region::default();
        let prior = PriorConfig {
            n_basis: 1,
            inducing_grid: 1,
            ..PriorConfig::default()
        };
        let data = ProfileSet {
            region,
            anchors: vec![AnchorProfile {
                id: "a".into(),
                x: 0.37,
                y: 0.21,
                indicators: vec![1, 0],
            }],
            floats: vec![],
        };
        let model = FieldModel::new(catalog.clone(), data, prior, 200, 99).unwrap();
        let psi = GlobalParams {
            mu: vec![1.4],
            zeta: vec![0.3],
            offsets: vec![0.0, 0.6],
            weights: vec![1.0, -0.8],
            inducing_values: vec![0.5, -0.2, 0.1, 0.9],
            n_basis: 1,
            n_inducing: 4,
        };
        // conditional of the single anchor's basis value
        let (mean, cov) =
            crate::gp::conditional::conditional_gaussian(&psi.inducing_values, &model.grid, &[(0.37, 0.21)])
                .unwrap();
        let (m, v) = (mean[0], cov[(0, 0)]);
        assert!(v > 1e-8, "need a non-degenerate conditional, got {v}");

        let loglik_of_gamma = |g: f64| -> f64 {
            let gam = crate::model::likelihood::lmc_intensities(
                &[g],
                &psi.offsets,
                &psi.weights,
                1,
                1,
                &catalog,
            )
            .unwrap();
            let phi = crate::model::likelihood::softmax_fields(&gam).unwrap();
            crate::model::likelihood::loglik_binary(&catalog, &[1, 0], &psi.mu, &psi.zeta, &phi)
                .unwrap()
        };

        let (xs, ws) = gauss_hermite(200);
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let scale = (2.0 * v).sqrt();
        let mut e_log = 0.0;
        let mut e_log2 = 0.0;
        let mut log_e = 0.0f64;
        let mut max_l = f64::NEG_INFINITY;
        let ls: Vec<f64> = xs.iter().map(|&x| loglik_of_gamma(m + scale * x)).collect();
        for &l in &ls {
            max_l = max_l.max(l);
        }
        for (i, &l) in ls.iter().enumerate() {
            e_log += ws[i] / sqrt_pi * l;
            e_log2 += ws[i] / sqrt_pi * l * l;
            log_e += ws[i] / sqrt_pi * (l - max_l).exp();
        }
        let log_e = max_l + log_e.ln();
        // Jensen: E[log p] <= log E[p]
        assert!(e_log <= log_e + 1e-12);

        // the S-sample bound estimates E[log p]; 3 standard errors
        let noise = model.noise_from_key(200, noise_key(99, 0));
        let bound = model.mc_bound_anchor(&psi, &noise).unwrap();
        let var_l = (e_log2 - e_log * e_log).max(0.0);
        let se = (var_l / 200.0).sqrt();
        assert!(
            (bound - e_log).abs() <= 3.0 * se.max(1e-9),
            "bound {bound}, oracle {e_log}, se {se}"
        );

        // Jensen ordering holds statistically across seeds
        let mut mean_bound = 0.0;
        let n_seeds = 50;
        for k in 0..n_seeds {
            let nz = model.noise_from_key(20, noise_key(123 + k, 0));
            mean_bound += model.mc_bound_anchor(&psi, &nz).unwrap() / n_seeds as f64;
        }
        let se_mean = (var_l / (20.0 * n_seeds as f64)).sqrt();
        assert!(
            mean_bound <= log_e + 3.0 * se_mean,
            "mean bound {mean_bound} should sit below log E[p] {log_e}"
        );

        // more samples, less variance
        let spread = |s: usize, seeds: std::ops::Range<u64>| -> f64 {
            let vals: Vec<f64> = seeds
                .map(|k| {
                    let nz = model.noise_from_key(s, noise_key(1000 + k, 0));
                    model.mc_bound_anchor(&psi, &nz).unwrap()
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64
        };
        let var_small = spread(10, 0..100);
        let var_large = spread(1000, 0..100);
        assert!(
            var_large < var_small,
            "variance should fall with S: {var_small} vs {var_large}"
        );
    }

    #[test]
    fn high_s_reference_run_for_powered_joint() {
        let model = small_model(3, 1, 100, 55);
        let mut prng = ChaCha8Rng::seed_from_u64(14);
        let x: Vec<f64> = (0..model.psi_dim() + model.theta_dim())
            .map(|_| prng.gen_range(-0.8..0.8))
            .collect();
        let (psi, locs) = constrain(&x, &model.layout, &model.data.region);
        // reference: S = 1e5
        let noise_ref = model.noise_from_key(100_000, noise_key(201, 0));
        let reference = model
            .approx_joint_logpdf(&psi, &locs, 1.0, &noise_ref)
            .unwrap();
        // spread of S=100 estimates
        let vals: Vec<f64> = (0..20)
            .map(|k| {
                let nz = model.noise_from_key(100, noise_key(300 + k, 0));
                model.approx_joint_logpdf(&psi, &locs, 1.0, &nz).unwrap()
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / (vals.len() - 1) as f64)
            .sqrt();
        assert!(
            (vals[0] - reference).abs() <= 3.0 * sd.max(1e-9),
            "estimate {} vs reference {reference} (sd {sd})",
            vals[0]
        );
    }
}
