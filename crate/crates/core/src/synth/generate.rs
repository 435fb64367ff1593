//! Ground-truth synthetic data from the exact generative process.

use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::kernel::{kernel_matrix, KernelConfig};
use crate::model::catalog::{ItemCatalog, ItemRecord};
use crate::model::likelihood::softmax_fields;
use crate::model::params::GlobalParams;
use crate::model::profiles::{AnchorProfile, FloatProfile, ProfileSet, Region};
use crate::rng::{Domain, StreamKey};

/// Maximum number of points in the dense GP draw (raster + profiles +
/// inducing lattice).
pub const DENSE_DRAW_CAP: usize = 4096;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_basis: usize,
    /// Form count per item (one entry per item, each >= 2).
    pub form_counts: Vec<usize>,
    pub n_anchors: usize,
    pub n_floats: usize,
    pub region: Region,
    pub kernel: KernelConfig,
    pub gamma_shape: f64,
    pub gamma_rate: f64,
    pub sigma_a: f64,
    pub sigma_w: f64,
    /// Raster resolution (nx, ny) for the emitted true fields.
    pub raster: (usize, usize),
    /// Inducing lattice divisions recorded in the true parameters.
    pub inducing_grid: usize,
    /// Fraction of floats whose indicators are replaced by far-away
    /// regenerations.
    pub contamination: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_basis: 3,
            form_counts: vec![3; 8],
            n_anchors: 60,
            n_floats: 15,
            region: Region::default(),
            kernel: KernelConfig::default(),
            gamma_shape: 3.0,
            gamma_rate: 3.0,
            sigma_a: 1.0,
            sigma_w: 1.0,
            raster: (24, 22),
            inducing_grid: 5,
            contamination: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_basis == 0
            || self.form_counts.is_empty()
            || self.n_anchors == 0
            || self.raster.0 < 2
            || self.raster.1 < 2
            || self.inducing_grid == 0
        {
            return Err(Error::invalid("synth counts must be positive"));
        }
        if self.form_counts.iter().any(|&f| f < 2) {
            return Err(Error::invalid("every item needs at least two forms"));
        }
        if !(0.0..1.0).contains(&self.contamination) {
            return Err(Error::invalid("contamination rate must lie in [0, 1)"));
        }
        self.kernel.validate()
    }

    pub fn catalog(&self) -> ItemCatalog {
        let items = self
            .form_counts
            .iter()
            .enumerate()
            .map(|(i, &fc)| ItemRecord {
                item_id: format!("item{i:02}"),
                form_ids: (0..fc).map(|f| format!("f{f}")).collect(),
            })
            .collect();
        ItemCatalog::new(items).expect("validated form counts")
    }
}

/// Per-(profile, form) generation provenance.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Provenance {
    /// Form usage counts z_{p,i,f}, [profile][flat_form].
    pub counts: Vec<Vec<u32>>,
    /// Zeroing events, [profile][flat_form].
    pub zeroed: Vec<Vec<bool>>,
}

/// True basis fields sampled on a raster.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FieldRaster {
    pub nx: usize,
    pub ny: usize,
    pub region: Region,
    /// [b][iy * nx + ix]
    pub values: Vec<Vec<f64>>,
}

impl FieldRaster {
    pub fn point(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.region.width * ix as f64 / (self.nx - 1) as f64,
            self.region.height * iy as f64 / (self.ny - 1) as f64,
        )
    }
}

/// Everything the generator knows that inference must not see.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub params: GlobalParams,
    pub float_locations: Vec<(f64, f64)>,
    /// [b * n_anchors + p]
    pub basis_at_anchors: Vec<f64>,
    /// [b * n_floats + m]
    pub basis_at_floats: Vec<f64>,
    pub raster: FieldRaster,
    pub provenance: Provenance,
    /// Ids of floats whose indicators were replaced by contamination.
    pub contaminated: Vec<String>,
}

fn sample_laplace(rng: &mut impl Rng, scale: f64) -> f64 {
    let u: f64 = rng.gen_range(-0.5..0.5);
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

/// Draw one profile's indicators at the given per-form intensities.
fn observe(
    rng: &mut impl Rng,
    catalog: &ItemCatalog,
    mu: &[f64],
    zeta: &[f64],
    gammas: &[f64],
) -> (Vec<u8>, Vec<u32>, Vec<bool>) {
    let d = catalog.d_phi();
    let mut y = vec![0u8; d];
    let mut counts = vec![0u32; d];
    let mut zeroed = vec![false; d];
    for item in 0..catalog.n_items() {
        let off = catalog.offset(item);
        let nf = catalog.form_count(item);
        let phi = softmax_fields(&gammas[off..off + nf]).expect("finite intensities");
        let total = if mu[item] > 0.0 {
            Poisson::new(mu[item]).expect("positive rate").sample(rng) as u32
        } else {
            0
        };
        for _ in 0..total {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut pick = nf - 1;
            for (f, &p) in phi.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = f;
                    break;
                }
            }
            counts[off + pick] += 1;
        }
        for f in 0..nf {
            let z: f64 = rng.gen();
            let is_zeroed = z < zeta[item];
            zeroed[off + f] = is_zeroed;
            y[off + f] = u8::from(counts[off + f] > 0 && !is_zeroed);
        }
    }
    (y, counts, zeroed)
}

/// Generate a profile set from the exact generative process, with full
/// provenance. Basis fields are drawn exactly (dense Cholesky) jointly at
/// the raster, all profile locations and the inducing lattice.
pub fn generate(config: &SynthConfig) -> Result<(ItemCatalog, ProfileSet, SynthTruth)> {
    config.validate()?;
    let catalog = config.catalog();
    let mut rng = StreamKey::new(config.seed, Domain::Synth, 0).rng();
    let region = config.region;

    // true global parameters from the priors
    let n_items = catalog.n_items();
    let gamma = Gamma::new(config.gamma_shape, 1.0 / config.gamma_rate)
        .map_err(|e| Error::invalid(format!("gamma prior: {e}")))?;
    let mu: Vec<f64> = (0..n_items).map(|_| gamma.sample(&mut rng)).collect();
    let zeta: Vec<f64> = (0..n_items).map(|_| rng.gen()).collect();
    let mut offsets = vec![0.0; catalog.d_phi()];
    for item in 0..n_items {
        for form in 1..catalog.form_count(item) {
            let g: f64 = rng.sample(StandardNormal);
            offsets[catalog.flat_index(item, form)] = g * config.sigma_a;
        }
    }
    let weights: Vec<f64> = (0..catalog.d_phi() * config.n_basis)
        .map(|_| sample_laplace(&mut rng, config.sigma_w))
        .collect();

    // locations
    let anchor_locs: Vec<(f64, f64)> = (0..config.n_anchors)
        .map(|_| {
            (
                rng.gen_range(0.0..region.width),
                rng.gen_range(0.0..region.height),
            )
        })
        .collect();
    let float_locs: Vec<(f64, f64)> = (0..config.n_floats)
        .map(|_| {
            (
                rng.gen_range(0.0..region.width),
                rng.gen_range(0.0..region.height),
            )
        })
        .collect();

    // joint dense GP draw: raster, anchors, floats, inducing lattice
    let (nx, ny) = config.raster;
    let mut points: Vec<(f64, f64)> = Vec::new();
    for iy in 0..ny {
        for ix in 0..nx {
            points.push((
                region.width * ix as f64 / (nx - 1) as f64,
                region.height * iy as f64 / (ny - 1) as f64,
            ));
        }
    }
    let raster_len = points.len();
    points.extend_from_slice(&anchor_locs);
    points.extend_from_slice(&float_locs);
    let g = config.inducing_grid;
    for iy in 0..=g {
        for ix in 0..=g {
            points.push((
                region.width * ix as f64 / g as f64,
                region.height * iy as f64 / g as f64,
            ));
        }
    }
    if points.len() > DENSE_DRAW_CAP {
        return Err(Error::invalid(format!(
            "dense GP draw needs {} points, cap is {DENSE_DRAW_CAP}",
            points.len()
        )));
    }
    let k = kernel_matrix(&points, &points, &config.kernel, true)?;
    let chol = nalgebra::Cholesky::new(k)
        .ok_or_else(|| Error::numerical("synth covariance not positive definite"))?;
    let l = chol.l();
    let total = points.len();
    let mut raster_values = Vec::with_capacity(config.n_basis);
    let mut basis_at_anchors = vec![0.0; config.n_basis * config.n_anchors];
    let mut basis_at_floats = vec![0.0; config.n_basis * config.n_floats];
    let u_count = (g + 1) * (g + 1);
    let mut inducing_values = vec![0.0; config.n_basis * u_count];
    for b in 0..config.n_basis {
        let z: Vec<f64> = (0..total).map(|_| rng.sample(StandardNormal)).collect();
        let mut field = vec![0.0; total];
        for i in 0..total {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += l[(i, j)] * z[j];
            }
            field[i] = acc;
        }
        raster_values.push(field[..raster_len].to_vec());
        let a0 = raster_len;
        for p in 0..config.n_anchors {
            basis_at_anchors[b * config.n_anchors + p] = field[a0 + p];
        }
        let f0 = a0 + config.n_anchors;
        for m in 0..config.n_floats {
            basis_at_floats[b * config.n_floats + m] = field[f0 + m];
        }
        let u0 = f0 + config.n_floats;
        for u in 0..u_count {
            inducing_values[b * u_count + u] = field[u0 + u];
        }
    }

    let params = GlobalParams {
        mu,
        zeta,
        offsets,
        weights,
        inducing_values,
        n_basis: config.n_basis,
        n_inducing: u_count,
    };

    // observations
    let d = catalog.d_phi();
    let mut anchors = Vec::with_capacity(config.n_anchors);
    let mut floats = Vec::with_capacity(config.n_floats);
    let mut counts = Vec::with_capacity(config.n_anchors + config.n_floats);
    let mut zeroed = Vec::with_capacity(config.n_anchors + config.n_floats);
    let mut gammas = vec![0.0; d];
    let gamma_at = |basis: &dyn Fn(usize) -> f64, gammas: &mut [f64]| {
        for f in 0..d {
            let mut v = params.offsets[f];
            for b in 0..config.n_basis {
                v += basis(b) * params.weights[f * config.n_basis + b];
            }
            gammas[f] = v;
        }
    };
    for (p, &(x, y)) in anchor_locs.iter().enumerate() {
        gamma_at(&|b| basis_at_anchors[b * config.n_anchors + p], &mut gammas);
        let (ind, c, zd) = observe(&mut rng, &catalog, &params.mu, &params.zeta, &gammas);
        anchors.push(AnchorProfile {
            id: format!("anchor{p:03}"),
            x,
            y,
            indicators: ind,
        });
        counts.push(c);
        zeroed.push(zd);
    }
    for m in 0..config.n_floats {
        gamma_at(&|b| basis_at_floats[b * config.n_floats + m], &mut gammas);
        let (ind, c, zd) = observe(&mut rng, &catalog, &params.mu, &params.zeta, &gammas);
        floats.push(FloatProfile {
            id: format!("float{m:03}"),
            indicators: ind,
        });
        counts.push(c);
        zeroed.push(zd);
    }

    let mut data = ProfileSet {
        region,
        anchors,
        floats,
    };
    data.validate(&catalog)?;

    let raster = FieldRaster {
        nx,
        ny,
        region,
        values: raster_values,
    };
    let mut truth = SynthTruth {
        params,
        float_locations: float_locs,
        basis_at_anchors,
        basis_at_floats,
        raster,
        provenance: Provenance { counts, zeroed },
        contaminated: Vec::new(),
    };

    if config.contamination > 0.0 {
        let ids = contaminate(
            &mut data,
            &catalog,
            &truth,
            config.contamination,
            config.seed,
        )?;
        truth.contaminated = ids;
    }

    Ok((catalog, data, truth))
}

/// Replace each float's indicators, independently with probability
/// `rho_c`, by indicators regenerated at a location at least 0.5 region
/// units from its true position. The recorded truth keeps the original
/// location, which is exactly the mis-specification this induces.
pub fn contaminate(
    data: &mut ProfileSet,
    catalog: &ItemCatalog,
    truth: &SynthTruth,
    rho_c: f64,
    seed: u64,
) -> Result<Vec<String>> {
    if !(0.0..1.0).contains(&rho_c) {
        return Err(Error::invalid("contamination rate must lie in [0, 1)"));
    }
    if rho_c == 0.0 {
        return Ok(Vec::new());
    }
    let mut rng = StreamKey::new(seed, Domain::Synth, 1).rng();
    let raster = &truth.raster;
    let n_cells = raster.nx * raster.ny;
    let d = catalog.d_phi();
    let mut touched = Vec::new();
    for (m, float) in data.floats.iter_mut().enumerate() {
        let hit: f64 = rng.gen();
        if hit >= rho_c {
            continue;
        }
        let (tx, ty) = truth.float_locations[m];
        // far-away raster cell, uniform over eligible cells
        let eligible: Vec<usize> = (0..n_cells)
            .filter(|&c| {
                let (x, y) = raster.point(c % raster.nx, c / raster.nx);
                ((x - tx).powi(2) + (y - ty).powi(2)).sqrt() >= 0.5
            })
            .collect();
        if eligible.is_empty() {
            return Err(Error::invalid(
                "no raster cell at distance >= 0.5 from a float",
            ));
        }
        let cell = eligible[rng.gen_range(0..eligible.len())];
        let mut gammas = vec![0.0; d];
        for f in 0..d {
            let mut v = truth.params.offsets[f];
            for b in 0..truth.params.n_basis {
                v += raster.values[b][cell] * truth.params.weights[f * truth.params.n_basis + b];
            }
            gammas[f] = v;
        }
        let (ind, _, _) = observe(
            &mut rng,
            catalog,
            &truth.params.mu,
            &truth.params.zeta,
            &gammas,
        );
        float.indicators = ind;
        touched.push(float.id.clone());
    }
    Ok(touched)
}
