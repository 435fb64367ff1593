use fieldsmi::gp::joint::FieldModel;
use fieldsmi::model::prior::PriorConfig;
use fieldsmi::rng::{Domain, StreamKey};
use fieldsmi::synth::generate::{generate, SynthConfig};

fn main() {
    let cfg = SynthConfig {
        n_anchors: 30,
        n_floats: 0,
        seed: 21,
        form_counts: vec![3; 40],
        n_basis: 5,
        inducing_grid: 8,
        gamma_shape: 8.0,
        gamma_rate: 1.0,
        ..SynthConfig::default()
    };
    let (catalog, data, truth) = generate(&cfg).unwrap();
    let prior = PriorConfig {
        n_basis: cfg.n_basis,
        inducing_grid: cfg.inducing_grid,
        kernel: cfg.kernel.clone(),
        gamma_shape: 8.0,
        gamma_rate: 1.0,
        ..PriorConfig::default()
    };
    let (best, _) = data
        .anchors
        .iter()
        .enumerate()
        .max_by_key(|(_, a)| a.indicators.iter().map(|&v| v as usize).sum::<usize>())
        .unwrap();
    let anchor = data.anchors[best].clone();
    println!("anchor {} at ({:.3}, {:.3})", anchor.id, anchor.x, anchor.y);

    let mut data1 = data.clone();
    data1.floats = vec![fieldsmi::model::profiles::FloatProfile {
        id: "new".into(),
        indicators: anchor.indicators.clone(),
    }];
    let model = FieldModel::new(catalog, data1, prior, 50, 21).unwrap();
    let noise = model.noise_from_key(50, StreamKey::new(21, Domain::FieldNoise, 0));

    let params = truth.params.clone();
    // grid posterior: exp(loglik) normalized over cells
    let mut vals = Vec::new();
    let (nx, ny) = (40usize, 36usize);
    let mut maxv = f64::NEG_INFINITY;
    let mut minv = f64::INFINITY;
    for iy in 0..ny {
        for ix in 0..nx {
            let x = (ix as f64 + 0.5) / nx as f64;
            let y = 0.9 * (iy as f64 + 0.5) / ny as f64;
            let v = model.mc_bound_float(&params, &[(x, y)], &noise).unwrap();
            maxv = maxv.max(v);
            minv = minv.min(v);
            vals.push((x, y, v));
        }
    }
    println!("loglik range over region: {:.3} .. {:.3} (spread {:.2})", minv, maxv, maxv - minv);
    let z: f64 = vals.iter().map(|v| (v.2 - maxv).exp()).sum();
    let mx: f64 = vals.iter().map(|v| v.0 * (v.2 - maxv).exp()).sum::<f64>() / z;
    let my: f64 = vals.iter().map(|v| v.1 * (v.2 - maxv).exp()).sum::<f64>() / z;
    let sd: f64 = (vals.iter().map(|v| ((v.0-mx).powi(2)+(v.1-my).powi(2)) * (v.2 - maxv).exp()).sum::<f64>() / z).sqrt();
    println!("grid posterior mean ({:.3}, {:.3}), sd {:.3}", mx, my, sd);
    println!("distance of grid-posterior mean to anchor: {:.3}",
        ((mx-anchor.x).powi(2)+(my-anchor.y).powi(2)).sqrt());
    // run the actual predictor with the true psi
    let mut l = model.layout.clone();
    l.locations = l.inducing.end..l.inducing.end;
    l.n_floats = 0;
    let psi = fieldsmi::model::params::unconstrain(&params, &[], &model.data.region, &l).unwrap();
    let cfg2 = fieldsmi::influence::predict::PredictConfig {
        max_psi_draws: 64,
        t2: 60,
        seed: 5,
        ..Default::default()
    };
    let pred = fieldsmi::influence::predict::predict_new_profile(&model, &anchor.indicators, &[psi], &cfg2).unwrap();
    let n = pred.draws.len() as f64;
    let pmx = pred.draws.iter().map(|d| d.0).sum::<f64>() / n;
    let pmy = pred.draws.iter().map(|d| d.1).sum::<f64>() / n;
    println!("sampler mean ({:.3}, {:.3}), distance {:.3}", pmx, pmy,
        ((pmx-anchor.x).powi(2)+(pmy-anchor.y).powi(2)).sqrt());
}
