#![allow(dead_code)]

use advts::autodiff::{finite_difference_gradient, relative_error, Tensor};
use advts::data::{Provenance, WindowStamp, WindowedDataset};
use advts::models::{loss_and_gradients, Architecture, ForecastModel, Forecaster, ModelKind, Mode};
use advts::rng::Streams;
use rand::Rng;

pub fn day(i: usize) -> chrono::NaiveDateTime {
    chrono::DateTime::from_timestamp(i as i64 * 86_400, 0).unwrap().naive_utc()
}

pub fn mini_arch(kind: ModelKind) -> Architecture {
    Architecture {
        kind,
        input_features: 2,
        hidden: 4,
        relu_units: 4,
        lookback: 3,
        dropout: 0.0,
    }
}

pub fn mini_model(kind: ModelKind, seed: u64) -> ForecastModel<f64> {
    ForecastModel::new(&mini_arch(kind), &Streams::new(seed)).unwrap()
}

/// Uniform `[batch, 3, 2]` inputs and matching targets for `kind`.
pub fn mini_batch(kind: ModelKind, batch: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = Streams::new(seed).stream("batch");
    let x: Vec<f64> = (0..batch * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let out = match kind {
        ModelKind::Vanilla => 1,
        ModelKind::EncoderDecoder => 3,
    };
    let y: Vec<f64> = (0..batch * out).map(|_| rng.random_range(-1.0..1.0)).collect();
    (
        Tensor::new(vec![batch, 3, 2], x).unwrap(),
        Tensor::new(vec![batch, out], y).unwrap(),
    )
}

pub fn dataset(x: Tensor<f64>, y: Tensor<f64>) -> WindowedDataset<f64> {
    let n = x.shape()[0];
    let f = x.shape()[2];
    let l = x.shape()[1];
    WindowedDataset::new(
        x,
        y,
        (0..f).map(|i| format!("f{i}")).collect(),
        (0..n)
            .map(|i| WindowStamp {
                input_start: day(i),
                input_end: day(i + l - 1),
                target: Some(day(i + l)),
                segment: 0,
            })
            .collect(),
        Provenance {
            source: "test".into(),
            split: "train".into(),
        },
    )
    .unwrap()
}

fn loss_at(model: &ForecastModel<f64>, x: &Tensor<f64>, y: &Tensor<f64>) -> f64 {
    loss_and_gradients(model, x, y, &mut Mode::Eval).unwrap().0
}

/// Largest relative error between backward() and central differences over
/// every parameter and every input coordinate.
pub fn max_gradient_error(model: &ForecastModel<f64>, x: &Tensor<f64>, y: &Tensor<f64>, h: f64) -> f64 {
    let floor = 1e-7;
    let (_, analytic) = loss_and_gradients(model, x, y, &mut Mode::Eval).unwrap();
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        let fd = finite_difference_gradient(
            |p: &Tensor<f64>| {
                let mut m = model.clone();
                *m.params_mut()[i] = p.clone();
                Ok::<_, ()>(loss_at(&m, x, y))
            },
            model.params()[i],
            h,
        )
        .unwrap();
        for (a, b) in g.data().iter().zip(fd.data()) {
            worst = worst.max(relative_error(*a, *b, floor));
        }
    }
    let (_, gx) = advts::attacks::input_gradient(model, x, y).unwrap();
    let fd = finite_difference_gradient(
        |xp: &Tensor<f64>| Ok::<_, ()>(advts::attacks::input_gradient(model, xp, y).unwrap().0),
        x,
        h,
    )
    .unwrap();
    for (a, b) in gx.data().iter().zip(fd.data()) {
        worst = worst.max(relative_error(*a, *b, floor));
    }
    worst
}

fn dense_pre(d: &advts::models::Dense<f64>, s: &Tensor<f64>) -> Vec<f64> {
    let (b, h) = (s.shape()[0], s.shape()[1]);
    let r = d.outputs();
    let mut out = Vec::with_capacity(b * r);
    for i in 0..b {
        for j in 0..r {
            let mut z = d.bias.data()[j];
            for k in 0..h {
                z += s.data()[i * h + k] * d.weight.data()[k * r + j];
            }
            out.push(z);
        }
    }
    out
}

/// Smallest |ReLU pre-activation| over the batch; finite differences with a
/// step well below this never cross a kink.
pub fn relu_margin(model: &ForecastModel<f64>, x: &Tensor<f64>) -> f64 {
    let pre: Vec<f64> = match model {
        ForecastModel::Vanilla(m) => dense_pre(&m.hidden, &m.cell.unroll(x).unwrap().0),
        ForecastModel::EncDec(m) => {
            let ctx = m.context_vector(x).unwrap();
            let (b, h) = (ctx.shape()[0], ctx.shape()[1]);
            let mut all = Vec::new();
            for t in 1..=m.repeat {
                let mut rep = Vec::with_capacity(b * t * h);
                for i in 0..b {
                    for _ in 0..t {
                        rep.extend_from_slice(&ctx.data()[i * h..(i + 1) * h]);
                    }
                }
                let s = m.decoder.unroll(&Tensor::new(vec![b, t, h], rep).unwrap()).unwrap().0;
                all.extend(dense_pre(&m.hidden, &s));
            }
            all
        }
    };
    pre.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()))
}

pub type Draw = (u64, ForecastModel<f64>, Tensor<f64>, Tensor<f64>);

/// Draws `(seed, model, x, y)` whose ReLU margin is at least `margin`.
pub fn smooth_draws(kind: ModelKind, count: usize, margin: f64) -> Vec<Draw> {
    let mut out = Vec::new();
    for seed in 0..200u64 {
        let model = mini_model(kind, seed);
        let (x, y) = mini_batch(kind, 4, seed + 1000);
        if relu_margin(&model, &x) >= margin {
            out.push((seed, model, x, y));
            if out.len() == count {
                return out;
            }
        }
    }
    panic!("fewer than {count} kink-free draws");
}
