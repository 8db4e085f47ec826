use foreseer_core::rng;
use foreseer_core::worldmodel::{
    loss_and_grad, loss_terms, surrogate_loss, Sequence, Tensor, WorldModelDims, WorldModelParams,
};

fn tiny(alpha_prior_pred: f64) -> (WorldModelParams, Vec<Sequence>) {
    let dims = WorldModelDims {
        obs: 10,
        action: 3,
        hidden: 4,
        stoch: 2,
        mlp: 5,
    };
    let mut p = WorldModelParams::init(dims, 7, 1.0);
    p.loss.alpha_prior_pred = alpha_prior_pred;
    let mut r = rng::stream(7, 99);
    for v in p.values_mut() {
        *v += 0.1 * rng::normal(&mut r);
    }
    let batch = (0..2)
        .map(|_| {
            let row = |n: usize, r: &mut rng::StreamRng| (0..n).map(|_| rng::normal(r)).collect::<Vec<f64>>();
            Sequence {
                obs: (0..5).map(|_| row(10, &mut r)).collect(),
                act: (0..5).map(|_| row(3, &mut r)).collect(),
                eps: (0..5).map(|_| row(2, &mut r)).collect(),
            }
        })
        .collect();
    (p, batch)
}

fn check_gradients(alpha_prior_pred: f64) {
    let (p, batch) = tiny(alpha_prior_pred);
    let (_, grad) = loss_and_grad(&p, &batch).unwrap();
    let eps = 1e-4;
    for t in Tensor::ALL {
        let range = p.layout().range(t);
        let mut num = Vec::with_capacity(range.len());
        for i in range.clone() {
            let mut plus = p.clone();
            plus.values_mut()[i] += eps;
            let mut minus = p.clone();
            minus.values_mut()[i] -= eps;
            let fp = surrogate_loss(&plus, &p, &batch).unwrap();
            let fm = surrogate_loss(&minus, &p, &batch).unwrap();
            num.push((fp - fm) / (2.0 * eps));
        }
        let ana = &grad[range];
        let diff: f64 = ana.iter().zip(&num).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let scale = ana.iter().map(|a| a * a).sum::<f64>().sqrt().max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        let rel = if scale == 0.0 { 0.0 } else { diff / scale };
        assert!(rel <= 1e-3, "{}: relative error {rel:e}", t.name());
    }
}

#[test]
fn analytic_gradients_match_central_differences() {
    check_gradients(0.0);
}

#[test]
fn gradients_with_prior_reconstruction() {
    check_gradients(0.7);
}

#[test]
fn surrogate_equals_loss_at_frozen_point() {
    for a in [0.0, 0.7] {
        let (p, batch) = tiny(a);
        let terms = loss_terms(&p, &batch).unwrap();
        let s = surrogate_loss(&p, &p, &batch).unwrap();
        assert!((terms.total - s).abs() <= 1e-12 * terms.total.abs().max(1.0));
        assert!(terms.dyn_kl >= 0.0 && terms.rep_kl >= 0.0);
        assert_eq!(terms.prior_pred > 0.0, a > 0.0);
    }
}
