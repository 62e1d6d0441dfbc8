use proptest::prelude::*;

use spikelab_core::grad::Objective;
use spikelab_core::objectives::{Quadratic, QuadraticSpec};
use spikelab_core::optim::{accumulate, run, AdamHyper, OptimizerConfig, OptimizerKind, OptimizerState};
use spikelab_core::params::{dot, ParamVector};
use spikelab_core::spectral::{lambda_grad, Preconditioner};
use spikelab_core::grad::HvpBackend;
use spikelab_core::theory::check_descent_lemma;

fn quad(eig: Vec<f64>, off: Vec<f64>) -> Quadratic {
    Quadratic::from_spec(&QuadraticSpec { eigenvalues: eig, offset: off }).unwrap()
}

fn vecs(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(0.01f64..20.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-5.0f64..5.0, n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quadratic_excess_loss_is_exact((eig, off, th) in vecs(1..=8)) {
        let q = quad(eig.clone(), off.clone());
        let l = q.loss(&th).unwrap();
        let want: f64 = eig.iter().zip(&th).zip(&off).map(|((l, t), c)| 0.5 * l * (t - c).powi(2)).sum();
        prop_assert!((l - want).abs() <= 1e-12 * want.abs().max(1e-300));
        prop_assert_eq!(q.loss(&off).unwrap(), 0.0);
    }

    #[test]
    fn adagrad_accumulator_never_shrinks((eig, off, th) in vecs(1..=5), eta in 0.001f64..1.0) {
        let q = quad(eig, off);
        let mut cfg = OptimizerConfig::adam(eta, 0.0, 0.0);
        cfg.kind = OptimizerKind::Adagrad;
        let mut theta = ParamVector::from_values(th);
        let mut st = OptimizerState::new(cfg.kind, &theta);
        let mut prev = st.v.values.clone();
        for k in 0..200 {
            let (_, g) = q.value_and_gradient(&theta.values).unwrap();
            accumulate(&mut st, &g, &cfg);
            for (a, b) in st.v.values.iter().zip(&prev) {
                prop_assert!(a >= b);
                // η/√v non-increasing follows coordinatewise.
            }
            prev = st.v.values.clone();
            let d = spikelab_core::optim::update_delta(&st, &theta.values, &g, &cfg, k);
            let next: Vec<f64> = theta.values.iter().zip(&d).map(|(t, d)| t - d).collect();
            theta = theta.like(next);
        }
    }

    #[test]
    fn v_floor_holds_every_step((eig, off, th) in vecs(1..=5), floor in 1e-4f64..1.0) {
        let q = quad(eig, off);
        for kind in [OptimizerKind::Adam, OptimizerKind::Rmsprop] {
            let mut cfg = OptimizerConfig::adam(0.01, 0.9, 0.999);
            cfg.kind = kind;
            cfg.mitigation.v_floor = Some(floor);
            let mut theta = ParamVector::from_values(th.clone());
            let mut st = OptimizerState::new(cfg.kind, &theta);
            for k in 0..50 {
                let (_, g) = q.value_and_gradient(&theta.values).unwrap();
                accumulate(&mut st, &g, &cfg);
                prop_assert!(st.v.values.iter().all(|v| *v >= floor));
                let d = spikelab_core::optim::update_delta(&st, &theta.values, &g, &cfg, k);
                let next: Vec<f64> = theta.values.iter().zip(&d).map(|(t, d)| t - d).collect();
                theta = theta.like(next);
            }
        }
    }

    #[test]
    fn gd_descent_bound_on_stable_steps((eig, off, th) in vecs(1..=8), frac in 0.01f64..0.999) {
        let q = quad(eig, off);
        let eta = frac * 2.0 / q.lambda_max();
        let tr = run(&q, &ParamVector::from_values(th), &OptimizerConfig::gd(eta), 100, None, 0).unwrap();
        let rep = check_descent_lemma(&q, &tr).unwrap();
        prop_assert!(rep.holds(), "violations {:?} slack {}", rep.violations, rep.worst_slack);
        prop_assert_eq!(rep.steps_checked, 100);
    }

    // Loss increase of one GD step ⇔ gᵀHg/‖g‖² > 2/η, exact on quadratics.
    #[test]
    fn gd_loss_increase_iff_lambda_grad((eig, off, th) in vecs(1..=8), eta in 0.01f64..0.5) {
        let q = quad(eig, off);
        let (l0, g) = q.value_and_gradient(&th).unwrap();
        prop_assume!(dot(&g, &g) > 1e-12);
        let lg = lambda_grad(&Preconditioner::identity(th.len()), &q, &th, &g, HvpBackend::Exact).unwrap();
        let next: Vec<f64> = th.iter().zip(&g).map(|(t, g)| t - eta * g).collect();
        let l1 = q.loss(&next).unwrap();
        let thr = 2.0 / eta;
        prop_assume!((lg - thr).abs() > 1e-10 * thr);
        prop_assert_eq!(l1 > l0, lg > thr);
    }

    // With ε = 0, Adam is invariant to rescaling the loss.
    #[test]
    fn adam_trajectory_invariant_to_loss_scale((eig, off, th) in vecs(1..=4), c in 0.01f64..100.0) {
        let hyper = AdamHyper { eta: 0.01, beta1: 0.9, beta2: 0.99, epsilon: 0.0, bias_correction: true };
        let cfg = OptimizerConfig::new(OptimizerKind::Adam, hyper);
        let scaled: Vec<f64> = eig.iter().map(|l| l * c).collect();
        let a = run(&quad(eig, off.clone()), &ParamVector::from_values(th.clone()), &cfg, 50, None, 0).unwrap();
        let b = run(&quad(scaled, off), &ParamVector::from_values(th), &cfg, 50, None, 0).unwrap();
        for (x, y) in a.final_theta.iter().zip(&b.final_theta) {
            prop_assert!((x - y).abs() <= 1e-9 * (1.0 + x.abs()));
        }
    }
}
