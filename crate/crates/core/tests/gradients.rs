mod common;

use common::*;

#[test]
fn synth_nll_gradients() {
    for seed in 0..20 {
        let e = synth_grad_error(seed);
        assert!(e <= GRAD_TOL, "seed {seed}: {e}");
    }
}

#[test]
fn prior_nll_gradients() {
    for seed in 0..20 {
        let e = prior_grad_error(seed);
        assert!(e <= GRAD_TOL, "seed {seed}: {e}");
    }
}

#[test]
fn vb_objective_gradients() {
    for seed in 0..20 {
        let [t, n, o] = vb_grad_errors(seed);
        assert!(
            t <= GRAD_TOL && n <= GRAD_TOL && o <= GRAD_TOL,
            "seed {seed}: θ {t} ν {n} ω {o}"
        );
    }
}
