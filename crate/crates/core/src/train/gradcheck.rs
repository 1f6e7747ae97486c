/// Largest relative disagreement between the analytic gradient returned by
/// `loss` at `params` and central finite differences of its value:
/// `max_i |g_a - g_fd| / max(1e-8, |g_a| + |g_fd|)`.
pub fn grad_check<F>(mut loss: F, params: &[f64], eps: f64) -> f64
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let (_, analytic) = loss(params);
    assert_eq!(
        analytic.len(),
        params.len(),
        "gradient length must match params"
    );
    let mut x = params.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + eps;
        let (up, _) = loss(&x);
        x[i] = orig - eps;
        let (down, _) = loss(&x);
        x[i] = orig;
        let fd = (up - down) / (2.0 * eps);
        let err = (analytic[i] - fd).abs() / (analytic[i].abs() + fd.abs()).max(1e-8);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_is_exact() {
        let err = grad_check(|x| (x[0] * x[0], vec![2.0 * x[0]]), &[1.5], 1e-4);
        assert!(err <= 1e-8, "err = {err}");
    }

    #[test]
    fn catches_wrong_gradient() {
        let err = grad_check(|x| (x[0] * x[0], vec![3.0 * x[0]]), &[1.5], 1e-4);
        assert!(err > 0.1);
    }
}
