use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

fn evaluate<F>(f: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = tape.params(params);
    let loss = f(&mut tape, &vars)?;
    Ok(tape.value(loss).data()[0])
}

/// Compares tape gradients of `f` with central differences, one coordinate at
/// a time. Returns the largest relative error per parameter tensor, where the
/// relative error of a coordinate is `|g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|)`.
pub fn grad_check_per_param<F>(f: &F, params: &[Tensor], eps: f64) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite-difference step must be positive, got {eps}")));
    }
    let analytic = {
        let mut tape = Tape::new();
        let vars = tape.params(params);
        let loss = f(&mut tape, &vars)?;
        tape.backward(loss)?.for_params(params)
    };

    let mut probe = params.to_vec();
    let mut worst = vec![0.0f64; params.len()];
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..params[p].len() {
            let orig = params[p].data()[i];
            probe[p].data_mut()[i] = orig + eps;
            let up = evaluate(f, &probe)?;
            probe[p].data_mut()[i] = orig - eps;
            let down = evaluate(f, &probe)?;
            probe[p].data_mut()[i] = orig;

            let fd = (up - down) / (2.0 * eps);
            let ad = grad.data()[i];
            let rel = (ad - fd).abs() / f64::max(1e-8, ad.abs() + fd.abs());
            worst[p] = worst[p].max(rel);
        }
    }
    Ok(worst)
}

/// Maximum relative error over every coordinate of every parameter.
pub fn grad_check<F>(f: &F, params: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    Ok(grad_check_per_param(f, params, eps)?.into_iter().fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(t: &mut Tape, p: &[Var]) -> Result<Var> {
        let sq = t.mul(p[0], p[0])?;
        let s = t.sum(sq);
        let lin = t.scale(s, 0.5);
        let cross = t.mul(p[0], p[1])?;
        let c = t.sum(cross);
        t.add(lin, c)
    }

    #[test]
    fn quadratic_is_exact() {
        let params = vec![
            Tensor::vector(vec![0.3, -1.2, 2.5]),
            Tensor::vector(vec![1.0, 0.5, -0.25]),
        ];
        let err = grad_check(&quadratic, &params, 1e-4).unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn zero_step_is_rejected() {
        let params = vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![1.0])];
        assert!(matches!(grad_check(&quadratic, &params, 0.0), Err(Error::Contract(_))));
    }

    #[test]
    fn wrong_gradient_is_detected() {
        // x^2 computed outside the tape, so its derivative goes missing
        let params = vec![Tensor::vector(vec![0.4, -0.9])];
        let f = |t: &mut Tape, p: &[Var]| -> Result<Var> {
            let v = t.value(p[0]).clone();
            let doubled = t.constant(Tensor::vector(v.data().iter().map(|x| x * x).collect()));
            let s = t.add(p[0], doubled)?;
            Ok(t.sum(s))
        };
        assert!(grad_check(&f, &params, 1e-4).unwrap() > 0.1);
    }
}
