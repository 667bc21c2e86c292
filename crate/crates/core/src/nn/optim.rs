//! Nesterov SGD with polynomial learning-rate decay, and the teacher EMA.

use crate::error::{Error, Result};
use crate::nn::network::ModelParams;

/// `lr = base_lr * (1 - iteration/max_iterations)^power`.
pub fn poly_lr(iteration: u64, max_iterations: u64, base_lr: f64, power: f64) -> Result<f64> {
    if max_iterations == 0 {
        return Err(Error::invalid("poly_lr", "max_iterations must be positive"));
    }
    if iteration > max_iterations {
        return Err(Error::invalid(
            "poly_lr",
            format!("iteration {iteration} exceeds max_iterations {max_iterations}"),
        ));
    }
    let t = iteration as f64 / max_iterations as f64;
    Ok(base_lr * (1.0 - t).powf(power))
}

/// Velocity and schedule state for [`sgd_nesterov_step`].
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub velocity: ModelParams,
    pub iteration: u64,
    pub base_lr: f64,
    pub max_iterations: u64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub poly_power: f64,
}

impl OptimizerState {
    pub fn new(
        params: &ModelParams,
        base_lr: f64,
        max_iterations: u64,
        momentum: f64,
        weight_decay: f64,
        poly_power: f64,
    ) -> OptimizerState {
        OptimizerState {
            velocity: params.zeros_like(),
            iteration: 0,
            base_lr,
            max_iterations,
            momentum,
            weight_decay,
            poly_power,
        }
    }
}

/// One Nesterov step, in place. With `d = g + wd * theta` evaluated at the
/// pre-step parameters:
///
/// `v <- mu * v - lr * d` then `theta <- theta + mu * v - lr * d`
///
/// using the polynomial learning rate at the current iteration. Rejects
/// non-finite gradients, naming the offending parameter.
pub fn sgd_nesterov_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.velocity) {
        return Err(Error::shape("sgd_nesterov_step", "params/grads/velocity layouts differ"));
    }
    if state.iteration >= state.max_iterations {
        return Err(Error::invalid(
            "sgd_nesterov_step",
            format!("iteration {} has reached max_iterations {}", state.iteration, state.max_iterations),
        ));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite {
            what: format!("gradient for parameter {name}"),
        });
    }
    let lr = poly_lr(state.iteration, state.max_iterations, state.base_lr, state.poly_power)?;
    let mu = state.momentum;
    let wd = state.weight_decay;
    for (((_, theta), (_, g)), (_, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.velocity.iter_mut())
    {
        for ((t, &gv), vel) in theta.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let d = gv + wd * *t;
            *vel = mu * *vel - lr * d;
            *t += mu * *vel - lr * d;
        }
    }
    state.iteration += 1;
    Ok(())
}

/// `teacher <- alpha * teacher + (1 - alpha) * student`, elementwise.
pub fn ema_update(teacher: &mut ModelParams, student: &ModelParams, alpha: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid("ema_update", format!("alpha {alpha} outside [0, 1]")));
    }
    if !teacher.same_layout(student) {
        return Err(Error::shape("ema_update", "teacher/student layouts differ"));
    }
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (tv, &sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = alpha * *tv + (1.0 - alpha) * sv;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn scalar_params(value: f64) -> ModelParams {
        ModelParams::new(vec![("w".to_string(), Tensor::from_vec(&[1], vec![value]).unwrap())])
    }

    fn value(p: &ModelParams) -> f64 {
        p.get("w").unwrap().data()[0]
    }

    #[test]
    fn poly_lr_endpoints_and_midpoint() {
        let base = 2.5e-4;
        assert_eq!(poly_lr(0, 100, base, 0.9).unwrap(), base);
        assert_eq!(poly_lr(100, 100, base, 0.9).unwrap(), 0.0);
        let mid = poly_lr(50, 100, base, 0.9).unwrap();
        let want = base * 0.5_f64.powf(0.9);
        assert!((mid - want).abs() < 1e-18);
        assert!((mid / base - 0.53589).abs() < 1e-5);
    }

    #[test]
    fn poly_lr_rejects_overrun() {
        assert!(poly_lr(101, 100, 0.1, 0.9).is_err());
    }

    #[test]
    fn poly_lr_monotone_non_increasing() {
        let mut prev = f64::INFINITY;
        for it in 0..=50 {
            let lr = poly_lr(it, 50, 0.3, 0.9).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn zero_grad_zero_velocity_leaves_params_unchanged() {
        let mut params = scalar_params(1.5);
        let grads = scalar_params(0.0);
        let mut state = OptimizerState::new(&params, 0.1, 10, 0.9, 0.0, 0.9);
        sgd_nesterov_step(&mut params, &grads, &mut state).unwrap();
        assert_eq!(value(&params), 1.5);
        assert_eq!(state.iteration, 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // From v=0, wd=0: theta <- theta - lr * (1 + mu) * g.
        let theta0 = 0.3;
        let g = 0.7;
        let (lr, mu) = (0.05, 0.9);
        let mut params = scalar_params(theta0);
        let grads = scalar_params(g);
        // power 0 keeps lr constant at base_lr
        let mut state = OptimizerState::new(&params, lr, 100, mu, 0.0, 0.0);
        sgd_nesterov_step(&mut params, &grads, &mut state).unwrap();
        let want = theta0 - lr * (1.0 + mu) * g;
        assert!((value(&params) - want).abs() < 1e-15);
    }

    #[test]
    fn two_hand_iterated_scalar_steps() {
        // mu=0.9, lr=0.1, g=1, wd=0, theta0=0:
        //   v1 = -0.1,  theta1 = 0.9*(-0.1) - 0.1            = -0.19
        //   v2 = 0.9*(-0.1) - 0.1 = -0.19, theta2 = theta1 + 0.9*(-0.19) - 0.1 = -0.461
        let mut params = scalar_params(0.0);
        let grads = scalar_params(1.0);
        let mut state = OptimizerState::new(&params, 0.1, 1000, 0.9, 0.0, 0.0);
        sgd_nesterov_step(&mut params, &grads, &mut state).unwrap();
        assert!((value(&params) - (-0.19)).abs() < 1e-12);
        sgd_nesterov_step(&mut params, &grads, &mut state).unwrap();
        assert!((value(&params) - (-0.461)).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_rejected_with_name() {
        let mut params = scalar_params(1.0);
        let grads = scalar_params(f64::NAN);
        let mut state = OptimizerState::new(&params, 0.1, 10, 0.9, 0.0, 0.9);
        let err = sgd_nesterov_step(&mut params, &grads, &mut state).unwrap_err();
        assert!(err.to_string().contains("w"), "error should name the parameter: {err}");
        assert_eq!(value(&params), 1.0);
    }

    #[test]
    fn ema_extremes_and_scalar_case() {
        let student = scalar_params(0.0);
        let mut teacher = scalar_params(1.0);
        ema_update(&mut teacher, &student, 0.99).unwrap();
        assert!((value(&teacher) - 0.99).abs() < 1e-15);

        let mut copy_all = scalar_params(1.0);
        ema_update(&mut copy_all, &student, 0.0).unwrap();
        assert_eq!(value(&copy_all), 0.0);

        let mut frozen = scalar_params(1.0);
        ema_update(&mut frozen, &student, 1.0).unwrap();
        assert_eq!(value(&frozen), 1.0);
    }

    #[test]
    fn ema_identity_at_fixed_point() {
        let student = scalar_params(0.42);
        for &alpha in &[0.0, 0.3, 0.99, 1.0] {
            let mut teacher = scalar_params(0.42);
            ema_update(&mut teacher, &student, alpha).unwrap();
            assert_eq!(value(&teacher), 0.42);
        }
    }

    #[test]
    fn ema_rejects_layout_mismatch() {
        let student = ModelParams::new(vec![("w".to_string(), Tensor::zeros(&[2]))]);
        let mut teacher = scalar_params(1.0);
        assert!(ema_update(&mut teacher, &student, 0.5).is_err());
    }
}
