use nalgebra::DVector;

/// Largest relative gap between `grad` and a central difference of `f`.
/// Components with tiny gradients are compared on an absolute 1e-3 scale.
pub(crate) fn fd_check<F: Fn(&DVector<f64>) -> f64>(f: F, at: &DVector<f64>, grad: &DVector<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..at.len() {
        let h = 1e-5 * at[k].abs().max(1.0);
        let mut up = at.clone();
        up[k] += h;
        let mut dn = at.clone();
        dn[k] -= h;
        let fd = (f(&up) - f(&dn)) / (2.0 * h);
        worst = worst.max((fd - grad[k]).abs() / grad[k].abs().max(1e-3));
    }
    worst
}
