use super::{AdError, Tape, Var};
use crate::tensor::Tensor;

/// A function recorded once at a point `x`, ready for repeated Jacobian
/// products at that point.
///
/// The input is a flat `1 x n` parameter leaf; the output may have any shape
/// and is treated as flat.
pub struct Linearization {
    tape: Box<Tape>,
    input: usize,
    output: usize,
    in_dim: usize,
    out_dim: usize,
}

impl Linearization {
    pub fn new<F>(x: &[f64], f: F) -> Result<Self, AdError>
    where
        F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
    {
        Self::try_new(x, |tape, v| Ok::<_, AdError>(f(tape, v)))
    }

    /// As [`Linearization::new`] for a function that can fail while recording.
    pub fn try_new<F, E>(x: &[f64], f: F) -> Result<Self, E>
    where
        F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, E>,
        E: From<AdError>,
    {
        let tape = Box::new(Tape::new());
        let (input, output, out_dim) = {
            let xv = tape.param(Tensor::row(x.to_vec()));
            let y = f(&tape, xv)?;
            let value = y.value();
            if !value.is_finite() {
                return Err(AdError::NonFinite.into());
            }
            (xv.id(), y.id(), value.numel())
        };
        Ok(Linearization { tape, input, output, in_dim: x.len(), out_dim })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// `f(x)`, flattened.
    pub fn value(&self) -> Vec<f64> {
        self.tape.var_by_id(self.output).value().into_data()
    }

    /// `J v`.
    pub fn jvp(&self, v: &[f64]) -> Result<Vec<f64>, AdError> {
        if v.len() != self.in_dim {
            return Err(AdError::DimensionMismatch { expected: self.in_dim, found: v.len() });
        }
        let x = self.tape.var_by_id(self.input);
        let out = self.tape.forward_tangent(&[(x, v)], self.tape.var_by_id(self.output))?;
        finite(out)
    }

    /// `Jᵀ u`.
    pub fn vjp(&self, u: &[f64]) -> Result<Vec<f64>, AdError> {
        if u.len() != self.out_dim {
            return Err(AdError::DimensionMismatch { expected: self.out_dim, found: u.len() });
        }
        let x = self.tape.var_by_id(self.input);
        let grads = self.tape.backward_with_seed(self.tape.var_by_id(self.output), u)?;
        finite(grads.get_or_zeros(x))
    }
}

fn finite(v: Vec<f64>) -> Result<Vec<f64>, AdError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(AdError::NonFinite)
    }
}

/// `J_f(x) v` for a function of a flat input.
pub fn jvp<F>(f: F, x: &[f64], v: &[f64]) -> Result<Vec<f64>, AdError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    if v.len() != x.len() {
        return Err(AdError::DimensionMismatch { expected: x.len(), found: v.len() });
    }
    Linearization::new(x, f)?.jvp(v)
}

/// `J_f(x)ᵀ u` for a function of a flat input.
pub fn vjp<F>(f: F, x: &[f64], u: &[f64]) -> Result<Vec<f64>, AdError>
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Var<'t>,
{
    Linearization::new(x, f)?.vjp(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dot;

    fn affine<'t>(tape: &'t Tape, x: Var<'t>) -> Var<'t> {
        let a = tape.constant(Tensor::from_rows(&[[1.0, 4.0], [2.0, 5.0], [3.0, 6.0]]));
        x.matmul(a)
    }

    #[test]
    fn identity_products_return_their_argument() {
        let x = [0.3, -1.2, 2.0];
        assert_eq!(jvp(|_, x| x, &x, &[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(vjp(|_, x| x, &x, &[4.0, 5.0, 6.0]).unwrap(), vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn linear_map_columns_and_rows() {
        // y = x · A with A 3x2, so J = Aᵀ (2x3).
        let x = [1.0, 1.0, 1.0];
        assert_eq!(jvp(affine, &x, &[1.0, 0.0, 0.0]).unwrap(), vec![1.0, 4.0]);
        assert_eq!(vjp(affine, &x, &[1.0, 0.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn adjoint_identity_on_nonlinear_map() {
        fn f<'t>(tape: &'t Tape, x: Var<'t>) -> Var<'t> {
            let w = tape.constant(Tensor::from_rows(&[[0.5, -0.3], [0.2, 0.8], [-1.0, 0.4]]));
            x.matmul(w).tanh().silu()
        }
        let lin = Linearization::new(&[0.1, 0.7, -0.4], f).unwrap();
        let (u, v) = ([0.6, -1.1], [0.2, 0.9, -0.5]);
        let lhs = dot(&u, &lin.jvp(&v).unwrap());
        let rhs = dot(&lin.vjp(&u).unwrap(), &v);
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
    }

    #[test]
    fn mismatched_direction_is_an_error() {
        assert_eq!(
            jvp(|_, x| x, &[1.0, 2.0], &[1.0]),
            Err(AdError::DimensionMismatch { expected: 2, found: 1 })
        );
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let r = jvp(|_, x| x.sqrt(), &[-1.0], &[1.0]);
        assert_eq!(r, Err(AdError::NonFinite));
    }
}
