//! Finite-difference gradient verification for tape fragments.

use super::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step of the five-point stencil. Inputs should keep kinks (max-pool ties,
/// ReLU at zero) more than `2 * DEFAULT_EPS` away.
pub const DEFAULT_EPS: f64 = 1e-4;

/// Denominator floor for the relative error. The stencil carries roundoff
/// near 1e-11 on these fragments, so gradients below the floor are compared on
/// an absolute scale of `floor * tolerance`.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// Projects the fragment output onto fixed pseudo-random weights so every
/// output element contributes to the scalar under test.
fn projection(len: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x05ee_d9ad);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn evaluate<F>(fragment: &F, inputs: &[Tensor], weights: Option<&[f64]>) -> Result<(f64, usize)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().cloned().map(|t| tape.leaf(t)).collect();
    let out = fragment(&mut tape, &vars)?;
    let y = tape.value(out).data();
    let owned;
    let w = match weights {
        Some(w) => w,
        None => {
            owned = projection(y.len());
            &owned
        }
    };
    Ok((y.iter().zip(w).map(|(a, b)| a * b).sum(), y.len()))
}

/// Largest relative error `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)` between analytic and
/// five-point central-difference gradients over every element of every input.
pub fn grad_check<F>(fragment: F, inputs: &[Tensor], eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().cloned().map(|t| tape.leaf(t)).collect();
    let out = fragment(&mut tape, &vars)?;
    let weights = projection(tape.value(out).len());
    tape.backward(out, &weights)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut worst: f64 = 0.0;
    for (which, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut perturbed = inputs.to_vec();
            let mut at = |h: f64| -> Result<f64> {
                perturbed[which].data_mut()[i] = input.data()[i] + h;
                Ok(evaluate(&fragment, &perturbed, Some(&weights))?.0)
            };
            let near = at(eps)? - at(-eps)?;
            let far = at(2.0 * eps)? - at(-2.0 * eps)?;
            let numeric = (8.0 * near - far) / (12.0 * eps);
            let a = analytic[which][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR);
            if !rel.is_finite() {
                return Err(Error::Numeric(format!("gradient check produced {rel}")));
            }
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
