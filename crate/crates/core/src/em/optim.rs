use crate::error::Result;

/// Halvings tried before a step is rejected.
pub(crate) const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct AscentOutcome {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub accepted_steps: usize,
    /// Set when a step found no non-decreasing point within the halving budget.
    pub stalled: bool,
    pub step_size: f64,
}

/// Gradient ascent with backtracking: each step starts from the last
/// accepted step size (doubled), halves until the objective does not
/// decrease, and gives up after [`MAX_HALVINGS`] halvings. `scale`
/// multiplies the raw gradient; iteration also ends once the scaled gradient
/// norm is at most `tolerance`. The objective never decreases.
pub(crate) fn line_search_ascent<F>(
    theta: &mut [f64],
    steps: usize,
    initial_step: f64,
    scale: f64,
    tolerance: f64,
    mut objective: F,
) -> Result<AscentOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let (mut value, mut gradient) = objective(theta)?;
    let mut step = initial_step;
    let mut accepted_steps = 0;
    let mut stalled = false;
    let mut trial = vec![0.0; theta.len()];
    for _ in 0..steps {
        if gradient.iter().all(|g| *g == 0.0) || norm(&gradient) * scale <= tolerance {
            break;
        }
        let mut eta = step;
        let mut accepted = false;
        for _ in 0..=MAX_HALVINGS {
            for ((x, t), g) in theta.iter().zip(trial.iter_mut()).zip(&gradient) {
                *t = x + eta * scale * g;
            }
            let (v, g) = objective(&trial)?;
            if v.is_finite() && v >= value {
                theta.copy_from_slice(&trial);
                value = v;
                gradient = g;
                step = eta * 2.0;
                accepted = true;
                break;
            }
            eta *= 0.5;
        }
        if !accepted {
            stalled = true;
            break;
        }
        accepted_steps += 1;
    }
    Ok(AscentOutcome {
        value,
        gradient,
        accepted_steps,
        stalled,
        step_size: step,
    })
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
