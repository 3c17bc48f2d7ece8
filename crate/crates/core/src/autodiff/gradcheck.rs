use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Tape, TensorError, Var};

/// Which parameter coordinates to probe.
#[derive(Clone, Copy, Debug)]
pub enum CoordinateSample {
    All,
    /// Up to `count` coordinates per tensor, chosen by a seeded generator.
    PerTensor { count: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter name and flat coordinate of the worst disagreement.
    pub worst: Option<(String, usize)>,
    pub coordinates_checked: usize,
}

/// Compares reverse-mode gradients against central differences.
///
/// `forward` must build a scalar loss on the supplied tape and be
/// deterministic. The error for each coordinate is
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn gradient_check<F, E>(
    params: &ParamStore,
    epsilon: f64,
    coords: CoordinateSample,
    forward: F,
) -> Result<GradCheckReport, E>
where
    F: for<'p> Fn(&mut Tape<'p>) -> Result<Var, E>,
    E: From<TensorError>,
{
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(TensorError::InvalidArgument(format!(
            "gradient check epsilon must be positive, got {epsilon}"
        ))
        .into());
    }

    let analytic = {
        let mut tape = Tape::with_params(params);
        let loss = forward(&mut tape)?;
        check_finite(&tape, loss)?;
        tape.backward(loss)?.into_params()
    };

    let eval = |store: &ParamStore| -> Result<f64, E> {
        let mut tape = Tape::with_params(store);
        let loss = forward(&mut tape)?;
        Ok(check_finite(&tape, loss)?)
    };

    let mut rng = match coords {
        CoordinateSample::PerTensor { seed, .. } => ChaCha8Rng::seed_from_u64(seed),
        CoordinateSample::All => ChaCha8Rng::seed_from_u64(0),
    };
    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        coordinates_checked: 0,
    };

    for (pi, name) in params.names().iter().enumerate() {
        let len = params.tensor(pi).len();
        let picks: Vec<usize> = match coords {
            CoordinateSample::All => (0..len).collect(),
            CoordinateSample::PerTensor { count, .. } => {
                let mut v = sample(&mut rng, len, count.min(len)).into_vec();
                v.sort_unstable();
                v
            }
        };
        for k in picks {
            let original = params.tensor(pi).data()[k];
            probe.tensor_mut(pi).data_mut()[k] = original + epsilon;
            let plus = eval(&probe)?;
            probe.tensor_mut(pi).data_mut()[k] = original - epsilon;
            let minus = eval(&probe)?;
            probe.tensor_mut(pi).data_mut()[k] = original;

            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = analytic[pi].data()[k];
            let err = (exact - numeric).abs() / 1f64.max(exact.abs()).max(numeric.abs());
            report.coordinates_checked += 1;
            if report.worst.is_none() || err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst = Some((name.clone(), k));
            }
        }
    }
    Ok(report)
}

fn check_finite(tape: &Tape<'_>, loss: Var) -> Result<f64, TensorError> {
    let t = tape.value(loss);
    let value = t.item().ok_or(TensorError::NonScalarLoss(t.shape()))?;
    if !value.is_finite() {
        return Err(TensorError::NonFinite { op: "loss" });
    }
    Ok(value)
}
