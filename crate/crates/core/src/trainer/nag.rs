/// One step of the momentum schedule: `lambda_{t+1} = (1 + sqrt(1 + 4 lambda_t^2)) / 2`
/// and `gamma_t = (1 - lambda_t) / lambda_{t+1}`.
pub fn nag_momentum_schedule(lambda: f64) -> (f64, f64) {
    let next = (1.0 + (1.0 + 4.0 * lambda * lambda).sqrt()) / 2.0;
    (next, (1.0 - lambda) / next)
}

/// Mixing weight for the step taken from state `lambda`, and the state after it.
///
/// The weight comes from the schedule one position ahead, so the first step
/// (state 0) is a plain gradient step.
pub fn step_momentum(lambda: f64) -> (f64, f64) {
    let (ahead, _) = nag_momentum_schedule(lambda);
    let (_, gamma) = nag_momentum_schedule(ahead);
    (ahead, gamma)
}
