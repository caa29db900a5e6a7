use super::{NumericsError, Tensor};

/// Worst relative error seen in each parameter group.
#[derive(Clone, Debug)]
pub struct FdReport {
    pub per_group: Vec<f64>,
    pub coords_checked: usize,
}

impl FdReport {
    pub fn max_error(&self) -> f64 {
        self.per_group.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares `analytic` gradients against central differences of `f`.
///
/// Error per coordinate is `|analytic - fd| / max(1, |fd|)`. When a group has
/// more than `max_per_group` coordinates an evenly strided subset is probed.
pub fn finite_difference_check<F>(
    mut f: F,
    params: &[Tensor],
    analytic: &[Tensor],
    eps: f64,
    max_per_group: usize,
) -> Result<FdReport, NumericsError>
where
    F: FnMut(&[Tensor]) -> Result<f64, NumericsError>,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(NumericsError::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-7, 1e-3]"
        )));
    }
    if params.len() != analytic.len() {
        return Err(NumericsError::Shape(format!(
            "{} parameter groups but {} gradients",
            params.len(),
            analytic.len()
        )));
    }
    let mut work: Vec<Tensor> = params.to_vec();
    let mut per_group = Vec::with_capacity(params.len());
    let mut coords_checked = 0;

    for g in 0..params.len() {
        if params[g].shape() != analytic[g].shape() {
            return Err(NumericsError::Shape(format!(
                "group {g}: parameter {:?} vs gradient {:?}",
                params[g].shape(),
                analytic[g].shape()
            )));
        }
        let len = params[g].len();
        let stride = len.div_ceil(max_per_group.max(1)).max(1);
        let mut worst = 0.0_f64;
        for i in (0..len).step_by(stride) {
            let orig = work[g].data()[i];
            work[g].data_mut()[i] = orig + eps;
            let up = f(&work)?;
            work[g].data_mut()[i] = orig - eps;
            let down = f(&work)?;
            work[g].data_mut()[i] = orig;
            if !up.is_finite() || !down.is_finite() {
                return Err(NumericsError::NonFinite(format!(
                    "probe of group {g} coordinate {i}"
                )));
            }
            let fd = (up - down) / (2.0 * eps);
            let err = (analytic[g].data()[i] - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(err);
            coords_checked += 1;
        }
        per_group.push(worst);
    }
    Ok(FdReport {
        per_group,
        coords_checked,
    })
}
