use anyhow::{bail, Context, Result};

/// Parses `value` or `start:stop:step`. The stop value is included when the
/// step divides the span (up to rounding).
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| -> Result<f64> {
        let v: f64 = t.trim().parse().with_context(|| format!("`{t}` is not a number"))?;
        if !v.is_finite() {
            bail!("`{t}` is not finite");
        }
        Ok(v)
    };
    match parts.as_slice() {
        [v] => Ok(vec![num(v)?]),
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step <= 0.0 {
                bail!("range step must be positive, got {step}");
            }
            if stop < start {
                bail!("range stop {stop} is below start {start}");
            }
            let span = (stop - start) / step;
            let n = if (span - span.round()).abs() < 1e-9 { span.round() } else { span.floor() } as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => bail!("expected `value` or `start:stop:step`, got `{s}`"),
    }
}
