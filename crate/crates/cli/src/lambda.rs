//! Smoothing-parameter grid specifications.

/// Parses `e:FROM:TO:STEP` (values `exp(FROM), exp(FROM+STEP), …, exp(TO)`)
/// or a comma-separated list of positive values.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>, String> {
    let spec = spec.trim();
    let values = if let Some(rest) = spec.strip_prefix("e:") {
        let parts: Vec<&str> = rest.split(':').collect();
        if parts.len() != 3 {
            return Err(format!("'{spec}': expected e:FROM:TO:STEP"));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| format!("'{spec}': cannot parse '{s}' as a number"));
        let (from, to, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || !from.is_finite() || !to.is_finite() || to < from {
            return Err(format!("'{spec}': need FROM <= TO and STEP > 0"));
        }
        let count = ((to - from) / step + 1e-9).floor() as usize + 1;
        if count > 1000 {
            return Err(format!("'{spec}': more than 1000 grid points"));
        }
        (0..count).map(|i| (from + i as f64 * step).exp()).collect()
    } else {
        spec.split(',')
            .map(|s| s.trim().parse::<f64>().map_err(|_| format!("'{spec}': cannot parse '{s}' as a number")))
            .collect::<Result<Vec<_>, _>>()?
    };
    if values.is_empty() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(format!("'{spec}': smoothing parameters must be finite and nonnegative"));
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_grid() {
        let g = parse_grid("e:-5:5:1").unwrap();
        assert_eq!(g.len(), 11);
        for (i, v) in g.iter().enumerate() {
            assert_eq!(*v, (i as f64 - 5.0).exp());
        }
        assert_eq!(parse_grid("e:0:1:0.25").unwrap().len(), 5);
    }

    #[test]
    fn explicit_list() {
        assert_eq!(parse_grid("0.5, 2,10").unwrap(), vec![0.5, 2.0, 10.0]);
        assert_eq!(parse_grid("0").unwrap(), vec![0.0]);
    }

    #[test]
    fn malformed_specs() {
        for bad in ["", "e:1:0:1", "e:0:1", "e:0:1:0", "a,b", "-1", "e:0:1:x"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }
}
