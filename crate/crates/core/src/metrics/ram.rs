use super::MetricsError;

/// Least-squares slope of used bytes against nym count.
pub fn per_nym_ram(points: &[(u32, u64)]) -> Result<f64, MetricsError> {
    if points.len() < 2 {
        return Err(MetricsError::InsufficientData);
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1 as f64).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for &(x, y) in points {
        let dx = x as f64 - mx;
        sxy += dx * (y as f64 - my);
        sxx += dx * dx;
    }
    if sxx == 0.0 {
        return Err(MetricsError::InsufficientData);
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let s = 608u64 << 20;
        let pts: Vec<(u32, u64)> = (1..=8).map(|n| (n, 5_000_000 + s * n as u64)).collect();
        let est = per_nym_ram(&pts).unwrap();
        assert!((est - s as f64).abs() / s as f64 <= 1e-9);
        assert_eq!(per_nym_ram(&pts[..1]), Err(MetricsError::InsufficientData));
        assert_eq!(per_nym_ram(&[(2, 1), (2, 5)]), Err(MetricsError::InsufficientData));
    }
}
