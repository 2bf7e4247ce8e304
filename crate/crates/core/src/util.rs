/// Fixed 12-significant-digit rendering used by every CSV writer.
pub fn fmt12(x: f64) -> String {
    if x == 0.0 {
        return "0.00000000000e0".to_string();
    }
    format!("{x:.11e}")
}

/// Parse an inclusive range like `2..6` or a comma list like `2,4,6`.
pub fn parse_usize_set(s: &str) -> Option<Vec<usize>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (usize, usize) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        if a > b {
            return None;
        }
        return Some((a..=b).collect());
    }
    s.split(',').map(|t| t.trim().parse().ok()).collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_digits() {
        assert_eq!(fmt12(0.75), "7.50000000000e-1");
        assert_eq!(fmt12(-0.0), "0.00000000000e0");
        assert_eq!(fmt12(1.0 / 3.0), "3.33333333333e-1");
    }

    #[test]
    fn quadrature_is_exact_for_polynomials() {
        let (x, w) = gauss_legendre(12);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(22)).sum();
        assert!((s - 2.0 / 23.0).abs() < 1e-14);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_usize_set("2..4"), Some(vec![2, 3, 4]));
        assert_eq!(parse_usize_set("2"), Some(vec![2]));
        assert_eq!(parse_usize_set("3,5"), Some(vec![3, 5]));
        assert_eq!(parse_usize_set("5..2"), None);
    }
}
