use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::StatsError;

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // Positions i..j (0-based) hold ranks i+1..=j.
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value of a correlation via `t = r·sqrt((n-2)/(1-r²))` on `n - 2` df.
fn t_test_p(rho: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    if rho.abs() >= 1.0 {
        return 0.0;
    }
    let t = rho * (df / (1.0 - rho * rho)).sqrt();
    2.0 * StudentsT::new(0.0, 1.0, df).expect("df > 0").sf(t.abs())
}

/// Spearman's rho and its p-value. `None` when either input is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<Option<(f64, f64)>, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch("y".into()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFewObservations { n: x.len(), p: 2 });
    }
    Ok(pearson(&average_ranks(x), &average_ranks(y)).map(|rho| (rho, t_test_p(rho, x.len()))))
}

/// Symmetric rank-correlation matrix. Entries involving a constant column are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpearmanMatrix {
    pub names: Vec<String>,
    pub n: usize,
    pub rho: Vec<Vec<Option<f64>>>,
    pub p_value: Vec<Vec<Option<f64>>>,
}

pub fn spearman_matrix(columns: &[(String, Vec<f64>)]) -> Result<SpearmanMatrix, StatsError> {
    let n = columns.first().map_or(0, |(_, c)| c.len());
    for (name, c) in columns {
        if c.len() != n {
            return Err(StatsError::LengthMismatch(name.clone()));
        }
    }
    if n < 3 {
        return Err(StatsError::TooFewObservations { n, p: 2 });
    }
    let ranks: Vec<Vec<f64>> = columns.iter().map(|(_, c)| average_ranks(c)).collect();
    let constant: Vec<bool> = ranks.iter().map(|r| r.iter().all(|&v| v == r[0])).collect();

    let k = columns.len();
    let mut rho = vec![vec![None; k]; k];
    let mut p_value = vec![vec![None; k]; k];
    for i in 0..k {
        if !constant[i] {
            rho[i][i] = Some(1.0);
            p_value[i][i] = Some(0.0);
        }
        for j in 0..i {
            if let Some(r) = pearson(&ranks[i], &ranks[j]) {
                let p = t_test_p(r, n);
                rho[i][j] = Some(r);
                rho[j][i] = Some(r);
                p_value[i][j] = Some(p);
                p_value[j][i] = Some(p);
            }
        }
    }
    Ok(SpearmanMatrix {
        names: columns.iter().map(|(n, _)| n.clone()).collect(),
        n,
        rho,
        p_value,
    })
}
