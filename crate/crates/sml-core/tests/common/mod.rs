#![allow(dead_code)]

use sml_core::graph::CombinationMatrix;

/// Dense Perron solve for small matrices: (A - I) pi = 0 with the last
/// equation replaced by the sum-one constraint, Gaussian elimination with
/// partial pivoting.
pub fn dense_perron(matrix: &CombinationMatrix) -> Vec<f64> {
    let k = matrix.num_agents();
    let mut m = vec![vec![0.0f64; k + 1]; k];
    for r in 0..k {
        for c in 0..k {
            m[r][c] = matrix.weight(r, c) - if r == c { 1.0 } else { 0.0 };
        }
    }
    for c in 0..k {
        m[k - 1][c] = 1.0;
    }
    m[k - 1][k] = 1.0;

    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let p = m[col][col];
        assert!(p.abs() > 1e-13, "singular system in dense Perron solve");
        for r in 0..k {
            if r != col {
                let f = m[r][col] / p;
                for c in col..=k {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    (0..k).map(|r| m[r][k] / m[r][r]).collect()
}
