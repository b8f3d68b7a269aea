use nalgebra::{DMatrix, SymmetricEigen};

/// Nodes and weights of a one-dimensional Gaussian rule.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub–Welsch: eigen-decomposition of the symmetric Jacobi matrix.
fn golub_welsch(n: usize, off_diagonal: impl Fn(usize) -> f64, mu0: f64) -> QuadratureRule {
    let mut jacobi = DMatrix::zeros(n, n);
    for i in 1..n {
        let b = off_diagonal(i);
        jacobi[(i - 1, i)] = b;
        jacobi[(i, i - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], mu0 * eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Symmetrize against round-off in the eigen-solver.
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (pairs[j].0 - pairs[i].0);
        let w = 0.5 * (pairs[i].1 + pairs[j].1);
        pairs[i] = (-x, w);
        pairs[j] = (x, w);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    QuadratureRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss–Hermite rule for ∫ g(x) e^{-x²} dx.
pub fn gauss_hermite(n: usize) -> QuadratureRule {
    golub_welsch(n, |i| (i as f64 / 2.0).sqrt(), std::f64::consts::PI.sqrt())
}

/// Gauss–Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> QuadratureRule {
    golub_welsch(
        n,
        |i| {
            let i = i as f64;
            i / (4.0 * i * i - 1.0).sqrt()
        },
        2.0,
    )
}
