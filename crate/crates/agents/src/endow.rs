use lobsim_core::types::{Cash, Price};
use rand::Rng;
use rand_distr::{Distribution, Gamma};

#[derive(Debug, Clone, PartialEq)]
pub struct Endowment {
    pub shares: Vec<u64>,
    /// Each trader's cash equals the value of their shares at the initial price.
    pub cash: Vec<Cash>,
}

/// Split `total` shares among `n` traders with symmetric Dirichlet(`alpha`)
/// proportions, drawn as normalized Gamma(`alpha`, 1) variates. Rounding uses
/// largest remainders so the split is exact; every trader gets at least one
/// share, taken from the largest holders.
pub fn endow<R: Rng + ?Sized>(n: usize, alpha: f64, total: u64, p0: Price, rng: &mut R) -> Endowment {
    assert!(n >= 1 && total >= n as u64, "need at least one share per trader");
    let gamma = Gamma::new(alpha, 1.0).expect("alpha must be positive");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if !(sum > 0.0) {
        // Every draw underflowed (tiny alpha); fall back to equal weights.
        draws = vec![1.0; n];
    }
    let sum: f64 = draws.iter().sum();
    let exact: Vec<f64> = draws.iter().map(|g| g / sum * total as f64).collect();
    let mut shares: Vec<u64> = exact.iter().map(|x| x.floor() as u64).collect();
    let assigned: u64 = shares.iter().sum();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &i in order.iter().take((total - assigned) as usize) {
        shares[i] += 1;
    }
    for i in 0..n {
        if shares[i] == 0 {
            let richest = (0..n).max_by_key(|&j| (shares[j], std::cmp::Reverse(j))).expect("n >= 1");
            shares[richest] -= 1;
            shares[i] = 1;
        }
    }
    let cash = shares.iter().map(|&s| p0.notional(s)).collect();
    Endowment { shares, cash }
}
