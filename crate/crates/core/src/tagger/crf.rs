//! Linear-chain CRF scoring, partition function, marginals and Viterbi.
//!
//! Scores are kept in log space throughout. The start and stop states are
//! implicit: `start[j]` scores the transition from start into tag `j` and
//! `end[j]` the transition from `j` into stop, so transitions into start or
//! out of stop cannot be expressed at all.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::autodiff::log_sum_exp;

/// Additive constraint mask: `0.0` for allowed moves, `-∞` for forbidden.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfMask {
    pub transitions: Array2<f64>,
    pub start: Array1<f64>,
    pub end: Array1<f64>,
}

impl CrfMask {
    pub fn allow_all(k: usize) -> Self {
        Self {
            transitions: Array2::zeros((k, k)),
            start: Array1::zeros(k),
            end: Array1::zeros(k),
        }
    }
}

/// Borrowed view of all scores needed to evaluate one sequence.
#[derive(Debug, Clone, Copy)]
pub struct CrfScores<'a> {
    emissions: ArrayView2<'a, f64>,
    transitions: ArrayView2<'a, f64>,
    start: ArrayView1<'a, f64>,
    end: ArrayView1<'a, f64>,
    mask: Option<&'a CrfMask>,
}

/// Posterior marginals and the log partition function.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    /// `P(y_t = j)`, shape `n × K`.
    pub unary: Array2<f64>,
    /// `Σ_t P(y_{t-1} = i, y_t = j)`, shape `K × K`.
    pub pairwise: Array2<f64>,
}

impl<'a> CrfScores<'a> {
    pub fn new(
        emissions: ArrayView2<'a, f64>,
        transitions: ArrayView2<'a, f64>,
        start: ArrayView1<'a, f64>,
        end: ArrayView1<'a, f64>,
        mask: Option<&'a CrfMask>,
    ) -> Self {
        let k = emissions.ncols();
        assert!(emissions.nrows() > 0, "CRF over an empty sequence");
        assert_eq!(transitions.dim(), (k, k));
        assert_eq!(start.len(), k);
        assert_eq!(end.len(), k);
        Self {
            emissions,
            transitions,
            start,
            end,
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.emissions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_tags(&self) -> usize {
        self.emissions.ncols()
    }

    #[inline]
    fn trans(&self, i: usize, j: usize) -> f64 {
        let t = self.transitions[[i, j]];
        match self.mask {
            Some(m) => t + m.transitions[[i, j]],
            None => t,
        }
    }

    #[inline]
    fn start(&self, j: usize) -> f64 {
        self.start[j] + self.mask.map_or(0.0, |m| m.start[j])
    }

    #[inline]
    fn end(&self, j: usize) -> f64 {
        self.end[j] + self.mask.map_or(0.0, |m| m.end[j])
    }

    /// Unnormalised log score of one tag path.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        assert_eq!(path.len(), self.len());
        let mut s = self.start(path[0]) + self.emissions[[0, path[0]]];
        for t in 1..path.len() {
            s += self.trans(path[t - 1], path[t]) + self.emissions[[t, path[t]]];
        }
        s + self.end(path[path.len() - 1])
    }

    fn forward(&self) -> Array2<f64> {
        let (n, k) = self.emissions.dim();
        let mut alpha = Array2::zeros((n, k));
        for j in 0..k {
            alpha[[0, j]] = self.start(j) + self.emissions[[0, j]];
        }
        for t in 1..n {
            for j in 0..k {
                let lse = log_sum_exp((0..k).map(|i| alpha[[t - 1, i]] + self.trans(i, j)));
                alpha[[t, j]] = lse + self.emissions[[t, j]];
            }
        }
        alpha
    }

    fn backward(&self) -> Array2<f64> {
        let (n, k) = self.emissions.dim();
        let mut beta = Array2::zeros((n, k));
        for i in 0..k {
            beta[[n - 1, i]] = self.end(i);
        }
        for t in (0..n - 1).rev() {
            for i in 0..k {
                beta[[t, i]] = log_sum_exp(
                    (0..k).map(|j| self.trans(i, j) + self.emissions[[t + 1, j]] + beta[[t + 1, j]]),
                );
            }
        }
        beta
    }

    /// `log Z`, summed over every tag path with the forward algorithm.
    pub fn log_partition(&self) -> f64 {
        let alpha = self.forward();
        let n = self.len();
        log_sum_exp((0..self.num_tags()).map(|j| alpha[[n - 1, j]] + self.end(j)))
    }

    pub fn nll(&self, gold: &[usize]) -> f64 {
        self.log_partition() - self.path_score(gold)
    }

    pub fn marginals(&self) -> Marginals {
        let (n, k) = self.emissions.dim();
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = log_sum_exp((0..k).map(|j| alpha[[n - 1, j]] + self.end(j)));
        let mut unary = Array2::zeros((n, k));
        for t in 0..n {
            for j in 0..k {
                unary[[t, j]] = (alpha[[t, j]] + beta[[t, j]] - log_z).exp();
            }
        }
        let mut pairwise = Array2::zeros((k, k));
        for t in 1..n {
            for i in 0..k {
                for j in 0..k {
                    let lp = alpha[[t - 1, i]] + self.trans(i, j) + self.emissions[[t, j]] + beta[[t, j]]
                        - log_z;
                    pairwise[[i, j]] += lp.exp();
                }
            }
        }
        Marginals {
            log_z,
            unary,
            pairwise,
        }
    }

    /// Highest-scoring path and its score. Ties go to the lowest tag index,
    /// both for the final tag and at every backpointer.
    pub fn viterbi(&self) -> (Vec<usize>, f64) {
        let (n, k) = self.emissions.dim();
        let mut delta = Array2::from_elem((n, k), f64::NEG_INFINITY);
        let mut back = Array2::<usize>::zeros((n, k));
        for j in 0..k {
            delta[[0, j]] = self.start(j) + self.emissions[[0, j]];
        }
        for t in 1..n {
            for j in 0..k {
                let mut best = 0;
                let mut best_score = delta[[t - 1, 0]] + self.trans(0, j);
                for i in 1..k {
                    let s = delta[[t - 1, i]] + self.trans(i, j);
                    if s > best_score {
                        best = i;
                        best_score = s;
                    }
                }
                delta[[t, j]] = best_score + self.emissions[[t, j]];
                back[[t, j]] = best;
            }
        }
        let mut last = 0;
        let mut best_score = delta[[n - 1, 0]] + self.end(0);
        for j in 1..k {
            let s = delta[[n - 1, j]] + self.end(j);
            if s > best_score {
                last = j;
                best_score = s;
            }
        }
        let mut path = vec![0; n];
        path[n - 1] = last;
        for t in (1..n).rev() {
            path[t - 1] = back[[t, path[t]]];
        }
        (path, best_score)
    }
}
