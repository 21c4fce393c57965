//! Scores, normalizer, marginals and Viterbi decoding of a linear-chain CRF,
//! with and without the BIOES transition mask.

use ndarray::{array, Array1, Array2};
use tmn::tagger::crf::CrfScores;
use tmn::tagger::TagSet;

fn main() {
    let tagset = TagSet::new(vec!["PER".into()]);
    let k = tagset.len();
    let labels: Vec<String> = (0..k).map(|i| tagset.tag(i).to_string()).collect();
    println!("tags {labels:?}");
    // emissions favour I-PER on the first token, which BIOES forbids
    let e: Array2<f64> = array![
        [0.0, 0.5, 2.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 1.5, 0.0],
        [1.0, 0.0, 0.0, 0.0, 0.2]
    ];
    let trans = Array2::zeros((k, k));
    let start = Array1::zeros(k);
    let end = Array1::zeros(k);
    let mask = tagset.bioes_mask();
    for (name, m) in [("free", None), ("masked", Some(&mask))] {
        let s = CrfScores::new(e.view(), trans.view(), start.view(), end.view(), m);
        let (path, score) = s.viterbi();
        let tags: Vec<String> = path.iter().map(|&i| tagset.tag(i).to_string()).collect();
        let marg = s.marginals();
        println!("{name}: best {tags:?} score {score:.3} log Z {:.3}", s.log_partition());
        println!("  P(y_0) {:.3?}", marg.unary.row(0).to_vec());
    }
}
