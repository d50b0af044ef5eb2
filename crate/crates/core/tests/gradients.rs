mod common;

use common::{max_relative_error, Instance, TERMS};
use xtra::objectives::TermWeights;
use xtra::Lang;

#[test]
fn analytic_gradients_match_central_differences() {
    for seed in 0..20 {
        let inst = Instance::random(seed);
        for (name, w) in TERMS {
            let w = w();
            let a = inst.analytic(&w);
            let n = inst.numeric(&w, 1e-5);
            let (err, tensor) = max_relative_error(&a, &n, 1e-6);
            assert!(err < 1e-4, "seed {seed} term {name}: {err:e} on {tensor}");
        }
    }
}

#[test]
fn reconstruction_gradient_is_language_isolated() {
    let mut inst = Instance::random(3);
    inst.docs.retain(|(l, _)| *l == Lang::L1);
    let b = inst.docs.len();
    inst.embeddings = inst.embeddings.slice(ndarray::s![..b, ..]).to_owned();
    inst.clusters.truncate(b);
    inst.noise.truncate(b);
    let g = inst.analytic(&TermWeights::only_tm());
    assert!(g.input[1].weight.iter().all(|&x| x == 0.0));
    assert!(g.decoder[1].iter().all(|&x| x == 0.0));
    assert!(g.decoder[0].iter().any(|&x| x != 0.0));
}
