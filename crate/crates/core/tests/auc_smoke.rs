use coda::algorithms::{coda_primal, RunOptions};
use coda::problems::{make_auc_toy, AucToySpec};
use coda::types::{make_rng, Stream};
use coda::{AlgoConfig, Problem};

#[test]
fn coda_primal_learns_separable_classes() {
    let spec = AucToySpec { n: 500, d: 2, imratio: 0.1, ..Default::default() };
    let p = make_auc_toy(&spec, &mut make_rng(1, Stream::Problem as u64)).unwrap();
    let config = AlgoConfig { eta_x: 0.05, eta_y: 0.05, t_inner: 2000, seed: 3, ..Default::default() };
    let opts = RunOptions { measure_every: 2000, keep_points: true, ..Default::default() };
    let res = coda_primal(&p, &config, &opts).unwrap();
    let start = res.points.first().unwrap();
    let last = res.points.last().unwrap();
    let w = last.x.rows(0, 2).into_owned();
    let auc = p.train_auc(&w);
    println!("AUC {:.4} -> {auc:.4}", p.train_auc(&start.x.rows(0, 2).into_owned()));
    assert!(auc >= 0.95, "training AUC {auc}");
    assert_eq!(p.meta().d_x, 4);
}
