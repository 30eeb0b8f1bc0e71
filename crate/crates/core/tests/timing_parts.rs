use std::time::Instant;
use japlab_core::gen::{generate, GeneratorConfig};
use japlab_core::graph::DegreeFeatures;
use japlab_core::qnet::*;
use ndarray::Array2;

#[test]
fn timing_parts() {
    let mut c = GeneratorConfig::erdos_renyi(30, 5, 0.10, 7);
    c.p_select = 0.666;
    let g = generate(&c).unwrap();
    let params = QNetworkParams::init(1);
    let n = 5000;
    // degree features alone
    let t = Instant::now();
    let mut acc = 0.0;
    for _ in 0..n { let DegreeFeatures{people, jobs} = g.degree_features(); acc += people[[0,0]] + jobs[[0,0]]; }
    eprintln!("degree_features: {:.1} us", t.elapsed().as_secs_f64()/n as f64*1e6);
    // single cae module forward (module 0)
    let f = g.degree_features();
    let t = Instant::now();
    for _ in 0..n {
        let (mu, nu) = cae_forward(&g, &f.people, &f.jobs, &params.modules[0]).unwrap();
        acc += mu[[0,0]] + nu[[0,0]];
    }
    eprintln!("cae module0 (2->16): {:.1} us", t.elapsed().as_secs_f64()/n as f64*1e6);
    // raw gemm cost
    let h: Array2<f64> = Array2::from_shape_fn((35, 16), |(i,j)| (i+j) as f64 * 0.01);
    let w: Array2<f64> = Array2::from_shape_fn((16, 16), |(i,j)| (i as f64-j as f64) * 0.01);
    let t = Instant::now();
    for _ in 0..n { acc += h.dot(&w)[[0,0]]; }
    eprintln!("gemm 35x16x16: {:.2} us", t.elapsed().as_secs_f64()/n as f64*1e6);
    // tanh cost
    let t = Instant::now();
    let mut x = 0.3f64;
    for _ in 0..n*1120 { x = (x * 1.0000001).tanh() + 0.3; }
    eprintln!("1120 tanh: {:.1} us (x {x})", t.elapsed().as_secs_f64()/n as f64*1e6);
    eprintln!("acc {acc}");
}
