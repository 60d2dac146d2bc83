use dualflow::{levy_metric, MonotoneFn};

fn tphi() -> MonotoneFn {
    MonotoneFn::new(
        vec![0.0, 0.36456731044054524, 0.6629881582472986, 0.8884888493196048, 3.5882862167521203],
        vec![0.17701751381629496, 0.6690140837268567, 0.8117915643762486, 0.9727705786051752, 2.0],
        vec![1.3495356161144296, 0.4784433852351008, 0.7138737068318307, 0.3804838962309646],
        0.0,
    )
    .unwrap()
}

fn tpsi() -> MonotoneFn {
    MonotoneFn::new(
        vec![0.0, 0.8848476643792339],
        vec![0.0, 2.0],
        vec![2.225463909030299],
        0.0,
    )
    .unwrap()
}

fn eval_ext(h: &MonotoneFn, x: f64) -> f64 {
    if x < 0.0 { 0.0 } else { h.eval(x) }
}
fn left_limit_ext(h: &MonotoneFn, x: f64) -> f64 {
    if x <= 0.0 { 0.0 } else { h.left_limit(x) }
}

// verbatim copy of the lib's one-sided strict feasibility
fn lib_one_sided(f: &MonotoneFn, g: &MonotoneFn, cap: f64, eps: f64) -> bool {
    let mut pts: Vec<f64> = vec![0.0, cap];
    pts.extend(f.knots().iter().map(|&k| k + eps).filter(|&x| x > 0.0 && x < cap));
    pts.extend(g.knots().iter().copied().filter(|&x| x > 0.0 && x < cap));
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    let h_right = |x: f64| eval_ext(f, x - eps) - eps - g.eval(x);
    let h_left = |x: f64| left_limit_ext(f, x - eps) - eps - g.left_limit(x);
    for w in pts.windows(2) {
        if h_right(w[0]) >= 0.0 || h_left(w[1]) > 0.0 {
            return false;
        }
    }
    h_right(cap) < 0.0
}

#[test]
fn probe() {
    let f = tphi();
    let g = tpsi();
    let cap = 3.5882862167521203_f64;
    println!("lib levy = {}", levy_metric(&f, &g, cap));
    for eps in [0.7273, 0.7273790422676101, 0.7274, 0.73, 0.74, 0.745, 0.7452] {
        let fg = lib_one_sided(&f, &g, cap, eps);
        let gf = lib_one_sided(&g, &f, cap, eps);
        println!("eps {eps}: f->g {fg}, g->f {gf}");
    }
    // where is the witness in g->f at 0.7274?
    let eps = 0.7274;
    let mut pts: Vec<f64> = vec![0.0, cap];
    pts.extend(g.knots().iter().map(|&k| k + eps).filter(|&x| x > 0.0 && x < cap));
    pts.extend(f.knots().iter().copied().filter(|&x| x > 0.0 && x < cap));
    pts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    pts.dedup();
    for &x in &pts {
        let hr = eval_ext(&g, x - eps) - eps - f.eval(x);
        let hl = left_limit_ext(&g, x - eps) - eps - f.left_limit(x);
        println!("x {x}: h_right {hr:+.6}, h_left {hl:+.6}");
    }
}
