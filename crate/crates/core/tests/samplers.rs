//! Cross-sampler agreement on randomized scalar systems.

use probit_sun::gauss::TmvnConfig;
use probit_sun::model::simulate;
use probit_sun::samplers::{bootstrap_pf, filtering_sampler, optimal_pf, rb_pf, PfConfig};
use probit_sun::{rng, ModelSpec};
use rand::Rng;

#[test]
fn particle_filters_agree_with_exact_sampler() {
    let r = 4000;
    let cfg = PfConfig::with_r(r);
    let mut worst = 0.0f64;
    for k in 0..4u64 {
        let mut g = rng::substream(11, k);
        let spec = ModelSpec::scalar(
            g.random_range(3..=10),
            g.random_range(-0.5..0.5),
            g.random_range(0.5..3.0),
            g.random_range(0.05..1.0),
            g.random_range(0.5..1.5),
            g.random_range(0.7..1.0),
            g.random_range(0.5..2.0),
        );
        let (_, y) = simulate(&spec, k).unwrap();
        let t = spec.n;
        let exact = filtering_sampler(&spec, &y, t, 20_000, k, &TmvnConfig::default()).unwrap().moments();
        let opf = &optimal_pf(&spec, &y, &cfg, k).unwrap().clouds[t - 1];
        let bpf = &bootstrap_pf(&spec, &y, &cfg, k).unwrap().clouds[t - 1];
        let rb = rb_pf(&spec, &y, &cfg, k).unwrap()[t - 1].draw(k).unwrap();
        for c in [opf, bpf, &rb] {
            let se = (exact.mean_se[0].powi(2) + c.mean_se()[0].powi(2)).sqrt();
            worst = worst.max((c.mean()[0] - exact.mean[0]).abs() / se);
        }
    }
    assert!(worst <= 3.5, "largest standardized gap {worst}");
}
