use aloha_gossip::geometry::{sample_binomial, sample_ppp};
use aloha_gossip::harness::{DeploymentSpec, Population};
use aloha_gossip::rng::substream;
use aloha_gossip::{BoundaryMode, Window};

#[test]
fn ppp_counts_are_poisson() {
    let window = Window::new(100.0, BoundaryMode::Open).unwrap();
    let mut rng = substream(1, &[]);
    let draws = 10_000;
    let counts: Vec<f64> = (0..draws)
        .map(|_| sample_ppp(0.01, &window, &mut rng).unwrap().len() as f64)
        .collect();
    let mean = counts.iter().sum::<f64>() / draws as f64;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    // Poisson(100): sd of the sample mean is 0.1; sd of the sample variance ≈ 100·sqrt(2/n).
    assert!((mean - 100.0).abs() < 3.0 * 0.1, "mean {mean}");
    assert!((var - 100.0).abs() < 3.0 * 100.0 * (2.0 / draws as f64).sqrt() + 1.0, "var {var}");
}

/// One-sample Kolmogorov-Smirnov statistic against Uniform(0, side).
fn ks_uniform(mut xs: Vec<f64>, side: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = x / side;
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

#[test]
fn binomial_marginals_pass_ks_at_one_percent() {
    let side = 37.0;
    let window = Window::new(side, BoundaryMode::Torus).unwrap();
    let pts = sample_binomial(100_000, &window, &mut substream(2, &[])).unwrap();
    let crit = 1.628 / (pts.len() as f64).sqrt();
    let dx = ks_uniform(pts.iter().map(|p| p.x).collect(), side);
    let dy = ks_uniform(pts.iter().map(|p| p.y).collect(), side);
    assert!(dx < crit && dy < crit, "D = {dx}, {dy}, critical {crit}");
}

#[test]
fn binomial_intensity_is_count_over_area() {
    let spec = DeploymentSpec {
        population: Population::Binomial { n: 200 },
        side: 100.0,
        range: 10.0,
        boundary: BoundaryMode::Open,
    };
    assert!((spec.intensity() - 0.02).abs() < 1e-15);
    let d = spec.sample(&mut substream(3, &[])).unwrap();
    assert_eq!(d.len(), 200);
    for i in 0..d.len() {
        for &j in d.neighbors(i) {
            assert!(d.neighbors(j).contains(&i));
            assert!(j != i && d.distance(i, j) <= 10.0);
        }
    }
    let stats = d.stats();
    let r_eff = stats.r_eff.unwrap();
    assert!(r_eff > 0.0 && r_eff <= 10.0);
    // Uniform pairs inside a disk of radius R have mean squared distance R²/2.
    assert!((r_eff - 10.0 / 2f64.sqrt()).abs() < 0.5, "r_eff {r_eff}");
}
