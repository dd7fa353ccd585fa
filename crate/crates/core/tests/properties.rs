use proptest::prelude::*;

use glset::config::{parse_config, serialize_config};
use glset::density::{run_density, DensityJob, EstimatorKind, SampleTable};
use glset::expr::ExprFunctional;
use glset::functional::{scaled, Constant, Norm2, Sum, DEFAULT_GRADIENT_FLOOR};
use glset::{build_model, FunctionalOracle, GaussianModel, ModelDescriptor};

const EXPRESSIONS: &[&str] = &[
    "xi(1) * xi(2) + sin(xi(3))",
    "exp(-norm2() / 4)",
    "cos(xi(1)^2) * cos(xi(2))",
    "xi(1)^3 - 2 * xi(2) * xi(3)^2",
    "(1 + norm2())^2 / (2 + xi(1)^2)",
    "-xi(2) + exp(xi(1) / 3) * xi(3)",
];

fn iid(d: usize) -> GaussianModel {
    build_model(&ModelDescriptor::IidGaussian { dim: d }).unwrap()
}

fn expr(src: &str, d: usize) -> FunctionalOracle {
    FunctionalOracle::new(ExprFunctional::parse(src, d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 20, ..ProptestConfig::default() })]

    #[test]
    fn symbolic_gradient_matches_finite_differences(
        which in 0..EXPRESSIONS.len(),
        xi in prop::collection::vec(-2.0f64..2.0, 3),
    ) {
        let f = expr(EXPRESSIONS[which], 3);
        let (mut sym, mut fd) = (vec![0.0; 3], vec![0.0; 3]);
        f.gradient_into(&xi, &mut sym);
        f.fd_gradient(&xi, &mut fd);
        let scale = sym.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for k in 0..3 {
            prop_assert!(
                (sym[k] - fd[k]).abs() <= 1e-6 * scale,
                "{} at {:?}: d{} symbolic {} fd {}", EXPRESSIONS[which], xi, k + 1, sym[k], fd[k]
            );
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn density_is_linear_in_phi(a in -3.0f64..3.0, b in -3.0f64..3.0, seed in 0u64..1000) {
        let model = iid(3);
        let g = FunctionalOracle::new(Norm2);
        let p = expr("exp(-norm2())", 3);
        let q = expr("xi(1)^2", 3);
        let combo = FunctionalOracle::new(Sum::new(vec![(a, p.clone()), (b, q.clone())]));
        let grid = vec![1.0, 2.5, 4.0];
        let run = |phi: &FunctionalOracle| {
            run_density(&DensityJob::new(model.clone(), g.clone(), phi.clone(), grid.clone()).with_samples(20_000, seed))
                .unwrap()
        };
        let (cp, cq, cc) = (run(&p), run(&q), run(&combo));
        for e in 0..2 {
            for (i, r) in grid.iter().enumerate() {
                let want = a * cp[e].estimate[i] + b * cq[e].estimate[i];
                let tol = 1e-9 * (a.abs() * cp[e].estimate[i].abs() + b.abs() * cq[e].estimate[i].abs() + 1e-12);
                prop_assert!((cc[e].estimate[i] - want).abs() <= tol, "estimator {e} r={r}");
            }
        }
    }

    #[test]
    fn constant_scaling_is_exact(c in 0.1f64..10.0, seed in 0u64..1000) {
        let model = iid(2);
        let g = expr("xi(1) + xi(2)^2 / 4", 2);
        let one = FunctionalOracle::new(Constant(1.0));
        let cphi = FunctionalOracle::new(scaled(c, one.clone()));
        let job = |phi: FunctionalOracle| DensityJob::new(model.clone(), g.clone(), phi, vec![0.0, 1.0])
            .with_samples(10_000, seed)
            .with_estimator(EstimatorKind::Divergence);
        let base = run_density(&job(one)).unwrap().remove(0);
        let scaled_curve = run_density(&job(cphi)).unwrap().remove(0);
        for i in 0..2 {
            prop_assert!((scaled_curve.estimate[i] - c * base.estimate[i]).abs() <= 1e-12 * c.max(1.0));
        }
    }

    #[test]
    fn cdf_is_monotone(seed in 0u64..1000, mut rs in prop::collection::vec(-1.0f64..12.0, 2..30)) {
        let one = FunctionalOracle::new(Constant(1.0));
        let t = SampleTable::build(&iid(4), &FunctionalOracle::new(Norm2), &one, 5_000, seed, false, DEFAULT_GRADIENT_FLOOR)
            .unwrap();
        rs.sort_by(f64::total_cmp);
        let values: Vec<f64> = rs.iter().map(|&r| t.cdf(r).value).collect();
        prop_assert!(values.windows(2).all(|w| w[0] <= w[1]), "{values:?}");
        prop_assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

fn config_text(
    n: usize,
    seed: u64,
    from: f64,
    width: f64,
    points: usize,
    bins: usize,
    json_only: bool,
) -> String {
    format!(
        r#"
output_dir = "out"
formats = {formats}
[model]
kind = "kl_brownian"
dim = 6
[functionals]
E = {{ builtin = "bm_endpoint" }}
C = {{ builtin = "clipped", base = "norm2()", cap = 6.5 }}
f = "exp(-norm2() / 2)"
[[jobs]]
name = "d"
kind = "density"
g = "E"
phi = "f"
n = {n}
seed = {seed}
r_grid = {{ from = {from:?}, to = {to:?}, points = {points} }}
[[jobs]]
kind = "disintegrate"
g = "C"
bins = {bins}
binning = "fixed_width"
n = {n}
"#,
        formats = if json_only {
            r#"["json"]"#
        } else {
            r#"["csv", "json"]"#
        },
        to = from + width,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn config_round_trips(
        n in 100usize..1_000_000,
        seed in any::<u32>(),
        from in -5.0f64..5.0,
        width in 0.01f64..10.0,
        points in 2usize..50,
        bins in 2usize..100,
        json_only in any::<bool>(),
    ) {
        let text = config_text(n, u64::from(seed), from, width, points, bins, json_only);
        let parsed = parse_config(&text).unwrap();
        let again = parse_config(&serialize_config(&parsed).unwrap()).unwrap();
        prop_assert_eq!(parsed, again);
    }
}
