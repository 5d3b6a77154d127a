mod common;

use polymatch::feature::Block;
use polymatch::gradcheck::relative_error;
use polymatch::{build_feature, feature_jacobian, Degree, FeatureConfig, RepresentationPair};
use proptest::prelude::*;

use common::{brute_interaction, brute_magnitude};

fn pair(u: &[f64], v: &[f64]) -> RepresentationPair {
    RepresentationPair::new(u.to_vec(), v.to_vec()).unwrap()
}

fn central(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn vectors(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (
        proptest::collection::vec(-2.0f64..2.0, d),
        proptest::collection::vec(-2.0f64..2.0, d),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn jacobian_matches_central_differences(
        (u, v) in (1usize..6).prop_flat_map(vectors),
        degree in prop::sample::select(Degree::ALL.to_vec()),
        eta in 0.1f64..4.0,
    ) {
        let cfg = FeatureConfig::new(degree, eta).unwrap().learnable();
        let jac = feature_jacobian(&pair(&u, &v), &cfg);
        let d = u.len();
        let h = 1e-5;
        for i in 0..d {
            let kink = (u[i] - v[i]).abs() < 1e-4;
            for block in Block::ALL {
                if kink && block == Block::AbsDiff {
                    continue;
                }
                let k = block as usize * d + i;
                let fu = |x: f64| {
                    let mut w = u.clone();
                    w[i] = x;
                    build_feature(&pair(&w, &v), &cfg).values()[k]
                };
                let fv = |x: f64| {
                    let mut w = v.clone();
                    w[i] = x;
                    build_feature(&pair(&u, &w), &cfg).values()[k]
                };
                let du = jac.d_u.block(block)[i];
                let dv = jac.d_v.block(block)[i];
                prop_assert!(relative_error(du, central(fu, u[i], h), 1e-6) < 1e-6, "du {:?} {}", block, i);
                prop_assert!(relative_error(dv, central(fv, v[i], h), 1e-6) < 1e-6, "dv {:?} {}", block, i);
            }
            let fe = |e: f64| build_feature(&pair(&u, &v), &cfg.with_eta(e)).values()[3 * d + i];
            let de = jac.d_eta.as_ref().unwrap()[3 * d + i];
            prop_assert!(relative_error(de, central(fe, eta, h), 1e-6) < 1e-6);
        }
    }

    #[test]
    fn interaction_block_matches_enumerator(
        (u, v) in (1usize..32).prop_flat_map(vectors),
        degree in prop::sample::select(Degree::ALL.to_vec()),
        eta in 0.01f64..64.0,
    ) {
        let f = build_feature(&pair(&u, &v), &FeatureConfig::new(degree, eta).unwrap());
        for (i, got) in f.block(Block::Interaction).iter().enumerate() {
            let k = degree.as_u8();
            let expected = brute_interaction(u[i], v[i], eta, k);
            let scale = brute_magnitude(u[i], v[i], eta, k).max(f64::MIN_POSITIVE);
            prop_assert!((got - expected).abs() / scale < 1e-12);
        }
    }
}
