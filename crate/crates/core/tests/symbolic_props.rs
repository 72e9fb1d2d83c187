use proptest::prelude::*;
use prose_core::ode_dict::{catalog, family, sample_instance, SamplingConfig};
use prose_core::symbolic::{
    corrupt, decode_float, encode_float, expression_error, from_polish, to_polish, CorruptionConfig, Expr, SystemExpr,
    TokenSeq, Vocabulary,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_expr(dim: usize) -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0..dim).prop_map(Expr::var),
        (-50.0f64..50.0).prop_map(Expr::Const),
        Just(Expr::Placeholder),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::add(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::sub(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::mul(a, b)),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::div(a, b)),
            (inner.clone(), 1u8..4).prop_map(|(a, k)| Expr::pow(a, k as f64)),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.prop_map(Expr::neg),
        ]
    })
}

fn arb_system() -> impl Strategy<Value = SystemExpr> {
    (1usize..=5).prop_flat_map(|d| proptest::collection::vec(arb_expr(d), d).prop_map(|c| SystemExpr::new(c).unwrap()))
}

/// Same tree shape and leaves, constants equal up to relative `tol`.
fn same_up_to_quantization(a: &Expr, b: &Expr, tol: f64) -> bool {
    match (a, b) {
        (Expr::Const(x), Expr::Const(y)) => (x - y).abs() <= tol * x.abs(),
        (Expr::Var(i), Expr::Var(j)) => i == j,
        (Expr::Placeholder, Expr::Placeholder) => true,
        (Expr::Unary(o, x), Expr::Unary(p, y)) => o == p && same_up_to_quantization(x, y, tol),
        (Expr::Binary(o, x1, x2), Expr::Binary(p, y1, y2)) => {
            o == p && same_up_to_quantization(x1, y1, tol) && same_up_to_quantization(x2, y2, tol)
        }
        _ => false,
    }
}

proptest! {
    #[test]
    fn polish_roundtrip(sys in arb_system()) {
        let vocab = Vocabulary::default();
        let toks = to_polish(&sys, &vocab).unwrap();
        let back = from_polish(toks.ids(), &vocab).unwrap();
        prop_assert_eq!(back.dim(), sys.dim());
        for (a, b) in sys.components().iter().zip(back.components()) {
            prop_assert!(same_up_to_quantization(a, b, 5e-3), "{} vs {}", a, b);
        }
        // Re-encoding a decoded sequence is a fixed point.
        prop_assert_eq!(to_polish(&back, &vocab).unwrap(), toks);
    }

    #[test]
    fn word_string_roundtrip(sys in arb_system()) {
        let vocab = Vocabulary::default();
        let toks = to_polish(&sys, &vocab).unwrap();
        prop_assert_eq!(TokenSeq::from_words(&vocab, &toks.to_words(&vocab)).unwrap(), toks);
    }

    #[test]
    fn float_triplets_are_a_fixed_point(x in -1e6f64..1e6) {
        let t = encode_float(x, 3).unwrap();
        let q = t.value();
        prop_assert_eq!(encode_float(q, 3).unwrap(), t);
        prop_assert_eq!(decode_float(&t.words()).unwrap(), q);
    }

    #[test]
    fn scaled_map_error_is_exact(c in 0.01f64..10.0, seed in any::<u64>()) {
        let f = family("lorenz3d").unwrap().base_system();
        let g = SystemExpr::new(
            f.components().iter().map(|e| Expr::mul(Expr::Const(c), e.clone())).collect(),
        ).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = expression_error(&f, &g, 50, 5.0, &mut rng).unwrap();
        prop_assert!((e - (c - 1.0).abs()).abs() < 1e-12, "{} vs {}", e, c);
    }

    #[test]
    fn corruption_off_is_identity(sys in arb_system(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        prop_assert_eq!(corrupt(&sys, &CorruptionConfig::NONE, &mut rng).unwrap(), sys);
    }
}

#[test]
fn float_encoding_log_uniform_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10_000 {
        let x = 10f64.powf(rng.random_range(-90.0..90.0)) * if rng.random() { 1.0 } else { -1.0 };
        let t = encode_float(x, 3).unwrap();
        assert!((100..1000).contains(&t.mantissa), "{x}: {t:?}");
        let back = decode_float(&t.words()).unwrap();
        assert!(((back - x) / x).abs() <= 5e-3, "{x} -> {back}");
    }
    assert!(encode_float(1e120, 3).is_err());
    assert!(encode_float(1e-120, 3).is_err());
    assert!(encode_float(f64::NAN, 3).is_err());
}

#[test]
fn catalog_instances_roundtrip() {
    let vocab = Vocabulary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for fam in catalog() {
        for _ in 0..20 {
            let (sys, _) = sample_instance(fam, &SamplingConfig::default(), &mut rng);
            let back = from_polish(to_polish(&sys, &vocab).unwrap().ids(), &vocab).unwrap();
            for (a, b) in sys.components().iter().zip(back.components()) {
                assert!(same_up_to_quantization(a, b, 5e-3), "{}: {a} vs {b}", fam.name);
            }
        }
    }
}

// Id layout of the default vocabulary, restated independently of `Word`.
const SEP: u32 = 4;
const OPS: std::ops::Range<u32> = 5..13;
const SIGNS: std::ops::Range<u32> = 13..15;
const VARS: std::ops::Range<u32> = 15..20;
const EXPS: std::ops::Range<u32> = 20..221;
const MANTS: std::ops::Range<u32> = 221..1221;
const PLACEHOLDER: u32 = 3;

fn arity(id: u32) -> i64 {
    // add sub mul div pow are binary; sin cos neg are unary.
    if id - OPS.start < 5 {
        2
    } else {
        1
    }
}

/// Forward arity counter: each component needs exactly one complete tree.
fn oracle_valid(ids: &[u32]) -> bool {
    let mut need: i64 = 1;
    let mut components = 1usize;
    let mut max_var = None;
    let mut i = 0;
    while i < ids.len() {
        let id = ids[i];
        if id == SEP {
            if need != 0 {
                return false;
            }
            need = 1;
            components += 1;
            i += 1;
            continue;
        }
        if need == 0 {
            return false;
        }
        if OPS.contains(&id) {
            need += arity(id) - 1;
        } else if VARS.contains(&id) {
            max_var = max_var.max(Some(id - VARS.start));
            need -= 1;
        } else if id == PLACEHOLDER {
            need -= 1;
        } else if SIGNS.contains(&id) {
            let ok = i + 2 < ids.len() && MANTS.contains(&ids[i + 1]) && EXPS.contains(&ids[i + 2]);
            if !ok {
                return false;
            }
            need -= 1;
            i += 2;
        } else {
            return false;
        }
        i += 1;
    }
    need == 0 && components <= 5 && max_var.is_none_or(|v| (v as usize) < components)
}

fn random_tokens(rng: &mut ChaCha8Rng) -> Vec<u32> {
    let len = rng.random_range(1..16);
    let mut out = Vec::new();
    while out.len() < len {
        match rng.random_range(0..100) {
            0..30 => out.push(rng.random_range(OPS)),
            30..55 => out.push(rng.random_range(VARS.start..VARS.start + 3)),
            55..60 => out.push(PLACEHOLDER),
            60..80 => {
                out.push(rng.random_range(SIGNS));
                out.push(rng.random_range(MANTS));
                out.push(rng.random_range(EXPS));
            }
            80..88 => out.push(SEP),
            _ => out.push(rng.random_range(0..1230)),
        }
    }
    out
}

#[test]
fn parser_validity_matches_arity_oracle() {
    let vocab = Vocabulary::default();
    assert_eq!(vocab.len(), 1221);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut parsed, mut oracle) = (0, 0);
    for _ in 0..1000 {
        let ids = random_tokens(&mut rng);
        let p = from_polish(&ids, &vocab).is_ok();
        let o = oracle_valid(&ids);
        assert_eq!(p, o, "{}", TokenSeq(ids.clone()).to_words(&vocab));
        parsed += p as usize;
        oracle += o as usize;
    }
    assert_eq!(parsed, oracle);
    // The generator must exercise both outcomes.
    assert!(parsed > 50 && parsed < 950, "{parsed}");
}

#[test]
fn truncated_tree_is_invalid() {
    let vocab = Vocabulary::default();
    let t = TokenSeq::from_words(&vocab, "add cos mul").unwrap();
    assert!(from_polish(t.ids(), &vocab).is_err());
}

#[test]
fn halvorsen_matches_closed_form() {
    let sys = family("halvorsen").unwrap().system(&[-0.327]);
    let a = -0.327;
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let u: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
        let want = [
            a * u[0] - u[1] - u[2] - 0.25 * u[1] * u[1],
            a * u[1] - u[2] - u[0] - 0.25 * u[2] * u[2],
            a * u[2] - u[0] - u[1] - 0.25 * u[0] * u[0],
        ];
        let got = sys.evaluate(&u).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }
    assert_eq!(sys.components()[0].to_string(), "-0.327*u_1 - u_2 - u_3 - 0.25*u_2^2");
}

#[test]
fn thomas_seed_42_corruption_golden() {
    let vocab = Vocabulary::default();
    let sys = family("thomas").unwrap().base_system();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let c = corrupt(&sys, &CorruptionConfig::UNKNOWN, &mut rng).unwrap();
    assert_eq!(to_polish(&c, &vocab).unwrap().to_words(&vocab), GOLDEN_THOMAS_42);
}

const GOLDEN_THOMAS_42: &str =
    "add sin u_2 mul <PH> u_1 | add sin u_3 mul <PH> u_2 | add sin u_1 add mul <PH> cos u_1 mul <PH> u_3";

fn lorenz_direct(rho: f64, u: &[f64; 3]) -> [f64; 3] {
    [
        10.0 * (u[1] - u[0]),
        u[0] * (rho - u[2]) - u[1],
        u[0] * u[1] - 8.0 / 3.0 * u[2],
    ]
}

#[test]
fn lorenz_rho_shift_matches_monte_carlo_oracle() {
    // Oracle: 10^6 points, closed-form maps, independent generator.
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let n = 1_000_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let u = [
            rng.random_range(-5.0..=5.0),
            rng.random_range(-5.0..=5.0),
            rng.random_range(-5.0..=5.0),
        ];
        let (a, b) = (lorenz_direct(28.0, &u), lorenz_direct(28.5, &u));
        let num = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let den = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = num / den;
        s += r;
        s2 += r * r;
    }
    let mean = s / n as f64;
    let sd = (s2 / n as f64 - mean * mean).sqrt();

    let f = family("lorenz3d").unwrap().system(&[10.0, 8.0 / 3.0, 28.0]);
    let g = family("lorenz3d").unwrap().system(&[10.0, 8.0 / 3.0, 28.5]);
    let m = 2000;
    let est = expression_error(&f, &g, m, 5.0, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let se = sd / (m as f64).sqrt();
    assert!((est - mean).abs() < 2.0 * se, "{est} vs {mean} (se {se})");
}
