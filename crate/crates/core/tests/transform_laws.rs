use gauntlet::tensor::Tensor;
use gauntlet::transforms::{apply, lookup, registry, reset, TransformSpec};
use proptest::prelude::*;

fn image(side: usize, channels: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0f32..=1.0, side * side * channels)
        .prop_map(move |v| Tensor::new(vec![side, side, channels], v).unwrap())
}

fn mnist_like() -> impl Strategy<Value = Tensor> {
    image(28, 1)
}

fn spec(id: &str) -> TransformSpec {
    lookup(id).unwrap()
}

fn chain(ids: &[&str], x: &Tensor) -> Tensor {
    ids.iter().fold(x.clone(), |acc, id| apply(&spec(id), &acc).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reset_inverts_apply_both_ways(x in mnist_like()) {
        let specs = registry(false);
        prop_assert_eq!(specs.len(), 14);
        for s in &specs {
            prop_assert_eq!(&reset(s, &apply(s, &x).unwrap()).unwrap(), &x, "reset after apply: {}", s.id);
            prop_assert_eq!(&apply(s, &reset(s, &x).unwrap()).unwrap(), &x, "apply after reset: {}", s.id);
        }
    }

    #[test]
    fn reversible_specs_permute_pixels(x in image(6, 3)) {
        for s in registry(false) {
            let y = apply(&s, &x).unwrap();
            let mut a = x.data().to_vec();
            let mut b = y.data().to_vec();
            a.sort_by(f32::total_cmp);
            b.sort_by(f32::total_cmp);
            prop_assert_eq!(a, b, "{}", s.id);
            prop_assert_eq!(reset(&s, &y).unwrap(), x.clone());
        }
    }

    #[test]
    fn composition_table(x in mnist_like()) {
        prop_assert_eq!(chain(&["rotate-90"; 4], &x), x.clone());
        prop_assert_eq!(chain(&["rotate-90", "rotate-90"], &x), chain(&["rotate-180"], &x));
        prop_assert_eq!(chain(&["rotate-90", "rotate-180"], &x), chain(&["rotate-270"], &x));
        prop_assert_eq!(chain(&["rotate-90", "rotate-270"], &x), x.clone());
        prop_assert_eq!(chain(&["rotate-180", "rotate-180"], &x), x.clone());
        prop_assert_eq!(chain(&["flip-horizontal", "flip-horizontal"], &x), x.clone());
        prop_assert_eq!(chain(&["flip-vertical", "flip-vertical"], &x), x.clone());
        prop_assert_eq!(chain(&["flip-horizontal", "flip-vertical"], &x), chain(&["flip-both"], &x));
        prop_assert_eq!(chain(&["flip-vertical", "flip-horizontal"], &x), chain(&["flip-both"], &x));
        prop_assert_eq!(chain(&["flip-both"], &x), chain(&["rotate-180"], &x));
        prop_assert_eq!(chain(&["flip-horizontal", "rotate-180"], &x), chain(&["flip-vertical"], &x));
        prop_assert_eq!(
            chain(&["rotate-90", "flip-horizontal"], &x),
            chain(&["flip-horizontal", "rotate-270"], &x)
        );
        prop_assert_eq!(chain(&["shift-left", "shift-right"], &x), x.clone());
        prop_assert_eq!(chain(&["shift-up", "shift-down"], &x), x.clone());
        prop_assert_eq!(chain(&["shift-up", "shift-left"], &x), chain(&["shift-top-left"], &x));
        prop_assert_eq!(chain(&["shift-up", "shift-right"], &x), chain(&["shift-top-right"], &x));
        prop_assert_eq!(chain(&["shift-down", "shift-left"], &x), chain(&["shift-bottom-left"], &x));
        prop_assert_eq!(chain(&["shift-down", "shift-right"], &x), chain(&["shift-bottom-right"], &x));
        prop_assert_eq!(chain(&["shift-top-left", "shift-bottom-right"], &x), x.clone());
        prop_assert_eq!(chain(&["shift-top-right", "shift-bottom-left"], &x), x.clone());
        prop_assert_eq!(chain(&["rotate-90", "shift-up", "rotate-270"], &x), chain(&["shift-right"], &x));
    }

    #[test]
    fn every_output_stays_in_the_unit_box(x in mnist_like()) {
        for s in registry(true) {
            let y = apply(&s, &x).unwrap();
            prop_assert_eq!(y.dims(), x.dims());
            prop_assert!(y.data().iter().all(|v| (0.0..=1.0).contains(v)), "{}", s.id);
        }
    }

    #[test]
    fn irreversible_specs_are_deterministic(x in mnist_like()) {
        for s in registry(true).into_iter().filter(|s| !s.reversible) {
            prop_assert_eq!(apply(&s, &x).unwrap(), apply(&s, &x).unwrap(), "{}", s.id);
            prop_assert!(reset(&s, &x).is_err());
        }
    }
}

#[test]
fn a_shift_moves_pixels_by_the_offset() {
    let mut x = Tensor::zeros(&[28, 28, 1]);
    x.data_mut()[10 * 28 + 10] = 1.0;
    let idx = |t: &Tensor| t.data().iter().position(|&v| v == 1.0).unwrap();
    assert_eq!(idx(&chain(&["shift-up"], &x)), 7 * 28 + 10);
    assert_eq!(idx(&chain(&["shift-bottom-right"], &x)), 13 * 28 + 13);
    x.data_mut().fill(0.0);
    x.data_mut()[0] = 1.0;
    assert_eq!(idx(&chain(&["shift-up"], &x)), 25 * 28);
}

#[test]
fn registry_sizes() {
    assert_eq!(registry(false).len(), 14);
    assert_eq!(registry(true).len(), 28);
    assert!(registry(true)[..14].iter().all(|s| s.reversible));
    assert!(registry(true)[14..].iter().all(|s| !s.reversible));
}
