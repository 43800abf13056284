use proptest::prelude::*;

use rap_core::dataset::{
    load_jsonl, mean_pool, parse_jsonl, synth_mixture, to_jsonl, write_jsonl, Dataset, Sample, SynthConfig,
    TaskSpec, TokenMatrix,
};
use rap_core::RapError;

fn sample(id: String, features: Vec<f64>, label: Option<String>, eval_label: Option<String>) -> Sample {
    Sample {
        id,
        features,
        label,
        eval_label,
    }
}

prop_compose! {
    fn arb_dataset()(
        dim in 1usize..5,
        total in 2usize..5,
        n in 1usize..12,
    )(
        known in 1..total,
        total in Just(total),
        rows in prop::collection::vec(
            (prop::collection::vec(-1e6f64..1e6, dim), 0usize..3, 0usize..16, any::<bool>()),
            n,
        ),
    ) -> Dataset {
        let names: Vec<String> = (0..total).map(|c| format!("class-{c}")).collect();
        let task = TaskSpec::new(names[..known].to_vec(), total).unwrap();
        let (mut labeled, mut unlabeled, mut test) = (Vec::new(), Vec::new(), Vec::new());
        for (i, (features, split, class, hide)) in rows.into_iter().enumerate() {
            let id = format!("s{i}");
            match split {
                0 => labeled.push(sample(id, features, Some(names[class % known].clone()), None)),
                1 => {
                    let eval = (!hide).then(|| names[class % total].clone());
                    unlabeled.push(sample(id, features, None, eval));
                }
                _ => test.push(sample(id, features, Some(names[class % total].clone()), None)),
            }
        }
        Dataset::new(labeled, unlabeled, test, task).unwrap()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn jsonl_round_trip(data in arb_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.jsonl");
        write_jsonl(&data, &path).unwrap();
        prop_assert_eq!(load_jsonl(&path).unwrap(), data);
    }

    #[test]
    fn mean_pool_ignores_row_order(
        rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 3), 1..8),
        rotate in 0usize..8,
    ) {
        let mut shuffled = rows.clone();
        shuffled.reverse();
        let k = rotate % shuffled.len();
        shuffled.rotate_left(k);
        let a = mean_pool(&TokenMatrix::new(rows).unwrap());
        let b = mean_pool(&TokenMatrix::new(shuffled).unwrap());
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}

#[test]
fn mean_pool_of_three_rows() {
    let m = TokenMatrix::new(vec![vec![2.0, 2.0], vec![0.0, 0.0], vec![1.0, 1.0]]).unwrap();
    assert_eq!(mean_pool(&m), vec![1.0, 1.0]);
}

#[test]
fn synth_split_counts() {
    let cfg = SynthConfig {
        classes: 4,
        n_per_class: 10,
        dim: 3,
        labeled_fraction: 0.3,
        known_fraction: 0.75,
        ..SynthConfig::default()
    };
    let d = synth_mixture(&cfg).unwrap();
    assert_eq!(d.task.known_count(), 3);
    assert_eq!(d.task.novel_count(), 1);
    assert_eq!(d.labeled.len(), 9);
    assert_eq!(d.unlabeled.len(), 31);
    assert!(d
        .unlabeled
        .iter()
        .all(|s| s.label.is_none() && s.eval_label.is_some()));
    assert!(d
        .labeled
        .iter()
        .all(|s| d.task.known_index(s.label.as_deref().unwrap()).is_some()));
}

#[test]
fn synth_is_byte_identical_per_seed() {
    let cfg = SynthConfig {
        seed: 42,
        ..SynthConfig::default()
    };
    let a = to_jsonl(&synth_mixture(&cfg).unwrap()).unwrap();
    let b = to_jsonl(&synth_mixture(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = to_jsonl(&synth_mixture(&SynthConfig { seed: 43, ..cfg }).unwrap()).unwrap();
    assert_ne!(a, other);
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_jsonl(dir.path().join("absent.jsonl")).unwrap_err();
    assert!(matches!(err, RapError::Io { .. }));
}

#[test]
fn parse_errors_name_the_line() {
    let text = "{\"id\": \"a\", \"features\": [1.0], \"label\": \"x\", \"split\": \"labeled\"}\nnot json\n";
    match parse_jsonl(text).unwrap_err() {
        RapError::MalformedLine { line, .. } => assert_eq!(line, 2),
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn header_rejects_labels_outside_known_classes() {
    let text = concat!(
        "{\"task\": {\"known_classes\": [\"x\"], \"total_classes\": 2}}\n",
        "{\"id\": \"a\", \"features\": [1.0], \"label\": \"y\", \"split\": \"labeled\"}\n",
    );
    assert!(matches!(
        parse_jsonl(text).unwrap_err(),
        RapError::UnknownLabel { line: 2, .. }
    ));
}
