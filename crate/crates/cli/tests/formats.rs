use std::path::Path;

use dctmc_cli::matrix_io::{format_matrix, parse_entry, parse_matrix, read_matrix, write_matrix};
use dctmc_core::linalg::{c64, CMatrix};
use proptest::prelude::*;

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |x| x.is_finite()),
        Just(0.0),
        Just(-0.0),
        -1e3f64..1e3
    ]
}

proptest! {
    #[test]
    fn matrices_round_trip_bit_for_bit(rows in 1usize..6, cols in 1usize..6, seed in proptest::collection::vec((finite(), finite()), 36)) {
        let m = CMatrix::from_fn(rows, cols, |i, j| {
            let (re, im) = seed[i * 6 + j];
            c64(re, im)
        });
        let back = parse_matrix(&format_matrix(&m), Path::new("m")).unwrap();
        prop_assert_eq!(back.shape(), m.shape());
        for (a, b) in back.iter().zip(m.iter()) {
            prop_assert_eq!(a.re.to_bits(), b.re.to_bits());
            prop_assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn entries_never_parse_ambiguously(re in finite(), im in finite()) {
        let s = dctmc_cli::matrix_io::format_entry(c64(re, im));
        prop_assert_eq!(s.matches(' ').count(), 0);
        prop_assert!(s.ends_with('j'));
        let z = parse_entry(&s).unwrap();
        prop_assert_eq!((z.re.to_bits(), z.im.to_bits()), (re.to_bits(), im.to_bits()));
    }
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.txt");
    let m = CMatrix::from_fn(3, 2, |i, j| c64(i as f64 / 7.0, -(j as f64) * 1e-200));
    write_matrix(&path, &m).unwrap();
    assert_eq!(read_matrix(&path).unwrap(), m);
    assert!(!dir.path().join(".m.txt.tmp").exists());
}

#[test]
fn missing_matrix_is_missing_input() {
    let err = read_matrix(Path::new("/nonexistent/m.txt")).unwrap_err();
    assert!(matches!(err, dctmc_cli::CliError::MissingInput(_)), "{err}");
}
