use iuzawa_core::grf::{
    gen_dataset, gen_dataset_on, read_dataset, resample_dataset, verify_dataset, write_dataset, write_dataset_to,
    ExperimentKind, REFERENCE_TOL,
};
use iuzawa_core::Domain;

#[test]
fn file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    for kind in [ExperimentKind::EllipticIso, ExperimentKind::EllipticAniso, ExperimentKind::Parabolic] {
        let ds = gen_dataset(kind, 2, 8, 11).unwrap();
        let path = dir.path().join(format!("{}.bin", kind.name()));
        write_dataset(&ds, &path).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), ds);
    }
}

#[test]
fn generation_is_a_function_of_its_arguments() {
    let bytes = |seed| {
        let mut out = Vec::new();
        write_dataset_to(&gen_dataset(ExperimentKind::EllipticIso, 3, 10, seed).unwrap(), &mut out).unwrap();
        out
    };
    assert_eq!(bytes(5), bytes(5));
    assert_ne!(bytes(5), bytes(6));
}

#[test]
fn stored_references_satisfy_the_optimality_system() {
    let ds = gen_dataset(ExperimentKind::EllipticAniso, 3, 12, 2).unwrap();
    for r in verify_dataset(&ds).unwrap() {
        assert!(r <= REFERENCE_TOL, "residual {r}");
    }
}

#[test]
fn parabolic_data_on_a_separate_time_grid() {
    let ds = gen_dataset_on(ExperimentKind::Parabolic, Domain::space_time(8, 5).unwrap(), 2, 3).unwrap();
    assert_eq!(ds.domain.shape(), &[5, 8, 8]);
    assert!(gen_dataset_on(ExperimentKind::EllipticIso, Domain::space_time(8, 5).unwrap(), 1, 3).is_err());
}

#[test]
fn resampled_datasets_are_re_solved() {
    let ds = gen_dataset(ExperimentKind::EllipticIso, 2, 9, 4).unwrap();
    let fine = resample_dataset(&ds, 17).unwrap();
    assert_eq!(fine.domain.shape(), &[17, 17]);
    for r in verify_dataset(&fine).unwrap() {
        assert!(r <= REFERENCE_TOL, "residual {r}");
    }
}
