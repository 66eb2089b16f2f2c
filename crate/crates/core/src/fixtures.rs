//! Named ensembles shipped with the repository.

use crate::ensemble::Ensemble;
use crate::linalg::{cr, CMatrix};
use crate::qcore::{ket, ket_plus};

pub const BASE_NAMES: [&str; 5] = [
    "single_pure",
    "single_mixed",
    "classical_pair",
    "nonorthogonal_pair",
    "redundant_product",
];

pub const VISIBLE_SUFFIX: &str = "_visible";

/// Redundant factor `ω = diag(0.7, 0.3)`.
pub fn omega() -> CMatrix {
    CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![cr(0.7), cr(0.3)]))
}

pub fn single_pure() -> Ensemble {
    Ensemble::from_pure(&[1.0], &[ket_plus()]).expect("valid fixture")
}

pub fn single_mixed() -> Ensemble {
    let rho = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![cr(0.75), cr(0.25)]));
    Ensemble::from_mixed(&[1.0], &[rho]).expect("valid fixture")
}

/// `{½|0⟩, ½|1⟩}`.
pub fn classical_pair() -> Ensemble {
    Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket(2, 1)]).expect("valid fixture")
}

/// `{½|0⟩, ½|+⟩}`.
pub fn nonorthogonal_pair() -> Ensemble {
    Ensemble::from_pure(&[0.5, 0.5], &[ket(2, 0), ket_plus()]).expect("valid fixture")
}

/// `{½ ω⊗|0⟩⟨0|, ½ ω⊗|+⟩⟨+|}`; stripping `ω` gives [`nonorthogonal_pair`].
pub fn redundant_product() -> Ensemble {
    nonorthogonal_pair()
        .with_redundant_factor(&omega())
        .expect("valid fixture")
}

/// Fixture by name; `<base>_visible` gives the visible variant.
pub fn by_name(name: &str) -> Option<Ensemble> {
    if let Some(base) = name.strip_suffix(VISIBLE_SUFFIX) {
        return by_name(base).filter(|e| e.is_blind()).map(|e| e.visible());
    }
    match name {
        "single_pure" => Some(single_pure()),
        "single_mixed" => Some(single_mixed()),
        "classical_pair" => Some(classical_pair()),
        "nonorthogonal_pair" => Some(nonorthogonal_pair()),
        "redundant_product" => Some(redundant_product()),
        _ => None,
    }
}

/// Every fixture name, blind variants first.
pub fn all_names() -> Vec<String> {
    BASE_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(BASE_NAMES.iter().map(|s| format!("{s}{VISIBLE_SUFFIX}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_name_resolves() {
        for n in all_names() {
            let e = by_name(&n).unwrap();
            // A single label carries no information, so its visible variant is blind.
            assert_eq!(e.is_blind(), !n.ends_with(VISIBLE_SUFFIX) || e.len() == 1, "{n}");
        }
        assert!(by_name("nope").is_none());
        assert_eq!(redundant_product().dim_a(), 4);
    }
}
