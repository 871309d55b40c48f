use std::collections::BTreeSet;

use proptest::prelude::*;

use hypogen::specdata::{Compound, PresenceMatrix, Sample, SampleClass};

fn build(rows: usize, cols: usize, cells: &[bool], soil: &[bool]) -> PresenceMatrix {
    let compounds = (1..=rows as u32)
        .map(|id| Compound::new(id, format!("c{id}")))
        .collect();
    let samples = (0..cols)
        .map(|j| {
            Sample::new(
                format!("s{j}"),
                if soil[j] {
                    SampleClass::Soil
                } else {
                    SampleClass::Meteorite
                },
            )
        })
        .collect();
    let pairs = (0..rows)
        .flat_map(|i| (0..cols).map(move |j| (i, j)))
        .filter(|&(i, j)| cells[i * cols + j])
        .map(|(i, j)| (i as u32 + 1, format!("s{j}")));
    PresenceMatrix::new(compounds, samples, pairs).unwrap()
}

fn shape() -> impl Strategy<Value = (usize, usize, Vec<bool>, Vec<bool>)> {
    (1usize..=6, 1usize..=4).prop_flat_map(|(r, c)| {
        (
            Just(r),
            Just(c),
            prop::collection::vec(any::<bool>(), r * c),
            prop::collection::vec(any::<bool>(), c),
        )
    })
}

proptest! {
    #[test]
    fn exclusive_matches_enumeration((rows, cols, cells, soil) in shape()) {
        let m = build(rows, cols, &cells, &soil);
        for (class, want_soil) in [(SampleClass::Meteorite, false), (SampleClass::Soil, true)] {
            let want: BTreeSet<u32> = (0..rows)
                .filter(|&i| {
                    let hits: Vec<usize> = (0..cols).filter(|&j| cells[i * cols + j]).collect();
                    !hits.is_empty() && hits.iter().all(|&j| soil[j] == want_soil)
                })
                .map(|i| i as u32 + 1)
                .collect();
            prop_assert_eq!(m.exclusive_compounds(class), want);
        }
    }

    #[test]
    fn co_occurring_matches_enumeration((rows, cols, cells, soil) in shape()) {
        let m = build(rows, cols, &cells, &soil);
        for subset in 0u32..1 << rows {
            let ids: BTreeSet<u32> = (0..rows as u32).filter(|i| subset >> i & 1 == 1).map(|i| i + 1).collect();
            let want: BTreeSet<String> = (0..cols)
                .filter(|&j| ids.iter().all(|&id| cells[(id as usize - 1) * cols + j]))
                .map(|j| format!("s{j}"))
                .collect();
            prop_assert_eq!(m.co_occurring(&ids).unwrap(), want);
        }
    }

    #[test]
    fn exclusive_classes_are_disjoint((rows, cols, cells, soil) in shape()) {
        let m = build(rows, cols, &cells, &soil);
        let met = m.exclusive_compounds(SampleClass::Meteorite);
        let soil_only = m.exclusive_compounds(SampleClass::Soil);
        prop_assert!(met.is_disjoint(&soil_only));
    }
}
