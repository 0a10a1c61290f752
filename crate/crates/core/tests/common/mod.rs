#![allow(dead_code)]

use modelfuse_core::{Checkpoint, DType, Tensor};
use proptest::prelude::*;

pub type Layout = Vec<(String, DType, Vec<usize>)>;

pub fn dtype() -> impl Strategy<Value = DType> {
    prop_oneof![Just(DType::F32), Just(DType::F64)]
}

/// 1 to 4 tensors of rank 1 to 3.
pub fn layout() -> impl Strategy<Value = Layout> {
    prop::collection::btree_map(
        "[a-z][a-z0-9._]{0,7}",
        (dtype(), prop::collection::vec(1usize..5, 1..=3)),
        1..=4,
    )
    .prop_map(|m| m.into_iter().map(|(n, (d, s))| (n, d, s)).collect())
}

pub fn fill(layout: &Layout, values: &[f64]) -> Checkpoint {
    let mut c = Checkpoint::new();
    let mut at = 0;
    for (name, dtype, shape) in layout {
        let n: usize = shape.iter().product();
        let t = Tensor::new(*dtype, shape.clone(), values[at..at + n].to_vec()).unwrap();
        c.insert(name.clone(), t).unwrap();
        at += n;
    }
    c
}

pub fn size(layout: &Layout) -> usize {
    layout
        .iter()
        .map(|(_, _, s)| s.iter().product::<usize>())
        .sum()
}

/// `n` aligned checkpoints on a random layout.
pub fn aligned_set(
    n: std::ops::RangeInclusive<usize>,
    dtype_f64: bool,
) -> impl Strategy<Value = Vec<Checkpoint>> {
    (layout(), n).prop_flat_map(move |(mut l, n)| {
        if dtype_f64 {
            l.iter_mut().for_each(|t| t.1 = DType::F64);
        }
        let len = size(&l);
        prop::collection::vec(prop::collection::vec(-10.0f64..10.0, len), n)
            .prop_map(move |vals| vals.iter().map(|v| fill(&l, v)).collect::<Vec<_>>())
    })
}
