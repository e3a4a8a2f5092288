use gaflow::gaft::{from_bytes, to_bytes, TensorArchive};
use gaflow_core::DenseTensor;
use proptest::prelude::*;

fn tensor() -> impl Strategy<Value = (Vec<usize>, Vec<u32>)> {
    prop::collection::vec(1usize..4, 1..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        (Just(shape), prop::collection::vec(any::<u32>(), n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::with_cases(128) })]

    #[test]
    fn archives_round_trip_bit_exactly(tensors in prop::collection::vec(tensor(), 0..4), id in "[a-z0-9 ]{0,12}") {
        let mut a = TensorArchive::new();
        a.metadata.insert("example_id".into(), id.into());
        for (i, (shape, bits)) in tensors.into_iter().enumerate() {
            let data = bits
                .into_iter()
                .map(f32::from_bits)
                .map(|v| if v.is_finite() { v } else { -0.0 })
                .collect();
            a.insert(DenseTensor::new(format!("t{i}"), shape, data).unwrap()).unwrap();
        }
        let bytes = to_bytes(&a).unwrap();
        prop_assert_eq!(&bytes, &to_bytes(&a).unwrap());
        let back = from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back.metadata, &a.metadata);
        for (x, y) in a.entries().iter().zip(back.entries()) {
            let bx: Vec<u32> = x.data().iter().map(|v| v.to_bits()).collect();
            let by: Vec<u32> = y.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bx, by);
            prop_assert_eq!(x.shape(), y.shape());
        }
    }

    #[test]
    fn truncations_never_parse(cut in 0usize..200) {
        let a = TensorArchive::new()
            .with(DenseTensor::new("A", vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap())
            .unwrap();
        let bytes = to_bytes(&a).unwrap();
        let cut = cut % bytes.len();
        prop_assert!(from_bytes(&bytes[..cut]).is_err());
    }
}
