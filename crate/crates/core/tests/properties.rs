use chanformer::adt::{from_angle_delay, to_angle_delay};
use chanformer::attention::{AttentionMode, NeighborParams, NeighborTable};
use chanformer::masking::{generate_mask, mask_budget, GridDims, MaskConfig, MaskMode};
use chanformer::model::{patchify, unpatchify};
use chanformer::rng::substream;
use chanformer::{Frame, C64};
use proptest::prelude::*;

fn frame_from(values: &[f64], rows: usize, cols: usize) -> Frame {
    Frame::from_fn(rows, cols, |r, c| {
        let i = 2 * (r * cols + c);
        C64::new(values[i], values[i + 1])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_hit_budget_exactly(t in 1usize..6, h in 1usize..12, w in 1usize..12, rho in 0.01f64..0.99, mode in 0usize..4, seed in any::<u64>()) {
        let dims = GridDims::new(t, h, w);
        let mut rng = substream(seed, "prop-mask", 0);
        let m = generate_mask(MaskMode::ALL[mode], dims, rho, &mut rng, &MaskConfig::default()).unwrap();
        prop_assert_eq!(m.popcount(), mask_budget(rho, dims.len()));
        prop_assert_eq!(m.bits.len(), dims.len());
    }

    #[test]
    fn angle_delay_transform_is_unitary(n in 1usize..5, m in 1usize..5, values in prop::collection::vec(-10.0f64..10.0, 2 * 16 * 16)) {
        let (rows, cols) = (1 << n, 1 << m);
        let f = frame_from(&values, rows, cols);
        let ad = to_angle_delay(&f);
        prop_assert!((ad.energy() - f.energy()).abs() <= 1e-9 * f.energy().max(1.0));
        prop_assert!(from_angle_delay(&ad).max_abs_diff(&f) <= 1e-9);
    }

    #[test]
    fn patchify_round_trips(t in 1usize..4, ph in 1usize..3, pw in 1usize..3, gh in 1usize..4, gw in 1usize..4, values in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 9 * 9)) {
        let (rows, cols) = (ph * gh, pw * gw);
        let frames: Vec<Frame> = (0..t).map(|k| frame_from(&values[k * 2 * rows * cols..], rows, cols)).collect();
        let (dims, data) = patchify(&frames, [ph, pw]).unwrap();
        prop_assert_eq!(dims, GridDims::new(t, gh, gw));
        prop_assert_eq!(unpatchify(dims, [ph, pw], &data).unwrap(), frames);
    }

    #[test]
    fn bidirectional_neighborhoods_are_symmetric(t in 1usize..5, h in 1usize..7, w in 1usize..7, r_h in 0usize..3, r_w in 0usize..3, gamma in 0usize..4) {
        let dims = GridDims::new(t, h, w);
        let offsets: Vec<i64> = (1..t as i64).flat_map(|o| [-o, o]).collect();
        let p = NeighborParams { r_h, r_w, offsets, gamma_h: gamma as f64 * 0.5, gamma_w: gamma as f64 * 0.5 };
        let table = NeighborTable::build(dims, &p, AttentionMode::Bidirectional, false).unwrap();
        for i in 1..table.len() {
            prop_assert!(table.neighbors(i).contains(&(i as u32)));
            for &j in table.neighbors(i) {
                prop_assert!(table.neighbors(j as usize).contains(&(i as u32)));
            }
        }
    }
}
