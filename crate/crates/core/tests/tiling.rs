use proptest::prelude::*;
use vegmap_core::imaging::CoverMask;
use vegmap_core::tiling::{grid_positions, select_training_tiles, SelectionParams, TileManifest};

fn disk_mask(w: u32, h: u32, seed: u64) -> CoverMask {
    let (cx, cy, r) = ((seed % 97) as f64 + 40.0, (seed % 53) as f64 + 40.0, 30.0 + (seed % 40) as f64);
    CoverMask::from_fn(w, h, "c", |x, y| {
        let (dx, dy) = (f64::from(x) - cx, f64::from(y) - cy);
        dx * dx + dy * dy <= r * r || (x / 17 + y / 23) % 4 == 0
    })
    .unwrap()
}

fn count(mask: &CoverMask, size: u32, sth: f64, shifts: u32) -> usize {
    let mut p = SelectionParams::new("c", size, sth);
    p.shifts = shifts;
    select_training_tiles("img", mask, &p).unwrap().len()
}

#[test]
fn brute_force_overlay_counts() {
    let mask = disk_mask(160, 120, 5);
    let mut p = SelectionParams::new("c", 16, 0.75);
    p.shifts = 2;
    let got = select_training_tiles("img", &mask, &p).unwrap();
    let mut expected = Vec::new();
    for (x, y) in grid_positions(160, 120, 16, 2).unwrap() {
        let mut on = 0;
        for yy in y..y + 16 {
            for xx in x..x + 16 {
                on += usize::from(mask.get(xx, yy));
            }
        }
        if on as f64 >= 0.75 * 256.0 {
            expected.push((x, y));
        }
    }
    let got: Vec<(u32, u32)> = got.entries().iter().map(|e| (e.tile.x, e.tile.y)).collect();
    assert_eq!(got, expected);
}

#[test]
fn manifest_jsonl_round_trip() {
    let mask = disk_mask(128, 128, 11);
    let m = select_training_tiles("img", &mask, &SelectionParams::new("c", 16, 0.5)).unwrap();
    let text = m.to_jsonl();
    let back = TileManifest::read_jsonl(text.as_slice()).unwrap();
    assert_eq!(back, m);
    let first = String::from_utf8(text).unwrap();
    let line = first.lines().next().unwrap();
    for field in ["\"image_id\"", "\"x\"", "\"y\"", "\"size\"", "\"label\"", "\"provenance\":\"mask-hue\""] {
        assert!(line.contains(field), "{line}");
    }
}

proptest! {
    #[test]
    fn tile_count_falls_as_sth_rises(seed in 0u64..500, size in prop_oneof![Just(8u32), Just(16), Just(32)], a in 0.05f64..1.0, b in 0.05f64..1.0) {
        let mask = disk_mask(150, 130, seed);
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for shifts in 1..4 {
            prop_assert!(count(&mask, size, hi, shifts) <= count(&mask, size, lo, shifts));
        }
    }

    #[test]
    fn more_shifts_never_lose_tiles(seed in 0u64..500, size in prop_oneof![Just(8u32), Just(16), Just(32)], sth in 0.05f64..1.0, shifts in 1u32..5) {
        let mask = disk_mask(150, 130, seed);
        prop_assert!(count(&mask, size, sth, shifts) <= count(&mask, size, sth, shifts + 1));
    }
}
