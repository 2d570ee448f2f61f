//! Identity matching on simulator scenes with exact geometry.

mod common;

use common::{gt_gaussians, matching_report};
use mvhuman::matching::match_labels;
use mvhuman::simulator::{generate_scene, SceneConfig};

#[test]
fn mask_partition_matches_ground_truth_and_rerun_is_stable() {
    let mut bad = 0;
    for seed in 0..20 {
        let cfg = SceneConfig {
            seed,
            ..Default::default()
        };
        let (views, gt) = generate_scene(&cfg).unwrap();
        let gs = gt_gaussians(&views, &gt);
        let scene = match_labels(gs, &views, 0.05);
        let (same, pairs, merged) = matching_report(&scene.mask_ids, &gt.mask_ids);
        println!("seed {seed}: {same}/{pairs} pairs co-labeled, {merged} cross-pedestrian pairs");
        bad += (same != pairs || merged != 0) as usize;
        assert_eq!(scene.rematch(&views, 0.05), scene, "seed {seed} rerun");
    }
    assert_eq!(bad, 0);
}
