//! Scratch introspection for the desk-scale protocol (not part of the build).

use std::collections::HashMap;

use linematch::config::Config;
use linematch::datagen::manifest;
use linematch::trainer::{match_images, Checkpoint, TrainRecord};

fn main() {
    let cfg = Config::load(std::path::Path::new("/tmp/desk/deskD.toml")).unwrap();
    let ckpt = Checkpoint::load(std::path::Path::new("/tmp/desk/runD/checkpoint.json")).unwrap();
    let records = manifest::read_manifest("/tmp/desk/held100/manifest.jsonl").unwrap();
    let base = std::path::Path::new("/tmp/desk/held100");

    let mut correct = 0usize;
    let mut wrong_partner = 0usize;
    let mut spurious_a = 0usize; // A line is unmatched in gt but was predicted
    let mut wrong_len_sum = 0.0f64;
    let mut wrong_angle_sum = 0.0f64;
    let mut wrong_count = 0usize;
    for r in &records {
        let rec = TrainRecord::from_manifest_record(r, base).unwrap();
        let m = match_images(
            &ckpt.params,
            &rec.image_a,
            &rec.image_b,
            &rec.lines_a,
            &rec.lines_b,
            &cfg,
        )
        .unwrap();
        let gt: HashMap<usize, usize> = rec.gt.pairs.iter().copied().collect();
        for &(i, j, _) in &m.matches {
            match gt.get(&i) {
                Some(&jj) if jj == j => correct += 1,
                Some(&jj) => {
                    wrong_partner += 1;
                    // how geometrically close is the wrong pick to the right one?
                    let picked = &rec.lines_b[j];
                    let truth = &rec.lines_b[jj];
                    wrong_len_sum += (picked.length() - truth.length()).abs();
                    wrong_angle_sum += picked.angle_to(truth).to_degrees();
                    wrong_count += 1;
                }
                None => spurious_a += 1,
            }
        }
    }
    println!("correct: {correct}");
    println!("wrong partner: {wrong_partner}");
    println!("spurious (A unmatched in gt): {spurious_a}");
    if wrong_count > 0 {
        println!(
            "wrong picks vs truth: mean |len diff| {:.2} px, mean angle diff {:.2} deg",
            wrong_len_sum / wrong_count as f64,
            wrong_angle_sum / wrong_count as f64
        );
    }
}
