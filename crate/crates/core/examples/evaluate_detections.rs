//! Score a handful of human-object detections: IoU matching, per-class AP,
//! full/rare/non-rare mAP, the line-record interchange, and macro-F1.
//!
//!     cargo run --example evaluate_detections

use gpnn::eval::{
    grouped_map, iou, macro_f1, match_and_ap, parse_records, write_records, BBox, Detection,
    HoiInstance,
};

fn main() -> gpnn::Result<()> {
    let b = |x: f64, y: f64| BBox::new(x, y, x + 1.0, y + 1.0);
    println!(
        "IoU of unit boxes offset by 0.5: {:.4}",
        iou(&b(0.0, 0.0), &b(0.5, 0.0))
    );

    let gt = vec![
        HoiInstance {
            image: 0,
            class: 0,
            human: b(0.0, 0.0),
            object: b(2.0, 0.0),
        },
        HoiInstance {
            image: 1,
            class: 0,
            human: b(0.0, 0.0),
            object: b(2.0, 0.0),
        },
        HoiInstance {
            image: 1,
            class: 1,
            human: b(4.0, 4.0),
            object: b(6.0, 4.0),
        },
    ];
    let dets = vec![
        Detection {
            image: 0,
            class: 0,
            score: 0.9,
            human: b(0.1, 0.0),
            object: b(2.0, 0.1),
        },
        Detection {
            image: 1,
            class: 0,
            score: 0.8,
            human: b(5.0, 5.0),
            object: b(2.0, 0.0),
        },
        Detection {
            image: 1,
            class: 0,
            score: 0.7,
            human: b(0.0, 0.1),
            object: b(2.1, 0.0),
        },
        Detection {
            image: 1,
            class: 1,
            score: 0.6,
            human: b(4.0, 4.0),
            object: b(6.0, 4.2),
        },
    ];
    let r = match_and_ap(&dets, &gt, 0);
    println!(
        "class 0: true positives {:?}, AP {:.4}",
        r.true_positives, r.ap
    );

    // Class 1 counts as rare: few training instances.
    let map = grouped_map(&dets, &gt, &[40, 3]);
    println!(
        "mAP full {:.4}  rare {:?}  non-rare {:?}",
        map.full, map.rare, map.non_rare
    );

    let text = write_records(&dets);
    print!("records:\n{text}");
    assert_eq!(parse_records(&text)?, dets);

    let f1 = macro_f1(&[0, 1, 1, 2, 2, 2], &[0, 1, 2, 2, 2, 1], 3)?;
    println!("macro-F1 {:.4}, per class {:?}", f1.macro_f1, f1.per_class);
    Ok(())
}
