//! Labels object boxes with detector classes by best IoU, including the UNK
//! and tie cases.

use groundcap::data::BoundingBox;
use groundcap::labels::{assign_labels, iou, Detection};

fn main() -> groundcap::Result<()> {
    let detections = vec![
        Detection {
            bbox: BoundingBox::new(0.10, 0.10, 0.50, 0.50)?,
            label: 3,
        },
        Detection {
            bbox: BoundingBox::new(0.40, 0.40, 0.90, 0.90)?,
            label: 7,
        },
        // same box as the first one, different class: loses the tie
        Detection {
            bbox: BoundingBox::new(0.10, 0.10, 0.50, 0.50)?,
            label: 5,
        },
    ];
    let objects = vec![
        BoundingBox::new(0.12, 0.10, 0.48, 0.52)?,
        BoundingBox::new(0.45, 0.45, 0.95, 0.95)?,
        BoundingBox::new(0.30, 0.30, 0.60, 0.60)?,
        BoundingBox::new(0.00, 0.80, 0.05, 0.95)?,
    ];

    let labels = assign_labels(&objects, &detections);
    for (b, l) in objects.iter().zip(&labels) {
        let ious: Vec<String> = detections.iter().map(|d| format!("{:.3}", iou(b, &d.bbox))).collect();
        let label = l.map(|c| c.to_string()).unwrap_or_else(|| "UNK".into());
        println!(
            "[{:.2}, {:.2}, {:.2}, {:.2}]  IoUs [{}] -> {label}",
            b.x_min,
            b.y_min,
            b.x_max,
            b.y_max,
            ious.join(", ")
        );
    }
    Ok(())
}
