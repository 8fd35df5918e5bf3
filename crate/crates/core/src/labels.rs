//! Transfers detector labels onto externally supplied object boxes by
//! intersection-over-union, falling back to UNK when nothing overlaps.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

use crate::data::{read_jsonl, write_jsonl, BoundingBox, ClassId, ImageRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub label: ClassId,
}

/// Intersection over union. Edge-touching boxes have a zero-area
/// intersection and therefore IoU 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let ih = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// For each target, the label of the detection with the highest IoU, or
/// `None` (UNK) when every IoU is zero. Ties go to the lowest detection index.
pub fn assign_labels(targets: &[BoundingBox], detections: &[Detection]) -> Vec<Option<ClassId>> {
    targets
        .iter()
        .map(|t| {
            let mut best: Option<(f64, ClassId)> = None;
            for d in detections {
                let v = iou(t, &d.bbox);
                if v > 0.0 && best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, d.label));
                }
            }
            best.map(|(_, l)| l)
        })
        .collect()
}

#[derive(Deserialize)]
struct DetectionRecord {
    id: String,
    boxes: Vec<BoundingBox>,
    labels: Vec<i64>,
}

/// Reads detections keyed by image id from a JSON-lines file of
/// `{"id", "boxes", "labels"}` records.
pub fn read_detections(path: &Path) -> Result<HashMap<String, Vec<Detection>>> {
    let mut out = HashMap::new();
    for (lineno, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(&line)
            .map_err(|e| Error::DataValidation(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        if rec.boxes.len() != rec.labels.len() {
            return Err(Error::DataValidation(format!(
                "detections for {}: {} boxes but {} labels",
                rec.id,
                rec.boxes.len(),
                rec.labels.len()
            )));
        }
        let mut dets = Vec::with_capacity(rec.boxes.len());
        for (bbox, label) in rec.boxes.into_iter().zip(rec.labels) {
            if label < 0 {
                return Err(Error::DataValidation(format!("detection for {} carries UNK label", rec.id)));
            }
            dets.push(Detection {
                bbox,
                label: label as ClassId,
            });
        }
        out.insert(rec.id, dets);
    }
    Ok(out)
}

/// Fills in the labels of every record from the detections of its image.
/// Images without detections get UNK for every object.
pub fn label_records(records: &mut [ImageRecord], detections: &HashMap<String, Vec<Detection>>) {
    for r in records {
        let dets = detections.get(&r.objects.image_id).map(Vec::as_slice).unwrap_or(&[]);
        r.objects.labels = assign_labels(&r.objects.boxes, dets);
    }
}

/// File-level entry point: targets dataset file + detections file → labeled
/// dataset file. Returns `(objects, unk_objects)` counts.
pub fn assign_labels_file(targets: &Path, detections: &Path, output: &Path) -> Result<(usize, usize)> {
    let mut records = read_jsonl(targets)?;
    for r in &mut records {
        if r.objects.boxes.len() != r.objects.features.len() {
            return Err(Error::DataValidation(format!(
                "image {}: every target object needs a box",
                r.objects.image_id
            )));
        }
        r.objects.labels = vec![None; r.objects.features.len()];
    }
    let dets = read_detections(detections)?;
    label_records(&mut records, &dets);
    let total: usize = records.iter().map(|r| r.objects.len()).sum();
    let unk: usize = records
        .iter()
        .map(|r| r.objects.labels.iter().filter(|l| l.is_none()).count())
        .sum();
    write_jsonl(output, &records)?;
    Ok((total, unk))
}
