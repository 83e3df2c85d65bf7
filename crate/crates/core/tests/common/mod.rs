//! Reference implementations used as oracles by the integration tests.
#![allow(dead_code)]

use vista_core::LabelTaxonomy;

/// AP by enumerating every score cut and reading the precision envelope.
pub fn brute_force_ap(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l).count();
    if n_pos == 0 {
        return None;
    }
    let mut cuts: Vec<f64> = scores.to_vec();
    cuts.sort_by(|a, b| b.total_cmp(a));
    cuts.dedup();
    // (recall, precision) at each cut "score >= cut"
    let points: Vec<(f64, f64)> = cuts
        .iter()
        .map(|&cut| {
            let tp = scores.iter().zip(labels).filter(|(s, &l)| **s >= cut && l).count();
            let pp = scores.iter().filter(|s| **s >= cut).count();
            (tp as f64 / n_pos as f64, tp as f64 / pp as f64)
        })
        .collect();
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for &(r, _) in &points {
        if r > prev_recall {
            let envelope = points
                .iter()
                .filter(|(r2, _)| *r2 >= r)
                .map(|(_, p)| *p)
                .fold(0.0, f64::max);
            area += (r - prev_recall) * envelope;
            prev_recall = r;
        }
    }
    Some(area)
}

/// Best total over all non-decreasing paths, by exhaustive enumeration.
pub fn brute_force_path_total(rows: &[Vec<f64>]) -> f64 {
    fn go(rows: &[Vec<f64>], t: usize, floor: usize) -> f64 {
        if t == rows.len() {
            return 0.0;
        }
        (floor..rows[t].len())
            .map(|r| rows[t][r] + go(rows, t + 1, r))
            .fold(f64::NEG_INFINITY, f64::max)
    }
    go(rows, 0, 0)
}

/// Closing then opening, written frame by frame from the run definitions.
pub fn naive_morph(column: &[bool], open_len: usize, close_len: usize) -> Vec<bool> {
    let n = column.len();
    let mut closed = column.to_vec();
    for t in 0..n {
        if column[t] {
            continue;
        }
        let mut left = t;
        while left > 0 && !column[left - 1] {
            left -= 1;
        }
        let mut right = t;
        while right + 1 < n && !column[right + 1] {
            right += 1;
        }
        let bounded = left > 0 && right + 1 < n;
        if bounded && right - left + 1 < close_len {
            closed[t] = true;
        }
    }
    let mut opened = closed.clone();
    for t in 0..n {
        if !closed[t] {
            continue;
        }
        let mut left = t;
        while left > 0 && closed[left - 1] {
            left -= 1;
        }
        let mut right = t;
        while right + 1 < n && closed[right + 1] {
            right += 1;
        }
        if right - left + 1 < open_len {
            opened[t] = false;
        }
    }
    opened
}

/// Taxonomy with `regions` regions, optional landmarks between neighbours and
/// `pathologies` pathology classes; every smoothing window is `window`.
pub fn taxonomy(regions: usize, landmarks: bool, pathologies: usize, window: usize) -> LabelTaxonomy {
    let region_names: Vec<String> = (0..regions).map(|r| format!("r{r}")).collect();
    let landmark_names: Vec<(String, Vec<String>)> = if landmarks {
        (1..regions)
            .map(|r| (format!("lm{r}"), vec![region_names[r - 1].clone(), region_names[r].clone()]))
            .collect()
    } else {
        Vec::new()
    };
    let path_names: Vec<String> = (0..pathologies).map(|p| format!("p{p}")).collect();
    let classes: Vec<String> = region_names
        .iter()
        .cloned()
        .chain(landmark_names.iter().map(|(n, _)| n.clone()))
        .chain(path_names.iter().cloned())
        .collect();
    let doc = serde_json::json!({
        "classes": classes,
        "regions": region_names,
        "landmarks": landmark_names.into_iter().collect::<std::collections::BTreeMap<_, _>>(),
        "pathologies": path_names,
        "smoothing_window": classes.iter().map(|c| (c.clone(), window)).collect::<std::collections::BTreeMap<_, _>>(),
    });
    LabelTaxonomy::from_json(&doc.to_string()).unwrap()
}
