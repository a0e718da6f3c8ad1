//! Exhaustive oracles shared by the evaluation and acceptance suites.
#![allow(dead_code)]

use callscope::eval::{iou, PhysBox};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Lexicographic maximum over every injective partial assignment of the
/// per-detection key (IoU, lowest annotation index), detections taken by
/// descending confidence. Unmatched ranks below any admissible match.
pub fn brute_force_match(dets: &[(PhysBox, f64)], gts: &[PhysBox], thr: f64) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].1.partial_cmp(&dets[a].1).unwrap());
    fn key(dets: &[(PhysBox, f64)], gts: &[PhysBox], d: usize, g: Option<usize>) -> (f64, i64) {
        match g {
            None => (-1.0, 0),
            Some(j) => (iou(&dets[d].0, &gts[j]), -(j as i64)),
        }
    }
    fn go(
        k: usize,
        order: &[usize],
        dets: &[(PhysBox, f64)],
        gts: &[PhysBox],
        thr: f64,
        used: &mut Vec<bool>,
        cur: &mut Vec<Option<usize>>,
        best: &mut Option<(Vec<(f64, i64)>, Vec<Option<usize>>)>,
    ) {
        if k == order.len() {
            let keys: Vec<(f64, i64)> = order.iter().zip(cur.iter()).map(|(&d, &g)| key(dets, gts, d, g)).collect();
            let better = match best {
                None => true,
                Some((bk, _)) => keys.partial_cmp(bk) == Some(std::cmp::Ordering::Greater),
            };
            if better {
                *best = Some((keys, cur.clone()));
            }
            return;
        }
        cur.push(None);
        go(k + 1, order, dets, gts, thr, used, cur, best);
        cur.pop();
        for j in 0..gts.len() {
            if !used[j] && iou(&dets[order[k]].0, &gts[j]) >= thr {
                used[j] = true;
                cur.push(Some(j));
                go(k + 1, order, dets, gts, thr, used, cur, best);
                cur.pop();
                used[j] = false;
            }
        }
    }
    let mut best = None;
    go(0, &order, dets, gts, thr, &mut vec![false; gts.len()], &mut Vec::new(), &mut best);
    let assign = best.unwrap().1;
    order.into_iter().zip(assign).collect()
}

pub fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 { a.abs() } else { gcd(b, a % b) }
}

/// AP as an exact rational: for each k in 1..=P, the best precision over
/// all score thresholds retrieving at least k positives, averaged.
pub fn brute_force_ap(scored: &[(f64, bool)], positives: usize) -> Option<(i128, i128)> {
    if positives == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scored.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let ops: Vec<(i128, i128)> = thresholds
        .iter()
        .map(|&t| {
            let kept: Vec<&(f64, bool)> = scored.iter().filter(|s| s.0 >= t).collect();
            (kept.iter().filter(|s| s.1).count() as i128, kept.len() as i128)
        })
        .collect();
    let (mut num, mut den) = (0i128, 1i128);
    for k in 1..=positives as i128 {
        let best = ops.iter().filter(|o| o.0 >= k).fold(None, |b: Option<(i128, i128)>, &(tp, n)| match b {
            Some((bt, bn)) if bt * n >= tp * bn => Some((bt, bn)),
            _ => Some((tp, n)),
        });
        if let Some((tp, n)) = best {
            num = num * n + tp * den;
            den *= n;
            let g = gcd(num, den);
            num /= g;
            den /= g;
        }
    }
    den *= positives as i128;
    let g = gcd(num, den);
    Some((num / g, den / g))
}

pub fn random_box(rng: &mut ChaCha8Rng) -> PhysBox {
    // Coarse integer grid so IoU ties occur.
    let t = rng.gen_range(0..6) as f64;
    let f = rng.gen_range(0..6) as f64;
    [t, f, t + rng.gen_range(1..4) as f64, f + rng.gen_range(1..4) as f64]
}
