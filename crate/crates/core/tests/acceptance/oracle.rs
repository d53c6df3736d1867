//! Independent brute-force references. Boxes are integer corner tuples and all
//! arithmetic is exact.

use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;

pub type Q = Ratio<i64>;
pub type IBox = (i64, i64, i64, i64);

pub fn q(n: i64, d: i64) -> Q {
    Ratio::new(n, d)
}

pub fn iou(a: IBox, b: IBox) -> Q {
    let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0);
    let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0);
    let inter = iw * ih;
    let union = (a.2 - a.0) * (a.3 - a.1) + (b.2 - b.0) * (b.3 - b.1) - inter;
    q(inter, union)
}

#[derive(Debug, Clone)]
pub struct ODet {
    pub image: String,
    pub class: String,
    pub score: Q,
    pub bbox: IBox,
}

#[derive(Debug, Clone)]
pub struct OImage {
    pub id: String,
    pub objects: Vec<(String, IBox)>,
}

/// Per-class AP for classes with ground truth, and their mean.
pub fn voc_ap(dets: &[ODet], gt: &[OImage], thr: Q) -> (BTreeMap<String, Q>, Q) {
    let mut classes: BTreeSet<&str> = gt.iter().flat_map(|g| g.objects.iter().map(|o| o.0.as_str())).collect();
    classes.extend(dets.iter().map(|d| d.class.as_str()));
    let mut aps = BTreeMap::new();
    for class in classes {
        let npos = gt
            .iter()
            .flat_map(|g| &g.objects)
            .filter(|o| o.0 == class)
            .count() as i64;
        if npos == 0 {
            continue;
        }
        // selection sort: highest score first, earliest listed on ties
        let mut pending: Vec<&ODet> = dets.iter().filter(|d| d.class == class).collect();
        let mut order = Vec::new();
        while !pending.is_empty() {
            let mut best = 0;
            for i in 1..pending.len() {
                if pending[i].score > pending[best].score {
                    best = i;
                }
            }
            order.push(pending.remove(best));
        }

        let mut used: BTreeSet<(String, usize)> = BTreeSet::new();
        let mut tp = 0i64;
        let mut points: Vec<(Q, Q)> = Vec::new();
        for (rank, d) in order.iter().enumerate() {
            let image = gt.iter().find(|g| g.id == d.image).expect("known image");
            let mut best: Option<(usize, Q)> = None;
            for (gi, o) in image.objects.iter().enumerate() {
                if o.0 != class || used.contains(&(image.id.clone(), gi)) {
                    continue;
                }
                let v = iou(d.bbox, o.1);
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((gi, v));
                }
            }
            if let Some((gi, _)) = best.filter(|&(_, v)| v >= thr) {
                used.insert((image.id.clone(), gi));
                tp += 1;
            }
            points.push((q(tp, npos), q(tp, rank as i64 + 1)));
        }

        let mut sum = q(0, 1);
        for i in 0..=10 {
            let r = q(i, 10);
            let best = points
                .iter()
                .filter(|(rec, _)| *rec >= r)
                .map(|&(_, p)| p)
                .max()
                .unwrap_or(q(0, 1));
            sum += best;
        }
        aps.insert(class.to_string(), sum / 11);
    }
    let map = if aps.is_empty() {
        q(0, 1)
    } else {
        aps.values().sum::<Q>() / aps.len() as i64
    };
    (aps, map)
}

/// `class,ap` lines then `mAP,v`, values to six decimals.
pub fn ap_csv(aps: &BTreeMap<String, Q>, map: Q) -> String {
    let f = |v: Q| format!("{:.6}", *v.numer() as f64 / *v.denom() as f64);
    let mut s = String::from("class,ap\n");
    for (c, v) in aps {
        s.push_str(&format!("{c},{}\n", f(*v)));
    }
    s.push_str(&format!("mAP,{}\n", f(map)));
    s
}

/// Naive top-k: for each labelled image (by id) and each labelled class (by
/// name), stable-sort its detections by score and keep the first k.
pub type OPgt = Vec<(String, Vec<(String, IBox, Q)>)>;

pub fn mine(dets: &[ODet], labels: &[(String, BTreeSet<String>)], k: usize) -> OPgt {
    let mut labels = labels.to_vec();
    labels.sort_by(|a, b| a.0.cmp(&b.0));
    labels
        .into_iter()
        .map(|(id, classes)| {
            let mut entries = Vec::new();
            for c in &classes {
                let mut of: Vec<&ODet> = dets.iter().filter(|d| d.image == id && &d.class == c).collect();
                of.sort_by_key(|d| std::cmp::Reverse(d.score));
                entries.extend(of.into_iter().take(k).map(|d| (c.clone(), d.bbox, d.score)));
            }
            (id, entries)
        })
        .collect()
}

/// Adjacency by exact IoU strictly above `thr`.
pub fn adjacency(boxes: &[IBox], thr: Q) -> Vec<Vec<bool>> {
    let n = boxes.len();
    let mut adj = vec![vec![false; n]; n];
    for u in 0..n {
        for v in 0..n {
            adj[u][v] = u != v && iou(boxes[u], boxes[v]) > thr;
        }
    }
    adj
}

/// Greedy centers, recomputing every degree from scratch each round.
pub fn greedy_centers(adj: &[Vec<bool>], scores: &[Q]) -> Vec<usize> {
    let n = adj.len();
    let mut alive = vec![true; n];
    let mut centers = Vec::new();
    loop {
        let mut pick: Option<(usize, usize)> = None;
        for v in (0..n).filter(|&v| alive[v]) {
            let deg = (0..n).filter(|&u| alive[u] && adj[v][u]).count();
            let better = match pick {
                None => true,
                Some((p, pd)) => deg > pd || (deg == pd && scores[v] > scores[p]),
            };
            if better {
                pick = Some((v, deg));
            }
        }
        let Some((c, _)) = pick else { break };
        centers.push(c);
        alive[c] = false;
        for u in 0..n {
            if adj[c][u] {
                alive[u] = false;
            }
        }
    }
    centers
}

pub fn smooth_l1(x: f64) -> f64 {
    if x.abs() < 1.0 {
        x * x / 2.0
    } else {
        x.abs() - 0.5
    }
}

/// Fast R-CNN loss written out term by term.
pub fn frcnn(p: &[f64], u: usize, t: [f64; 4], v: [f64; 4], lambda: f64) -> f64 {
    let mut loc = 0.0;
    if u > 0 {
        for i in 0..4 {
            loc += smooth_l1(t[i] - v[i]);
        }
    }
    -p[u].ln() + lambda * loc
}

pub fn rpn(anchors: &[(f64, bool, [f64; 4], [f64; 4])], n_cls: f64, n_reg: f64, lambda: f64) -> f64 {
    let mut cls = 0.0;
    let mut reg = 0.0;
    for &(p, pos, t, ts) in anchors {
        let star = if pos { 1.0 } else { 0.0 };
        cls += if pos { -p.ln() } else { -(1.0 - p).ln() };
        for i in 0..4 {
            reg += star * smooth_l1(t[i] - ts[i]);
        }
    }
    cls / n_cls + lambda * reg / n_reg
}

pub fn pcl(r: usize, clusters: &[(f64, Vec<f64>)], background: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for (s, scores) in clusters {
        let m = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / m;
        total += s * m * mean.ln();
    }
    for &(w, phi) in background {
        total += w * phi.ln();
    }
    -total / r as f64
}
