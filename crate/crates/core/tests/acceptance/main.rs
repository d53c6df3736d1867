//! Acceptance suite: one PASS/FAIL line per criterion. Exits non-zero when any
//! criterion fails.

mod oracle;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wsod_core::clustering::{assign_clusters, build_graph, select_centers, ScoredProposal};
use wsod_core::evaluation::{ap_11point, evaluate, match_class_in_image, precision_recall, report_csv};
use wsod_core::loss::{
    frcnn_loss, pcl_bag_loss, rpn_loss, smooth_l1, BackgroundProposal, BagCluster, BagLossInput, ClassDistribution,
    RegressionTarget, RpnAnchor, RpnBatchInput,
};
use wsod_core::loss_check::gradient_suite;
use wsod_core::mining::{mine_dataset, MiningConfig, PseudoAnnotation};
use wsod_core::refinement::{
    epoch_series_csv, refine_dataset, refine_image_class, run_refinement_loop, should_refine, RefinementPolicy,
    TimingRule, UpdateRule,
};
use wsod_core::sim_detector::{synthetic_dataset, DetectorOracle, OracleConfig, SyntheticDatasetConfig};
use wsod_core::voc_io::{
    image_level_labels, parse_annotation, parse_annotation_bytes, parse_detections, write_annotation,
    write_detections, ImageAnnotation, ImageLevelLabels,
};
use wsod_core::{BBox, Detection, Rational, Scalar};

use oracle::{q, IBox, ODet, OImage, Q};

type Verdict = Result<String, String>;

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn to_box<T: Scalar>(b: IBox) -> BBox<T> {
    let c = |v: i64| T::from_i64(v).unwrap();
    BBox::new(c(b.0), c(b.1), c(b.2), c(b.3)).unwrap()
}

fn to_scalar<T: Scalar>(v: Q) -> T {
    T::from_i64(*v.numer()).unwrap() / T::from_i64(*v.denom()).unwrap()
}

fn rand_box(rng: &mut ChaCha8Rng, extent: i64, min: i64, max: i64) -> IBox {
    let w = rng.random_range(min..=max);
    let h = rng.random_range(min..=max);
    let x = rng.random_range(0..=extent - w);
    let y = rng.random_range(0..=extent - h);
    (x, y, x + w, y + h)
}

fn jitter(rng: &mut ChaCha8Rng, b: IBox, j: i64) -> IBox {
    let mut d = || rng.random_range(-j..=j);
    let (x0, y0) = (b.0 + d(), b.1 + d());
    let (x1, y1) = (b.2 + d(), b.3 + d());
    (x0, y0, x1.max(x0 + 1), y1.max(y0 + 1))
}

fn tenth_score(rng: &mut ChaCha8Rng) -> Q {
    q(rng.random_range(1..=10), 10)
}

// 1
fn worked_example() -> Verdict {
    let start = Instant::now();
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../cli/fixtures/worked_example");
    let xml = fs::read_to_string(dir.join("gt/000001.xml")).map_err(|e| e.to_string())?;
    let det_text = fs::read_to_string(dir.join("detections.txt")).map_err(|e| e.to_string())?;

    fn counts<T: Scalar>(xml: &str, det_text: &str) -> (usize, usize, usize, T, T) {
        let gt: ImageAnnotation<T> = parse_annotation(xml).unwrap();
        let dets: Vec<Detection<T>> = parse_detections(det_text).unwrap();
        let boxes: Vec<BBox<T>> = gt.boxes_of("cat").collect();
        let half = T::one() / (T::one() + T::one());
        let m = match_class_in_image(&dets, &boxes, half).unwrap();
        let (p, r) = precision_recall(&m);
        (m.true_positives(), m.false_positives(), m.false_negatives, p, r)
    }
    let exact = counts::<Rational>(&xml, &det_text);
    let float = counts::<f64>(&xml, &det_text);
    let elapsed = start.elapsed();
    let ok = (exact.0, exact.1, exact.2) == (1, 1, 1)
        && exact.3 == q(1, 2)
        && exact.4 == q(1, 2)
        && (float.0, float.1, float.2, float.3, float.4) == (1, 1, 1, 0.5, 0.5)
        && elapsed.as_secs_f64() < 1.0;
    check(
        ok,
        format!(
            "TP={} FP={} FN={} precision={} recall={} in {:.3}s",
            exact.0,
            exact.1,
            exact.2,
            exact.3,
            exact.4,
            elapsed.as_secs_f64()
        ),
    )
}

struct EvalInstance {
    gt: Vec<OImage>,
    dets: Vec<ODet>,
}

fn eval_instance(rng: &mut ChaCha8Rng) -> EvalInstance {
    let classes = ["aero", "bike", "cat"];
    let n_classes = rng.random_range(1..=3);
    let mut gt = Vec::new();
    let mut dets = Vec::new();
    for i in 0..rng.random_range(1..=5) {
        let id = format!("img{i}");
        let objects: Vec<(String, IBox)> = (0..rng.random_range(0..=6))
            .map(|_| {
                (
                    classes[rng.random_range(0..n_classes)].to_string(),
                    rand_box(rng, 100, 5, 50),
                )
            })
            .collect();
        for _ in 0..rng.random_range(0..=6) {
            let (class, bbox) = if !objects.is_empty() && rng.random_bool(0.6) {
                let (c, b) = &objects[rng.random_range(0..objects.len())];
                let c = if rng.random_bool(0.2) {
                    classes[rng.random_range(0..n_classes)].to_string()
                } else {
                    c.clone()
                };
                (c, jitter(rng, *b, 6))
            } else {
                (classes[rng.random_range(0..n_classes)].to_string(), rand_box(rng, 100, 5, 50))
            };
            dets.push(ODet {
                image: id.clone(),
                class,
                score: tenth_score(rng),
                bbox,
            });
        }
        gt.push(OImage { id, objects });
    }
    EvalInstance { gt, dets }
}

fn as_annotations<T: Scalar>(gt: &[OImage]) -> Vec<ImageAnnotation<T>> {
    gt.iter()
        .map(|g| {
            g.objects
                .iter()
                .fold(ImageAnnotation::new(g.id.clone(), 200, 200), |a, (c, b)| {
                    a.with_object(c.clone(), to_box(*b))
                })
        })
        .collect()
}

fn as_detections<T: Scalar>(dets: &[ODet]) -> Vec<Detection<T>> {
    dets.iter()
        .map(|d| Detection::new(d.image.clone(), d.class.clone(), to_scalar(d.score), to_box(d.bbox)).unwrap())
        .collect()
}

// 2
fn ap_oracle_equivalence() -> Verdict {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 1500;
    let mut mismatches = Vec::new();
    for i in 0..n {
        let inst = eval_instance(&mut rng);
        let (aps, map) = oracle::voc_ap(&inst.dets, &inst.gt, q(1, 2));
        let expected_csv = oracle::ap_csv(&aps, map);

        let float = evaluate(&as_detections::<f64>(&inst.dets), &as_annotations(&inst.gt), 0.5).unwrap();
        let exact = evaluate(
            &as_detections::<Rational>(&inst.dets),
            &as_annotations(&inst.gt),
            q(1, 2),
        )
        .unwrap();
        let exact_aps: BTreeMap<String, Q> = exact.classes.iter().map(|(c, r)| (c.clone(), r.ap)).collect();
        if report_csv(&float) != expected_csv || exact_aps != aps || exact.map != map {
            mismatches.push(i);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    check(
        mismatches.is_empty() && elapsed < 30.0,
        format!("{n} instances, {} mismatches {:?}, {elapsed:.2}s", mismatches.len(), &mismatches[..mismatches.len().min(5)]),
    )
}

// 3
fn hand_computed_ap() -> Verdict {
    let gt_boxes = [(0, 0, 10, 10), (50, 50, 60, 60)];
    let gt = vec![OImage {
        id: "x".into(),
        objects: gt_boxes.iter().map(|b| ("cat".to_string(), *b)).collect(),
    }];
    let dets: Vec<ODet> = [(9, (0, 0, 10, 10)), (8, (100, 100, 120, 120)), (7, (50, 50, 60, 60))]
        .iter()
        .map(|&(s, bbox)| ODet {
            image: "x".into(),
            class: "cat".into(),
            score: q(s, 10),
            bbox,
        })
        .collect();
    let exact = evaluate(&as_detections::<Rational>(&dets), &as_annotations(&gt), q(1, 2)).unwrap();
    let float = evaluate(&as_detections::<f64>(&dets), &as_annotations(&gt), 0.5).unwrap();
    let curve_ap = ap_11point(&exact.classes["cat"].curve);
    let (oracle_aps, _) = oracle::voc_ap(&dets, &gt, q(1, 2));
    let target = q(28, 33);
    let ok = exact.map == target
        && curve_ap == target
        && oracle_aps["cat"] == target
        && (float.map - 28.0 / 33.0).abs() < 1e-9;
    check(ok, format!("AP exact {} float {:.12}", exact.map, float.map))
}

fn random_labels(rng: &mut ChaCha8Rng, images: usize, pool: &[&str]) -> Vec<(String, BTreeSet<String>)> {
    (0..images)
        .map(|i| {
            let classes = pool
                .iter()
                .filter(|_| rng.random_bool(0.5))
                .map(|c| c.to_string())
                .collect();
            (format!("im{}", (i * 7) % 10), classes)
        })
        .collect::<BTreeMap<_, _>>()
        .into_iter()
        .collect()
}

fn random_detections(rng: &mut ChaCha8Rng, ids: &[String], pool: &[&str], max: usize) -> Vec<ODet> {
    let mut out = Vec::new();
    for id in ids {
        for _ in 0..rng.random_range(0..=max) {
            out.push(ODet {
                image: id.clone(),
                class: pool[rng.random_range(0..pool.len())].to_string(),
                score: tenth_score(rng),
                bbox: rand_box(rng, 100, 3, 40),
            });
        }
    }
    out
}

fn as_labels(labels: &[(String, BTreeSet<String>)]) -> Vec<ImageLevelLabels> {
    labels
        .iter()
        .map(|(id, c)| ImageLevelLabels::new(id.clone(), c.iter().cloned()))
        .collect()
}

fn entry_tuples(p: &PseudoAnnotation<f64>) -> Vec<(String, [f64; 4], f64)> {
    p.entries
        .iter()
        .map(|e| (e.class_name.clone(), e.bbox.corners(), e.score))
        .collect()
}

// 4
fn mining_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool = ["bird", "boat", "cat", "dog"];
    let ks = [1, 2, 3, 5, 50];
    let n = 1000;
    let (mut mismatches, mut violations) = (0, 0);
    for _ in 0..n {
        let images = rng.random_range(1..=5);
        let labels = random_labels(&mut rng, images, &pool);
        let ids: Vec<String> = labels.iter().map(|l| l.0.clone()).collect();
        let dets = random_detections(&mut rng, &ids, &pool, 10);
        let core_dets = as_detections::<f64>(&dets);
        let core_labels = as_labels(&labels);
        for k in ks {
            let mined = mine_dataset(&core_dets, &core_labels, MiningConfig::new(k).unwrap()).unwrap();
            let expected = oracle::mine(&dets, &labels, k);
            let same = mined.images.len() == expected.len()
                && mined.images.iter().zip(&expected).all(|(m, (id, entries))| {
                    let want: Vec<(String, [f64; 4], f64)> = entries
                        .iter()
                        .map(|(c, b, s)| (c.clone(), to_box::<f64>(*b).corners(), to_scalar(*s)))
                        .collect();
                    &m.image_id == id && entry_tuples(m) == want
                });
            mismatches += usize::from(!same);

            for (m, (_, classes)) in mined.images.iter().zip(&labels) {
                for e in &m.entries {
                    violations += usize::from(!classes.contains(&e.class_name));
                }
                for c in classes {
                    let available = dets.iter().filter(|d| d.image == m.image_id && &d.class == c).count();
                    let got = m.entries.iter().filter(|e| &e.class_name == c).count();
                    violations += usize::from(got != k.min(available));
                }
            }
        }
    }
    check(
        mismatches == 0 && violations == 0,
        format!("{n} instances x k in {ks:?}: {mismatches} mismatches, {violations} invariant violations"),
    )
}

// 5
fn schedule_counts() -> Verdict {
    let fired = |t: TimingRule| -> Vec<u32> { (1..=12).filter(|&e| should_refine(e, 12, t).unwrap()).collect() };
    let every = fired(TimingRule::EveryEpoch);
    let third = fired(TimingRule::EveryThird);
    let last3 = fired(TimingRule::LastThree);
    let once = fired(TimingRule::OnceAtTwoThirds);
    check(
        every.len() == 12 && third.len() == 4 && last3 == [10, 11, 12] && once == [8],
        format!("every={} third={} last3={last3:?} once23={once:?}", every.len(), third.len()),
    )
}

// 6
fn refinement_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let pool = ["car", "cat", "cow"];
    let n = 1000;
    let mut violations: BTreeMap<&str, usize> = BTreeMap::new();
    let mut bump = |name, bad: bool| *violations.entry(name).or_default() += usize::from(bad);
    let policy = |u, k| RefinementPolicy::new(TimingRule::EveryEpoch, u, k).unwrap();
    for _ in 0..n {
        let images = rng.random_range(1..=4);
        let labels = random_labels(&mut rng, images, &pool);
        let ids: Vec<String> = labels.iter().map(|l| l.0.clone()).collect();
        let core_labels = as_labels(&labels);
        let k = [1, 2, 3, 4, 5][rng.random_range(0..5)];
        let earlier = as_detections::<f64>(&random_detections(&mut rng, &ids, &pool, 8));
        let fresh = as_detections::<f64>(&random_detections(&mut rng, &ids, &pool, 8));
        let cfg = MiningConfig::new(k).unwrap();
        let pgt = mine_dataset(&earlier, &core_labels, cfg).unwrap().images;

        let all = refine_dataset(&pgt, &fresh, &core_labels, &policy(UpdateRule::All, k)).unwrap();
        bump("all-rule", all != mine_dataset(&fresh, &core_labels, cfg).unwrap().images);

        for rule in [UpdateRule::All, UpdateRule::BestHalf, UpdateRule::WorstHalf] {
            let current: Vec<Detection<f64>> = pgt.iter().flat_map(PseudoAnnotation::to_detections).collect();
            let fixed = refine_dataset(&pgt, &current, &core_labels, &policy(rule, k)).unwrap();
            bump("fixed-point", fixed != pgt);
        }
        for rule in [UpdateRule::BestHalf, UpdateRule::WorstHalf] {
            let out = refine_dataset(&pgt, &fresh, &core_labels, &policy(rule, k)).unwrap();
            for (before, after) in pgt.iter().zip(&out) {
                for c in &pool {
                    let count = |p: &PseudoAnnotation<f64>| p.entries.iter().filter(|e| e.class_name == *c).count();
                    bump("half-count", count(before) != count(after));
                }
            }
        }

        // complementary halves on one (image, class) with even m
        let m = 2 * rng.random_range(1..=3);
        let mut boxes: Vec<IBox> = Vec::new();
        while boxes.len() < 2 * m {
            let b = rand_box(&mut rng, 100, 3, 40);
            if !boxes.contains(&b) {
                boxes.push(b);
            }
        }
        let current: Vec<_> = {
            let dets: Vec<Detection<f64>> = boxes[..m]
                .iter()
                .map(|b| Detection::new("i", "car", to_scalar(tenth_score(&mut rng)), to_box(*b)).unwrap())
                .collect();
            let mut ranked = mine_dataset(&dets, &as_labels(&[("i".into(), ["car".to_string()].into())]), MiningConfig::new(m).unwrap())
                .unwrap()
                .images;
            ranked.remove(0).entries
        };
        let fresh: Vec<Detection<f64>> = boxes[m..]
            .iter()
            .map(|b| Detection::new("i", "car", to_scalar(tenth_score(&mut rng)), to_box(*b)).unwrap())
            .collect();
        let replaced = |rule| -> BTreeSet<usize> {
            let out = refine_image_class(&current, &fresh, rule, m);
            (0..m).filter(|&i| !out.contains(&current[i])).collect()
        };
        let best = replaced(UpdateRule::BestHalf);
        let worst = replaced(UpdateRule::WorstHalf);
        let complementary = best.len() == m / 2
            && worst.len() == m / 2
            && best.is_disjoint(&worst)
            && best.union(&worst).count() == m;
        bump("complementary-halves", !complementary);
    }
    let total: usize = violations.values().sum();
    check(total == 0, format!("{n} instances, violations {violations:?}"))
}

// 7
fn clustering_properties() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 1200;
    let (mut bad_graph, mut bad_centers, mut bad_indep, mut bad_dom, mut small) = (0, 0, 0, 0, 0);
    for _ in 0..n {
        let count = rng.random_range(1..=10);
        let boxes: Vec<IBox> = (0..count).map(|_| rand_box(&mut rng, 40, 5, 30)).collect();
        let scores: Vec<Q> = (0..count).map(|_| tenth_score(&mut rng)).collect();
        let adj = oracle::adjacency(&boxes, q(2, 5));
        let expected = oracle::greedy_centers(&adj, &scores);
        small += usize::from(count <= 10);

        let float: Vec<ScoredProposal<f64>> =
            ScoredProposal::enumerate(boxes.iter().zip(&scores).map(|(b, s)| (to_box(*b), to_scalar(*s))));
        let exact: Vec<ScoredProposal<Rational>> =
            ScoredProposal::enumerate(boxes.iter().zip(&scores).map(|(b, s)| (to_box(*b), *s)));
        let g = build_graph(&float, 0.4).unwrap();
        let gq = build_graph(&exact, q(2, 5)).unwrap();
        let want_edges: Vec<(usize, usize)> = (0..count)
            .flat_map(|u| (u + 1..count).map(move |v| (u, v)))
            .filter(|&(u, v)| adj[u][v])
            .collect();
        bad_graph += usize::from(g.edges() != want_edges || gq.edges() != want_edges);

        let centers: Vec<usize> = select_centers(&g, &float).iter().map(|c| c.index).collect();
        let centers_q: Vec<usize> = select_centers(&gq, &exact).iter().map(|c| c.index).collect();
        bad_centers += usize::from(centers != expected || centers_q != expected);

        bad_indep += usize::from(centers.iter().any(|&a| centers.iter().any(|&b| adj[a][b])));
        bad_dom += usize::from(
            (0..count).any(|v| !centers.contains(&v) && !centers.iter().any(|&c| adj[v][c])),
        );

        let cs = select_centers(&g, &float);
        let a = assign_clusters(&float, &cs, 0.5).unwrap();
        bad_dom += usize::from(a.assignments.len() != count);
    }
    check(
        bad_graph + bad_centers + bad_indep + bad_dom == 0 && small >= 500,
        format!(
            "{n} candidate sets ({small} with <=10 vertices): graph mismatches {bad_graph}, greedy mismatches {bad_centers}, independence {bad_indep}, domination {bad_dom}"
        ),
    )
}

// 8
fn loss_kernels() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let mut fd_max = 0.0f64;
    let mut points = 0;
    while points < 100 {
        let x: f64 = rng.random_range(-3.0..3.0);
        if (0.999..=1.001).contains(&x.abs()) {
            continue;
        }
        let numeric = (smooth_l1(x + h) - smooth_l1(x - h)) / (2.0 * h);
        let analytic = if x.abs() < 1.0 { x } else { x.signum() };
        fd_max = fd_max.max((numeric - analytic).abs());
        points += 1;
    }
    let suite = gradient_suite(8);
    let suite_ok = suite.iter().all(|g| g.passed());

    let reg = |d: [f64; 4]| RegressionTarget::new(d, [0.0; 4]).unwrap();
    let half = ClassDistribution::new(vec![0.5, 0.5]).unwrap();
    let frcnn_hand = frcnn_loss(&half, 1, &reg([0.5, 0.0, 0.0, 0.0]), 1.0).unwrap();
    let pcl_hand = pcl_bag_loss(&BagLossInput {
        proposal_count: 2,
        class_count: 1,
        clusters: vec![BagCluster {
            confidence: 0.5,
            label: 0,
            member_scores: vec![0.8, 0.6],
        }],
        background: vec![],
    })
    .unwrap();
    let hand_ok = (frcnn_hand - (2f64.ln() + 0.125)).abs() < 1e-9 && (pcl_hand + 0.5 * 0.7f64.ln()).abs() < 1e-9;

    let zeros = [
        frcnn_loss(&ClassDistribution::new(vec![1.0, 0.0]).unwrap(), 0, &reg([5.0, 1.0, 0.0, 0.0]), 1.0).unwrap(),
        frcnn_loss(&ClassDistribution::new(vec![0.0, 1.0]).unwrap(), 1, &reg([0.0; 4]), 1.0).unwrap(),
        rpn_loss(&RpnBatchInput {
            anchors: vec![RpnAnchor {
                prob: 1.0,
                positive: true,
                coords: [0.0; 4],
                target_coords: [0.0; 4],
            }],
            n_cls: 1.0,
            n_reg: 1.0,
            lambda: 1.0,
        })
        .unwrap(),
        pcl_bag_loss(&BagLossInput {
            proposal_count: 1,
            class_count: 1,
            clusters: vec![BagCluster {
                confidence: 1.0,
                label: 0,
                member_scores: vec![1.0],
            }],
            background: vec![],
        })
        .unwrap(),
        pcl_bag_loss(&BagLossInput::<f64> {
            proposal_count: 1,
            class_count: 1,
            clusters: vec![],
            background: vec![BackgroundProposal { weight: 1.0, score: 1.0 }],
        })
        .unwrap(),
    ];
    let zeros_ok = zeros.iter().all(|&z| z == 0.0);

    // direct-summation references on random small inputs
    let mut oracle_max = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..6);
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let u = rng.random_range(0..n);
        let t: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let lambda = rng.random_range(0.0..3.0);
        let got = frcnn_loss(
            &ClassDistribution::new(p.clone()).unwrap(),
            u,
            &RegressionTarget::new(t, v).unwrap(),
            lambda,
        )
        .unwrap();
        oracle_max = oracle_max.max((got - oracle::frcnn(&p, u, t, v, lambda)).abs());

        let anchors: Vec<(f64, bool, [f64; 4], [f64; 4])> = (0..rng.random_range(1..6))
            .map(|_| {
                (
                    rng.random_range(0.01..0.99),
                    rng.random_bool(0.5),
                    std::array::from_fn(|_| rng.random_range(-3.0..3.0)),
                    std::array::from_fn(|_| rng.random_range(-3.0..3.0)),
                )
            })
            .collect();
        let (n_cls, n_reg) = (rng.random_range(1.0..8.0), rng.random_range(1.0..8.0));
        let batch = RpnBatchInput {
            anchors: anchors
                .iter()
                .map(|&(prob, positive, coords, target_coords)| RpnAnchor {
                    prob,
                    positive,
                    coords,
                    target_coords,
                })
                .collect(),
            n_cls,
            n_reg,
            lambda,
        };
        oracle_max = oracle_max.max((rpn_loss(&batch).unwrap() - oracle::rpn(&anchors, n_cls, n_reg, lambda)).abs());

        let clusters: Vec<(f64, Vec<f64>)> = (0..rng.random_range(0..4))
            .map(|_| {
                (
                    rng.random_range(0.0..1.0),
                    (0..rng.random_range(1..5)).map(|_| rng.random_range(0.01..1.0)).collect(),
                )
            })
            .collect();
        let background: Vec<(f64, f64)> = (0..rng.random_range(usize::from(clusters.is_empty())..4))
            .map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.01..1.0)))
            .collect();
        let r = clusters.iter().map(|c| c.1.len()).sum::<usize>() + background.len();
        let input = BagLossInput {
            proposal_count: r,
            class_count: 2,
            clusters: clusters
                .iter()
                .map(|(s, m)| BagCluster {
                    confidence: *s,
                    label: 1,
                    member_scores: m.clone(),
                })
                .collect(),
            background: background
                .iter()
                .map(|&(weight, score)| BackgroundProposal { weight, score })
                .collect(),
        };
        oracle_max = oracle_max.max((pcl_bag_loss(&input).unwrap() - oracle::pcl(r, &clusters, &background)).abs());
    }

    let suite_desc: Vec<String> = suite.iter().map(|g| format!("{} {:.1e}", g.kernel, g.max_error)).collect();
    check(
        fd_max < 1e-6 && suite_ok && hand_ok && zeros_ok && oracle_max < 1e-10,
        format!(
            "smooth_l1 fd max err {fd_max:.2e}; gradient suite [{}]; frcnn {frcnn_hand:.9}; pcl {pcl_hand:.9}; zero cases {zeros:?}; oracle max diff {oracle_max:.1e}",
            suite_desc.join(", ")
        ),
    )
}

fn write_tree(dir: &Path, files: &[(String, String)]) {
    for (rel, contents) in files {
        let p = dir.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, contents).unwrap();
    }
}

fn read_tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Synthetic ground truth, one detection dump, and a 12-epoch loop, all as files.
fn end_to_end(dir: &Path, oracle_cfg: OracleConfig) -> Vec<String> {
    let gt = synthetic_dataset(&SyntheticDatasetConfig {
        seed: oracle_cfg.seed,
        ..SyntheticDatasetConfig::default()
    });
    let mut files: Vec<(String, String)> = gt
        .iter()
        .map(|a| (format!("gt/{}.xml", a.image_id), write_annotation(a)))
        .collect();
    let mut dumper = DetectorOracle::new(oracle_cfg).unwrap();
    let dets: Vec<Detection<f64>> = gt.iter().flat_map(|g| dumper.detect(g)).collect();
    files.push(("detections.txt".into(), write_detections(&dets)));

    let mut detector = DetectorOracle::new(oracle_cfg).unwrap();
    let policy = RefinementPolicy::new(TimingRule::EveryEpoch, UpdateRule::All, 1).unwrap();
    let run = run_refinement_loop(&mut detector, &gt, &policy, 12, 0.5).unwrap();
    files.push(("epochs.csv".into(), epoch_series_csv(&run.epochs)));
    for p in &run.final_pgt {
        files.push((format!("pgt/{}.xml", p.image_id), write_annotation(&p.to_annotation())));
    }
    let pgt_dets: Vec<Detection<f64>> = run.final_pgt.iter().flat_map(PseudoAnnotation::to_detections).collect();
    files.push(("report.csv".into(), report_csv(&evaluate(&pgt_dets, &gt, 0.5).unwrap())));
    write_tree(dir, &files);

    std::iter::once(run.initial_map)
        .chain(run.epochs.iter().map(|e| e.map))
        .map(|m| format!("{m:.6}"))
        .collect()
}

// 9
fn end_to_end_closure() -> Verdict {
    let start = Instant::now();
    let noisy = OracleConfig {
        seed: 9,
        jitter_frac: 0.15,
        miss_rate: 0.2,
        fp_rate: 0.5,
        score_noise: 0.1,
        epoch_gain: 0.1,
    };
    let roots: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    let mut maps = Vec::new();
    for root in &roots {
        maps = end_to_end(&root.path().join("exact"), OracleConfig::exact(9));
        end_to_end(&root.path().join("noisy"), noisy);
    }
    let a = read_tree(roots[0].path());
    let b = read_tree(roots[1].path());
    let identical = a == b && a.len() > 100;
    let perfect = maps.len() == 13 && maps.iter().all(|m| m == "1.000000");
    let elapsed = start.elapsed().as_secs_f64();
    check(
        identical && perfect && elapsed < 10.0,
        format!(
            "mAP per epoch {:?}; {} files byte-identical across reruns: {identical}; {elapsed:.2}s",
            maps.iter().collect::<BTreeSet<_>>(),
            a.len()
        ),
    )
}

// 10
fn k_sweep_trend() -> Verdict {
    let ks = [1usize, 2, 3, 5, 50];
    let seeds = 1..=5u64;
    let mut sums = [0.0f64; 5];
    for seed in seeds.clone() {
        let gt = synthetic_dataset(&SyntheticDatasetConfig {
            seed,
            images: 200,
            instances_per_class: (1, 3),
            ..SyntheticDatasetConfig::default()
        });
        let mut oracle = DetectorOracle::new(OracleConfig {
            seed,
            jitter_frac: 0.15,
            miss_rate: 0.2,
            fp_rate: 0.5,
            score_noise: 0.1,
            epoch_gain: 0.0,
        })
        .unwrap();
        let dets: Vec<Detection<f64>> = gt.iter().flat_map(|g| oracle.detect(g)).collect();
        let labels: Vec<ImageLevelLabels> = gt.iter().map(image_level_labels).collect();
        for (slot, &k) in ks.iter().enumerate() {
            let pgt = mine_dataset(&dets, &labels, MiningConfig::new(k).unwrap()).unwrap();
            sums[slot] += evaluate(&pgt.detections(), &gt, 0.5).unwrap().map;
        }
    }
    let n = seeds.count() as f64;
    let mean: Vec<f64> = sums.iter().map(|s| s / n).collect();
    let up = mean[1] >= mean[0] && mean[2] >= mean[0];
    let k50_worst = mean[..4].iter().all(|&m| mean[4] < m);
    let desc: Vec<String> = ks.iter().zip(&mean).map(|(k, m)| format!("k={k}: {m:.4}")).collect();
    check(
        up && k50_worst,
        format!(
            "mean PGT mAP {}; k=2,3 >= k=1: {up}; k=50 strictly worst: {k50_worst}",
            desc.join(", ")
        ),
    )
}

fn random_annotation(rng: &mut ChaCha8Rng) -> ImageAnnotation<f64> {
    const ID_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789_-";
    const NAMES: [&str; 7] = ["cat", "dog", "person", "pottedplant", "tv monitor", "a&b", "x<y>\"z'"];
    let id: String = (0..rng.random_range(1..12))
        .map(|_| ID_CHARS[rng.random_range(0..ID_CHARS.len())] as char)
        .collect();
    let (w, h) = (rng.random_range(1..1000u32), rng.random_range(1..1000u32));
    let mut a = ImageAnnotation::new(id, w, h);
    for _ in 0..rng.random_range(0..8) {
        let (x0, x1) = (rng.random_range(0..w), rng.random_range(0..w));
        let (y0, y1) = (rng.random_range(0..h), rng.random_range(0..h));
        let (x0, x1) = (x0.min(x1), x0.max(x1).max(x0.min(x1) + 1));
        let (y0, y1) = (y0.min(y1), y0.max(y1).max(y0.min(y1) + 1));
        let bbox = BBox::new(x0 as f64, y0 as f64, x1 as f64, y1 as f64).unwrap();
        a = a.with_object(NAMES[rng.random_range(0..NAMES.len())], bbox);
    }
    a
}

fn mutate(rng: &mut ChaCha8Rng, base: &[u8]) -> (Vec<u8>, bool) {
    let mut v = base.to_vec();
    match rng.random_range(0..7) {
        // cut before the closing root tag
        0 => {
            let end = base.len() - "</annotation>\n".len();
            v.truncate(rng.random_range(0..end));
            (v, true)
        }
        1 => {
            for _ in 0..rng.random_range(1..4) {
                let i = rng.random_range(0..v.len());
                v[i] = rng.random();
            }
            (v, false)
        }
        2 => {
            let lines: Vec<&[u8]> = base.split(|&b| b == b'\n').collect();
            let skip = rng.random_range(0..lines.len());
            let kept: Vec<&[u8]> = lines
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != skip)
                .map(|(_, l)| *l)
                .collect();
            (kept.join(&b'\n'), false)
        }
        3 => {
            let text = String::from_utf8_lossy(base).into_owned();
            let garbage = ["abc", "-5", "1e999", "NaN", "", "3.5.1", "99999999999", "&amp;"];
            let tags = ["xmin", "ymin", "xmax", "ymax", "width", "height", "name", "filename"];
            let tag = tags[rng.random_range(0..tags.len())];
            let g = garbage[rng.random_range(0..garbage.len())];
            let open = format!("<{tag}>");
            let close = format!("</{tag}>");
            let out = match (text.find(&open), text.find(&close)) {
                (Some(s), Some(e)) if s < e => format!("{}{open}{g}{}", &text[..s], &text[e..]),
                _ => text,
            };
            (out.into_bytes(), false)
        }
        4 => {
            let len = rng.random_range(1..200);
            let mut junk: Vec<u8> = (0..len).map(|_| rng.random()).collect();
            if junk[0] == b'<' || junk[0].is_ascii_whitespace() {
                junk[0] = b'x';
            }
            (junk, true)
        }
        5 => {
            let text = String::from_utf8_lossy(base).into_owned();
            let tags = ["</bndbox>", "</object>", "</size>", "</annotation>"];
            let tag = tags[rng.random_range(0..tags.len())];
            let out = text.replacen(tag, "", 1);
            let changed = out != text;
            (out.into_bytes(), changed)
        }
        _ => {
            let i = rng.random_range(0..v.len());
            let insert: &[u8] = [&b"<"[..], b"&", b"<!--", b"]]>", b"\0", b"\xff\xfe"][rng.random_range(0..6)];
            v.splice(i..i, insert.iter().copied());
            (v, false)
        }
    }
}

// 11
fn xml_round_trip() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0;
    for _ in 0..500 {
        let a = random_annotation(&mut rng);
        let s1 = write_annotation(&a);
        let Ok(b) = parse_annotation::<f64>(&s1) else {
            failures += 1;
            continue;
        };
        let s2 = write_annotation(&b);
        let c = parse_annotation::<f64>(&s2);
        failures += usize::from(b != a || s2 != s1 || c.as_ref() != Ok(&b));
    }

    let mut real = 0;
    if let Ok(dir) = std::env::var("WSOD_VOC_DIR") {
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map(|d| d.filter_map(|e| e.ok().map(|e| e.path())).collect())
            .unwrap_or_default();
        paths.retain(|p| p.extension().is_some_and(|x| x == "xml"));
        paths.sort();
        for p in paths {
            real += 1;
            let ok = fs::read(&p).ok().and_then(|bytes| parse_annotation_bytes::<f64>(&bytes).ok()).is_some_and(|a| {
                let s = write_annotation(&a);
                parse_annotation::<f64>(&s).as_ref() == Ok(&a)
            });
            failures += usize::from(!ok);
        }
    }

    let (mut crashes, mut unrejected, mut errors) = (0, 0, 0);
    let base: Vec<Vec<u8>> = (0..20).map(|_| write_annotation(&random_annotation(&mut rng)).into_bytes()).collect();
    let previous_hook = std::panic::take_hook();
    std::panic::set_hook(Box::new(|_| {}));
    for i in 0..10_000 {
        let (input, must_fail) = mutate(&mut rng, &base[i % base.len()]);
        match catch_unwind(AssertUnwindSafe(|| parse_annotation_bytes::<f64>(&input))) {
            Err(_) => crashes += 1,
            Ok(Err(e)) => {
                errors += 1;
                unrejected += usize::from(e.to_string().is_empty());
            }
            Ok(Ok(_)) => unrejected += usize::from(must_fail),
        }
    }
    std::panic::set_hook(previous_hook);

    check(
        failures == 0 && crashes == 0 && unrejected == 0,
        format!(
            "500 random + {real} supplied VOC files, {failures} round-trip failures; fuzz 10000 inputs: {errors} structured errors, {crashes} crashes, {unrejected} malformed inputs accepted"
        ),
    )
}

type Criterion = fn() -> Verdict;

fn main() {
    // `cargo test` forwards harness flags; a bare word filters criteria by name.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(&str, Criterion); 11] = [
        ("worked_example", worked_example),
        ("ap_oracle_equivalence", ap_oracle_equivalence),
        ("hand_computed_ap", hand_computed_ap),
        ("mining_oracle_equivalence", mining_oracle_equivalence),
        ("schedule_counts", schedule_counts),
        ("refinement_properties", refinement_properties),
        ("clustering_properties", clustering_properties),
        ("loss_kernels", loss_kernels),
        ("end_to_end_closure", end_to_end_closure),
        ("k_sweep_trend", k_sweep_trend),
        ("xml_round_trip", xml_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let verdict = catch_unwind(run).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failed += usize::from(verdict.is_err());
        println!("criterion {:>2} {tag} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
