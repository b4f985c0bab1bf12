mod common;

use common::{enumerate, random_table, rng};
use ctrlgen_core::constraints::{
    coverage_penalty, diversity_penalty, exclusion_penalty, extract_alignments, fit_penalty, inclusion_penalty,
    sparsity_penalty, total_penalty, Alignment, AlignmentSet, ConstraintMode, DynamicMapping, FieldStateMap,
    Mapping, PenaltyConfig,
};
use ctrlgen_core::data::{Field, FieldInventory, Table};
use ctrlgen_core::semicrf::{covariance, span_marginals, PotentialTable, Segmentation};
use proptest::prelude::*;
use rand::Rng;

/// Static map with fields `0..nf` on states `0..nf` and `nf` as the other state.
fn sigma(nf: usize, labels: usize) -> FieldStateMap {
    FieldStateMap::identity(nf, labels).unwrap()
}

fn random_alignments(rng: &mut impl Rng, len: usize, max_seg: usize, nf: usize) -> AlignmentSet {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < len {
        let d = rng.random_range(1..=max_seg.min(len - i));
        if rng.random_bool(0.5) {
            spans.push(Alignment { start: i, end: i + d, field: rng.random_range(0..nf) });
        }
        i += d;
    }
    AlignmentSet::new(spans)
}

fn has_span(z: &Segmentation, i: usize, j: usize, c: usize) -> bool {
    z.spans().iter().any(|s| s.start == i && s.start + s.len() == j && s.label == c)
}

fn expect(all: &[(Segmentation, f64)], f: impl Fn(&Segmentation) -> f64) -> f64 {
    all.iter().map(|(z, p)| p * f(z)).sum()
}

struct Case {
    pt: PotentialTable,
    align: AlignmentSet,
    active: Vec<usize>,
    nf: usize,
}

fn case(rng: &mut impl Rng) -> Case {
    let len = rng.random_range(1..=5);
    let max_seg = rng.random_range(1..=3);
    let labels = rng.random_range(2..=3);
    let nf = labels - 1;
    let pt = random_table(rng, len, max_seg, labels, 1.5);
    let align = random_alignments(rng, len, max_seg, nf);
    let mut active: Vec<usize> = align.spans.iter().map(|a| a.field).collect();
    if nf > 1 && rng.random_bool(0.3) {
        active.push(nf - 1);
    }
    active.sort();
    active.dedup();
    Case { pt, align, active, nf }
}

#[test]
fn one_to_one_penalties_match_enumeration() {
    let mut r = rng(21);
    for _ in 0..200 {
        let c = case(&mut r);
        let all = enumerate(&c.pt);
        let q = span_marginals(&c.pt);
        let s = sigma(c.nf, c.pt.labels());

        let inc = c
            .align
            .spans
            .iter()
            .map(|a| 1.0 - expect(&all, |z| has_span(z, a.start, a.end, s.state(a.field)) as u8 as f64))
            .sum::<f64>();
        assert!((inclusion_penalty(&q, &c.align, &s).value - inc).abs() < 1e-6);

        let exc = expect(&all, |z| {
            z.spans()
                .iter()
                .filter(|sp| {
                    c.active.iter().any(|&f| {
                        sp.label == s.state(f) && !c.align.contains(sp.start, sp.start + sp.len(), f)
                    })
                })
                .count() as f64
        });
        let got = exclusion_penalty(&q, &c.align, &s, &c.active).value;
        assert!((got - exc).abs() < 1e-6, "{got} vs {exc}");

        let cov: f64 = (0..c.nf)
            .map(|f| {
                let used = expect(&all, |z| z.spans().iter().filter(|sp| sp.label == s.state(f)).count() as f64);
                (used - if c.active.contains(&f) { 1.0 } else { 0.0 }).abs()
            })
            .sum();
        assert!((coverage_penalty(&q, &s, &c.active).value - cov).abs() < 1e-6);
    }
}

#[test]
fn one_to_many_penalties_match_direct_computation() {
    let mut r = rng(22);
    for _ in 0..200 {
        let c = case(&mut r);
        let labels = c.pt.labels();
        let all = enumerate(&c.pt);
        let q = span_marginals(&c.pt);
        let mut m = DynamicMapping::zeros(c.nf, labels);
        m.logits.iter_mut().for_each(|v| *v = r.random_range(-2.0..2.0));

        let sp: f64 = (0..c.nf)
            .map(|f| {
                let z: f64 = m.row(f).iter().map(|x| x.exp()).sum();
                -m.row(f).iter().map(|x| (x.exp() / z) * (x.exp() / z).ln()).sum::<f64>()
            })
            .sum();
        assert!((sparsity_penalty(&m).0 - sp).abs() < 1e-9);

        let fit: f64 = c
            .align
            .spans
            .iter()
            .map(|a| {
                let w = m.probs(a.field);
                -(0..labels)
                    .map(|k| w[k] * expect(&all, |z| has_span(z, a.start, a.end, k) as u8 as f64).max(1e-12).ln())
                    .sum::<f64>()
            })
            .sum();
        assert!((fit_penalty(&q, &c.align, &m, 1e-12).value - fit).abs() < 1e-6);

        let usage: Vec<f64> = (0..labels)
            .map(|k| expect(&all, |z| z.token_labels().iter().filter(|&&l| l == k).count() as f64))
            .collect();
        let total: f64 = usage.iter().sum();
        let h: f64 = -usage.iter().map(|u| u / total).filter(|p| *p > 0.0).map(|p| p * p.ln()).sum::<f64>();
        let div = (labels as f64).ln() - h;
        assert!((diversity_penalty(&q, 1e-12).value - div).abs() < 1e-6);
    }
}

fn penalty_value(pt: &PotentialTable, c: &Case, m: &DynamicMapping, mode: ConstraintMode) -> f64 {
    let cfg = PenaltyConfig { lambda: 0.7, mode, weights: [1.0, 0.5, 2.0], floor: 1e-12 };
    let q = span_marginals(pt);
    let s = sigma(c.nf, pt.labels());
    let mapping = match mode {
        ConstraintMode::OneToOne => Mapping::Static(&s),
        ConstraintMode::OneToMany => Mapping::Learned(m),
    };
    total_penalty(&cfg, &q, &c.align, mapping, &c.active).unwrap().total
}

#[test]
fn penalty_gradients_match_finite_differences() {
    let mut r = rng(23);
    let h = 1e-5;
    for mode in [ConstraintMode::OneToOne, ConstraintMode::OneToMany] {
        for _ in 0..30 {
            let c = case(&mut r);
            let mut m = DynamicMapping::zeros(c.nf, c.pt.labels());
            m.logits.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
            let cfg = PenaltyConfig { lambda: 0.7, mode, weights: [1.0, 0.5, 2.0], floor: 1e-12 };
            let q = span_marginals(&c.pt);
            let s = sigma(c.nf, c.pt.labels());
            let mapping = match mode {
                ConstraintMode::OneToOne => Mapping::Static(&s),
                ConstraintMode::OneToMany => Mapping::Learned(&m),
            };
            let report = total_penalty(&cfg, &q, &c.align, mapping, &c.active).unwrap();
            let g = covariance(&c.pt, &report.grad);
            let (len, max_seg, labels) = (c.pt.len(), c.pt.max_seg(), c.pt.labels());
            for i in 0..len {
                for d in 1..=c.pt.max_len_at(i) {
                    for k in 0..labels {
                        let v = c.pt.emission(i, d, k);
                        let mut up = c.pt.clone();
                        up.set_emission(i, d, k, v + h);
                        let mut down = c.pt.clone();
                        down.set_emission(i, d, k, v - h);
                        let fd = (penalty_value(&up, &c, &m, mode) - penalty_value(&down, &c, &m, mode)) / (2.0 * h);
                        let an = g.emission(i, d, k);
                        assert!((fd - an).abs() < 1e-5 * an.abs().max(1.0), "{mode:?} {len} {max_seg} ({i},{d},{k}): {an} vs {fd}");
                    }
                }
            }
            if let Some(gm) = &report.grad_mapping {
                for k in 0..m.logits.len() {
                    let v = m.logits[k];
                    let mut mu = m.clone();
                    mu.logits[k] = v + h;
                    let mut md = m.clone();
                    md.logits[k] = v - h;
                    let fd = (penalty_value(&c.pt, &c, &mu, mode) - penalty_value(&c.pt, &c, &md, mode)) / (2.0 * h);
                    assert!((fd - gm[k]).abs() < 1e-5 * gm[k].abs().max(1.0), "mapping {k}: {} vs {fd}", gm[k]);
                }
            }
        }
    }
}

#[test]
fn alignment_consistent_posterior_has_zero_one_to_one_penalty() {
    // A chart saturated on the segmentation [0,2)->0 [2,3)->2 [3,4)->1.
    let mut pt = PotentialTable::zeros(4, 2, 3).unwrap();
    let gold = Segmentation::from_token_labels(&[0, 0, 2, 1], 2);
    for i in 0..4 {
        for d in 1..=pt.max_len_at(i) {
            for k in 0..3 {
                let hit = gold.spans().iter().any(|s| s.start == i && s.len() == d && s.label == k);
                pt.set_emission(i, d, k, if hit { 0.0 } else { -60.0 });
            }
        }
    }
    let q = span_marginals(&pt);
    let s = sigma(2, 3);
    let align = AlignmentSet::new(vec![
        Alignment { start: 0, end: 2, field: 0 },
        Alignment { start: 3, end: 4, field: 1 },
    ]);
    assert!(inclusion_penalty(&q, &align, &s).value < 1e-12);
    assert!(exclusion_penalty(&q, &align, &s, &[0, 1]).value < 1e-12);
    assert!(coverage_penalty(&q, &s, &[0, 1]).value < 1e-12);
}

#[test]
fn lambda_zero_silences_every_term() {
    let mut r = rng(24);
    let c = case(&mut r);
    let cfg = PenaltyConfig { lambda: 0.0, ..PenaltyConfig::default() };
    let q = span_marginals(&c.pt);
    let s = sigma(c.nf, c.pt.labels());
    let rep = total_penalty(&cfg, &q, &c.align, Mapping::Static(&s), &c.active).unwrap();
    assert_eq!(rep.total, 0.0);
    assert!(rep.grad.emission.iter().all(|g| *g == 0.0));
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn repeated_value_aligns_both_occurrences() {
    let fields = FieldInventory::new(vec!["name".into(), "near".into()]).unwrap();
    let table = Table::new(vec![Field::new("name", &["zizzi"]), Field::new("near", &["clare", "hall"])]);
    let a = extract_alignments(&table, &words("zizzi near clare hall is zizzi"), &fields).unwrap();
    let got: Vec<(usize, usize, usize)> = a.spans.iter().map(|s| (s.start, s.end, s.field)).collect();
    assert_eq!(got, vec![(0, 1, 0), (2, 4, 1), (5, 6, 0)]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn penalties_are_nonnegative(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let c = case(&mut r);
        let q = span_marginals(&c.pt);
        let s = sigma(c.nf, c.pt.labels());
        let mut m = DynamicMapping::zeros(c.nf, c.pt.labels());
        m.logits.iter_mut().for_each(|v| *v = r.random_range(-3.0..3.0));
        prop_assert!(inclusion_penalty(&q, &c.align, &s).value >= -1e-12);
        prop_assert!(exclusion_penalty(&q, &c.align, &s, &c.active).value >= -1e-12);
        prop_assert!(coverage_penalty(&q, &s, &c.active).value >= 0.0);
        prop_assert!(sparsity_penalty(&m).0 >= -1e-12);
        prop_assert!(fit_penalty(&q, &c.align, &m, 1e-12).value >= -1e-12);
        prop_assert!(diversity_penalty(&q, 1e-12).value >= -1e-12);
    }

    #[test]
    fn extracted_alignments_match_their_field(seed in 0u64..1_000_000) {
        let mut r = rng(seed);
        let pool = ["a", "b", "c", "d", "e"];
        let fields = FieldInventory::new(vec!["f0".into(), "f1".into(), "f2".into()]).unwrap();
        let table = Table::new(
            (0..3)
                .map(|k| {
                    let n = r.random_range(1..=3);
                    let v: Vec<&str> = (0..n).map(|_| pool[r.random_range(0..pool.len())]).collect();
                    Field::new(&format!("f{k}"), &v)
                })
                .collect(),
        );
        let n = r.random_range(0..10);
        let y: Vec<String> = (0..n).map(|_| pool[r.random_range(0..pool.len())].to_string()).collect();
        let a = extract_alignments(&table, &y, &fields).unwrap();
        let mut last = 0;
        for s in &a.spans {
            prop_assert!(s.start >= last && s.start < s.end && s.end <= y.len());
            last = s.end;
            let v = &table.fields[s.field].value;
            let span = &y[s.start..s.end];
            prop_assert!(v.windows(span.len()).any(|w| w == span));
        }
    }
}
