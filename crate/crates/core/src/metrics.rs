//! Communication success, production preferences and the rank correlation
//! used for the order/marking trade-off.

use crate::agent::Agent;
use crate::lang::{classify_utterance, Meaning, Order, Utterance};

pub fn exact_match(m: &Meaning, m_hat: &Meaning) -> u32 {
    (m == m_hat) as u32
}

/// Greedy speaker of `speaker`, greedy listener of `listener`; mean exact match.
pub fn acc_inter(speaker: &Agent, listener: &Agent, meanings: &[Meaning]) -> f64 {
    if meanings.is_empty() {
        return 0.0;
    }
    let hits: u32 = meanings
        .iter()
        .map(|m| {
            let u = speaker.speak_greedy(m);
            let (m_hat, _) = listener.listen(&u).expect("speaker never emits empty utterances");
            exact_match(m, &m_hat)
        })
        .sum();
    hits as f64 / meanings.len() as f64
}

pub fn acc_self(a: &Agent, meanings: &[Meaning]) -> f64 {
    acc_inter(a, a, meanings)
}

/// Listening accuracy against gold utterances.
pub fn listening_accuracy(a: &Agent, pairs: &[(Meaning, Utterance)]) -> f64 {
    let hits: u32 = pairs
        .iter()
        .map(|(m, u)| exact_match(m, &a.listen(u).expect("gold utterances are non-empty").0))
        .sum();
    hits as f64 / pairs.len().max(1) as f64
}

/// Share of meanings whose greedy utterance equals the gold one.
pub fn speaking_accuracy(a: &Agent, pairs: &[(Meaning, Utterance)]) -> f64 {
    let hits = pairs.iter().filter(|(m, u)| a.speak_greedy(m) == *u).count();
    hits as f64 / pairs.len().max(1) as f64
}

/// Shannon entropy in bits of the SOV/OSV split.
pub fn order_entropy(p_sov: f64) -> f64 {
    let h = |p: f64| if p > 0.0 { -p * p.log2() } else { 0.0 };
    h(p_sov) + h(1.0 - p_sov)
}

/// Production preferences over the grammar-classifiable part of an
/// utterance log. Proportions are `None` when nothing was classifiable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PreferenceProfile {
    pub p_sov: Option<f64>,
    pub p_marker: Option<f64>,
    pub p_marker_given_sov: Option<f64>,
    pub p_marker_given_osv: Option<f64>,
    pub order_entropy: Option<f64>,
    pub n_classifiable: usize,
    pub n_total: usize,
    /// Mean words per utterance over all utterances (effort).
    pub mean_length: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
struct Counts {
    sov: usize,
    osv: usize,
    sov_marked: usize,
    osv_marked: usize,
    total: usize,
    words: usize,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl PreferenceProfile {
    pub const CSV_HEADER: &'static str =
        "p_sov,p_marker,p_marker_given_sov,p_marker_given_osv,order_entropy,n_classifiable,n_total,mean_length";

    pub fn from_log(log: &[(Meaning, Utterance)]) -> Self {
        let mut c = Counts::default();
        for (m, u) in log {
            c.total += 1;
            c.words += u.len();
            if let Some(cat) = classify_utterance(u, m) {
                match (cat.order, cat.marked) {
                    (Order::Sov, mk) => {
                        c.sov += 1;
                        c.sov_marked += mk as usize;
                    }
                    (Order::Osv, mk) => {
                        c.osv += 1;
                        c.osv_marked += mk as usize;
                    }
                }
            }
        }
        let n = c.sov + c.osv;
        let p_sov = ratio(c.sov, n);
        PreferenceProfile {
            p_sov,
            p_marker: ratio(c.sov_marked + c.osv_marked, n),
            p_marker_given_sov: ratio(c.sov_marked, c.sov),
            p_marker_given_osv: ratio(c.osv_marked, c.osv),
            order_entropy: p_sov.map(order_entropy),
            n_classifiable: n,
            n_total: c.total,
            mean_length: ratio(c.words, c.total),
        }
    }

    pub fn csv_fields(&self) -> String {
        let f = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{},{}",
            f(self.p_sov),
            f(self.p_marker),
            f(self.p_marker_given_sov),
            f(self.p_marker_given_osv),
            f(self.order_entropy),
            self.n_classifiable,
            self.n_total,
            f(self.mean_length)
        )
    }
}

/// Greedy productions of `a` for each meaning.
pub fn production_log(a: &Agent, meanings: &[Meaning]) -> Vec<(Meaning, Utterance)> {
    meanings.iter().map(|m| (*m, a.speak_greedy(m))).collect()
}

pub fn production_profile(a: &Agent, meanings: &[Meaning]) -> PreferenceProfile {
    PreferenceProfile::from_log(&production_log(a, meanings))
}

/// One profile over the pooled productions of every agent.
pub fn group_profile(agents: &[&Agent], meanings: &[Meaning]) -> PreferenceProfile {
    let log: Vec<_> = agents.iter().flat_map(|a| production_log(a, meanings)).collect();
    PreferenceProfile::from_log(&log)
}

/// Fractional ranks (1-based), ties share their average rank.
pub fn fractional_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's ρ: Pearson correlation of fractional ranks. `None` for
/// mismatched lengths, fewer than two points, or a constant input.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Option<f64> {
    if xs.len() != ys.len() {
        return None;
    }
    pearson(&fractional_ranks(xs), &fractional_ranks(ys))
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::{enumerate_meanings, realize, Category};
    use proptest::prelude::*;

    fn log_with(cats: &[(Category, usize)]) -> Vec<(Meaning, Utterance)> {
        let ms = enumerate_meanings();
        let mut out = Vec::new();
        let mut k = 0;
        for (cat, n) in cats {
            for _ in 0..*n {
                let m = ms[k % ms.len()];
                out.push((m, realize(&m, *cat)));
                k += 1;
            }
        }
        out
    }

    const SOV: Category = Category {
        order: Order::Sov,
        marked: false,
    };
    const OSV_MK: Category = Category {
        order: Order::Osv,
        marked: true,
    };

    #[test]
    fn exact_match_cases() {
        let m = Meaning::new(1, 2, 3).unwrap();
        assert_eq!(exact_match(&m, &m), 1);
        assert_eq!(exact_match(&m, &Meaning::new(1, 3, 2).unwrap()), 0);
    }

    #[test]
    fn entropy_cases() {
        let p = PreferenceProfile::from_log(&log_with(&[(SOV, 10)]));
        assert_eq!(p.p_sov, Some(1.0));
        assert_eq!(p.order_entropy, Some(0.0));
        assert_eq!(p.mean_length, Some(3.0));
        let p = PreferenceProfile::from_log(&log_with(&[(SOV, 5), (OSV_MK, 5)]));
        assert!((p.order_entropy.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(p.p_marker, Some(0.5));
        assert_eq!(p.p_marker_given_sov, Some(0.0));
        assert_eq!(p.p_marker_given_osv, Some(1.0));
        assert_eq!(p.mean_length, Some(3.5));
        // -0.8 log2 0.8 - 0.2 log2 0.2
        assert!((order_entropy(0.8) - 0.721_928_094_887_362_3).abs() < 1e-12);
    }

    #[test]
    fn unclassifiable_profile_is_undefined() {
        let m = Meaning::new(0, 1, 2).unwrap();
        let p = PreferenceProfile::from_log(&[(m, "e5 a3".parse().unwrap())]);
        assert_eq!(p.n_classifiable, 0);
        assert_eq!(p.n_total, 1);
        assert!(p.p_sov.is_none() && p.order_entropy.is_none() && p.p_marker.is_none());
        assert_eq!(p.mean_length, Some(2.0));
        assert_eq!(p.csv_fields(), ",,,,,0,1,2");
    }

    #[test]
    fn pooled_profile_of_opposite_producers() {
        let mut log = log_with(&[(SOV, 30)]);
        log.extend(log_with(&[(
            Category {
                order: Order::Osv,
                marked: false,
            },
            30,
        )]));
        let p = PreferenceProfile::from_log(&log);
        assert!((p.order_entropy.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_examples() {
        assert_eq!(spearman_rho(&[1., 2., 3., 4.], &[10., 20., 30., 40.]), Some(1.0));
        assert_eq!(spearman_rho(&[1., 2., 3., 4.], &[4., 3., 2., 1.]), Some(-1.0));
        let r = spearman_rho(&[1., 2., 3., 4.], &[2., 1., 4., 3.]).unwrap();
        assert!((r - 0.6).abs() < 1e-12);
        assert_eq!(spearman_rho(&[1.0], &[2.0]), None);
        assert_eq!(spearman_rho(&[1.0, 1.0], &[2.0, 3.0]), None);
        assert_eq!(fractional_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn mean_std_sample() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.290_994_448_735_805_6).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn spearman_invariant_under_monotone_maps(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 3..40)
        ) {
            let xs: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let ys: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let base = spearman_rho(&xs, &ys);
            let xs2: Vec<f64> = xs.iter().map(|x| (x / 50.0).exp()).collect();
            let ys2: Vec<f64> = ys.iter().map(|y| y * 3.0 - 7.0).collect();
            match (base, spearman_rho(&xs2, &ys2)) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9),
                (a, b) => prop_assert_eq!(a, b),
            }
        }

        #[test]
        fn entropy_symmetric_and_bounded(p in 0.0f64..=1.0) {
            let h = order_entropy(p);
            prop_assert!((0.0..=1.0 + 1e-12).contains(&h));
            prop_assert!((h - order_entropy(1.0 - p)).abs() < 1e-12);
            prop_assert!(h <= order_entropy(0.5) + 1e-12);
        }

        #[test]
        fn pooled_proportions_are_weighted_means(
            a in prop::collection::vec(0usize..4, 1..30),
            b in prop::collection::vec(0usize..4, 1..30),
        ) {
            let cat = |i: usize| Category {
                order: if i.is_multiple_of(2) { Order::Sov } else { Order::Osv },
                marked: i >= 2,
            };
            let la = log_with(&a.iter().map(|&i| (cat(i), 1)).collect::<Vec<_>>());
            let lb = log_with(&b.iter().map(|&i| (cat(i), 1)).collect::<Vec<_>>());
            let pa = PreferenceProfile::from_log(&la);
            let pb = PreferenceProfile::from_log(&lb);
            let mut all = la.clone();
            all.extend(lb.clone());
            let pooled = PreferenceProfile::from_log(&all);
            let (na, nb) = (pa.n_classifiable as f64, pb.n_classifiable as f64);
            let want = (pa.p_marker.unwrap() * na + pb.p_marker.unwrap() * nb) / (na + nb);
            prop_assert!((pooled.p_marker.unwrap() - want).abs() < 1e-12);
            let want = (pa.p_sov.unwrap() * na + pb.p_sov.unwrap() * nb) / (na + nb);
            prop_assert!((pooled.p_sov.unwrap() - want).abs() < 1e-12);
        }
    }
}
