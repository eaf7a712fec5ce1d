//! Matching rates between example subsets and mean-image diversity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use image::ImageEncoder as _;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageShape};
use crate::easiness::{
    fraction_count, select_extremes, EasinessTable, ExampleSubset, Extreme, SubsetKind,
};
use crate::error::{Error, Result};
use crate::io;
use crate::rng::{self, Stream};

/// `|A ∩ B| / max(|A|, |B|)`.
pub fn matching_rate(a: &ExampleSubset, b: &ExampleSubset) -> Result<f64> {
    set_matching_rate(&a.ids, &b.ids)
}

pub fn set_matching_rate(a: &BTreeSet<String>, b: &BTreeSet<String>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::validation("subset", "matching rate needs two nonempty sets"));
    }
    let shared = a.intersection(b).count();
    Ok(shared as f64 / a.len().max(b.len()) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingReport {
    /// `A x B` for two architectures, `begin x end` for one architecture.
    pub pair: String,
    pub kind: SubsetKind,
    pub t_a: u64,
    pub t_b: u64,
    pub rate: f64,
    pub chance_rate: f64,
}

pub fn reports_csv(reports: &[MatchingReport]) -> String {
    let mut out = String::from("pair,kind,T_a,T_b,rate,chance_rate\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.4},{:.4}",
            r.pair, r.kind, r.t_a, r.t_b, r.rate, r.chance_rate
        );
    }
    out
}

fn check_same_dataset(tables: &[&EasinessTable]) -> Result<()> {
    if let Some(first) = tables.first() {
        if let Some(other) = tables.iter().find(|t| t.dataset_id != first.dataset_id) {
            return Err(Error::validation(
                "tables",
                format!(
                    "dataset ids differ: {} vs {}",
                    first.dataset_id, other.dataset_id
                ),
            ));
        }
    }
    Ok(())
}

/// Pairwise matching between the `kind` subsets of tables from different
/// architectures, for every update count present in at least two tables.
/// The chance rate of two independent uniform `fraction` subsets is `fraction`.
pub fn cross_architecture_matching(
    tables: &[&EasinessTable],
    fraction: f64,
    kind: Extreme,
) -> Result<Vec<MatchingReport>> {
    if tables.len() < 2 {
        return Err(Error::validation("tables", "need at least two tables"));
    }
    check_same_dataset(tables)?;
    let mut by_t: BTreeMap<u64, Vec<&EasinessTable>> = BTreeMap::new();
    for t in tables {
        by_t.entry(t.t_updates).or_default().push(t);
    }
    let mut reports = Vec::new();
    for (t, group) in by_t {
        let subsets = group
            .iter()
            .map(|table| select_extremes(table, fraction, kind))
            .collect::<Result<Vec<_>>>()?;
        for i in 0..group.len() {
            for j in i + 1..group.len() {
                if group[i].arch_fingerprint == group[j].arch_fingerprint {
                    continue;
                }
                reports.push(MatchingReport {
                    pair: format!("{} x {}", group[i].architecture, group[j].architecture),
                    kind: kind.kind(),
                    t_a: t,
                    t_b: t,
                    rate: matching_rate(&subsets[i], &subsets[j])?,
                    chance_rate: fraction,
                });
            }
        }
    }
    Ok(reports)
}

/// Matching between the `kind` subsets of one architecture early and late in
/// training.
pub fn begin_end_matching(
    early: &EasinessTable,
    late: &EasinessTable,
    fraction: f64,
    kind: Extreme,
) -> Result<MatchingReport> {
    check_same_dataset(&[early, late])?;
    if early.arch_fingerprint != late.arch_fingerprint {
        return Err(Error::validation(
            "tables",
            format!(
                "begin/end tables come from different architectures: {} vs {}",
                early.architecture, late.architecture
            ),
        ));
    }
    if early.t_updates >= late.t_updates {
        return Err(Error::validation(
            "T",
            format!(
                "early T ({}) must be smaller than final T ({})",
                early.t_updates, late.t_updates
            ),
        ));
    }
    Ok(MatchingReport {
        pair: format!("{} begin x end", early.architecture),
        kind: kind.kind(),
        t_a: early.t_updates,
        t_b: late.t_updates,
        rate: matching_rate(
            &select_extremes(early, fraction, kind)?,
            &select_extremes(late, fraction, kind)?,
        )?,
        chance_rate: fraction,
    })
}

/// Uniform `⌊fraction · N⌋` subset of `ids`.
pub fn random_subset(ids: &BTreeSet<String>, fraction: f64, seed: u64) -> ExampleSubset {
    let all: Vec<&String> = ids.iter().collect();
    let k = fraction_count(fraction, all.len());
    let mut rng = rng::stream(seed, Stream::Sampling);
    let picked = index::sample(&mut rng, all.len(), k)
        .into_iter()
        .map(|i| all[i].clone())
        .collect();
    ExampleSubset::new(
        SubsetKind::Random,
        picked,
        format!("uniform {fraction} seed {seed}"),
    )
}

/// Mean matching rate of `pairs` independent uniform subset pairs.
pub fn chance_rate_monte_carlo(n: usize, fraction: f64, pairs: usize, seed: u64) -> Result<f64> {
    let k = fraction_count(fraction, n);
    if k == 0 || pairs == 0 {
        return Err(Error::validation("monte carlo", "empty subsets or no pairs"));
    }
    let mut rng = rng::stream(seed, Stream::Sampling);
    let mut member = vec![false; n];
    let mut total = 0.0;
    for _ in 0..pairs {
        member.iter_mut().for_each(|m| *m = false);
        for i in index::sample(&mut rng, n, k) {
            member[i] = true;
        }
        let shared = index::sample(&mut rng, n, k)
            .into_iter()
            .filter(|&i| member[i])
            .count();
        total += shared as f64 / k as f64;
    }
    Ok(total / pairs as f64)
}

/// Pixelwise mean of raw intensities, planar `CHW` like the image store.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanImage {
    pub class: usize,
    pub class_name: String,
    pub kind: SubsetKind,
    pub count: usize,
    pub shape: ImageShape,
    pub pixels: Vec<f64>,
}

impl MeanImage {
    pub fn file_name(&self) -> String {
        format!("{}_{}_mean.png", self.class_name, self.kind)
    }

    /// Lossless 8-bit PNG (rounded means).
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (c, h, w) = (self.shape.channels, self.shape.height, self.shape.width);
        let plane = h * w;
        let mut interleaved = Vec::with_capacity(self.pixels.len());
        for p in 0..plane {
            for ch in 0..c {
                interleaved.push(self.pixels[ch * plane + p].round().clamp(0.0, 255.0) as u8);
            }
        }
        let color = match c {
            1 => image::ExtendedColorType::L8,
            3 => image::ExtendedColorType::Rgb8,
            other => {
                return Err(Error::Output(format!("cannot write a {other}-channel png")));
            }
        };
        let mut bytes = Vec::new();
        image::codecs::png::PngEncoder::new(&mut bytes)
            .write_image(&interleaved, w as u32, h as u32, color)
            .map_err(|e| Error::Output(format!("{}: {e}", path.display())))?;
        io::write_atomic(path, &bytes)
    }
}

/// Mean image of the members of `subset` labelled `class`.
pub fn average_image(dataset: &Dataset, subset: &ExampleSubset, class: usize) -> Result<MeanImage> {
    let shape = dataset.shape();
    let mut sum = vec![0.0; shape.len()];
    let mut count = 0usize;
    for id in &subset.ids {
        let record = dataset.get(id).ok_or_else(|| {
            Error::validation("subset", format!("{id} is not in {}", dataset.id()))
        })?;
        if record.label != class {
            continue;
        }
        for (s, &p) in sum.iter_mut().zip(dataset.pixels(record)) {
            *s += p as f64;
        }
        count += 1;
    }
    let class_name = dataset
        .manifest()
        .class_names
        .get(class)
        .cloned()
        .ok_or_else(|| Error::validation("class", format!("{class} is out of range")))?;
    if count == 0 {
        return Err(Error::validation(
            "subset",
            format!("{} subset has no examples of class {class_name}", subset.kind),
        ));
    }
    Ok(MeanImage {
        class,
        class_name,
        kind: subset.kind,
        count,
        shape,
        pixels: sum.into_iter().map(|s| s / count as f64).collect(),
    })
}

/// Population variance of the mean image's intensities. Lower means the
/// contributing images were more varied.
pub fn uniformity_score(image: &MeanImage) -> f64 {
    let n = image.pixels.len() as f64;
    if n == 0.0 {
        return 0.0;
    }
    let mean = image.pixels.iter().sum::<f64>() / n;
    image.pixels.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / n
}

pub fn uniformity_csv(images: &[MeanImage]) -> String {
    let mut out = String::from("class,kind,count,uniformity\n");
    for m in images {
        let _ = writeln!(
            out,
            "{},{},{},{:.4}",
            m.class_name,
            m.kind,
            m.count,
            uniformity_score(m)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::toy;
    use proptest::prelude::*;

    fn set(ids: &[&str]) -> ExampleSubset {
        ExampleSubset::new(
            SubsetKind::Custom,
            ids.iter().map(|s| s.to_string()).collect(),
            "test",
        )
    }

    #[test]
    fn hand_computed_rates() {
        let a = set(&["a", "b", "c"]);
        let b = set(&["b", "c", "d", "e"]);
        assert_eq!(matching_rate(&a, &b).unwrap(), 0.5);
        assert_eq!(matching_rate(&a, &a).unwrap(), 1.0);
        assert_eq!(matching_rate(&a, &set(&["x", "y"])).unwrap(), 0.0);
        assert!(matching_rate(&a, &set(&[])).is_err());
    }

    #[test]
    fn mean_image_of_two_is_the_midpoint() {
        let data = toy(4, 0, 2);
        let subset = set(&["train-00000", "train-00002"]);
        let mean = average_image(&data, &subset, 0).unwrap();
        let a = data.pixels(data.get("train-00000").unwrap());
        let b = data.pixels(data.get("train-00002").unwrap());
        for ((m, &x), &y) in mean.pixels.iter().zip(a).zip(b) {
            assert_eq!(*m, (x as f64 + y as f64) / 2.0);
        }
        assert_eq!(mean.count, 2);
        let single = average_image(&data, &set(&["train-00001"]), 1).unwrap();
        let raw: Vec<f64> = data
            .pixels(data.get("train-00001").unwrap())
            .iter()
            .map(|&p| p as f64)
            .collect();
        assert_eq!(single.pixels, raw);
        assert!(average_image(&data, &set(&["train-00001"]), 0).is_err());
    }

    fn mean_image(pixels: Vec<f64>) -> MeanImage {
        MeanImage {
            class: 0,
            class_name: "c".into(),
            kind: SubsetKind::Easy,
            count: 1,
            shape: ImageShape {
                channels: 1,
                height: 1,
                width: pixels.len(),
            },
            pixels,
        }
    }

    #[test]
    fn uniformity_of_constant_image_is_zero() {
        assert_eq!(uniformity_score(&mean_image(vec![7.5; 9])), 0.0);
        assert_eq!(uniformity_score(&mean_image(vec![0.0, 2.0])), 1.0);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = mean_image(vec![0.0, 127.6, 255.0]);
        let path = dir.path().join(img.file_name());
        img.save_png(&path).unwrap();
        assert!(path.ends_with("c_easy_mean.png"));
        let back = image::open(&path).unwrap().to_luma8();
        assert_eq!(back.into_raw(), vec![0, 128, 255]);
    }

    #[test]
    fn begin_end_requires_increasing_t() {
        let mut early = crate::easiness::table_from_values(&(0..20).map(f64::from).collect::<Vec<_>>());
        let same = early.clone();
        assert_eq!(
            begin_end_matching(&early, &same, 0.1, Extreme::Easy).unwrap_err().to_string(),
            "invalid T: early T (1) must be smaller than final T (1)"
        );
        let mut late = early.clone();
        late.t_updates = 5;
        assert_eq!(begin_end_matching(&early, &late, 0.1, Extreme::Hard).unwrap().rate, 1.0);
        early.dataset_id = "other".into();
        assert!(begin_end_matching(&early, &late, 0.1, Extreme::Hard).is_err());
    }

    #[test]
    fn identical_tables_from_different_architectures_match_fully() {
        let values: Vec<f64> = (0..50).map(|i| ((i * 13) % 50) as f64).collect();
        let a = crate::easiness::table_from_values(&values);
        let mut b = a.clone();
        b.architecture = "other".into();
        b.arch_fingerprint = "other-1".into();
        let reports = cross_architecture_matching(&[&a, &b], 0.1, Extreme::Easy).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].rate, 1.0);
        assert_eq!(reports[0].chance_rate, 0.1);
        b.dataset_id = "elsewhere".into();
        assert!(cross_architecture_matching(&[&a, &b], 0.1, Extreme::Easy).is_err());
        assert!(cross_architecture_matching(&[&a], 0.1, Extreme::Easy).is_err());
    }

    #[test]
    fn monte_carlo_chance_is_the_fraction() {
        let rate = chance_rate_monte_carlo(5000, 0.1, 1000, 3).unwrap();
        assert!((rate - 0.1).abs() < 0.005, "{rate}");
    }

    fn subset_strategy() -> impl Strategy<Value = BTreeSet<String>> {
        prop::collection::btree_set((0u8..40).prop_map(|i| format!("e{i}")), 1..30)
    }

    proptest! {
        #[test]
        fn rate_is_symmetric_and_bounded(a in subset_strategy(), b in subset_strategy()) {
            let ab = set_matching_rate(&a, &b).unwrap();
            prop_assert_eq!(ab, set_matching_rate(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            if a.len() == b.len() {
                prop_assert_eq!(ab == 1.0, a == b);
            }
        }

        #[test]
        fn nested_sets_rate_is_size_ratio(b in subset_strategy(), keep in 1usize..30) {
            let a: BTreeSet<String> = b.iter().take(keep).cloned().collect();
            let rate = set_matching_rate(&a, &b).unwrap();
            prop_assert_eq!(rate, a.len() as f64 / b.len() as f64);
        }

        #[test]
        fn uniformity_shift_and_scale(
            pixels in prop::collection::vec(0.0..255.0f64, 1..50),
            shift in -100.0..100.0f64,
            scale in 0.1..4.0f64,
        ) {
            let base = uniformity_score(&mean_image(pixels.clone()));
            let shifted = uniformity_score(&mean_image(pixels.iter().map(|p| p + shift).collect()));
            let scaled = uniformity_score(&mean_image(pixels.iter().map(|p| p * scale).collect()));
            prop_assert!((base - shifted).abs() <= 1e-9 * (1.0 + base));
            prop_assert!((scaled - scale * scale * base).abs() <= 1e-9 * (1.0 + scaled));
        }

        #[test]
        fn average_image_ignores_member_order(picks in prop::collection::vec(0usize..12, 1..12)) {
            let data = toy(12, 0, 1);
            let ids: Vec<String> = picks.iter().map(|i| format!("train-{i:05}")).collect();
            let forward = ExampleSubset::new(SubsetKind::Custom, ids.iter().cloned().collect(), "");
            let mean = average_image(&data, &forward, 0).unwrap();
            let lo = mean.pixels.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = mean.pixels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo >= 0.0 && hi <= 255.0);
            let mut sums = [0.0; 4];
            for id in forward.ids.iter().rev() {
                for (s, &p) in sums.iter_mut().zip(data.pixels(data.get(id).unwrap())) {
                    *s += p as f64;
                }
            }
            for (s, m) in sums.iter().zip(&mean.pixels) {
                prop_assert!((s / forward.len() as f64 - m).abs() < 1e-9);
            }
        }
    }
}
