//! Synthetic corpora drawn from per-community norm profiles.
//!
//! A profile fixes a community's semantic signature (`centroid`, `sigma_sem`),
//! how strongly replies echo their parent (`alpha`), and its branching law
//! (`branch_p`, `max_depth`, `mean_size`).

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{read_discussions, validate_tree, Comment, CommunityGrouping, Corpus, CorpusError, DiscussionTree};
use crate::numerics::{unit_normalize, RngStream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormProfile {
    pub community_id: String,
    pub group_id: String,
    pub centroid: Vec<f64>,
    pub sigma_sem: f64,
    pub alpha: f64,
    pub branch_p: f64,
    pub max_depth: usize,
    pub mean_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub profiles: Vec<NormProfile>,
    pub trees_per_community: usize,
    pub seed: u64,
}

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("profile {community_id:?}: {message}")]
    Profile { community_id: String, message: String },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("grouping file: {0}")]
    Grouping(String),
}

impl NormProfile {
    pub fn validate(&self) -> Result<(), SynthError> {
        let fail = |message: &str| {
            Err(SynthError::Profile {
                community_id: self.community_id.clone(),
                message: message.to_string(),
            })
        };
        let norm = self.centroid.iter().map(|x| x * x).sum::<f64>().sqrt();
        if self.centroid.is_empty() || (norm - 1.0).abs() > 1e-9 {
            return fail("centroid must be unit-norm");
        }
        if !(self.sigma_sem >= 0.0 && self.sigma_sem.is_finite()) {
            return fail("sigma_sem must be nonnegative");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail("alpha must lie in [0, 1]");
        }
        if !(self.branch_p > 0.0 && self.branch_p <= 1.0) {
            return fail("branch_p must lie in (0, 1]");
        }
        if self.mean_size == 0 {
            return fail("mean_size must be positive");
        }
        Ok(())
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for p in &self.profiles {
            p.validate()?;
        }
        let groups: BTreeSet<&str> = self.profiles.iter().map(|p| p.group_id.as_str()).collect();
        if self.profiles.len() < 2 || groups.len() < 2 {
            return Err(SynthError::Config("need at least 2 profiles spanning 2 groups".into()));
        }
        let communities: BTreeSet<&str> = self.profiles.iter().map(|p| p.community_id.as_str()).collect();
        if communities.len() != self.profiles.len() {
            return Err(SynthError::Config("community ids must be unique".into()));
        }
        let d = self.profiles[0].centroid.len();
        if self.profiles.iter().any(|p| p.centroid.len() != d) {
            return Err(SynthError::Config("centroids differ in dimension".into()));
        }
        if self.trees_per_community == 0 {
            return Err(SynthError::Config("trees_per_community must be positive".into()));
        }
        Ok(())
    }

    pub fn d_feat(&self) -> usize {
        self.profiles.first().map_or(0, |p| p.centroid.len())
    }

    /// Four communities in two groups, 16-d features. Group centroids are
    /// orthogonal; the two communities of a group sit 30° apart.
    pub fn reference(seed: u64, trees_per_community: usize) -> Self {
        let d = 16;
        let (s, c) = 30f64.to_radians().sin_cos();
        let axis = |i: usize, j: usize, wi: f64, wj: f64| {
            let mut v = vec![0.0; d];
            v[i] = wi;
            v[j] += wj;
            v
        };
        let specs = [
            ("young-1", "age-young", axis(0, 1, 1.0, 0.0)),
            ("young-2", "age-young", axis(0, 1, c, s)),
            ("old-1", "age-old", axis(2, 3, 1.0, 0.0)),
            ("old-2", "age-old", axis(2, 3, c, s)),
        ];
        let profiles = specs
            .into_iter()
            .map(|(community, group, centroid)| NormProfile {
                community_id: community.into(),
                group_id: group.into(),
                centroid,
                sigma_sem: 0.1,
                alpha: 0.8,
                branch_p: 0.5,
                max_depth: 5,
                mean_size: 15,
            })
            .collect();
        Self {
            profiles,
            trees_per_community,
            seed,
        }
    }
}

impl SynthConfig {
    /// Small-tree variant for gradient checks: 4-d features, at most 7
    /// comments per discussion, same two-group layout.
    pub fn tiny(seed: u64, trees_per_community: usize) -> Self {
        let (s, c) = 30f64.to_radians().sin_cos();
        let centroids = [
            vec![1.0, 0.0, 0.0, 0.0],
            vec![c, s, 0.0, 0.0],
            vec![0.0, 0.0, 1.0, 0.0],
            vec![0.0, 0.0, c, s],
        ];
        let mut config = Self::reference(seed, trees_per_community);
        for (p, centroid) in config.profiles.iter_mut().zip(centroids) {
            p.centroid = centroid;
            p.max_depth = 3;
            p.mean_size = 7;
        }
        config
    }
}

fn noisy_unit(base: &[f64], sigma: f64, rng: &mut RngStream) -> Vec<f64> {
    let mut v: Vec<f64> = base.iter().map(|&b| b + sigma * rng.normal()).collect();
    if unit_normalize(&mut v) == 0.0 {
        // degenerate draw; fall back to the noise-free direction
        v = base.to_vec();
        unit_normalize(&mut v);
    }
    v
}

/// Grows one discussion breadth-first. Each expanded node draws its reply
/// count from a Geometric(`branch_p`) law on `{1, 2, ...}`; expansion stops at
/// `max_depth` and once the tree holds `mean_size` comments.
pub fn generate_tree(profile: &NormProfile, rng: &mut RngStream, discussion_id: &str) -> DiscussionTree {
    let d = profile.centroid.len();
    let mut comments = vec![Comment::new(
        "c0",
        None,
        noisy_unit(&profile.centroid, profile.sigma_sem, rng),
    )];
    let mut queue = VecDeque::from([(0usize, 0usize)]);
    while let Some((node, depth)) = queue.pop_front() {
        if depth >= profile.max_depth || comments.len() >= profile.mean_size {
            continue;
        }
        let wanted = rng.geometric(profile.branch_p);
        let room = profile.mean_size - comments.len();
        for _ in 0..wanted.min(room) {
            let parent = &comments[node].features;
            let base: Vec<f64> = (0..d)
                .map(|k| profile.alpha * parent[k] + (1.0 - profile.alpha) * profile.centroid[k])
                .collect();
            let features = noisy_unit(&base, profile.sigma_sem, rng);
            let id = format!("c{}", comments.len());
            let parent_id = comments[node].id.clone();
            comments.push(Comment::new(id, Some(&parent_id), features));
            queue.push_back((comments.len() - 1, depth + 1));
        }
    }
    validate_tree(discussion_id, &profile.community_id, comments, Some(d)).expect("generated trees are valid")
}

/// `trees_per_community` trees per profile. Tree `g` (global index) draws
/// from stream `g` of the config seed, so output does not depend on thread count.
pub fn generate_corpus(config: &SynthConfig) -> Result<Corpus, SynthError> {
    config.validate()?;
    let per = config.trees_per_community;
    let total = per * config.profiles.len();
    let trees: Vec<DiscussionTree> = (0..total)
        .into_par_iter()
        .map(|g| {
            let profile = &config.profiles[g / per];
            let mut rng = RngStream::new(config.seed, g as u64);
            let id = format!("{}-{:05}", profile.community_id, g % per);
            generate_tree(profile, &mut rng, &id)
        })
        .collect();
    let grouping: CommunityGrouping = config
        .profiles
        .iter()
        .map(|p| (p.community_id.clone(), p.group_id.clone()))
        .collect();
    Ok(Corpus::new(trees, grouping, config.d_feat())?)
}

/// Reads a discussion file and a `{community_id: group_id}` grouping file
/// into a validated corpus. Grouping-file entries override any grouping in
/// the discussion file's header.
pub fn ingest_external(path: &Path, grouping_path: &Path) -> Result<Corpus, SynthError> {
    let (trees, mut grouping, d_feat) = read_discussions(path)?;
    let text = fs::read_to_string(grouping_path).map_err(|e| SynthError::Grouping(e.to_string()))?;
    let extra: CommunityGrouping = serde_json::from_str(&text).map_err(|e| SynthError::Grouping(e.to_string()))?;
    grouping.extend(extra);
    let d_feat = d_feat.ok_or_else(|| SynthError::Config("no discussions to infer d_feat from".into()))?;
    Ok(Corpus::new(trees, grouping, d_feat)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cosine;

    fn profile() -> NormProfile {
        SynthConfig::reference(0, 1).profiles[1].clone()
    }

    #[test]
    fn noise_free_features_equal_centroid() {
        let p = NormProfile {
            sigma_sem: 0.0,
            alpha: 0.0,
            ..profile()
        };
        let t = generate_tree(&p, &mut RngStream::new(3, 0), "t");
        assert!(t.len() > 1);
        for c in t.comments() {
            assert_eq!(c.features, p.centroid);
        }
    }

    #[test]
    fn max_depth_zero_is_root_only() {
        let p = NormProfile {
            max_depth: 0,
            ..profile()
        };
        assert_eq!(generate_tree(&p, &mut RngStream::new(1, 1), "t").len(), 1);
    }

    #[test]
    fn copy_limit_repeats_root() {
        let p = NormProfile {
            sigma_sem: 0.0,
            alpha: 1.0,
            ..profile()
        };
        let t = generate_tree(&p, &mut RngStream::new(9, 2), "t");
        let root = &t.comments()[0].features;
        for (parent, child) in t.edges() {
            assert_eq!(&t.comments()[child].features, root);
            let cos = cosine(&t.comments()[parent].features, &t.comments()[child].features);
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sizes_and_depths_bounded() {
        let p = profile();
        let mut rng = RngStream::new(5, 0);
        for i in 0..200 {
            let t = generate_tree(&p, &mut rng, &format!("t{i}"));
            assert!(t.len() <= p.mean_size);
            assert!((0..t.len()).all(|v| t.forest().depth(v) <= p.max_depth));
        }
    }

    #[test]
    fn corpus_counts_and_determinism() {
        let mut cfg = SynthConfig::reference(11, 10);
        cfg.profiles.truncate(3);
        let a = generate_corpus(&cfg).unwrap();
        assert_eq!(a.len(), 30);
        assert_eq!(a.groups().len(), 2);
        let b = generate_corpus(&cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn two_profile_corpus() {
        let mut cfg = SynthConfig::reference(2, 10);
        cfg.profiles = vec![cfg.profiles[0].clone(), cfg.profiles[2].clone()];
        let c = generate_corpus(&cfg).unwrap();
        assert_eq!(c.len(), 20);
        assert_eq!(c.groups().len(), 2);
    }

    #[test]
    fn rejects_single_group() {
        let mut cfg = SynthConfig::reference(0, 1);
        cfg.profiles.truncate(2);
        assert!(matches!(generate_corpus(&cfg), Err(SynthError::Config(_))));
    }

    #[test]
    fn rejects_bad_profile() {
        let mut cfg = SynthConfig::reference(0, 1);
        cfg.profiles[0].alpha = 1.5;
        assert!(matches!(cfg.validate(), Err(SynthError::Profile { .. })));
    }
}
