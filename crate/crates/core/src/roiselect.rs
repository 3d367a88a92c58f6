//! Region-of-interest selection around the gaze point.

use crate::domain::Region;
use crate::error::{Error, Result};
use crate::vlprovider::{similarity, EmbeddingStore, ProviderClient};

/// Regions nearest to the gaze point, nearest first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CandidateSet {
    pub regions: Vec<Region>,
    pub distances: Vec<f64>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.regions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.regions.is_empty()
    }
}

/// Keeps the `max` regions whose centers are closest to `gaze`. Equal
/// distances keep their input order.
pub fn select_candidates(regions: &[Region], gaze: [f64; 2], max: usize) -> CandidateSet {
    let mut scored: Vec<(f64, usize)> = regions
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let [cx, cy] = r.rect.center();
            ((cx - gaze[0]).hypot(cy - gaze[1]), i)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(max);
    CandidateSet {
        regions: scored.iter().map(|(_, i)| regions[*i].clone()).collect(),
        distances: scored.iter().map(|(d, _)| *d).collect(),
    }
}

/// Index of the candidate whose tag is most similar to `answer`; the lower
/// index wins ties.
pub fn match_answer(cands: &CandidateSet, answer: &str, store: &EmbeddingStore) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in cands.regions.iter().enumerate() {
        let s = similarity(answer, &r.tag, store);
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Asks the provider which candidate evokes the emotion and maps its answer
/// back onto a candidate region.
pub fn select_attended(
    cands: &CandidateSet,
    frame_id: &str,
    question: &str,
    client: &mut ProviderClient,
    store: &EmbeddingStore,
) -> Result<(Region, String)> {
    if cands.is_empty() {
        return Err(Error::Precondition("no candidate regions to choose from".into()));
    }
    let answer = client.vqa(frame_id, question, &cands.regions)?;
    let idx = match_answer(cands, &answer, store).expect("non-empty candidates");
    Ok((cands.regions[idx].clone(), answer))
}

pub fn summarize(cands: &CandidateSet, frame_id: &str, client: &mut ProviderClient) -> Result<String> {
    if cands.is_empty() {
        return Err(Error::Precondition("no candidate regions to caption".into()));
    }
    client.caption(frame_id, &cands.regions)
}

#[cfg(test)]
mod tests {
    use std::path::Path;

    use super::*;
    use crate::domain::Rect;

    fn region(id: u32, cx: f64, cy: f64, tag: &str) -> Region {
        Region {
            id,
            rect: Rect::from([cx, cy, 0.05, 0.05]),
            tag: tag.into(),
            feature: vec![],
        }
    }

    #[test]
    fn zero_distance_first() {
        let rs = vec![region(0, 0.9, 0.9, "a"), region(1, 0.3, 0.4, "b")];
        let c = select_candidates(&rs, [0.3, 0.4], 10);
        assert_eq!(c.regions[0].id, 1);
        assert_eq!(c.distances[0], 0.0);
    }

    #[test]
    fn fewer_than_max_keeps_all() {
        let rs: Vec<_> = (0..7).map(|i| region(i, 0.1 * f64::from(i), 0.5, "x")).collect();
        let c = select_candidates(&rs, [0.5, 0.5], 10);
        assert_eq!(c.len(), 7);
        assert!(c.distances.windows(2).all(|w| w[0] <= w[1]));
        assert!(select_candidates(&[], [0.5, 0.5], 10).is_empty());
    }

    #[test]
    fn equal_distances_keep_input_order() {
        let rs = vec![region(5, 0.6, 0.5, "r"), region(3, 0.4, 0.5, "l"), region(9, 0.5, 0.6, "d")];
        let c = select_candidates(&rs, [0.5, 0.5], 2);
        assert_eq!(c.regions.iter().map(|r| r.id).collect::<Vec<_>>(), vec![5, 3]);
    }

    #[test]
    fn answer_matching() {
        let store = EmbeddingStore::from_text("dog 1 1\npuppy 1 0.9\ncar -1 0\n", Path::new("t")).unwrap();
        let cands = select_candidates(&[region(0, 0.5, 0.5, "car"), region(1, 0.6, 0.5, "puppy")], [0.5, 0.5], 10);
        assert_eq!(match_answer(&cands, "dog", &store), Some(1));
        assert_eq!(match_answer(&cands, "car", &store), Some(0));
        let dup = select_candidates(&[region(0, 0.5, 0.5, "cat"), region(1, 0.6, 0.5, "cat")], [0.5, 0.5], 10);
        assert_eq!(match_answer(&dup, "cat", &store), Some(0));
    }
}
