//! Version parsing, ordering and successor selection.
//!
//! Maven coordinates carry anything from `1` to `2.13.4.Final` or
//! `1.0-rc1`. [`Version`] extracts the leading dotted numeric segments and
//! keeps whatever trails them as an opaque qualifier. The resulting order
//! compares segments numerically (shorter sequences padded with zeros) and
//! puts a qualified version before the bare version with the same segments.
//!
//! Successors are chosen two ways: [`semver_next`] takes the minimum strictly
//! greater candidate, while [`heuristic_next`] walks three rules (same line,
//! next line, oldest newer release). [`next_release_agreement`] measures how
//! often the two coincide.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VersionError {
    #[error("unparseable version {0:?}: no leading numeric segment")]
    Unparseable(String),
    #[error("agreement corpus has no entry with a newer candidate")]
    EmptyCorpus,
}

/// A parsed version identifier.
///
/// Equality and hashing follow the raw text, and the ordering falls back to
/// segment count and raw text only when two versions have the same
/// precedence (`1.0` vs `1.0.0`), so `Ord` is a strict total order that
/// agrees with `Eq`. Use [`Version::cmp_precedence`] when `1.0` and `1.0.0`
/// should compare equal.
#[derive(Debug, Clone)]
pub struct Version {
    segments: Vec<u64>,
    qualifier: Option<String>,
    raw: String,
}

impl Version {
    pub fn parse(text: &str) -> Result<Self, VersionError> {
        let raw = text.trim();
        let bytes = raw.as_bytes();
        let mut segments = Vec::new();
        let mut pos = 0;
        loop {
            let start = pos;
            while pos < bytes.len() && bytes[pos].is_ascii_digit() {
                pos += 1;
            }
            if start == pos {
                break;
            }
            let seg = raw[start..pos]
                .parse::<u64>()
                .map_err(|_| VersionError::Unparseable(text.to_string()))?;
            segments.push(seg);
            // continue only on ".<digit>"
            if pos + 1 < bytes.len() && bytes[pos] == b'.' && bytes[pos + 1].is_ascii_digit() {
                pos += 1;
            } else {
                break;
            }
        }
        if segments.is_empty() {
            return Err(VersionError::Unparseable(text.to_string()));
        }
        let rest = raw[pos..].trim_start_matches(['-', '.', '_', '+']);
        let qualifier = (!rest.is_empty()).then(|| rest.to_string());
        Ok(Version {
            segments,
            qualifier,
            raw: raw.to_string(),
        })
    }

    pub fn segments(&self) -> &[u64] {
        &self.segments
    }

    pub fn qualifier(&self) -> Option<&str> {
        self.qualifier.as_deref()
    }

    pub fn as_str(&self) -> &str {
        &self.raw
    }

    /// Segment at `idx`, reading missing trailing segments as zero.
    pub fn segment(&self, idx: usize) -> u64 {
        self.segments.get(idx).copied().unwrap_or(0)
    }

    /// Precedence order: padded numeric segments, then qualifier
    /// (qualified before bare). Ignores spelling differences such as
    /// `1.0` vs `1.0.0`.
    pub fn cmp_precedence(&self, other: &Self) -> Ordering {
        let width = self.segments.len().max(other.segments.len());
        for i in 0..width {
            match self.segment(i).cmp(&other.segment(i)) {
                Ordering::Equal => {}
                ord => return ord,
            }
        }
        match (&self.qualifier, &other.qualifier) {
            (None, None) => Ordering::Equal,
            (Some(_), None) => Ordering::Less,
            (None, Some(_)) => Ordering::Greater,
            (Some(a), Some(b)) => cmp_qualifiers(a, b),
        }
    }
}

/// SemVer-style pre-release comparison: dot/hyphen separated identifiers,
/// numeric ones compared numerically and ordered before alphanumeric ones.
fn cmp_qualifiers(a: &str, b: &str) -> Ordering {
    let split = |s: &str| -> Vec<String> {
        s.split(['.', '-'])
            .filter(|p| !p.is_empty())
            .map(str::to_ascii_lowercase)
            .collect()
    };
    let (ia, ib) = (split(a), split(b));
    for (x, y) in ia.iter().zip(ib.iter()) {
        let ord = match (x.parse::<u64>(), y.parse::<u64>()) {
            (Ok(n), Ok(m)) => n.cmp(&m),
            (Ok(_), Err(_)) => Ordering::Less,
            (Err(_), Ok(_)) => Ordering::Greater,
            (Err(_), Err(_)) => x.cmp(y),
        };
        if ord != Ordering::Equal {
            return ord;
        }
    }
    ia.len().cmp(&ib.len()).then_with(|| a.cmp(b))
}

impl Ord for Version {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_precedence(other)
            .then_with(|| self.segments.len().cmp(&other.segments.len()))
            .then_with(|| self.raw.cmp(&other.raw))
    }
}

impl PartialOrd for Version {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl PartialEq for Version {
    fn eq(&self, other: &Self) -> bool {
        self.raw == other.raw
    }
}

impl Eq for Version {}

impl Hash for Version {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.raw.hash(state);
    }
}

impl fmt::Display for Version {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw)
    }
}

impl FromStr for Version {
    type Err = VersionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Version::parse(s)
    }
}

pub fn parse_version(text: &str) -> Result<Version, VersionError> {
    Version::parse(text)
}

/// Minimum candidate strictly greater than `current`.
pub fn semver_next<'a, I>(current: &Version, candidates: I) -> Option<&'a Version>
where
    I: IntoIterator<Item = &'a Version>,
{
    candidates.into_iter().filter(|c| *c > current).min()
}

/// Which rule of the three-step heuristic produced a successor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum HeuristicStep {
    /// Same line: shares every segment but the last.
    SameLine,
    /// Next line: penultimate segment incremented, last reset.
    NextLine,
    /// Oldest newer release.
    Fallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeuristicChoice<'a> {
    pub version: &'a Version,
    pub step: HeuristicStep,
}

/// Three-step successor heuristic over `(version, released_at)` candidates.
///
/// Segment positions are taken relative to `current`'s own width (at least
/// two), so `1.2.3` looks for `1.2.*` first, then `1.3.*`, then the oldest
/// release that is newer at all.
pub fn heuristic_next<'a>(
    current: &Version,
    candidates: &[(&'a Version, i64)],
) -> Option<HeuristicChoice<'a>> {
    let width = current.segments.len().max(2);
    let newer = || candidates.iter().filter(|(v, _)| *v > current);

    let same_line = newer()
        .filter(|(v, _)| (0..width - 1).all(|i| v.segment(i) == current.segment(i)))
        .map(|(v, _)| *v)
        .min();
    if let Some(version) = same_line {
        return Some(HeuristicChoice {
            version,
            step: HeuristicStep::SameLine,
        });
    }

    let penultimate = width - 2;
    let next_line = newer()
        .filter(|(v, _)| {
            (0..penultimate).all(|i| v.segment(i) == current.segment(i))
                && v.segment(penultimate) == current.segment(penultimate) + 1
        })
        .map(|(v, _)| *v)
        .min_by(|a, b| a.segment(width - 1).cmp(&b.segment(width - 1)).then(a.cmp(b)));
    if let Some(version) = next_line {
        return Some(HeuristicChoice {
            version,
            step: HeuristicStep::NextLine,
        });
    }

    newer()
        .min_by(|(va, ta), (vb, tb)| ta.cmp(tb).then_with(|| va.cmp(vb)))
        .map(|(version, _)| HeuristicChoice {
            version,
            step: HeuristicStep::Fallback,
        })
}

/// One artifact version together with its sibling releases.
#[derive(Debug, Clone)]
pub struct AgreementEntry {
    pub current: Version,
    pub candidates: Vec<(Version, i64)>,
}

/// Fraction of entries where [`semver_next`] and [`heuristic_next`] pick the
/// same successor. Entries without any newer candidate are skipped.
pub fn next_release_agreement(corpus: &[AgreementEntry]) -> Result<f64, VersionError> {
    let mut total = 0usize;
    let mut agree = 0usize;
    for entry in corpus {
        let dated: Vec<(&Version, i64)> = entry.candidates.iter().map(|(v, t)| (v, *t)).collect();
        let Some(by_order) = semver_next(&entry.current, dated.iter().map(|(v, _)| *v)) else {
            continue;
        };
        total += 1;
        if heuristic_next(&entry.current, &dated).map(|c| c.version) == Some(by_order) {
            agree += 1;
        }
    }
    if total == 0 {
        return Err(VersionError::EmptyCorpus);
    }
    Ok(agree as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(s: &str) -> Version {
        Version::parse(s).unwrap()
    }

    fn vs(list: &[&str]) -> Vec<Version> {
        list.iter().map(|s| v(s)).collect()
    }

    fn dated(list: &[Version]) -> Vec<(&Version, i64)> {
        list.iter().enumerate().map(|(i, v)| (v, i as i64)).collect()
    }

    #[test]
    fn parses_plain_and_qualified() {
        let a = v("1.2.3");
        assert_eq!(a.segments(), &[1, 2, 3]);
        assert_eq!(a.qualifier(), None);
        assert_eq!(v("2.0").segments(), &[2, 0]);
        let rc = v("1.2.3-rc1");
        assert_eq!(rc.segments(), &[1, 2, 3]);
        assert_eq!(rc.qualifier(), Some("rc1"));
        assert_eq!(v("4.1.Final").qualifier(), Some("Final"));
        assert_eq!(v("7").segments(), &[7]);
    }

    #[test]
    fn rejects_non_numeric_prefix() {
        assert!(matches!(Version::parse("v1.0"), Err(VersionError::Unparseable(_))));
        assert!(Version::parse("").is_err());
        assert!(Version::parse("abc").is_err());
    }

    #[test]
    fn qualifier_pairs_enumerated() {
        // expected relation for every pair follows from: padded segments
        // first, then qualified < bare
        let pool = vs(&["1.2.3-rc1", "1.2.3", "1.2.4"]);
        let rank = |s: &str| match s {
            "1.2.3-rc1" => 0,
            "1.2.3" => 1,
            _ => 2,
        };
        for a in &pool {
            for b in &pool {
                assert_eq!(a.cmp(b), rank(a.as_str()).cmp(&rank(b.as_str())), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn padding_equal_precedence() {
        assert_eq!(v("1.0").cmp_precedence(&v("1.0.0")), Ordering::Equal);
        assert_eq!(v("1.0").cmp(&v("1.0.0")), Ordering::Less);
        assert!(v("1.10.0") > v("1.9.0"));
    }

    #[test]
    fn semver_next_examples() {
        let c = vs(&["1.2.4", "1.3.0", "2.0.0"]);
        assert_eq!(semver_next(&v("1.2.3"), &c).unwrap().as_str(), "1.2.4");
        let c = vs(&["1.9.9"]);
        assert!(semver_next(&v("2.0.0"), &c).is_none());
        let c = vs(&["1.9.0", "1.11.0"]);
        // brute force: sort, take first greater
        let mut sorted = c.clone();
        sorted.sort();
        let expect = sorted.iter().find(|x| **x > v("1.10.0")).unwrap();
        assert_eq!(semver_next(&v("1.10.0"), &c), Some(expect));
        assert_eq!(expect.as_str(), "1.11.0");
    }

    #[test]
    fn heuristic_steps() {
        let cur = v("1.2.3");
        let c = vs(&["1.2.4", "2.0.0"]);
        let pick = heuristic_next(&cur, &dated(&c)).unwrap();
        assert_eq!((pick.version.as_str(), pick.step), ("1.2.4", HeuristicStep::SameLine));

        let c = vs(&["1.3.0", "2.0.0"]);
        let pick = heuristic_next(&cur, &dated(&c)).unwrap();
        assert_eq!((pick.version.as_str(), pick.step), ("1.3.0", HeuristicStep::NextLine));

        let c = vs(&["2.0.0"]);
        let pick = heuristic_next(&cur, &dated(&c)).unwrap();
        assert_eq!((pick.version.as_str(), pick.step), ("2.0.0", HeuristicStep::Fallback));

        assert!(heuristic_next(&cur, &dated(&vs(&["1.0.0"]))).is_none());
    }

    #[test]
    fn fallback_prefers_oldest_then_version() {
        let cur = v("1.2.3");
        let a = v("3.0.0");
        let b = v("2.0.0");
        let pick = heuristic_next(&cur, &[(&a, 5), (&b, 9)]).unwrap();
        assert_eq!(pick.version.as_str(), "3.0.0");
        let pick = heuristic_next(&cur, &[(&a, 5), (&b, 5)]).unwrap();
        assert_eq!(pick.version.as_str(), "2.0.0");
    }

    #[test]
    fn agreement_examples() {
        let entry = |cur: &str, cands: &[(&str, i64)]| AgreementEntry {
            current: v(cur),
            candidates: cands.iter().map(|(s, t)| (v(s), *t)).collect(),
        };
        let patches = vec![
            entry("1.2.3", &[("1.2.4", 10), ("1.3.0", 20)]),
            entry("0.9", &[("0.10", 3), ("1.0", 4)]),
            entry("5.0.0", &[("5.0.1", 1)]),
        ];
        assert_eq!(next_release_agreement(&patches).unwrap(), 1.0);

        // 1.3.5 released after 1.4.0
        let one = vec![entry("1.2.3", &[("1.4.0", 10), ("1.3.5", 20)])];
        assert_eq!(next_release_agreement(&one).unwrap(), 1.0);

        let half = vec![
            entry("1.2.3", &[("1.2.4", 1)]),
            entry("1.2.3", &[("2.0.0", 1), ("3.0.0", 0)]),
        ];
        assert_eq!(next_release_agreement(&half).unwrap(), 0.5);

        assert_eq!(next_release_agreement(&[]), Err(VersionError::EmptyCorpus));
        let stale = vec![entry("2.0", &[("1.0", 0)])];
        assert_eq!(next_release_agreement(&stale), Err(VersionError::EmptyCorpus));
    }

    #[test]
    fn qualified_current_agrees() {
        let cur = v("1.2.3-rc1");
        let c = vs(&["1.2.3", "1.2.4"]);
        let pick = heuristic_next(&cur, &dated(&c)).unwrap();
        assert_eq!(Some(pick.version), semver_next(&cur, &c));
        assert_eq!(pick.version.as_str(), "1.2.3");
    }

    fn pool50() -> Vec<Version> {
        let mut out = Vec::new();
        for major in 0..2 {
            for minor in 0..3 {
                for patch in 0..3 {
                    out.push(v(&format!("{major}.{minor}.{patch}")));
                }
                out.push(v(&format!("{major}.{minor}")));
                out.push(v(&format!("{major}.{minor}.0-rc1")));
                out.push(v(&format!("{major}.{minor}.1-beta.2")));
                out.push(v(&format!("{major}.{minor}.1-beta.10")));
            }
        }
        out.extend(vs(&["3", "3.0.0.1", "10.0", "2.0.0.Final", "1.2.3.4", "2.1-SNAPSHOT", "0.0.1-alpha", "1.1.1-rc.1", "10.0.0"]));
        out
    }

    #[test]
    fn order_is_strict_total_on_pool() {
        let pool = pool50();
        assert!(pool.len() >= 50);
        for a in &pool {
            assert_eq!(a.cmp(a), Ordering::Equal);
            for b in &pool {
                assert_eq!(a.cmp(b), b.cmp(a).reverse());
                assert_eq!(a.cmp(b) == Ordering::Equal, a == b);
                for c in &pool {
                    if a < b && b < c {
                        assert!(a < c, "{a} < {b} < {c}");
                    }
                }
            }
        }
    }

    fn arb_version() -> impl Strategy<Value = Version> {
        (
            proptest::collection::vec(0u64..6, 1..5),
            proptest::option::of(prop_oneof![Just("rc1"), Just("beta.2"), Just("SNAPSHOT")]),
        )
            .prop_map(|(segs, q)| {
                let mut s = segs.iter().map(u64::to_string).collect::<Vec<_>>().join(".");
                if let Some(q) = q {
                    s.push('-');
                    s.push_str(q);
                }
                v(&s)
            })
    }

    proptest! {
        #[test]
        fn raw_round_trips(ver in arb_version()) {
            let again = Version::parse(ver.as_str()).unwrap();
            prop_assert_eq!(&again, &ver);
            prop_assert_eq!(again.segments(), ver.segments());
            prop_assert_eq!(again.qualifier(), ver.qualifier());
        }

        #[test]
        fn semver_next_is_tight(cur in arb_version(), cands in proptest::collection::vec(arb_version(), 0..12)) {
            if let Some(next) = semver_next(&cur, &cands) {
                prop_assert!(next > &cur);
                prop_assert!(!cands.iter().any(|c| c > &cur && c < next));
            } else {
                prop_assert!(cands.iter().all(|c| c <= &cur));
            }
        }

        #[test]
        fn heuristic_covers_and_agrees_on_same_line(cur in arb_version(), cands in proptest::collection::vec(arb_version(), 0..12)) {
            let dated: Vec<(&Version, i64)> = cands.iter().enumerate().map(|(i, v)| (v, (i * 7 % 5) as i64)).collect();
            let pick = heuristic_next(&cur, &dated);
            prop_assert_eq!(pick.is_none(), !cands.iter().any(|c| c > &cur));
            let width = cur.segments().len().max(2);
            let same_line_exists = cands.iter().any(|c| {
                (0..width - 1).all(|i| c.segment(i) == cur.segment(i)) && c.segment(width - 1) > cur.segment(width - 1)
            });
            if same_line_exists {
                prop_assert_eq!(pick.map(|p| p.version), semver_next(&cur, &cands));
            }
        }
    }
}
