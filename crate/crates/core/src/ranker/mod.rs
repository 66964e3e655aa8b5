//! Pairwise candidate ranking: a Swiss-system tournament narrows the field to
//! the top K, which are then compared exhaustively.

mod cache;
mod llm;
mod mock;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Mode;
use crate::error::{Error, Result};

pub use cache::{digest, ComparisonCache};
pub use llm::{LlmComparator, LlmConfig, LLM_API_KEY_ENV, LLM_ENDPOINT_ENV, LLM_MODEL_ENV};
pub use mock::{MockComparator, MockDefault, MockSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonOutcome {
    FirstWins,
    SecondWins,
    Tie,
}

impl ComparisonOutcome {
    /// The same result seen with the operands swapped.
    pub fn swap(self) -> Self {
        match self {
            ComparisonOutcome::FirstWins => ComparisonOutcome::SecondWins,
            ComparisonOutcome::SecondWins => ComparisonOutcome::FirstWins,
            ComparisonOutcome::Tie => ComparisonOutcome::Tie,
        }
    }

    /// Points for (first, second).
    pub fn points(self) -> (f64, f64) {
        match self {
            ComparisonOutcome::FirstWins => (1.0, 0.0),
            ComparisonOutcome::SecondWins => (0.0, 1.0),
            ComparisonOutcome::Tie => (0.5, 0.5),
        }
    }
}

/// A function entering the ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contender {
    pub id: String,
    pub qualified_name: String,
    pub file: String,
    pub body: String,
}

/// What the comparator is told about the vulnerability.
#[derive(Debug, Clone, Default)]
pub struct ComparisonContext {
    pub cve_id: String,
    /// Original description; also the cache key.
    pub description: String,
    /// Expansion terms, strongest first.
    pub expansion_terms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ComparatorError {
    /// The backend could not be reached; aborts the run.
    Transport(String),
    /// The backend answered with something that is not a verdict; scored as a tie.
    Unparseable(String),
}

pub trait Comparator: Send + Sync {
    /// Which of `first` and `second` is more likely the vulnerable function.
    fn compare(
        &self,
        ctx: &ComparisonContext,
        first: &Contender,
        second: &Contender,
    ) -> std::result::Result<ComparisonOutcome, ComparatorError>;
}

impl<T: Comparator + ?Sized> Comparator for Box<T> {
    fn compare(
        &self,
        ctx: &ComparisonContext,
        first: &Contender,
        second: &Contender,
    ) -> std::result::Result<ComparisonOutcome, ComparatorError> {
        (**self).compare(ctx, first, second)
    }
}

/// Comparator plus cache plus call accounting for one ranking run.
pub struct Judge<'a> {
    pub ctx: &'a ComparisonContext,
    pub comparator: &'a dyn Comparator,
    pub cache: &'a ComparisonCache,
    calls: AtomicUsize,
    comparisons: AtomicUsize,
}

impl<'a> Judge<'a> {
    pub fn new(ctx: &'a ComparisonContext, comparator: &'a dyn Comparator, cache: &'a ComparisonCache) -> Self {
        Judge { ctx, comparator, cache, calls: AtomicUsize::new(0), comparisons: AtomicUsize::new(0) }
    }

    /// Backend invocations so far (cache misses).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Comparisons requested so far, hits included.
    pub fn comparisons(&self) -> usize {
        self.comparisons.load(Ordering::SeqCst)
    }

    /// Compares `a` against `b`, consulting the cache first. The backend always
    /// sees the pair in id order.
    pub fn compare(&self, a: &Contender, b: &Contender) -> Result<ComparisonOutcome> {
        if a.id == b.id {
            return Err(Error::Validation(format!("cannot compare {} with itself", a.id)));
        }
        self.comparisons.fetch_add(1, Ordering::SeqCst);
        let (lo, hi, swapped) = if a.id < b.id { (a, b, false) } else { (b, a, true) };
        let outcome = match self.cache.get(&self.ctx.description, &lo.id, &hi.id) {
            Some(o) => o,
            None => {
                self.calls.fetch_add(1, Ordering::SeqCst);
                let o = match self.comparator.compare(self.ctx, lo, hi) {
                    Ok(o) => o,
                    Err(ComparatorError::Unparseable(reply)) => {
                        warn!("unparseable comparator reply for {} vs {}: {reply:?}; scoring as tie", lo.id, hi.id);
                        ComparisonOutcome::Tie
                    }
                    Err(ComparatorError::Transport(e)) => {
                        return Err(Error::Transport(format!("comparator failed on {} vs {}: {e}", lo.id, hi.id)))
                    }
                };
                self.cache.insert(&self.ctx.description, &lo.id, &hi.id, o)?;
                o
            }
        };
        Ok(if swapped { outcome.swap() } else { outcome })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TournamentState {
    pub candidates: Vec<String>,
    pub round: usize,
    pub scores: Vec<f64>,
    /// Played pairs as (smaller index, larger index).
    pub history: BTreeSet<(usize, usize)>,
    pub bye_recipients: BTreeSet<usize>,
    pub comparator_calls: usize,
    /// Round-one shuffle position of each candidate; breaks score ties when pairing.
    pub seed_order: Vec<usize>,
}

impl TournamentState {
    fn played(&self, a: usize, b: usize) -> bool {
        self.history.contains(&(a.min(b), a.max(b)))
    }

    /// Indices by score descending, then seed position.
    fn standings(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.candidates.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .total_cmp(&self.scores[a])
                .then(self.seed_order[a].cmp(&self.seed_order[b]))
        });
        order
    }
}

/// Backtracking steps allowed per round before giving up on pairing.
const PAIRING_BUDGET: usize = 200_000;

/// Opponents for the top remaining player `p`, most preferred first: fold
/// partner within `p`'s score group, rest of the group, then lower groups.
fn preferences(state: &TournamentState, remaining: &[usize]) -> Vec<usize> {
    let p = remaining[0];
    let group_len = remaining.iter().take_while(|&&q| state.scores[q] == state.scores[p]).count();
    let mut prefs = Vec::with_capacity(remaining.len() - 1);
    if group_len >= 2 {
        let half = group_len / 2;
        prefs.extend(remaining[half..group_len].iter().copied());
        prefs.extend(remaining[1..half].iter().rev().copied());
    }
    prefs.extend(remaining[group_len.max(1)..].iter().copied());
    prefs
}

fn pair_rec(state: &TournamentState, remaining: &[usize], budget: &mut usize) -> Option<Vec<(usize, usize)>> {
    if remaining.is_empty() {
        return Some(Vec::new());
    }
    if *budget == 0 {
        return None;
    }
    *budget -= 1;
    let p = remaining[0];
    for q in preferences(state, remaining) {
        if state.played(p, q) {
            continue;
        }
        let rest: Vec<usize> = remaining[1..].iter().copied().filter(|&x| x != q).collect();
        if let Some(mut pairs) = pair_rec(state, &rest, budget) {
            pairs.insert(0, (p, q));
            return Some(pairs);
        }
        if *budget == 0 {
            return None;
        }
    }
    None
}

type Pairing = (Vec<(usize, usize)>, Option<usize>);

/// Pairs one round; `None` when no rematch-free pairing was found.
fn pair_round(state: &TournamentState) -> Option<Pairing> {
    let standings = state.standings();
    let mut budget = PAIRING_BUDGET;
    if standings.len().is_multiple_of(2) {
        return pair_rec(state, &standings, &mut budget).map(|p| (p, None));
    }
    // Bye to the lowest-standing candidate without one; others only if all had one.
    let mut bye_order: Vec<usize> = standings.iter().rev().copied().filter(|i| !state.bye_recipients.contains(i)).collect();
    if bye_order.is_empty() {
        bye_order = standings.iter().rev().copied().collect();
    }
    for bye in bye_order {
        let rest: Vec<usize> = standings.iter().copied().filter(|&i| i != bye).collect();
        if let Some(pairs) = pair_rec(state, &rest, &mut budget) {
            return Some((pairs, Some(bye)));
        }
        if budget == 0 {
            break;
        }
    }
    None
}

/// Runs up to `rounds` Swiss rounds. Stops early when a round cannot be paired
/// without a rematch.
pub fn run_swiss(contenders: &[Contender], rounds: usize, judge: &Judge<'_>, seed: u64) -> Result<TournamentState> {
    if rounds < 1 {
        return Err(Error::Config("tournament needs at least one round".into()));
    }
    let n = contenders.len();
    if n < 2 {
        return Err(Error::Validation("tournament needs at least two candidates".into()));
    }
    let mut shuffled: Vec<usize> = (0..n).collect();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut seed_order = vec![0; n];
    for (pos, &i) in shuffled.iter().enumerate() {
        seed_order[i] = pos;
    }
    let calls_before = judge.calls();
    let mut state = TournamentState {
        candidates: contenders.iter().map(|c| c.id.clone()).collect(),
        round: 0,
        scores: vec![0.0; n],
        history: BTreeSet::new(),
        bye_recipients: BTreeSet::new(),
        comparator_calls: 0,
        seed_order,
    };
    for _ in 0..rounds {
        let Some((pairs, bye)) = pair_round(&state) else {
            info!("swiss: no rematch-free pairing after round {}; stopping", state.round);
            break;
        };
        let outcomes: Vec<ComparisonOutcome> = pairs
            .par_iter()
            .map(|&(a, b)| judge.compare(&contenders[a], &contenders[b]))
            .collect::<Result<_>>()?;
        for (&(a, b), o) in pairs.iter().zip(outcomes) {
            let (pa, pb) = o.points();
            state.scores[a] += pa;
            state.scores[b] += pb;
            state.history.insert((a.min(b), a.max(b)));
        }
        if let Some(b) = bye {
            state.scores[b] += 1.0;
            state.bye_recipients.insert(b);
        }
        state.round += 1;
    }
    state.comparator_calls = judge.calls() - calls_before;
    Ok(state)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    /// Indices into the input, best first.
    pub order: Vec<usize>,
    /// Pairwise win count per input index.
    pub wins: Vec<f64>,
}

/// Compares every pair in `top` (indices into `contenders`). `swiss` supplies
/// the tie-breaking tournament scores.
pub fn exhaustive_rank(contenders: &[Contender], top: &[usize], swiss: &[f64], judge: &Judge<'_>) -> Result<ExhaustiveResult> {
    let pairs: Vec<(usize, usize)> = (0..top.len())
        .flat_map(|i| (i + 1..top.len()).map(move |j| (i, j)))
        .collect();
    let outcomes: Vec<ComparisonOutcome> = pairs
        .par_iter()
        .map(|&(i, j)| judge.compare(&contenders[top[i]], &contenders[top[j]]))
        .collect::<Result<_>>()?;
    let mut wins = vec![0.0; contenders.len()];
    for (&(i, j), o) in pairs.iter().zip(outcomes) {
        let (pa, pb) = o.points();
        wins[top[i]] += pa;
        wins[top[j]] += pb;
    }
    let mut order = top.to_vec();
    order.sort_by(|&a, &b| {
        wins[b]
            .total_cmp(&wins[a])
            .then(swiss[b].total_cmp(&swiss[a]))
            .then_with(|| contenders[a].qualified_name.cmp(&contenders[b].qualified_name))
            .then_with(|| contenders[a].id.cmp(&contenders[b].id))
    });
    Ok(ExhaustiveResult { order, wins })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub rounds: usize,
    pub top_k: usize,
    /// Characters of each function body shown to a language-model comparator.
    pub prompt_budget: usize,
    pub seed: u64,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig { rounds: 8, top_k: 20, prompt_budget: 4000, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub rank: usize,
    pub id: String,
    pub qualified_name: String,
    pub file: String,
    pub swiss_score: f64,
    /// Pairwise wins inside the top K; absent below it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wins: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedResult {
    pub cve_id: String,
    pub mode: Mode,
    pub ordering: Vec<RankedEntry>,
    pub k: usize,
    pub rounds_played: usize,
    /// Pairwise comparisons the ranking consumed, cached or not.
    pub comparisons: usize,
}

impl RankedResult {
    pub fn ids(&self) -> Vec<&str> {
        self.ordering.iter().map(|e| e.id.as_str()).collect()
    }
}

/// Ranks `contenders` and reports how many backend calls were made.
pub fn rank(
    cve_id: &str,
    mode: Mode,
    contenders: &[Contender],
    judge: &Judge<'_>,
    config: &RankConfig,
) -> Result<(RankedResult, usize)> {
    let n = contenders.len();
    if n == 0 {
        return Err(Error::Empty(format!("{cve_id}: no candidates to rank")));
    }
    if config.top_k < 1 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let calls_before = judge.calls();
    let comparisons_before = judge.comparisons();
    let by_name = |a: usize, b: usize| {
        contenders[a]
            .qualified_name
            .cmp(&contenders[b].qualified_name)
            .then_with(|| contenders[a].id.cmp(&contenders[b].id))
    };

    let (swiss, rounds_played, top): (Vec<f64>, usize, Vec<usize>) = if n <= config.top_k {
        (vec![0.0; n], 0, (0..n).collect())
    } else {
        let state = run_swiss(contenders, config.rounds, judge, config.seed)?;
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| state.scores[b].total_cmp(&state.scores[a]).then(by_name(a, b)));
        order.truncate(config.top_k);
        (state.scores, state.round, order)
    };

    let (head, wins) = if top.len() >= 2 {
        let ex = exhaustive_rank(contenders, &top, &swiss, judge)?;
        (ex.order, Some(ex.wins))
    } else {
        (top.clone(), None)
    };
    let in_top: BTreeSet<usize> = top.iter().copied().collect();
    let mut tail: Vec<usize> = (0..n).filter(|i| !in_top.contains(i)).collect();
    tail.sort_by(|&a, &b| swiss[b].total_cmp(&swiss[a]).then(by_name(a, b)));

    let ordering = head
        .iter()
        .map(|&i| (i, wins.as_ref().map(|w| w[i])))
        .chain(tail.iter().map(|&i| (i, None)))
        .enumerate()
        .map(|(r, (i, w))| RankedEntry {
            rank: r + 1,
            id: contenders[i].id.clone(),
            qualified_name: contenders[i].qualified_name.clone(),
            file: contenders[i].file.clone(),
            swiss_score: swiss[i],
            wins: w,
        })
        .collect();
    let result = RankedResult {
        cve_id: cve_id.to_string(),
        mode,
        ordering,
        k: top.len(),
        rounds_played,
        comparisons: judge.comparisons() - comparisons_before,
    };
    Ok((result, judge.calls() - calls_before))
}
