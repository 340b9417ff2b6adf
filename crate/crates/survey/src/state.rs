//! The survey as a replayable state machine.
//!
//! Every mutation is expressed as an [`Event`]. Callers first ask the
//! [`Survey`] to *decide* what a request means, persist the resulting event,
//! and only then [`Survey::apply`] it. Replaying the persisted events in
//! order rebuilds the exact same state.

use std::collections::{BTreeMap, HashMap};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use streetpulse::scheduler::{NextPair, PairScheduler, SessionPairs};
use streetpulse::votes::{Choice, Demographics, PairKind, Rater, Vote};

use crate::error::{Result, SurveyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    SessionCreated {
        session_id: String,
        created_at: DateTime<Utc>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        demographics: Option<Demographics>,
    },
    DemographicsSet {
        session_id: String,
        demographics: Demographics,
    },
    PairServed {
        session_id: String,
        /// Scheduler request index that produced this pair.
        request: u64,
        left: String,
        right: String,
        kind: PairKind,
        token: String,
    },
    VoteRecorded {
        vote_id: u64,
        session_id: String,
        pair_token: String,
        choice: Choice,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        client_ts: Option<DateTime<Utc>>,
        server_ts: DateTime<Utc>,
    },
}

/// The pair a session has been shown and not yet voted on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outstanding {
    pub token: String,
    pub left: String,
    pub right: String,
    pub kind: PairKind,
}

#[derive(Debug, Clone)]
struct Session {
    rater: Rater,
    pairs: SessionPairs,
    served: Vec<(String, String)>,
    outstanding: Option<Outstanding>,
    /// Every answered token of this session, for idempotent resubmission.
    answered: HashMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PairDecision {
    /// The outstanding pair, re-served unchanged.
    Existing(Outstanding),
    New(Event),
    Complete,
}

#[derive(Debug, Clone, PartialEq)]
pub enum VoteDecision {
    /// The token was already answered; carries the original vote id.
    Existing(u64),
    New(Event),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct VoteCounts {
    pub left: usize,
    pub right: usize,
    pub not_comparable: usize,
    pub not_shown: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stats {
    pub sessions: usize,
    pub sessions_with_demographics: usize,
    pub votes_total: usize,
    pub votes: VoteCounts,
    pub images: usize,
    /// Decisive votes per survey image so far.
    pub games_multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSnapshot {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub demographics: Option<Demographics>,
    pub requests: u64,
    pub served: Vec<(String, String)>,
    pub outstanding: Option<Outstanding>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteSnapshot {
    pub vote_id: u64,
    pub session_id: String,
    pub pair_token: String,
    pub left_image: String,
    pub right_image: String,
    pub choice: Choice,
    pub pair_kind: PairKind,
    pub client_ts: Option<DateTime<Utc>>,
    pub server_ts: DateTime<Utc>,
}

/// Full survey state as of `events` applied log records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub events: u64,
    pub sessions: Vec<SessionSnapshot>,
    pub votes: Vec<VoteSnapshot>,
}

#[derive(Debug, Clone)]
pub struct Survey {
    scheduler: PairScheduler,
    sessions: HashMap<String, Session>,
    /// Session ids in creation order.
    order: Vec<String>,
    votes: Vec<Vote>,
    tokens: Vec<String>,
    events: u64,
}

fn pair_index(scheduler: &PairScheduler, id: &str) -> Result<usize> {
    scheduler
        .index_of(id)
        .ok_or_else(|| SurveyError::Corrupt(format!("image `{id}` is not in the survey set")))
}

impl Survey {
    pub fn new(scheduler: PairScheduler) -> Survey {
        Survey {
            scheduler,
            sessions: HashMap::new(),
            order: Vec::new(),
            votes: Vec::new(),
            tokens: Vec::new(),
            events: 0,
        }
    }

    pub fn scheduler(&self) -> &PairScheduler {
        &self.scheduler
    }

    /// Number of events applied so far.
    pub fn events(&self) -> u64 {
        self.events
    }

    fn session(&self, session_id: &str) -> Result<&Session> {
        self.sessions
            .get(session_id)
            .ok_or_else(|| SurveyError::UnknownSession(session_id.to_string()))
    }

    pub fn rater(&self, session_id: &str) -> Result<&Rater> {
        Ok(&self.session(session_id)?.rater)
    }

    pub fn outstanding(&self, session_id: &str) -> Result<Option<&Outstanding>> {
        Ok(self.session(session_id)?.outstanding.as_ref())
    }

    pub fn raters(&self) -> Vec<Rater> {
        self.order.iter().map(|id| self.sessions[id].rater.clone()).collect()
    }

    pub fn votes(&self) -> &[Vote] {
        &self.votes
    }

    pub fn decide_create(
        &self,
        session_id: String,
        now: DateTime<Utc>,
        demographics: Option<Demographics>,
    ) -> Result<Event> {
        if self.sessions.contains_key(&session_id) {
            return Err(SurveyError::Invalid(format!("session `{session_id}` already exists")));
        }
        Ok(Event::SessionCreated {
            session_id,
            created_at: now,
            demographics,
        })
    }

    /// `None` when the same demographics are already stored.
    pub fn decide_demographics(&self, session_id: &str, demographics: Demographics) -> Result<Option<Event>> {
        match self.session(session_id)?.rater.demographics {
            Some(d) if d == demographics => Ok(None),
            Some(_) => Err(SurveyError::DemographicsSet(session_id.to_string())),
            None => Ok(Some(Event::DemographicsSet {
                session_id: session_id.to_string(),
                demographics,
            })),
        }
    }

    pub fn decide_pair(&self, session_id: &str, token: String) -> Result<PairDecision> {
        let s = self.session(session_id)?;
        if let Some(o) = &s.outstanding {
            return Ok(PairDecision::Existing(o.clone()));
        }
        let mut probe = s.pairs.clone();
        let request = probe.requests;
        Ok(match self.scheduler.next_pair(session_id, &mut probe) {
            NextPair::Exhausted => PairDecision::Complete,
            NextPair::Pair { left, right, kind } => PairDecision::New(Event::PairServed {
                session_id: session_id.to_string(),
                request,
                left: self.scheduler.image(left).to_string(),
                right: self.scheduler.image(right).to_string(),
                kind,
                token,
            }),
        })
    }

    pub fn decide_vote(
        &self,
        session_id: &str,
        token: &str,
        choice: Choice,
        client_ts: Option<DateTime<Utc>>,
        now: DateTime<Utc>,
    ) -> Result<VoteDecision> {
        let s = self.session(session_id)?;
        if let Some(&id) = s.answered.get(token) {
            return Ok(VoteDecision::Existing(id));
        }
        match &s.outstanding {
            Some(o) if o.token == token => {}
            _ => return Err(SurveyError::StaleToken(token.to_string())),
        }
        // server time never runs backwards along the vote log
        let server_ts = self.votes.last().map_or(now, |v| v.server_ts.max(now));
        Ok(VoteDecision::New(Event::VoteRecorded {
            vote_id: self.votes.last().map_or(1, |v| v.vote_id + 1),
            session_id: session_id.to_string(),
            pair_token: token.to_string(),
            choice,
            client_ts,
            server_ts,
        }))
    }

    pub fn apply(&mut self, event: &Event) -> Result<()> {
        match event {
            Event::SessionCreated {
                session_id,
                created_at,
                demographics,
            } => {
                if self.sessions.contains_key(session_id) {
                    return Err(SurveyError::Corrupt(format!("session `{session_id}` created twice")));
                }
                self.sessions.insert(
                    session_id.clone(),
                    Session {
                        rater: Rater {
                            session_id: session_id.clone(),
                            created_at: *created_at,
                            demographics: *demographics,
                        },
                        pairs: SessionPairs::default(),
                        served: Vec::new(),
                        outstanding: None,
                        answered: HashMap::new(),
                    },
                );
                self.order.push(session_id.clone());
            }
            Event::DemographicsSet {
                session_id,
                demographics,
            } => {
                let s = self.session_mut(session_id)?;
                s.rater.demographics = Some(*demographics);
            }
            Event::PairServed {
                session_id,
                request,
                left,
                right,
                kind,
                token,
            } => {
                let (a, b) = (pair_index(&self.scheduler, left)?, pair_index(&self.scheduler, right)?);
                let s = self.session_mut(session_id)?;
                s.pairs.mark(a, b);
                s.pairs.requests = request + 1;
                s.served.push((left.clone(), right.clone()));
                s.outstanding = Some(Outstanding {
                    token: token.clone(),
                    left: left.clone(),
                    right: right.clone(),
                    kind: *kind,
                });
            }
            Event::VoteRecorded {
                vote_id,
                session_id,
                pair_token,
                choice,
                client_ts,
                server_ts,
            } => {
                let expected = self.votes.last().map_or(1, |v| v.vote_id + 1);
                if *vote_id != expected {
                    return Err(SurveyError::Corrupt(format!("vote {vote_id} out of order, expected {expected}")));
                }
                let s = self.session_mut(session_id)?;
                let o = match s.outstanding.take() {
                    Some(o) if o.token == *pair_token => o,
                    other => {
                        s.outstanding = other;
                        return Err(SurveyError::Corrupt(format!("vote {vote_id} answers no outstanding pair")));
                    }
                };
                s.answered.insert(pair_token.clone(), *vote_id);
                self.votes.push(Vote {
                    vote_id: *vote_id,
                    session_id: session_id.clone(),
                    left_image: o.left,
                    right_image: o.right,
                    choice: *choice,
                    pair_kind: o.kind,
                    client_ts: *client_ts,
                    server_ts: *server_ts,
                });
                self.tokens.push(pair_token.clone());
            }
        }
        self.events += 1;
        Ok(())
    }

    fn session_mut(&mut self, session_id: &str) -> Result<&mut Session> {
        self.sessions
            .get_mut(session_id)
            .ok_or_else(|| SurveyError::Corrupt(format!("event for unknown session `{session_id}`")))
    }

    pub fn stats(&self) -> Stats {
        let mut votes = VoteCounts::default();
        for v in &self.votes {
            match v.choice {
                Choice::Left => votes.left += 1,
                Choice::Right => votes.right += 1,
                Choice::NotComparable => votes.not_comparable += 1,
                Choice::NotShown => votes.not_shown += 1,
            }
        }
        let images = self.scheduler.images().len();
        Stats {
            sessions: self.sessions.len(),
            sessions_with_demographics: self
                .sessions
                .values()
                .filter(|s| s.rater.demographics.is_some())
                .count(),
            votes_total: self.votes.len(),
            games_multiplier: (votes.left + votes.right) as f64 / images as f64,
            votes,
            images,
        }
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            events: self.events,
            sessions: self
                .order
                .iter()
                .map(|id| {
                    let s = &self.sessions[id];
                    SessionSnapshot {
                        session_id: id.clone(),
                        created_at: s.rater.created_at,
                        demographics: s.rater.demographics,
                        requests: s.pairs.requests,
                        served: s.served.clone(),
                        outstanding: s.outstanding.clone(),
                    }
                })
                .collect(),
            votes: self
                .votes
                .iter()
                .zip(&self.tokens)
                .map(|(v, t)| VoteSnapshot {
                    vote_id: v.vote_id,
                    session_id: v.session_id.clone(),
                    pair_token: t.clone(),
                    left_image: v.left_image.clone(),
                    right_image: v.right_image.clone(),
                    choice: v.choice,
                    pair_kind: v.pair_kind,
                    client_ts: v.client_ts,
                    server_ts: v.server_ts,
                })
                .collect(),
        }
    }

    pub fn restore(scheduler: PairScheduler, snap: &Snapshot) -> Result<Survey> {
        let mut survey = Survey::new(scheduler);
        for s in &snap.sessions {
            let mut pairs = SessionPairs::default();
            for (l, r) in &s.served {
                pairs.mark(pair_index(&survey.scheduler, l)?, pair_index(&survey.scheduler, r)?);
            }
            pairs.requests = s.requests;
            survey.order.push(s.session_id.clone());
            survey.sessions.insert(
                s.session_id.clone(),
                Session {
                    rater: Rater {
                        session_id: s.session_id.clone(),
                        created_at: s.created_at,
                        demographics: s.demographics,
                    },
                    pairs,
                    served: s.served.clone(),
                    outstanding: s.outstanding.clone(),
                    answered: HashMap::new(),
                },
            );
        }
        for v in &snap.votes {
            survey
                .sessions
                .get_mut(&v.session_id)
                .ok_or_else(|| SurveyError::Corrupt(format!("vote {} for unknown session", v.vote_id)))?
                .answered
                .insert(v.pair_token.clone(), v.vote_id);
            survey.votes.push(Vote {
                vote_id: v.vote_id,
                session_id: v.session_id.clone(),
                left_image: v.left_image.clone(),
                right_image: v.right_image.clone(),
                choice: v.choice,
                pair_kind: v.pair_kind,
                client_ts: v.client_ts,
                server_ts: v.server_ts,
            });
            survey.tokens.push(v.pair_token.clone());
        }
        survey.events = snap.events;
        Ok(survey)
    }

    /// Per-session vote counts, for consistency checks.
    pub fn votes_by_session(&self) -> BTreeMap<&str, usize> {
        let mut out = BTreeMap::new();
        for v in &self.votes {
            *out.entry(v.session_id.as_str()).or_default() += 1;
        }
        out
    }
}
