//! Survey state plus its store, with persist-then-apply semantics.

use std::io::Write;

use chrono::{DateTime, Utc};
use rand::Rng;
use streetpulse::scheduler::PairScheduler;
use streetpulse::votes::{write_sessions, write_votes, Choice, Demographics, Rater};

use crate::error::Result;
use crate::state::{Event, Outstanding, PairDecision, Stats, Survey, VoteDecision};
use crate::store::Storage;

pub const DEFAULT_SNAPSHOT_EVERY: u64 = 1000;

#[derive(Debug, Clone, PartialEq)]
pub enum PairReply {
    Pair(Outstanding),
    Complete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoteAck {
    pub vote_id: u64,
    /// The token had already been answered; nothing new was stored.
    pub replayed: bool,
}

/// Unguessable identifier: 128 random bits in hex.
pub fn random_token() -> String {
    format!("{:032x}", rand::rng().random::<u128>())
}

/// Server clock at microsecond resolution, the precision of the exports.
pub fn now_micros() -> DateTime<Utc> {
    let now = Utc::now();
    DateTime::from_timestamp_micros(now.timestamp_micros()).unwrap_or(now)
}

pub struct Service {
    survey: Survey,
    store: Box<dyn Storage>,
    snapshot_every: u64,
    last_snapshot: u64,
}

impl Service {
    /// Rebuilds the survey from whatever the store holds.
    pub fn open(scheduler: PairScheduler, mut store: Box<dyn Storage>, snapshot_every: u64) -> Result<Service> {
        let (snapshot, events) = store.load()?;
        let mut survey = match &snapshot {
            Some(s) => Survey::restore(scheduler, s)?,
            None => Survey::new(scheduler),
        };
        for e in &events {
            survey.apply(e)?;
        }
        log::info!(
            "recovered {} sessions and {} votes from {} events",
            survey.raters().len(),
            survey.votes().len(),
            survey.events()
        );
        let last_snapshot = snapshot.map_or(0, |s| s.events);
        Ok(Service {
            survey,
            store,
            snapshot_every: snapshot_every.max(1),
            last_snapshot,
        })
    }

    pub fn survey(&self) -> &Survey {
        &self.survey
    }

    fn commit(&mut self, event: Event) -> Result<()> {
        self.store.append(&event)?;
        self.survey.apply(&event)?;
        if self.survey.events() - self.last_snapshot >= self.snapshot_every {
            // a failed snapshot is not fatal: the log alone still recovers
            match self.store.write_snapshot(&self.survey.snapshot()) {
                Ok(()) => self.last_snapshot = self.survey.events(),
                Err(e) => log::warn!("snapshot failed: {e}"),
            }
        }
        Ok(())
    }

    pub fn create_session(&mut self, demographics: Option<Demographics>) -> Result<Rater> {
        let id = random_token();
        let event = self.survey.decide_create(id.clone(), now_micros(), demographics)?;
        self.commit(event)?;
        Ok(self.survey.rater(&id)?.clone())
    }

    pub fn set_demographics(&mut self, session_id: &str, demographics: Demographics) -> Result<Rater> {
        if let Some(event) = self.survey.decide_demographics(session_id, demographics)? {
            self.commit(event)?;
        }
        Ok(self.survey.rater(session_id)?.clone())
    }

    pub fn get_pair(&mut self, session_id: &str) -> Result<PairReply> {
        match self.survey.decide_pair(session_id, random_token())? {
            PairDecision::Existing(o) => Ok(PairReply::Pair(o)),
            PairDecision::Complete => Ok(PairReply::Complete),
            PairDecision::New(event) => {
                self.commit(event)?;
                let o = self.survey.outstanding(session_id)?.expect("pair just served");
                Ok(PairReply::Pair(o.clone()))
            }
        }
    }

    pub fn post_vote(
        &mut self,
        session_id: &str,
        token: &str,
        choice: Choice,
        client_ts: Option<DateTime<Utc>>,
    ) -> Result<VoteAck> {
        match self
            .survey
            .decide_vote(session_id, token, choice, client_ts, now_micros())?
        {
            VoteDecision::Existing(vote_id) => Ok(VoteAck { vote_id, replayed: true }),
            VoteDecision::New(event) => {
                let Event::VoteRecorded { vote_id, .. } = event else {
                    unreachable!("vote decisions carry vote events")
                };
                self.commit(event)?;
                Ok(VoteAck {
                    vote_id,
                    replayed: false,
                })
            }
        }
    }

    pub fn stats(&self) -> Stats {
        self.survey.stats()
    }

    pub fn export_votes<W: Write>(&self, writer: W) -> Result<()> {
        Ok(write_votes(self.survey.votes(), writer)?)
    }

    pub fn export_sessions<W: Write>(&self, writer: W) -> Result<()> {
        Ok(write_sessions(&self.survey.raters(), writer)?)
    }
}
