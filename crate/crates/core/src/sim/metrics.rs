//! Sessions, weekly actives, volume and CTR computed from event logs.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::episode::EventLog;
use crate::error::{Error, Result};

pub const SESSION_GAP_MINUTES: f64 = 30.0;

/// Number of sessions in a sorted list of visit times (hours). A new session
/// starts whenever the gap to the previous visit is at least `gap_minutes`.
pub fn session_count(visit_hours: &[f64], gap_minutes: f64) -> Result<usize> {
    if visit_hours.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Data("visit timestamps must be sorted".into()));
    }
    let gap = gap_minutes / 60.0;
    Ok(match visit_hours.first() {
        None => 0,
        Some(_) => 1 + visit_hours.windows(2).filter(|w| w[1] - w[0] >= gap).count(),
    })
}

/// Half-open time window `[start, end)` in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Period {
    pub start: f64,
    pub end: f64,
}

impl Period {
    pub fn week(start: f64) -> Self {
        Self {
            start,
            end: start + 168.0,
        }
    }

    fn contains(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub sessions: usize,
    /// Users with at least one session in the period.
    pub wau: usize,
    pub volume: usize,
    pub clicks: usize,
    /// Mean over users of their average daily click-through rate; `None`
    /// when no user received a notification.
    pub ctr: Option<f64>,
}

/// Aggregates the four engagement metrics over `period`.
///
/// CTR is computed per user per day (clicks on that day's sends divided by
/// that day's sends), averaged over the user's days with sends, then
/// averaged over users with at least one send.
pub fn compute_metrics(logs: &[EventLog], period: Period) -> Result<Metrics> {
    let mut m = Metrics::default();
    let mut user_ctrs = Vec::new();
    for log in logs {
        let visits: Vec<f64> = log.visits.iter().copied().filter(|&t| period.contains(t)).collect();
        let sessions = session_count(&visits, SESSION_GAP_MINUTES)?;
        m.sessions += sessions;
        if sessions > 0 {
            m.wau += 1;
        }
        let mut per_day: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
        for s in log.sends.iter().filter(|s| period.contains(s.time)) {
            m.volume += 1;
            let day = ((s.time - period.start) / 24.0).floor() as i64;
            let e = per_day.entry(day).or_default();
            e.0 += 1;
            if s.click_time.is_some() {
                e.1 += 1;
                m.clicks += 1;
            }
        }
        if !per_day.is_empty() {
            let daily: f64 = per_day.values().map(|&(s, c)| c as f64 / s as f64).sum();
            user_ctrs.push(daily / per_day.len() as f64);
        }
    }
    if !user_ctrs.is_empty() {
        m.ctr = Some(user_ctrs.iter().sum::<f64>() / user_ctrs.len() as f64);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::episode::SendEvent;
    use proptest::prelude::*;

    fn minutes(m: &[f64]) -> Vec<f64> {
        m.iter().map(|x| x / 60.0).collect()
    }

    #[test]
    fn session_count_examples() {
        assert_eq!(session_count(&[], 30.0).unwrap(), 0);
        assert_eq!(session_count(&minutes(&[0.0, 10.0, 50.0]), 30.0).unwrap(), 2);
        assert_eq!(session_count(&minutes(&[0.0, 29.0, 58.0]), 30.0).unwrap(), 1);
        assert!(session_count(&[2.0, 1.0], 30.0).is_err());
    }

    fn send(time: f64, clicked: bool) -> SendEvent {
        SendEvent {
            time,
            step: 0,
            click_time: clicked.then_some(time + 0.05),
        }
    }

    #[test]
    fn single_visit_no_sends() {
        let log = EventLog {
            user_id: 0,
            horizon: 168.0,
            visits: vec![5.0],
            sends: vec![],
        };
        let m = compute_metrics(&[log], Period::week(0.0)).unwrap();
        assert_eq!((m.sessions, m.wau, m.volume, m.ctr), (1, 1, 0, None));
    }

    #[test]
    fn two_sends_one_click() {
        let log = EventLog {
            user_id: 0,
            horizon: 168.0,
            visits: vec![],
            sends: vec![send(1.0, true), send(3.0, false)],
        };
        let m = compute_metrics(&[log], Period::week(0.0)).unwrap();
        assert_eq!(m.ctr, Some(0.5));
        assert_eq!(m.wau, 0);
    }

    #[test]
    fn empty_logs_give_zero_metrics() {
        assert_eq!(compute_metrics(&[], Period::week(0.0)).unwrap(), Metrics::default());
    }

    #[test]
    fn three_user_fixture() {
        // user A: visits at 0:00, 0:20, 2:00 and 30:00 -> 3 sessions;
        //         day 0: 2 sends 1 click, day 1: 1 send 1 click -> ctr 0.75
        // user B: no visits, 4 sends day 2, none clicked -> ctr 0
        // user C: visits at 10:00 and 10:29 -> 1 session, no sends
        let a = EventLog {
            user_id: 0,
            horizon: 168.0,
            visits: vec![0.0, 20.0 / 60.0, 2.0, 30.0],
            sends: vec![send(1.0, true), send(5.0, false), send(26.0, true)],
        };
        let b = EventLog {
            user_id: 1,
            horizon: 168.0,
            visits: vec![],
            sends: (0..4).map(|i| send(50.0 + i as f64, false)).collect(),
        };
        let c = EventLog {
            user_id: 2,
            horizon: 168.0,
            visits: vec![10.0, 10.0 + 29.0 / 60.0],
            sends: vec![],
        };
        let m = compute_metrics(&[a, b, c], Period::week(0.0)).unwrap();
        assert_eq!(m.sessions, 4);
        assert_eq!(m.wau, 2);
        assert_eq!(m.volume, 7);
        assert_eq!(m.clicks, 2);
        assert_eq!(m.ctr, Some((0.75 + 0.0) / 2.0));
    }

    proptest! {
        #[test]
        fn nearby_visit_never_adds_a_session(
            mut visits in prop::collection::vec(0.0f64..100.0, 1..30),
            pick in 0usize..30, offset in -0.49f64..0.49,
        ) {
            visits.sort_by(f64::total_cmp);
            let before = session_count(&visits, 30.0).unwrap();
            let anchor = visits[pick % visits.len()];
            visits.push(anchor + offset);
            visits.sort_by(f64::total_cmp);
            prop_assert!(session_count(&visits, 30.0).unwrap() <= before);
        }
    }
}
