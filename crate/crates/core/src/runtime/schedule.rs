use serde::{Deserialize, Serialize};

pub const DAY_MS: i64 = 86_400_000;
const MINUTE_MS: i64 = 60_000;

/// Local wall-clock time of day, written `"HH:MM"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LocalTime {
    minutes: u16,
}

impl LocalTime {
    pub fn from_minutes(minutes: u16) -> Option<Self> {
        (minutes < 24 * 60).then_some(Self { minutes })
    }

    pub fn hm(hour: u16, minute: u16) -> Self {
        Self::from_minutes(hour * 60 + minute).expect("valid time of day")
    }

    pub fn minutes(self) -> u16 {
        self.minutes
    }

    fn offset_ms(self) -> i64 {
        i64::from(self.minutes) * MINUTE_MS
    }
}

impl TryFrom<String> for LocalTime {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        let bad = || format!("invalid time {s:?}, expected HH:MM");
        let (h, m) = s.split_once(':').ok_or_else(bad)?;
        if h.len() != 2 || m.len() != 2 {
            return Err(bad());
        }
        let h: u16 = h.parse().map_err(|_| bad())?;
        let m: u16 = m.parse().map_err(|_| bad())?;
        if h >= 24 || m >= 60 {
            return Err(bad());
        }
        Ok(Self { minutes: h * 60 + m })
    }
}

impl From<LocalTime> for String {
    fn from(t: LocalTime) -> String {
        format!("{:02}:{:02}", t.minutes / 60, t.minutes % 60)
    }
}

/// When decisions and nightly updates happen.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub decision_times: Vec<LocalTime>,
    pub update_time: LocalTime,
    pub trial_days: u64,
    /// Epoch milliseconds of local midnight on day 0.
    #[serde(default)]
    pub start_ms: i64,
}

impl Schedule {
    /// Twice daily at 09:00 and 18:00, updates at 23:30.
    pub fn twice_daily(trial_days: u64) -> Self {
        Self {
            decision_times: vec![LocalTime::hm(9, 0), LocalTime::hm(18, 0)],
            update_time: LocalTime::hm(23, 30),
            trial_days,
            start_ms: 0,
        }
    }

    /// `k` decision points spread over 08:00–22:00, updates at 23:30.
    pub fn evenly_spaced(k: usize, trial_days: u64) -> Self {
        let step = (14 * 60 / k.max(1)) as u16;
        Self {
            decision_times: (0..k as u16).map(|i| LocalTime::hm(8, 0).plus(i * step)).collect(),
            update_time: LocalTime::hm(23, 30),
            trial_days,
            start_ms: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.decision_times.is_empty() {
            return Err("schedule.decision_times must not be empty".into());
        }
        if self.decision_times.windows(2).any(|w| w[0] >= w[1]) {
            return Err("schedule.decision_times must be strictly increasing".into());
        }
        if self.decision_times.contains(&self.update_time) {
            return Err("schedule.update_time must differ from every decision time".into());
        }
        if self.trial_days == 0 {
            return Err("schedule.trial_days must be positive".into());
        }
        Ok(())
    }

    pub fn points_per_day(&self) -> u64 {
        self.decision_times.len() as u64
    }

    pub fn total_points(&self) -> u64 {
        self.points_per_day() * self.trial_days
    }

    pub fn day_of(&self, decision_index: u64) -> u64 {
        decision_index / self.points_per_day()
    }

    pub fn slot_of(&self, decision_index: u64) -> usize {
        (decision_index % self.points_per_day()) as usize
    }

    fn day_start(&self, day: u64) -> i64 {
        self.start_ms + day as i64 * DAY_MS
    }

    pub fn due_ts(&self, decision_index: u64) -> i64 {
        let day = self.day_of(decision_index);
        self.day_start(day) + self.decision_times[self.slot_of(decision_index)].offset_ms()
    }

    pub fn update_ts(&self, day: u64) -> i64 {
        self.day_start(day) + self.update_time.offset_ms()
    }

    /// Decision points of one day as `(decision_index, due_ts)`; indices are
    /// global per participant (`day·k + slot`).
    pub fn decision_points(&self, day: u64) -> Vec<(u64, i64)> {
        let k = self.points_per_day();
        (0..k).map(|slot| (day * k + slot, self.due_ts(day * k + slot))).collect()
    }

    /// Index of the decision window containing `ts`: the first decision
    /// point due at or after it.
    pub fn window_of(&self, ts: i64) -> u64 {
        if ts <= self.start_ms {
            return 0;
        }
        let day = ((ts - self.start_ms) / DAY_MS) as u64;
        let offset = ts - self.day_start(day);
        let k = self.points_per_day();
        match self.decision_times.iter().position(|t| t.offset_ms() >= offset) {
            Some(slot) => day * k + slot as u64,
            None => (day + 1) * k,
        }
    }
}

impl LocalTime {
    fn plus(self, minutes: u16) -> Self {
        Self::from_minutes(self.minutes + minutes).expect("time stays within the day")
    }
}

/// Decision points for `day`; see [`Schedule::decision_points`].
pub fn schedule_decision_points(schedule: &Schedule, day: u64) -> Vec<(u64, i64)> {
    schedule.decision_points(day)
}
