//! Calendar-date helpers shared by every stage.
//!
//! All arithmetic is in whole days. "N years" is calendar-year arithmetic
//! with Feb 29 clamped to Feb 28 when the target year is not a leap year.

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use std::fmt;

pub type Date = NaiveDate;

/// Shift `date` by whole calendar years, clamping Feb 29 to Feb 28.
pub fn add_years(date: Date, years: i32) -> Date {
    let year = date.year() + years;
    NaiveDate::from_ymd_opt(year, date.month(), date.day())
        .or_else(|| NaiveDate::from_ymd_opt(year, date.month(), date.day() - 1))
        .expect("only Feb 29 can fail to exist in another year")
}

pub fn sub_years(date: Date, years: i32) -> Date {
    add_years(date, -years)
}

/// Fiscal year N runs from Oct 1 of N-1 through Sep 30 of N.
pub fn fiscal_year(date: Date) -> i32 {
    if date.month() >= 10 {
        date.year() + 1
    } else {
        date.year()
    }
}

pub fn fiscal_year_start(fy: i32) -> Date {
    NaiveDate::from_ymd_opt(fy - 1, 10, 1).expect("valid date")
}

pub fn fiscal_year_end(fy: i32) -> Date {
    NaiveDate::from_ymd_opt(fy, 9, 30).expect("valid date")
}

pub fn days_between(from: Date, to: Date) -> i64 {
    (to - from).num_days()
}

/// Completed years of age on `on`.
pub fn age_on(birth: Date, on: Date) -> i32 {
    let mut age = on.year() - birth.year();
    if (on.month(), on.day()) < (birth.month(), birth.day()) {
        age -= 1;
    }
    age
}

pub fn parse_date(s: &str) -> Option<Date> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").ok()
}

/// Half-open date interval `[start, end)`. An empty window (`start == end`)
/// contains no dates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: Date,
    pub end: Date,
}

impl DateWindow {
    pub fn new(start: Date, end: Date) -> Option<Self> {
        (start <= end).then_some(Self { start, end })
    }

    pub fn contains(&self, date: Date) -> bool {
        self.start <= date && date < self.end
    }

    pub fn is_empty(&self) -> bool {
        self.start >= self.end
    }

    pub fn covers(&self, other: &DateWindow) -> bool {
        self.start <= other.start && other.end <= self.end
    }
}

impl fmt::Display for DateWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {})", self.start, self.end)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Date {
        parse_date(s).unwrap()
    }

    #[test]
    fn leap_day_clamps() {
        assert_eq!(add_years(d("2012-02-29"), 2), d("2014-02-28"));
        assert_eq!(sub_years(d("2016-02-29"), 2), d("2014-02-28"));
        assert_eq!(add_years(d("2012-02-29"), 4), d("2016-02-29"));
    }

    #[test]
    fn fiscal_years() {
        assert_eq!(fiscal_year(d("2010-10-01")), 2011);
        assert_eq!(fiscal_year(d("2010-09-30")), 2010);
        assert_eq!(fiscal_year(d("2015-09-30")), 2015);
        assert_eq!(fiscal_year_start(2011), d("2010-10-01"));
        assert_eq!(fiscal_year_end(2015), d("2015-09-30"));
    }

    #[test]
    fn age() {
        assert_eq!(age_on(d("1960-05-10"), d("2010-05-09")), 49);
        assert_eq!(age_on(d("1960-05-10"), d("2010-05-10")), 50);
    }

    #[test]
    fn window_is_half_open() {
        let w = DateWindow::new(d("2013-01-01"), d("2014-01-01")).unwrap();
        assert!(w.contains(d("2013-01-01")));
        assert!(!w.contains(d("2014-01-01")));
        assert!(!w.contains(d("2012-12-31")));
        assert!(DateWindow::new(d("2014-01-01"), d("2013-01-01")).is_none());
    }
}
