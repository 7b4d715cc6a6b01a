use std::fmt;
use std::str::FromStr;

use serde::Serialize;

/// A cache size, absolute or relative to the number of distinct flows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Capacity {
    Entries(usize),
    Percent(f64),
}

impl Capacity {
    pub fn resolve(self, distinct_flows: usize) -> usize {
        match self {
            Capacity::Entries(n) => n,
            Capacity::Percent(p) => ((distinct_flows as f64 * p / 100.0).ceil() as usize).max(1),
        }
    }
}

impl FromStr for Capacity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if let Some(p) = s.strip_suffix('%') {
            let v: f64 = p.trim().parse().map_err(|_| format!("bad percentage {s:?}"))?;
            if !(v > 0.0 && v <= 100.0) {
                return Err(format!("percentage {s:?} must be in (0, 100]"));
            }
            return Ok(Capacity::Percent(v));
        }
        match s.parse::<usize>() {
            Ok(0) => Err("capacity must be >= 1".to_string()),
            Ok(n) => Ok(Capacity::Entries(n)),
            Err(_) => Err(format!("bad capacity {s:?} (use N or P%)")),
        }
    }
}

impl fmt::Display for Capacity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Capacity::Entries(n) => write!(f, "{n}"),
            Capacity::Percent(p) => write!(f, "{p}%"),
        }
    }
}

impl Serialize for Capacity {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

pub fn parse_list<T: FromStr<Err = String>>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(T::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_both_forms() {
        assert_eq!("15%".parse(), Ok(Capacity::Percent(15.0)));
        assert_eq!("250".parse(), Ok(Capacity::Entries(250)));
        assert!("0".parse::<Capacity>().is_err());
        assert!("150%".parse::<Capacity>().is_err());
        assert!("x%".parse::<Capacity>().is_err());
    }

    #[test]
    fn percent_rounds_up() {
        assert_eq!(Capacity::Percent(15.0).resolve(1000), 150);
        assert_eq!(Capacity::Percent(15.0).resolve(1001), 151);
        assert_eq!(Capacity::Percent(1.0).resolve(3), 1);
        assert_eq!(Capacity::Entries(7).resolve(3), 7);
    }

    #[test]
    fn list() {
        let v: Vec<Capacity> = parse_list("5%, 10%,100").unwrap();
        assert_eq!(
            v,
            vec![Capacity::Percent(5.0), Capacity::Percent(10.0), Capacity::Entries(100)]
        );
    }
}
