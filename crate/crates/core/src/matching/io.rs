use super::MatchedSet;
use crate::dates::parse_date;
use crate::ehr::PatientId;
use std::io::{Read, Write};
use thiserror::Error;

const HEADER: [&str; 5] = ["set_id", "case_id", "index_date", "control_id", "control_slot"];

#[derive(Debug, Error)]
pub enum MatchedSetsError {
    #[error("matched_sets.csv: expected header {expected:?}, found {found:?}")]
    Header { expected: String, found: String },
    #[error("matched_sets.csv line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One row per control slot, sets in order.
pub fn write_matched_sets<W: Write>(w: W, sets: &[MatchedSet]) -> Result<(), MatchedSetsError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(HEADER)?;
    for s in sets {
        for (slot, c) in s.control_ids.iter().enumerate() {
            out.write_record([
                s.set_id.to_string(),
                s.case_id.to_string(),
                s.index_date.to_string(),
                c.to_string(),
                (slot + 1).to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Parses rows back into sets. Rows of one set must be contiguous, agree
/// on case and index date, and number their slots 1, 2, ...
pub fn read_matched_sets<R: Read>(r: R) -> Result<Vec<MatchedSet>, MatchedSetsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let header = rdr.headers()?.clone();
    if header.iter().ne(HEADER) {
        return Err(MatchedSetsError::Header {
            expected: HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut sets: Vec<MatchedSet> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |message: String| MatchedSetsError::Malformed { line, message };
        if rec.len() != HEADER.len() {
            return Err(bad(format!("expected {} fields, found {}", HEADER.len(), rec.len())));
        }
        let set_id: usize = rec[0].parse().map_err(|_| bad(format!("bad set_id {:?}", &rec[0])))?;
        let case_id = PatientId::parse(&rec[1]).map_err(|e| bad(e.to_string()))?;
        let index_date = parse_date(&rec[2]).ok_or_else(|| bad(format!("bad index_date {:?}", &rec[2])))?;
        let control = PatientId::parse(&rec[3]).map_err(|e| bad(e.to_string()))?;
        let slot: usize = rec[4].parse().map_err(|_| bad(format!("bad control_slot {:?}", &rec[4])))?;
        match sets.last_mut() {
            Some(s) if s.set_id == set_id => {
                if s.case_id != case_id || s.index_date != index_date {
                    return Err(bad(format!("set {set_id} disagrees on case or index date")));
                }
                if slot != s.control_ids.len() + 1 {
                    return Err(bad(format!("set {set_id}: slot {slot} out of order")));
                }
                s.control_ids.push(control);
            }
            _ => {
                if sets.iter().any(|s| s.set_id == set_id) {
                    return Err(bad(format!("set {set_id} rows are not contiguous")));
                }
                if slot != 1 {
                    return Err(bad(format!("set {set_id}: first slot is {slot}")));
                }
                sets.push(MatchedSet {
                    set_id,
                    case_id,
                    index_date,
                    control_ids: vec![control],
                });
            }
        }
    }
    Ok(sets)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let sets = vec![
            MatchedSet {
                set_id: 1,
                case_id: PatientId::new("p1"),
                index_date: parse_date("2013-01-02").unwrap(),
                control_ids: vec![PatientId::new("p9"), PatientId::new("p4")],
            },
            MatchedSet {
                set_id: 2,
                case_id: PatientId::new("p2"),
                index_date: parse_date("2014-05-06").unwrap(),
                control_ids: vec![PatientId::new("p9")],
            },
        ];
        let mut buf = Vec::new();
        write_matched_sets(&mut buf, &sets).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("set_id,case_id,index_date,control_id,control_slot\n1,p1,2013-01-02,p9,1\n"));
        assert_eq!(read_matched_sets(buf.as_slice()).unwrap(), sets);
    }

    #[test]
    fn rejects_inconsistent_rows() {
        let h = "set_id,case_id,index_date,control_id,control_slot\n";
        for body in [
            "1,a,2013-01-01,b,2\n",
            "1,a,2013-01-01,b,1\n1,c,2013-01-01,d,2\n",
            "1,a,2013-01-01,b,1\n2,a,2013-01-01,b,1\n1,a,2013-01-01,c,2\n",
            "x,a,2013-01-01,b,1\n",
            "1,a,2013-13-01,b,1\n",
        ] {
            assert!(read_matched_sets(format!("{h}{body}").as_bytes()).is_err(), "{body}");
        }
        assert!(read_matched_sets("a,b\n".as_bytes()).is_err());
    }
}
