//! Articles × iterations matrix of parsed scores and subset averaging.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::{SCALE_MAX, SCALE_MIN};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MatrixError {
    #[error("matrix has problems: {}", .0.join("; "))]
    Invalid(Vec<String>),
    #[error("pending manual resolution: {}", .0.join(", "))]
    Pending(Vec<String>),
    #[error("csv: {0}")]
    Csv(String),
}

/// Outcome of parsing one report, as seen by the matrix builder.
#[derive(Debug, Clone, PartialEq)]
pub enum CellValue {
    Score(f64),
    Missing,
    /// Unparsed report awaiting manual resolution; carries the queue id.
    Pending(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub article_id: String,
    pub iteration: usize,
    pub value: CellValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    article_ids: Vec<String>,
    iterations: usize,
    cells: Vec<Vec<Option<f64>>>,
    human: Vec<f64>,
}

impl ScoreMatrix {
    /// Builds a matrix directly from rows. Used by tests and simulations.
    pub fn from_rows(
        article_ids: Vec<String>,
        cells: Vec<Vec<Option<f64>>>,
        human: Vec<f64>,
    ) -> Result<Self, MatrixError> {
        let n = cells.first().map_or(0, Vec::len);
        let mut problems = Vec::new();
        if article_ids.len() != cells.len() || human.len() != cells.len() {
            problems.push(format!(
                "{} ids, {} rows, {} human scores",
                article_ids.len(),
                cells.len(),
                human.len()
            ));
        }
        if n == 0 {
            problems.push("no iterations".into());
        }
        for (i, row) in cells.iter().enumerate() {
            let id = article_ids.get(i).map_or("?", String::as_str);
            if row.len() != n {
                problems.push(format!("{id}: {} cells, expected {n}", row.len()));
            }
            if let Some(v) = row.iter().flatten().find(|v| !(SCALE_MIN..=SCALE_MAX).contains(*v)) {
                problems.push(format!("{id}: score {v} outside [1, 4]"));
            }
        }
        for (id, h) in article_ids.iter().zip(&human) {
            if !(SCALE_MIN..=SCALE_MAX).contains(h) {
                problems.push(format!("{id}: human score {h} outside [1, 4]"));
            }
        }
        if !problems.is_empty() {
            return Err(MatrixError::Invalid(problems));
        }
        Ok(Self {
            article_ids,
            iterations: n,
            cells,
            human,
        })
    }

    pub fn article_ids(&self) -> &[String] {
        &self.article_ids
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn articles(&self) -> usize {
        self.article_ids.len()
    }

    pub fn human(&self) -> &[f64] {
        &self.human
    }

    pub fn row(&self, article: usize) -> &[Option<f64>] {
        &self.cells[article]
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().flatten().filter(|c| c.is_none()).count()
    }

    /// Mean of the non-missing cells selected by `subset` (a multiset of
    /// iteration indices); `None` when every selected cell is missing.
    pub fn mean_over(&self, article: usize, subset: &[usize]) -> Option<f64> {
        let row = &self.cells[article];
        let (sum, count) = subset
            .iter()
            .filter_map(|&i| row[i])
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        (count > 0).then(|| sum / count as f64)
    }

    /// Per-article means over the same subset.
    pub fn means_over(&self, subset: &[usize]) -> Vec<Option<f64>> {
        (0..self.articles()).map(|a| self.mean_over(a, subset)).collect()
    }

    /// Per-article means over all iterations.
    pub fn row_means(&self) -> Vec<Option<f64>> {
        let all: Vec<usize> = (0..self.iterations).collect();
        self.means_over(&all)
    }

    /// CSV with one row per article, one column per iteration (empty for
    /// missing) and a trailing human-score column.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["article".to_string()];
        header.extend((0..self.iterations).map(|i| format!("iter_{i}")));
        header.push("human".into());
        w.write_record(&header).expect("in-memory write");
        for ((id, row), h) in self.article_ids.iter().zip(&self.cells).zip(&self.human) {
            let mut rec = vec![id.clone()];
            rec.extend(row.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()));
            rec.push(h.to_string());
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    pub fn from_csv(text: &str) -> Result<Self, MatrixError> {
        let bad = |e: String| MatrixError::Csv(e);
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let headers = r.headers().map_err(|e| bad(e.to_string()))?.clone();
        if headers.len() < 3 || headers.get(headers.len() - 1) != Some("human") {
            return Err(bad("expected article, iter_*, human columns".into()));
        }
        let mut ids = Vec::new();
        let mut cells = Vec::new();
        let mut human = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| bad(e.to_string()))?;
            let parse = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("{s:?}: {e}")));
            ids.push(rec[0].to_string());
            let mut row = Vec::with_capacity(rec.len() - 2);
            for field in rec.iter().skip(1).take(rec.len() - 2) {
                row.push(if field.is_empty() { None } else { Some(parse(field)?) });
            }
            cells.push(row);
            human.push(parse(&rec[rec.len() - 1])?);
        }
        Self::from_rows(ids, cells, human)
    }
}

/// Assembles parsed scores into a matrix. `human` fixes the article order.
pub fn build_matrix(
    records: &[ScoreRecord],
    human: &[(String, f64)],
    iterations: usize,
) -> Result<ScoreMatrix, MatrixError> {
    let index: HashMap<&str, usize> = human
        .iter()
        .enumerate()
        .map(|(i, (id, _))| (id.as_str(), i))
        .collect();
    let mut grid: Vec<Vec<Option<Option<f64>>>> = vec![vec![None; iterations]; human.len()];
    let mut problems = Vec::new();
    let mut pending = Vec::new();
    for r in records {
        let Some(&row) = index.get(r.article_id.as_str()) else {
            problems.push(format!("unknown article {}", r.article_id));
            continue;
        };
        if r.iteration >= iterations {
            problems.push(format!(
                "{}: iteration {} out of range 0..{iterations}",
                r.article_id, r.iteration
            ));
            continue;
        }
        let slot = &mut grid[row][r.iteration];
        if slot.is_some() {
            problems.push(format!("{}#{} appears twice", r.article_id, r.iteration));
            continue;
        }
        *slot = Some(match &r.value {
            CellValue::Score(v) => Some(*v),
            CellValue::Missing => None,
            CellValue::Pending(id) => {
                pending.push(id.clone());
                None
            }
        });
    }
    if !pending.is_empty() {
        return Err(MatrixError::Pending(pending));
    }
    let mut empty: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for ((id, _), row) in human.iter().zip(&grid) {
        for (i, c) in row.iter().enumerate() {
            if c.is_none() {
                empty.entry(id.as_str()).or_default().push(i);
            }
        }
    }
    for (id, iters) in empty {
        problems.push(format!("{id}: no record for iterations {iters:?}"));
    }
    if !problems.is_empty() {
        return Err(MatrixError::Invalid(problems));
    }
    ScoreMatrix::from_rows(
        human.iter().map(|(id, _)| id.clone()).collect(),
        grid.into_iter()
            .map(|row| row.into_iter().map(|c| c.expect("checked above")).collect())
            .collect(),
        human.iter().map(|(_, h)| *h).collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(a: &str, i: usize, v: CellValue) -> ScoreRecord {
        ScoreRecord {
            article_id: a.into(),
            iteration: i,
            value: v,
        }
    }

    fn human() -> Vec<(String, f64)> {
        vec![("a".into(), 3.0), ("b".into(), 2.0)]
    }

    #[test]
    fn builds_full_matrix() {
        let records: Vec<_> = ["a", "b"]
            .iter()
            .flat_map(|a| (0..3).map(move |i| rec(a, i, CellValue::Score(2.0 + i as f64 / 2.0))))
            .collect();
        let m = build_matrix(&records, &human(), 3).unwrap();
        assert_eq!((m.articles(), m.iterations()), (2, 3));
    }

    #[test]
    fn pending_blocks_build() {
        let mut records: Vec<_> = (0..3).map(|i| rec("a", i, CellValue::Score(3.0))).collect();
        records.extend((0..2).map(|i| rec("b", i, CellValue::Score(3.0))));
        records.push(rec("b", 2, CellValue::Pending("cell/b#2".into())));
        assert_eq!(
            build_matrix(&records, &human(), 3),
            Err(MatrixError::Pending(vec!["cell/b#2".into()]))
        );
    }

    #[test]
    fn missing_cell_preserved() {
        let records = vec![
            rec("a", 0, CellValue::Score(3.0)),
            rec("a", 1, CellValue::Missing),
            rec("b", 0, CellValue::Score(2.0)),
            rec("b", 1, CellValue::Score(2.0)),
        ];
        let m = build_matrix(&records, &human(), 2).unwrap();
        assert_eq!(m.row(0), &[Some(3.0), None]);
        assert_eq!(m.missing_count(), 1);
    }

    #[test]
    fn build_lists_offenders() {
        let records = vec![
            rec("a", 0, CellValue::Score(3.0)),
            rec("a", 0, CellValue::Score(3.0)),
            rec("zz", 0, CellValue::Score(3.0)),
            rec("b", 5, CellValue::Score(3.0)),
        ];
        let Err(MatrixError::Invalid(problems)) = build_matrix(&records, &human(), 1) else {
            panic!("expected invalid");
        };
        let all = problems.join("\n");
        assert!(all.contains("a#0 appears twice"));
        assert!(all.contains("unknown article zz"));
        assert!(all.contains("iteration 5 out of range"));
        assert!(all.contains("b: no record"));
    }

    fn one_row(cells: Vec<Option<f64>>) -> ScoreMatrix {
        ScoreMatrix::from_rows(vec!["a".into()], vec![cells], vec![3.0]).unwrap()
    }

    #[test]
    fn mean_over_examples() {
        assert_eq!(one_row(vec![Some(3.0), Some(4.0), None]).mean_over(0, &[0, 1, 2]), Some(3.5));
        assert_eq!(one_row(vec![Some(3.0)]).mean_over(0, &[0]), Some(3.0));
        assert_eq!(one_row(vec![None, None]).mean_over(0, &[0, 1]), None);
        assert_eq!(one_row(vec![Some(1.0), Some(4.0)]).mean_over(0, &[1, 1, 0]), Some(3.0));
    }

    #[test]
    fn rejects_out_of_scale_cells() {
        assert!(ScoreMatrix::from_rows(vec!["a".into()], vec![vec![Some(0.5)]], vec![3.0]).is_err());
        assert!(ScoreMatrix::from_rows(vec!["a".into()], vec![vec![Some(2.0)]], vec![4.5]).is_err());
    }

    #[test]
    fn csv_round_trip_and_shape() {
        let m = ScoreMatrix::from_rows(
            vec!["a,1".into(), "b".into()],
            vec![vec![Some(3.0), None], vec![Some(3.667), Some(2.5)]],
            vec![3.5, 2.0],
        )
        .unwrap();
        let csv = m.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "article,iter_0,iter_1,human");
        assert_eq!(lines[1], "\"a,1\",3,,3.5");
        assert_eq!(lines[2], "b,3.667,2.5,2");
        assert_eq!(ScoreMatrix::from_csv(&csv).unwrap(), m);
    }

    fn cell() -> impl Strategy<Value = Option<f64>> {
        prop_oneof![1 => Just(None), 4 => (2u8..=8).prop_map(|h| Some(h as f64 / 2.0))]
    }

    proptest! {
        #[test]
        fn mean_is_order_invariant_and_bounded(
            cells in prop::collection::vec(cell(), 1..12),
            seed in any::<u64>(),
        ) {
            let n = cells.len();
            let m = one_row(cells.clone());
            let mut subset: Vec<usize> = (0..n).collect();
            let forward = m.mean_over(0, &subset);
            // deterministic shuffle
            let mut s = seed;
            for i in (1..n).rev() {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                subset.swap(i, (s >> 33) as usize % (i + 1));
            }
            let shuffled = m.mean_over(0, &subset);
            match (forward, shuffled) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
                (a, b) => prop_assert_eq!(a, b),
            }
            let present: Vec<f64> = cells.iter().flatten().copied().collect();
            if let Some(mean) = forward {
                let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(mean >= lo - 1e-12 && mean <= hi + 1e-12);
                if present.len() == n {
                    prop_assert_eq!(mean, present.iter().sum::<f64>() / n as f64);
                }
            } else {
                prop_assert!(present.is_empty());
            }
        }
    }
}
