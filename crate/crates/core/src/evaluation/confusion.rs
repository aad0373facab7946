use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, LabelSeries};

/// Rows are predicted classes, columns gold classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<i32>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.classes.len())
            .map(|j| self.counts.iter().map(|r| r[j]).sum())
            .collect()
    }

    /// Header row and column carry the class labels.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("pred\\gold");
        for c in &self.classes {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
        for (c, row) in self.classes.iter().zip(&self.counts) {
            write!(out, "{c}").unwrap();
            for n in row {
                write!(out, ",{n}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn confusion_matrix(
    predicted: &LabelSeries,
    gold: &LabelSeries,
    classes: &[i32],
) -> Result<ConfusionMatrix, EvalError> {
    let gold_labels = predicted.align(gold)?;
    let index = |label: i32| {
        classes
            .iter()
            .position(|&c| c == label)
            .ok_or_else(|| EvalError::Domain {
                label,
                classes: classes.to_vec(),
            })
    };
    let mut counts = vec![vec![0u64; classes.len()]; classes.len()];
    for (&p, &g) in predicted.labels().iter().zip(&gold_labels) {
        counts[index(p)?][index(g)?] += 1;
    }
    Ok(ConfusionMatrix {
        classes: classes.to_vec(),
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(labels: &[i32]) -> LabelSeries {
        LabelSeries::from_labels(labels.iter().copied())
    }

    #[test]
    fn identical_is_diagonal() {
        let a = s(&[0, 1, 2, 3, 3]);
        let m = confusion_matrix(&a, &a, &[0, 1, 2, 3]).unwrap();
        for (i, row) in m.counts.iter().enumerate() {
            for (j, &n) in row.iter().enumerate() {
                if i != j {
                    assert_eq!(n, 0);
                }
            }
        }
        assert_eq!(m.counts[3][3], 2);
    }

    #[test]
    fn single_off_diagonal() {
        let m = confusion_matrix(&s(&[1]), &s(&[3]), &[0, 1, 2, 3]).unwrap();
        assert_eq!(m.counts[1][3], 1);
        assert_eq!(m.total(), 1);
    }

    #[test]
    fn out_of_domain() {
        let err = confusion_matrix(&s(&[4]), &s(&[0]), &[0, 1, 2, 3]).unwrap_err();
        assert!(matches!(err, EvalError::Domain { label: 4, .. }));
    }

    #[test]
    fn csv_layout() {
        let m = confusion_matrix(&s(&[0, 1]), &s(&[1, 1]), &[0, 1]).unwrap();
        assert_eq!(m.to_csv(), "pred\\gold,0,1\n0,0,1\n1,0,1\n");
    }
}
