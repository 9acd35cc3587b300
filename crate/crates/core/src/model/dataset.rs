use std::io::{Read, Write};

use super::{FeatureSpace, Instance};
use crate::error::{Error, Result};

const LABEL_COLUMN: &str = "label";

/// Rows of complete numeric feature vectors, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    instances: Vec<Instance>,
    labels: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(instances: Vec<Instance>, labels: Option<Vec<usize>>) -> Result<Self> {
        if let Some(first) = instances.first() {
            if let Some((i, x)) = instances.iter().enumerate().find(|(_, x)| x.len() != first.len()) {
                return Err(Error::Dataset(format!(
                    "row {i} has {} values, row 0 has {}",
                    x.len(),
                    first.len()
                )));
            }
        }
        if let Some(labels) = &labels {
            if labels.len() != instances.len() {
                return Err(Error::Dataset(format!(
                    "{} labels for {} rows",
                    labels.len(),
                    instances.len()
                )));
            }
        }
        Ok(Self { instances, labels })
    }

    /// Reads a CSV whose header lists the model's feature names in order,
    /// optionally followed by a `label` column.
    pub fn from_csv<R: Read>(reader: R, features: &FeatureSpace) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let has_label = header.len() == features.len() + 1 && &header[features.len()] == LABEL_COLUMN;
        if header.len() != features.len() && !has_label {
            return Err(Error::Dataset(format!(
                "header has {} columns, model has {} features",
                header.len(),
                features.len()
            )));
        }
        for (i, name) in features.names().iter().enumerate() {
            if &header[i] != name {
                return Err(Error::Dataset(format!(
                    "column {i} is {:?}, model feature is {name:?}",
                    &header[i]
                )));
            }
        }

        let mut instances = Vec::new();
        let mut labels = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            let values = (0..features.len())
                .map(|i| {
                    record[i].parse::<f64>().map_err(|_| {
                        Error::Dataset(format!("row {row}, column {i}: bad number {:?}", &record[i]))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            instances.push(
                Instance::new(values).map_err(|e| Error::Dataset(format!("row {row}: {e}")))?,
            );
            if has_label {
                let raw = &record[features.len()];
                let label = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|l| *l >= 0.0 && l.fract() == 0.0)
                    .ok_or_else(|| Error::Dataset(format!("row {row}: bad label {raw:?}")))?;
                labels.push(label as usize);
            }
        }
        Self::new(instances, has_label.then_some(labels))
    }

    pub fn to_csv<W: Write>(&self, writer: W, features: &FeatureSpace) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = features.names().iter().map(String::as_str).collect();
        if self.labels.is_some() {
            header.push(LABEL_COLUMN);
        }
        w.write_record(&header)?;
        for (i, x) in self.instances.iter().enumerate() {
            let mut row: Vec<String> = x.values().iter().map(|v| v.to_string()).collect();
            if let Some(labels) = &self.labels {
                row.push(labels[i].to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_with_and_without_labels() {
        let fs = FeatureSpace::numbered(2);
        let d = Dataset::from_csv("f0,f1\n1.0,3.0\n0.5,0\n".as_bytes(), &fs).unwrap();
        assert_eq!(d.len(), 2);
        assert!(d.labels().is_none());
        let d = Dataset::from_csv("f0,f1,label\n1.0,3.0,1\n0.5,0,0\n".as_bytes(), &fs).unwrap();
        assert_eq!(d.labels(), Some(&[1usize, 0][..]));
    }

    #[test]
    fn rejects_mismatched_header_and_bad_values() {
        let fs = FeatureSpace::numbered(2);
        assert!(Dataset::from_csv("f1,f0\n1,2\n".as_bytes(), &fs).is_err());
        assert!(Dataset::from_csv("f0\n1\n".as_bytes(), &fs).is_err());
        assert!(Dataset::from_csv("f0,f1\n1,abc\n".as_bytes(), &fs).is_err());
        assert!(Dataset::from_csv("f0,f1\n1,NaN\n".as_bytes(), &fs).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let fs = FeatureSpace::numbered(2);
        let d = Dataset::from_csv("f0,f1,label\n1.25,-3,1\n".as_bytes(), &fs).unwrap();
        let mut out = Vec::new();
        d.to_csv(&mut out, &fs).unwrap();
        assert_eq!(Dataset::from_csv(out.as_slice(), &fs).unwrap(), d);
    }
}
