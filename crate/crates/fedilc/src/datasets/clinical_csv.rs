//! Clinical CSV ingestion: `hospital_id,label,<binary feature columns>`,
//! grouped into hospital silos with the same top-20/OOD rule as the
//! synthetic surrogate.

use std::collections::BTreeMap;
use std::path::Path;

use crate::datasets::{FederationDataset, LabeledDataset, Silo};
use crate::error::{Error, Result};

const TOP_HOSPITALS: usize = 20;

/// Loads a clinical CSV. The first two header columns must be
/// `hospital_id` and `label`; every further column is a binary feature.
/// The 20 largest hospitals (rows kept in file order) become training
/// silos split 70/30; the rest pool into the OOD set. With 20 or fewer
/// hospitals every hospital becomes a silo and the OOD set is empty —
/// such a federation loads fine but is rejected at training time.
pub fn load_clinical_csv(path: &Path) -> Result<FederationDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() < 3 {
        return Err(Error::CsvSchema(format!(
            "need hospital_id, label and at least one feature column, got {} columns",
            headers.len()
        )));
    }
    if &headers[0] != "hospital_id" || &headers[1] != "label" {
        return Err(Error::CsvSchema(format!(
            "header must start with hospital_id,label; got {},{}",
            &headers[0], &headers[1]
        )));
    }
    let n_features = headers.len() - 2;

    // BTreeMap keeps hospital iteration deterministic
    let mut groups: BTreeMap<String, (Vec<f64>, Vec<u32>)> = BTreeMap::new();
    let mut rows = 0usize;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::CsvSchema(format!(
                "row {line}: {} fields, expected {}",
                record.len(),
                headers.len()
            )));
        }
        let hospital = record[0].to_string();
        let label: u32 = match &record[1] {
            "0" => 0,
            "1" => 1,
            other => {
                return Err(Error::CsvSchema(format!(
                    "row {line}: label {other:?} is not 0/1"
                )));
            }
        };
        let entry = groups.entry(hospital).or_default();
        for (col, field) in record.iter().skip(2).enumerate() {
            match field {
                "0" => entry.0.push(0.0),
                "1" => entry.0.push(1.0),
                other => {
                    return Err(Error::CsvSchema(format!(
                        "row {line}, feature {:?}: value {other:?} is not binary",
                        &headers[col + 2]
                    )));
                }
            }
        }
        entry.1.push(label);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::CsvSchema("no data rows".into()));
    }

    // largest first, ties by hospital id
    let mut order: Vec<&String> = groups.keys().collect();
    order.sort_by(|a, b| {
        groups[*b]
            .1
            .len()
            .cmp(&groups[*a].1.len())
            .then(a.cmp(b))
    });

    let mut silos = Vec::new();
    let mut ood_inputs = Vec::new();
    let mut ood_labels = Vec::new();
    for (rank, hospital) in order.iter().enumerate() {
        let (inputs, labels) = &groups[*hospital];
        if rank < TOP_HOSPITALS {
            let ds = LabeledDataset::new(
                inputs.clone(),
                n_features,
                labels.clone(),
                format!("clinical_csv hospital {hospital}"),
            )?;
            let train_n = (0.7 * ds.n() as f64).round() as usize;
            let val_n = ds.n() - train_n;
            if val_n == 0 || train_n == 0 {
                return Err(Error::CsvSchema(format!(
                    "hospital {hospital} has {} rows, too few for a 70/30 split",
                    ds.n()
                )));
            }
            let (train, val) = ds.split_tail(val_n)?;
            silos.push(Silo { train, val });
        } else {
            ood_inputs.extend_from_slice(inputs);
            ood_labels.extend_from_slice(labels);
        }
    }
    let ood_test = LabeledDataset::new(
        ood_inputs,
        n_features,
        ood_labels,
        "clinical_csv ood pool".into(),
    )?;
    Ok(FederationDataset { silos, ood_test })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn three_row_fixture_builds_one_silo() {
        let f = write_csv(
            "hospital_id,label,med_a,med_b\n\
             h1,1,1,0\n\
             h1,0,0,1\n\
             h1,1,1,1\n",
        );
        let fed = load_clinical_csv(f.path()).unwrap();
        assert_eq!(fed.n_clients(), 1);
        // 70/30 of 3 rows: 2 train (file order), 1 val
        assert_eq!(fed.silos[0].train.n(), 2);
        assert_eq!(fed.silos[0].val.n(), 1);
        assert_eq!(fed.silos[0].train.labels, vec![1, 0]);
        assert_eq!(fed.silos[0].val.labels, vec![1]);
        assert_eq!(fed.silos[0].train.row(0), &[1.0, 0.0]);
        assert_eq!(fed.ood_test.n(), 0);
        // degenerate federation loads but cannot train
        assert!(fed.validate_for_training().is_err());
    }

    #[test]
    fn missing_label_column_is_schema_error() {
        let f = write_csv("hospital_id,med_a\nh1,1\n");
        let err = load_clinical_csv(f.path()).unwrap_err();
        assert!(matches!(err, Error::CsvSchema(_)), "{err}");
    }

    #[test]
    fn empty_body_is_error() {
        let f = write_csv("hospital_id,label,med_a\n");
        assert!(load_clinical_csv(f.path()).is_err());
    }

    #[test]
    fn non_binary_feature_is_schema_error() {
        let f = write_csv("hospital_id,label,med_a\nh1,1,2\n");
        let err = load_clinical_csv(f.path()).unwrap_err();
        assert!(matches!(err, Error::CsvSchema(_)), "{err}");
    }

    #[test]
    fn surplus_hospitals_pool_into_ood() {
        let mut body = String::from("hospital_id,label,med_a\n");
        // 22 hospitals: h00 has 25 rows, the rest shrink by one each
        for h in 0..22 {
            for r in 0..(25 - h) {
                body.push_str(&format!("h{h:02},{},1\n", r % 2));
            }
        }
        let f = write_csv(&body);
        let fed = load_clinical_csv(f.path()).unwrap();
        assert_eq!(fed.n_clients(), 20);
        // two smallest hospitals (4 + 5 rows) pooled
        assert_eq!(fed.ood_test.n(), 9);
        assert!(fed.validate_for_training().is_ok());
    }
}
