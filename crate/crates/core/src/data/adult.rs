//! UCI Adult Income (census) loader.
//!
//! Accepts either a single comma-separated file or a directory holding
//! `adult.data` and optionally `adult.test`; the two files are concatenated so
//! that experiments draw their own splits. Rows with a `?` field are dropped.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::encoding::{encode_records, ColumnRole, ColumnSpec};
use crate::data::{Dataset, LoadOptions};
use crate::error::{Error, Result};

const WORKCLASS: &[&str] = &[
    "Private",
    "Self-emp-not-inc",
    "Self-emp-inc",
    "Federal-gov",
    "Local-gov",
    "State-gov",
    "Without-pay",
    "Never-worked",
];
const EDUCATION: &[&str] = &[
    "Bachelors",
    "Some-college",
    "11th",
    "HS-grad",
    "Prof-school",
    "Assoc-acdm",
    "Assoc-voc",
    "9th",
    "7th-8th",
    "12th",
    "Masters",
    "1st-4th",
    "10th",
    "Doctorate",
    "5th-6th",
    "Preschool",
];
const MARITAL: &[&str] = &[
    "Married-civ-spouse",
    "Divorced",
    "Never-married",
    "Separated",
    "Widowed",
    "Married-spouse-absent",
    "Married-AF-spouse",
];
const OCCUPATION: &[&str] = &[
    "Tech-support",
    "Craft-repair",
    "Other-service",
    "Sales",
    "Exec-managerial",
    "Prof-specialty",
    "Handlers-cleaners",
    "Machine-op-inspct",
    "Adm-clerical",
    "Farming-fishing",
    "Transport-moving",
    "Priv-house-serv",
    "Protective-serv",
    "Armed-Forces",
];
const RELATIONSHIP: &[&str] = &[
    "Wife",
    "Own-child",
    "Husband",
    "Not-in-family",
    "Other-relative",
    "Unmarried",
];
const RACE: &[&str] = &[
    "White",
    "Asian-Pac-Islander",
    "Amer-Indian-Eskimo",
    "Other",
    "Black",
];
const COUNTRY: &[&str] = &[
    "United-States",
    "Cambodia",
    "England",
    "Puerto-Rico",
    "Canada",
    "Germany",
    "Outlying-US(Guam-USVI-etc)",
    "India",
    "Japan",
    "Greece",
    "South",
    "China",
    "Cuba",
    "Iran",
    "Honduras",
    "Philippines",
    "Italy",
    "Poland",
    "Jamaica",
    "Vietnam",
    "Mexico",
    "Portugal",
    "Ireland",
    "France",
    "Dominican-Republic",
    "Laos",
    "Ecuador",
    "Taiwan",
    "Haiti",
    "Columbia",
    "Hungary",
    "Guatemala",
    "Nicaragua",
    "Scotland",
    "Thailand",
    "Yugoslavia",
    "El-Salvador",
    "Trinadad&Tobago",
    "Peru",
    "Hong",
    "Holand-Netherlands",
];

const SCHEMA: &[ColumnSpec] = &[
    ColumnSpec::new("age", ColumnRole::Continuous),
    ColumnSpec::new("workclass", ColumnRole::Categorical(WORKCLASS)),
    ColumnSpec::new("fnlwgt", ColumnRole::Continuous),
    ColumnSpec::new("education", ColumnRole::Categorical(EDUCATION)),
    ColumnSpec::new("education-num", ColumnRole::Continuous),
    ColumnSpec::new("marital-status", ColumnRole::Categorical(MARITAL)),
    ColumnSpec::new("occupation", ColumnRole::Categorical(OCCUPATION)),
    ColumnSpec::new("relationship", ColumnRole::Categorical(RELATIONSHIP)),
    ColumnSpec::new("race", ColumnRole::Categorical(RACE)),
    ColumnSpec::new("sex", ColumnRole::Sensitive),
    ColumnSpec::new("capital-gain", ColumnRole::Continuous),
    ColumnSpec::new("capital-loss", ColumnRole::Continuous),
    ColumnSpec::new("hours-per-week", ColumnRole::Continuous),
    ColumnSpec::new("native-country", ColumnRole::Categorical(COUNTRY)),
    ColumnSpec::new("income", ColumnRole::Label),
];

pub fn load_adult(path: impl AsRef<Path>) -> Result<Dataset> {
    load_adult_with(path, LoadOptions::default())
}

pub fn load_adult_with(path: impl AsRef<Path>, options: LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let files: Vec<PathBuf> = if path.is_dir() {
        let train = path.join("adult.data");
        if !train.is_file() {
            return Err(Error::load(path, "directory has no adult.data"));
        }
        let test = path.join("adult.test");
        std::iter::once(train)
            .chain(test.is_file().then_some(test))
            .collect()
    } else {
        vec![path.to_path_buf()]
    };

    let mut records = Vec::new();
    let mut raw_rows = 0;
    for file in &files {
        let text = fs::read_to_string(file).map_err(|e| Error::load(file, e.to_string()))?;
        for line in text.lines() {
            let line = line.trim();
            // adult.test starts with a "|1x3 Cross validator" banner
            if line.is_empty() || line.starts_with('|') {
                continue;
            }
            raw_rows += 1;
            let fields: Vec<String> = line.split(',').map(|f| f.trim().to_string()).collect();
            if fields.iter().any(|f| f == "?") {
                continue;
            }
            records.push(fields);
        }
    }
    if records.is_empty() {
        return Err(Error::load(path, "no usable rows"));
    }

    encode_records(
        path,
        "adult",
        SCHEMA,
        &records,
        |income| match income.trim_end_matches('.') {
            ">50K" => Some(1),
            "<=50K" => Some(0),
            _ => None,
        },
        |sex| match sex {
            "Male" => Some(1),
            "Female" => Some(0),
            _ => None,
        },
        raw_rows,
        options,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    const ROW_HIGH: &str = "50, Self-emp-not-inc, 83311, Bachelors, 13, Married-civ-spouse, Exec-managerial, Husband, White, Male, 0, 0, 13, United-States, >50K";
    const ROW_LOW: &str = "38, Private, 215646, HS-grad, 9, Divorced, Handlers-cleaners, Not-in-family, White, Female, 0, 0, 40, United-States, <=50K.";

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn two_row_file_binarizes_labels() {
        let f = write(&[ROW_HIGH, ROW_LOW]);
        let d = load_adult(f.path()).unwrap();
        assert_eq!(d.y(), &[1, 0]);
        assert_eq!(d.s(), &[1, 0]);
        assert_eq!(d.dim(), 6 + 8 + 16 + 7 + 14 + 6 + 5 + 41);
        assert!(d.feature_names().iter().all(|n| !n.starts_with("sex")));
    }

    #[test]
    fn missing_markers_dropped_and_counted() {
        let with_missing = ROW_LOW.replace("Handlers-cleaners", "?");
        let f = write(&["|1x3 Cross validator", ROW_HIGH, ROW_LOW, &with_missing, ""]);
        let d = load_adult(f.path()).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.meta().raw_rows, 3);
        assert_eq!(d.meta().dropped_rows, 1);
    }

    #[test]
    fn unknown_category_is_a_load_error() {
        let f = write(&[ROW_HIGH, &ROW_LOW.replace("Divorced", "Eloped")]);
        let err = load_adult(f.path()).unwrap_err().to_string();
        assert!(err.contains("Eloped"), "{err}");
    }

    #[test]
    fn single_class_labels_rejected() {
        let f = write(&[ROW_HIGH, &ROW_LOW.replace("<=50K.", ">50K.")]);
        let err = load_adult(f.path()).unwrap_err().to_string();
        assert!(err.contains("degenerate"), "{err}");
    }

    #[test]
    fn sensitive_feature_switch() {
        let f = write(&[ROW_HIGH, ROW_LOW]);
        let d = load_adult_with(
            f.path(),
            LoadOptions {
                keep_sensitive_feature: true,
            },
        )
        .unwrap();
        let col = d.feature_names().iter().position(|n| n == "sex").unwrap();
        assert_eq!(d.x().get(0, col), 1.0);
        assert_eq!(d.x().get(1, col), 0.0);
    }
}
