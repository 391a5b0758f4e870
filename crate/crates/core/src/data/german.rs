//! UCI German Credit loader (`german.data`, space separated, symbolic codes).
//!
//! S comes from the personal-status attribute: A91, A93, A94 are male (1),
//! A92 and A95 female (0). Credit class 1 ("good") gives Y = 1, class 2 gives 0.

use std::fs;
use std::path::Path;

use crate::data::encoding::{encode_records, ColumnRole, ColumnSpec};
use crate::data::{Dataset, LoadOptions};
use crate::error::{Error, Result};

const SCHEMA: &[ColumnSpec] = &[
    ColumnSpec::new(
        "checking-status",
        ColumnRole::Categorical(&["A11", "A12", "A13", "A14"]),
    ),
    ColumnSpec::new("duration", ColumnRole::Continuous),
    ColumnSpec::new(
        "credit-history",
        ColumnRole::Categorical(&["A30", "A31", "A32", "A33", "A34"]),
    ),
    ColumnSpec::new(
        "purpose",
        ColumnRole::Categorical(&[
            "A40", "A41", "A42", "A43", "A44", "A45", "A46", "A47", "A48", "A49", "A410",
        ]),
    ),
    ColumnSpec::new("credit-amount", ColumnRole::Continuous),
    ColumnSpec::new(
        "savings",
        ColumnRole::Categorical(&["A61", "A62", "A63", "A64", "A65"]),
    ),
    ColumnSpec::new(
        "employment-since",
        ColumnRole::Categorical(&["A71", "A72", "A73", "A74", "A75"]),
    ),
    ColumnSpec::new("installment-rate", ColumnRole::Continuous),
    ColumnSpec::new("personal-status", ColumnRole::Sensitive),
    ColumnSpec::new(
        "other-debtors",
        ColumnRole::Categorical(&["A101", "A102", "A103"]),
    ),
    ColumnSpec::new("residence-since", ColumnRole::Continuous),
    ColumnSpec::new(
        "property",
        ColumnRole::Categorical(&["A121", "A122", "A123", "A124"]),
    ),
    ColumnSpec::new("age", ColumnRole::Continuous),
    ColumnSpec::new(
        "other-installment-plans",
        ColumnRole::Categorical(&["A141", "A142", "A143"]),
    ),
    ColumnSpec::new("housing", ColumnRole::Categorical(&["A151", "A152", "A153"])),
    ColumnSpec::new("existing-credits", ColumnRole::Continuous),
    ColumnSpec::new("job", ColumnRole::Categorical(&["A171", "A172", "A173", "A174"])),
    ColumnSpec::new("people-liable", ColumnRole::Continuous),
    ColumnSpec::new("telephone", ColumnRole::Categorical(&["A191", "A192"])),
    ColumnSpec::new("foreign-worker", ColumnRole::Categorical(&["A201", "A202"])),
    ColumnSpec::new("credit-class", ColumnRole::Label),
];

pub fn load_german(path: impl AsRef<Path>) -> Result<Dataset> {
    load_german_with(path, LoadOptions::default())
}

pub fn load_german_with(path: impl AsRef<Path>, options: LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = if path.is_dir() {
        path.join("german.data")
    } else {
        path.to_path_buf()
    };
    let text = fs::read_to_string(&file).map_err(|e| Error::load(&file, e.to_string()))?;
    let records: Vec<Vec<String>> = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect();
    if records.is_empty() {
        return Err(Error::load(&file, "no usable rows"));
    }
    let raw_rows = records.len();
    encode_records(
        &file,
        "german",
        SCHEMA,
        &records,
        |class| match class {
            "1" => Some(1),
            "2" => Some(0),
            _ => None,
        },
        |status| match status {
            "A91" | "A93" | "A94" => Some(1),
            "A92" | "A95" => Some(0),
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

    const MALE_GOOD: &str = "A11 6 A34 A43 1169 A65 A75 4 A93 A101 4 A121 67 A143 A152 2 A173 1 A192 A201 1";
    const FEMALE_BAD: &str =
        "A12 48 A32 A43 5951 A61 A73 2 A92 A101 2 A121 22 A143 A152 1 A173 1 A191 A201 2";

    fn write(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn status_and_class_mapping() {
        let f = write(&[MALE_GOOD, FEMALE_BAD]);
        let d = load_german(f.path()).unwrap();
        assert_eq!(d.s(), &[1, 0]);
        assert_eq!(d.y(), &[1, 0]);
        // 7 numeric, 47 one-hot, 2 binary
        assert_eq!(d.dim(), 56);
        assert_eq!(d.meta().binary_columns, vec!["telephone", "foreign-worker"]);
    }

    #[test]
    fn all_good_class_is_degenerate() {
        let good = format!("{} 1", FEMALE_BAD.strip_suffix(" 2").unwrap());
        let f = write(&[MALE_GOOD, &good]);
        let err = load_german(f.path()).unwrap_err().to_string();
        assert!(err.contains("sensitive/label column degenerate"), "{err}");
    }

    #[test]
    fn unknown_code_rejected() {
        let f = write(&[MALE_GOOD, &FEMALE_BAD.replace("A92", "A99")]);
        assert!(load_german(f.path()).is_err());
    }
}
