//! Importer for delimiter-separated annotation exports.
//!
//! Expects a header row with a story id column, a selected-sentence index
//! column and, per dimension `d`, the columns `d_specificNL` and
//! `d_generalNL`. Cells that are empty or hold the placeholder `escaped`
//! are skipped, as are paraphrase and structured columns.

use std::io::Read;

use super::rules::{parse_rule, GlucoseRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ImportOptions {
    pub delimiter: u8,
    pub story_id_column: String,
    pub index_column: String,
    /// Added to the file's sentence index to make it 1-based.
    pub index_offset: i64,
}

impl Default for ImportOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            story_id_column: "story_id".into(),
            index_column: "selected_sentence_index".into(),
            index_offset: 1,
        }
    }
}

fn is_blank(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c.eq_ignore_ascii_case("escaped")
}

pub fn import_records<R: Read>(reader: R, opts: &ImportOptions) -> Result<Vec<GlucoseRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let id_col =
        col(&opts.story_id_column).ok_or_else(|| Error::Schema(format!("missing column {}", opts.story_id_column)))?;
    let idx_col =
        col(&opts.index_column).ok_or_else(|| Error::Schema(format!("missing column {}", opts.index_column)))?;
    let dims: Vec<(u8, usize, usize)> = (1..=10u8)
        .filter_map(|d| Some((d, col(&format!("{d}_specificNL"))?, col(&format!("{d}_generalNL"))?)))
        .collect();
    if dims.is_empty() {
        return Err(Error::Schema(
            "no <d>_specificNL/<d>_generalNL column pairs found".into(),
        ));
    }

    let mut out = Vec::new();
    for (row_no, row) in rdr.records().enumerate() {
        let row = row?;
        let get = |c: usize| row.get(c).unwrap_or("");
        let story_id = get(id_col).trim().to_string();
        let raw_idx: i64 = get(idx_col)
            .trim()
            .parse()
            .map_err(|_| Error::Schema(format!("row {}: bad sentence index {:?}", row_no + 2, get(idx_col))))?;
        let sentence_index = raw_idx + opts.index_offset;
        if sentence_index < 1 {
            return Err(Error::Schema(format!("row {}: sentence index below 1", row_no + 2)));
        }
        for &(d, sc, gc) in &dims {
            let (spec, gen) = (get(sc), get(gc));
            if is_blank(spec) && is_blank(gen) {
                continue;
            }
            out.push(GlucoseRecord {
                story_id: story_id.clone(),
                sentence_index: sentence_index as usize,
                dimension: d,
                specific: parse_rule(spec.trim()),
                general: parse_rule(gen.trim()),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn imports_filled_dimensions_only() {
        let tsv = "story_id\tselected_sentence_index\t1_specificNL\t1_generalNL\t6_specificNL\t6_generalNL\n\
                   s1\t1\tJane is hungry >Motivates> Jane cooks\tSomeone_A is hungry >Motivates> Someone_A cooks\tescaped\tescaped\n";
        let opts = ImportOptions {
            delimiter: b'\t',
            ..Default::default()
        };
        let recs = import_records(tsv.as_bytes(), &opts).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].sentence_index, 2);
        assert_eq!(recs[0].dimension, 1);
        assert_eq!(recs[0].specific.antecedent, "Jane is hungry");
    }

    #[test]
    fn missing_columns_are_schema_errors() {
        let csv = "id,x\n1,2\n";
        assert!(matches!(
            import_records(csv.as_bytes(), &ImportOptions::default()),
            Err(Error::Schema(_))
        ));
    }
}
