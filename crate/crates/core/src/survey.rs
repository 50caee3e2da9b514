//! Subjective instruments: unweighted NASA-TLX workload and SART
//! situational awareness.
//!
//! Workload is the plain mean of the six TLX subscales with performance
//! reversed, `(MD + PD + TD + E + (100 - P) + F) / 6`. SART groups ten 1..=7
//! items into Demand (items 1-3), Supply (4-7) and Understand (8-10), and
//! `SA = Understand - (Demand - Supply)`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::RoleId;

pub const TLX_MIN: f64 = 0.0;
pub const TLX_MAX: f64 = 100.0;
pub const SART_ITEM_COUNT: usize = 10;
pub const SART_ITEM_MIN: u8 = 1;
pub const SART_ITEM_MAX: u8 = 7;
pub const SA_MIN: f64 = -14.0;
pub const SA_MAX: f64 = 46.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurveyError {
    #[error("TLX subscale `{field}` = {value} is outside [0, 100]")]
    OutOfRangeSubscale { field: &'static str, value: f64 },
    #[error("SART item {index} = {value} is outside 1..=7")]
    OutOfRangeItem { index: usize, value: f64 },
    #[error("SART needs exactly 10 items, got {0}")]
    WrongItemCount(usize),
    #[error("ground-truth CSV: {0}")]
    Csv(String),
}

/// Six NASA-TLX subscale ratings on 0..=100.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TlxRating {
    pub mental_demand: f64,
    pub physical_demand: f64,
    pub temporal_demand: f64,
    pub effort: f64,
    pub performance: f64,
    pub frustration: f64,
}

impl TlxRating {
    pub const FIELDS: [&'static str; 6] = [
        "mental_demand",
        "physical_demand",
        "temporal_demand",
        "effort",
        "performance",
        "frustration",
    ];

    pub fn new(
        mental_demand: f64,
        physical_demand: f64,
        temporal_demand: f64,
        effort: f64,
        performance: f64,
        frustration: f64,
    ) -> Result<Self, SurveyError> {
        let r = TlxRating {
            mental_demand,
            physical_demand,
            temporal_demand,
            effort,
            performance,
            frustration,
        };
        r.validate()?;
        Ok(r)
    }

    /// Values in the order of [`TlxRating::FIELDS`].
    pub fn values(&self) -> [f64; 6] {
        [
            self.mental_demand,
            self.physical_demand,
            self.temporal_demand,
            self.effort,
            self.performance,
            self.frustration,
        ]
    }

    pub fn validate(&self) -> Result<(), SurveyError> {
        for (field, value) in Self::FIELDS.iter().zip(self.values()) {
            if !(TLX_MIN..=TLX_MAX).contains(&value) {
                return Err(SurveyError::OutOfRangeSubscale { field, value });
            }
        }
        Ok(())
    }

    pub fn workload(&self) -> Result<f64, SurveyError> {
        tlx_workload(self)
    }
}

/// Unweighted NASA-TLX workload in [0, 100].
pub fn tlx_workload(rating: &TlxRating) -> Result<f64, SurveyError> {
    rating.validate()?;
    let r = rating;
    Ok((r.mental_demand
        + r.physical_demand
        + r.temporal_demand
        + r.effort
        + (TLX_MAX - r.performance)
        + r.frustration)
        / 6.0)
}

/// Ten SART items, each 1..=7.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct SartRating {
    items: [u8; SART_ITEM_COUNT],
}

impl TryFrom<Vec<u8>> for SartRating {
    type Error = SurveyError;

    fn try_from(items: Vec<u8>) -> Result<Self, Self::Error> {
        SartRating::new(&items)
    }
}

impl From<SartRating> for Vec<u8> {
    fn from(r: SartRating) -> Self {
        r.items.to_vec()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SartDimensions {
    pub demand: u32,
    pub supply: u32,
    pub understand: u32,
}

impl SartDimensions {
    pub fn sa(&self) -> f64 {
        self.understand as f64 - (self.demand as f64 - self.supply as f64)
    }
}

impl SartRating {
    pub fn new(items: &[u8]) -> Result<Self, SurveyError> {
        Self::from_numbers(&items.iter().map(|&v| v as f64).collect::<Vec<_>>())
    }

    /// Accepts any numbers; each must be an integer in 1..=7.
    pub fn from_numbers(items: &[f64]) -> Result<Self, SurveyError> {
        if items.len() != SART_ITEM_COUNT {
            return Err(SurveyError::WrongItemCount(items.len()));
        }
        let mut out = [0u8; SART_ITEM_COUNT];
        for (i, &v) in items.iter().enumerate() {
            let in_range = v.fract() == 0.0
                && v >= SART_ITEM_MIN as f64
                && v <= SART_ITEM_MAX as f64;
            if !in_range {
                return Err(SurveyError::OutOfRangeItem { index: i + 1, value: v });
            }
            out[i] = v as u8;
        }
        Ok(SartRating { items: out })
    }

    pub fn items(&self) -> &[u8; SART_ITEM_COUNT] {
        &self.items
    }

    pub fn dimensions(&self) -> SartDimensions {
        let sum = |r: std::ops::Range<usize>| self.items[r].iter().map(|&v| v as u32).sum();
        SartDimensions { demand: sum(0..3), supply: sum(3..7), understand: sum(7..10) }
    }

    pub fn sa(&self) -> f64 {
        self.dimensions().sa()
    }
}

pub fn sart_dimensions(rating: &SartRating) -> SartDimensions {
    rating.dimensions()
}

pub fn sart_sa(rating: &SartRating) -> f64 {
    rating.sa()
}

/// Questionnaire wording embedded in prompts.
///
/// The SART item texts default to the classic ten-dimension SART wording.
/// They are provisional and can be replaced through configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub tlx_items: Vec<(String, String)>,
    pub sart_items: Vec<String>,
    pub provisional: bool,
}

impl Default for Questionnaire {
    fn default() -> Self {
        let tlx = [
            ("mental_demand", "How mentally demanding was the task? (0 = very low, 100 = very high)"),
            ("physical_demand", "How physically demanding was the task? (0 = very low, 100 = very high)"),
            ("temporal_demand", "How hurried or rushed was the pace of the task? (0 = very low, 100 = very high)"),
            ("effort", "How hard did you have to work to accomplish your level of performance? (0 = very low, 100 = very high)"),
            ("performance", "How successful were you in accomplishing what you were asked to do? (0 = failure, 100 = perfect)"),
            ("frustration", "How insecure, discouraged, irritated, stressed or annoyed were you? (0 = very low, 100 = very high)"),
        ];
        let sart = [
            "Instability of the situation: how changeable is the plant status?",
            "Complexity of the situation: how complicated is the plant situation?",
            "Variability of the situation: how many parameters are changing?",
            "Arousal: how alert and ready for activity are you?",
            "Concentration of attention: how much are you concentrating on the situation?",
            "Division of attention: how much is your attention divided?",
            "Spare mental capacity: how much mental capacity do you have to spare?",
            "Information quantity: how much information have you gained about the situation?",
            "Information quality: how good is the information you have gained?",
            "Familiarity with the situation: how familiar are you with the situation?",
        ];
        Questionnaire {
            tlx_items: tlx.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            sart_items: sart.iter().map(|s| s.to_string()).collect(),
            provisional: true,
        }
    }
}

/// One row of the operator survey ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthRow {
    pub scenario_id: String,
    pub role: RoleId,
    pub tlx: TlxRating,
    pub sart: SartRating,
}

impl GroundTruthRow {
    pub fn workload(&self) -> f64 {
        tlx_workload(&self.tlx).expect("validated on load")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    scenario_id: String,
    role: String,
    md: f64,
    pd: f64,
    td: f64,
    effort: f64,
    performance: f64,
    frustration: f64,
    sart_1: f64,
    sart_2: f64,
    sart_3: f64,
    sart_4: f64,
    sart_5: f64,
    sart_6: f64,
    sart_7: f64,
    sart_8: f64,
    sart_9: f64,
    sart_10: f64,
}

/// Reads the ground-truth CSV. A header row is required.
pub fn read_ground_truth<R: std::io::Read>(reader: R) -> Result<Vec<GroundTruthRow>, SurveyError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut rows = Vec::new();
    for (line, rec) in rdr.deserialize::<CsvRow>().enumerate() {
        let r = rec.map_err(|e| SurveyError::Csv(e.to_string()))?;
        let ctx = |e: SurveyError| SurveyError::Csv(format!("row {}: {}", line + 1, e));
        let role = r
            .role
            .parse::<RoleId>()
            .map_err(|e| SurveyError::Csv(format!("row {}: {}", line + 1, e)))?;
        let tlx = TlxRating::new(r.md, r.pd, r.td, r.effort, r.performance, r.frustration)
            .map_err(ctx)?;
        let sart = SartRating::from_numbers(&[
            r.sart_1, r.sart_2, r.sart_3, r.sart_4, r.sart_5, r.sart_6, r.sart_7, r.sart_8,
            r.sart_9, r.sart_10,
        ])
        .map_err(ctx)?;
        rows.push(GroundTruthRow { scenario_id: r.scenario_id, role, tlx, sart });
    }
    Ok(rows)
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<GroundTruthRow>, SurveyError> {
    let f = std::fs::File::open(path)
        .map_err(|e| SurveyError::Csv(format!("{}: {}", path.display(), e)))?;
    read_ground_truth(f)
}

pub fn write_ground_truth<W: std::io::Write>(
    writer: W,
    rows: &[GroundTruthRow],
) -> Result<(), SurveyError> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        let t = row.tlx;
        let s: Vec<f64> = row.sart.items().iter().map(|&v| v as f64).collect();
        w.serialize(CsvRow {
            scenario_id: row.scenario_id.clone(),
            role: row.role.to_string(),
            md: t.mental_demand,
            pd: t.physical_demand,
            td: t.temporal_demand,
            effort: t.effort,
            performance: t.performance,
            frustration: t.frustration,
            sart_1: s[0],
            sart_2: s[1],
            sart_3: s[2],
            sart_4: s[3],
            sart_5: s[4],
            sart_6: s[5],
            sart_7: s[6],
            sart_8: s[7],
            sart_9: s[8],
            sart_10: s[9],
        })
        .map_err(|e| SurveyError::Csv(e.to_string()))?;
    }
    w.flush().map_err(|e| SurveyError::Csv(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tlx(v: [f64; 6]) -> TlxRating {
        TlxRating::new(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap()
    }

    #[test]
    fn workload_extremes_and_worked_value() {
        assert_eq!(tlx_workload(&tlx([0., 0., 0., 0., 100., 0.])).unwrap(), 0.0);
        assert_eq!(tlx_workload(&tlx([100., 100., 100., 100., 0., 100.])).unwrap(), 100.0);
        let oracle = (60.0 + 30.0 + 70.0 + 55.0 + 20.0 + 25.0) / 6.0;
        let got = tlx_workload(&tlx([60., 30., 70., 55., 80., 25.])).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 43.333_333_333).abs() < 1e-9);
        assert_eq!(tlx_workload(&tlx([50.; 6])).unwrap(), 50.0);
    }

    #[test]
    fn workload_rejects_out_of_range() {
        let mut r = tlx([10.; 6]);
        r.effort = 100.5;
        assert_eq!(
            tlx_workload(&r),
            Err(SurveyError::OutOfRangeSubscale { field: "effort", value: 100.5 })
        );
        assert!(TlxRating::new(-1., 0., 0., 0., 0., 0.).is_err());
        assert!(TlxRating::new(f64::NAN, 0., 0., 0., 0., 0.).is_err());
    }

    #[test]
    fn sart_worked_demand() {
        let r = SartRating::new(&[3, 4, 4, 1, 1, 1, 1, 1, 1, 1]).unwrap();
        assert_eq!(sart_dimensions(&r).demand, 11);
    }

    #[test]
    fn sart_bounds_and_uniform_values() {
        let lo = SartRating::new(&[1; 10]).unwrap();
        assert_eq!(sart_dimensions(&lo), SartDimensions { demand: 3, supply: 4, understand: 3 });
        assert_eq!(sart_sa(&lo), 4.0);
        let hi = SartRating::new(&[7; 10]).unwrap();
        assert_eq!(sart_dimensions(&hi), SartDimensions { demand: 21, supply: 28, understand: 21 });
        assert_eq!(sart_sa(&hi), 28.0);

        let r = SartRating::new(&[4, 3, 4, 5, 5, 6, 4, 5, 6, 5]).unwrap();
        let d = sart_dimensions(&r);
        assert_eq!((d.demand, d.supply, d.understand), (4 + 3 + 4, 5 + 5 + 6 + 4, 5 + 6 + 5));
        assert_eq!(sart_sa(&r), 25.0);
    }

    #[test]
    fn sart_errors() {
        assert_eq!(SartRating::new(&[1; 9]), Err(SurveyError::WrongItemCount(9)));
        assert_eq!(
            SartRating::new(&[1, 1, 1, 1, 1, 1, 1, 1, 9, 1]),
            Err(SurveyError::OutOfRangeItem { index: 9, value: 9.0 })
        );
        assert!(SartRating::from_numbers(&[1.5; 10]).is_err());
        assert!(SartRating::new(&[0; 10]).is_err());
    }

    #[test]
    fn ground_truth_csv_round_trip() {
        let csv = "scenario_id,role,md,pd,td,effort,performance,frustration,sart_1,sart_2,sart_3,sart_4,sart_5,sart_6,sart_7,sart_8,sart_9,sart_10\n\
                   s1,RO1,60,30,70,55,80,25,3,4,4,5,5,6,4,5,6,5\n";
        let rows = read_ground_truth(csv.as_bytes()).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].role, RoleId::RO1);
        assert!((rows[0].workload() - 43.333_333_333_333).abs() < 1e-9);
        let mut out = Vec::new();
        write_ground_truth(&mut out, &rows).unwrap();
        assert_eq!(read_ground_truth(out.as_slice()).unwrap(), rows);
    }

    #[test]
    fn ground_truth_csv_errors_name_the_row() {
        let csv = "scenario_id,role,md,pd,td,effort,performance,frustration,sart_1,sart_2,sart_3,sart_4,sart_5,sart_6,sart_7,sart_8,sart_9,sart_10\n\
                   s1,RO1,60,30,70,55,80,25,3,4,4,5,5,6,4,5,6,5\n\
                   s1,XX,60,30,70,55,80,25,3,4,4,5,5,6,4,5,6,5\n";
        let err = read_ground_truth(csv.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }

    fn tlx_strategy() -> impl Strategy<Value = TlxRating> {
        prop::array::uniform6(0.0f64..=100.0)
            .prop_map(|v| TlxRating::new(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap())
    }

    fn sart_strategy() -> impl Strategy<Value = SartRating> {
        prop::array::uniform10(1u8..=7).prop_map(|v| SartRating::new(&v).unwrap())
    }

    proptest! {
        #[test]
        fn workload_bounded(r in tlx_strategy()) {
            let w = tlx_workload(&r).unwrap();
            prop_assert!((0.0..=100.0).contains(&w));
        }

        #[test]
        fn workload_performance_frustration_symmetry(r in tlx_strategy()) {
            let mut swapped = r;
            swapped.performance = 100.0 - r.frustration;
            swapped.frustration = 100.0 - r.performance;
            let a = tlx_workload(&r).unwrap();
            let b = tlx_workload(&swapped).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn workload_monotone(r in tlx_strategy(), field in 0usize..6, bump in 0.0f64..10.0) {
            let mut v = r.values();
            v[field] = (v[field] + bump).min(100.0);
            let bumped = TlxRating::new(v[0], v[1], v[2], v[3], v[4], v[5]).unwrap();
            let (a, b) = (tlx_workload(&r).unwrap(), tlx_workload(&bumped).unwrap());
            if field == 4 {
                prop_assert!(b <= a + 1e-12);
            } else {
                prop_assert!(b >= a - 1e-12);
            }
        }

        #[test]
        fn sa_bounded_and_unit_sensitive(r in sart_strategy(), item in 0usize..10) {
            let sa = sart_sa(&r);
            prop_assert!((SA_MIN..=SA_MAX).contains(&sa));
            let mut items = *r.items();
            prop_assume!(items[item] < 7);
            items[item] += 1;
            let delta = sart_sa(&SartRating::new(&items).unwrap()) - sa;
            let expected = if item < 3 { -1.0 } else { 1.0 };
            prop_assert_eq!(delta, expected);
        }
    }
}
