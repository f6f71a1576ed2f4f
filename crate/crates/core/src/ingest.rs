//! Human Mortality Database period life tables and the country/year/sex
//! panel of age-at-death distributions built from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FcurveError, Result};

/// Ages 0..=110, the last being the open "110+" group.
pub const N_AGES: usize = 111;
pub const MAX_AGE: u32 = 110;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Male,
    Female,
}

impl Sex {
    /// HMD file stem for the 1x1 period table of this sex.
    pub fn table_name(self) -> &'static str {
        match self {
            Sex::Male => "mltper_1x1",
            Sex::Female => "fltper_1x1",
        }
    }
}

impl fmt::Display for Sex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sex::Male => "male",
            Sex::Female => "female",
        })
    }
}

impl FromStr for Sex {
    type Err = FcurveError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "male" | "m" | "men" => Ok(Sex::Male),
            "female" | "f" | "women" => Ok(Sex::Female),
            other => Err(FcurveError::Config(format!("unknown sex '{other}'"))),
        }
    }
}

/// One line of a 1x1 period life table. Missing cells (".") are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct LifeTableRow {
    pub year: i32,
    pub age: u32,
    pub mx: Option<f64>,
    pub qx: Option<f64>,
    pub ax: Option<f64>,
    pub lx: Option<f64>,
    pub dx: Option<f64>,
    pub big_lx: Option<f64>,
    pub tx: Option<f64>,
    pub ex: Option<f64>,
}

const N_COLUMNS: usize = 10;

fn parse_cell(tok: &str, line: usize, name: &str) -> Result<Option<f64>> {
    if tok == "." {
        return Ok(None);
    }
    tok.parse::<f64>()
        .map(Some)
        .map_err(|_| FcurveError::Parse {
            line,
            message: format!("column {name}: cannot parse '{tok}'"),
        })
}

/// Parse a HMD period life table in the 1x1 layout.
///
/// Lines before the first data row (title, blank line, column header) are
/// skipped. Every year block must list ages 0, 1, ..., 110+ in order. The
/// `sex` argument only documents which table is being read; the file itself
/// does not repeat it on each row.
pub fn parse_life_table(text: &str, _sex: Sex) -> Result<Vec<LifeTableRow>> {
    let mut rows: Vec<LifeTableRow> = Vec::new();
    let mut started = false;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let toks: Vec<&str> = raw.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let is_data = toks[0].parse::<i32>().is_ok();
        if !is_data {
            if started {
                return Err(FcurveError::Parse {
                    line,
                    message: format!("unexpected non-data line '{}'", raw.trim()),
                });
            }
            continue;
        }
        started = true;
        if toks.len() != N_COLUMNS {
            return Err(FcurveError::Parse {
                line,
                message: format!("expected {N_COLUMNS} columns, found {}", toks.len()),
            });
        }
        let year = toks[0].parse::<i32>().expect("checked above");
        let age_tok = toks[1].strip_suffix('+').unwrap_or(toks[1]);
        let age: u32 = age_tok.parse().map_err(|_| FcurveError::Parse {
            line,
            message: format!("bad age '{}'", toks[1]),
        })?;
        if age > MAX_AGE {
            return Err(FcurveError::Parse {
                line,
                message: format!("age {age} beyond {MAX_AGE}+"),
            });
        }
        let c = |i: usize, name: &str| parse_cell(toks[i], line, name);
        let row = LifeTableRow {
            year,
            age,
            mx: c(2, "mx")?,
            qx: c(3, "qx")?,
            ax: c(4, "ax")?,
            lx: c(5, "lx")?,
            dx: c(6, "dx")?,
            big_lx: c(7, "Lx")?,
            tx: c(8, "Tx")?,
            ex: c(9, "ex")?,
        };
        if let Some(d) = row.dx {
            if d < 0.0 {
                return Err(FcurveError::Parse {
                    line,
                    message: format!("negative dx {d}"),
                });
            }
        }

        let expected_age = match rows.last() {
            Some(prev) if prev.year == year => prev.age + 1,
            Some(prev) => {
                if prev.age != MAX_AGE {
                    return Err(FcurveError::Structure(format!(
                        "year {} ends at age {} (line {line})",
                        prev.year, prev.age
                    )));
                }
                0
            }
            None => 0,
        };
        if age != expected_age {
            return Err(FcurveError::Structure(format!(
                "year {year}: expected age {expected_age}, found {age} (line {line})"
            )));
        }
        rows.push(row);
    }
    if let Some(last) = rows.last() {
        if last.age != MAX_AGE {
            return Err(FcurveError::Structure(format!(
                "year {} ends at age {}",
                last.year, last.age
            )));
        }
    }
    Ok(rows)
}

/// Identifies one curve in a panel.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CurveKey {
    pub country: String,
    pub year: i32,
    pub sex: Sex,
}

impl fmt::Display for CurveKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.country, self.year, self.sex)
    }
}

/// Age-at-death distribution for one country, year and sex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MortalityCurve {
    pub country: String,
    pub year: i32,
    pub sex: Sex,
    /// Proportion of deaths at each age 0..=110; sums to one.
    pub values: Vec<f64>,
    /// Sum of the raw d_x column before normalization.
    pub radix: f64,
}

impl MortalityCurve {
    pub fn key(&self) -> CurveKey {
        CurveKey {
            country: self.country.clone(),
            year: self.year,
            sex: self.sex,
        }
    }

    /// Normalize a raw d_x schedule to unit sum.
    pub fn from_dx(country: &str, year: i32, sex: Sex, dx: &[f64]) -> Result<Self> {
        if dx.len() != N_AGES {
            return Err(FcurveError::Dimension {
                expected: N_AGES,
                got: dx.len(),
            });
        }
        if dx.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(FcurveError::Structure(format!(
                "{country} {year}: d_x must be finite and non-negative"
            )));
        }
        let radix: f64 = dx.iter().sum();
        if radix <= 0.0 {
            return Err(FcurveError::DegenerateCurve(format!("{country}/{year}/{sex}")));
        }
        Ok(MortalityCurve {
            country: country.to_string(),
            year,
            sex,
            values: dx.iter().map(|v| v / radix).collect(),
            radix,
        })
    }
}

/// Ordered collection of curves with unique (country, year, sex) keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePanel {
    curves: Vec<MortalityCurve>,
    countries: BTreeSet<String>,
    years: (i32, i32),
}

impl CurvePanel {
    /// Sorts curves by (country, year, sex) and rejects duplicate keys.
    pub fn new(mut curves: Vec<MortalityCurve>) -> Result<Self> {
        if curves.is_empty() {
            return Err(FcurveError::InsufficientData("empty panel".into()));
        }
        curves.sort_by(|a, b| a.key().cmp(&b.key()));
        for w in curves.windows(2) {
            if w[0].key() == w[1].key() {
                return Err(FcurveError::DuplicateKey(w[0].key().to_string()));
            }
        }
        let countries = curves.iter().map(|c| c.country.clone()).collect();
        let lo = curves.iter().map(|c| c.year).min().expect("non-empty");
        let hi = curves.iter().map(|c| c.year).max().expect("non-empty");
        Ok(CurvePanel {
            curves,
            countries,
            years: (lo, hi),
        })
    }

    pub fn curves(&self) -> &[MortalityCurve] {
        &self.curves
    }

    pub fn countries(&self) -> &BTreeSet<String> {
        &self.countries
    }

    pub fn years(&self) -> (i32, i32) {
        self.years
    }

    pub fn len(&self) -> usize {
        self.curves.len()
    }

    pub fn is_empty(&self) -> bool {
        self.curves.is_empty()
    }

    pub fn keys(&self) -> Vec<CurveKey> {
        self.curves.iter().map(MortalityCurve::key).collect()
    }

    /// Sub-panel holding only one sex.
    pub fn for_sex(&self, sex: Sex) -> Result<CurvePanel> {
        CurvePanel::new(self.curves.iter().filter(|c| c.sex == sex).cloned().collect())
    }

    pub fn merge(self, other: CurvePanel) -> Result<CurvePanel> {
        let mut curves = self.curves;
        curves.extend(other.curves);
        CurvePanel::new(curves)
    }

    /// Canonical CSV: `country,year,sex,age,value`, one row per age.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("country,year,sex,age,value\n");
        for c in &self.curves {
            for (age, v) in c.values.iter().enumerate() {
                out.push_str(&format!("{},{},{},{},{}\n", c.country, c.year, c.sex, age, v));
            }
        }
        out
    }

    /// Inverse of [`CurvePanel::to_csv`]. Values are taken as written, without
    /// renormalization, and the radix is set to 1. Lines starting with `#`
    /// are ignored.
    pub fn from_csv(text: &str) -> Result<CurvePanel> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        match lines.next() {
            Some((_, h)) if h.trim() == "country,year,sex,age,value" => {}
            Some((i, h)) => {
                return Err(FcurveError::Parse {
                    line: i + 1,
                    message: format!("unexpected header '{h}'"),
                })
            }
            None => return Err(FcurveError::InsufficientData("empty panel CSV".into())),
        }
        let mut map: BTreeMap<CurveKey, Vec<f64>> = BTreeMap::new();
        for (i, l) in lines {
            let line = i + 1;
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(FcurveError::Parse {
                    line,
                    message: format!("expected 5 fields, found {}", f.len()),
                });
            }
            let perr = |m: String| FcurveError::Parse { line, message: m };
            let year: i32 = f[1].parse().map_err(|_| perr(format!("bad year '{}'", f[1])))?;
            let sex: Sex = f[2].parse().map_err(|_| perr(format!("bad sex '{}'", f[2])))?;
            let age: usize = f[3].parse().map_err(|_| perr(format!("bad age '{}'", f[3])))?;
            let value: f64 = f[4].parse().map_err(|_| perr(format!("bad value '{}'", f[4])))?;
            if !(value >= 0.0 && value.is_finite()) {
                return Err(perr(format!("invalid value {value}")));
            }
            let key = CurveKey {
                country: f[0].to_string(),
                year,
                sex,
            };
            let vals = map.entry(key.clone()).or_default();
            if age != vals.len() {
                return Err(FcurveError::Structure(format!(
                    "{key}: expected age {}, found {age} (line {line})",
                    vals.len()
                )));
            }
            vals.push(value);
        }
        let curves = map
            .into_iter()
            .map(|(k, values)| {
                if values.len() != N_AGES {
                    return Err(FcurveError::Structure(format!(
                        "{k}: {} ages instead of {N_AGES}",
                        values.len()
                    )));
                }
                Ok(MortalityCurve {
                    country: k.country,
                    year: k.year,
                    sex: k.sex,
                    values,
                    radix: 1.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        CurvePanel::new(curves)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| FcurveError::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<CurvePanel> {
        let text = std::fs::read_to_string(path).map_err(|e| FcurveError::io(path, e))?;
        CurvePanel::from_csv(&text)
    }
}

/// Assemble the panel of normalized d_x curves for the requested countries
/// and inclusive year range.
pub fn build_panel(
    rows_by_country: &BTreeMap<String, Vec<LifeTableRow>>,
    countries: &[String],
    year_range: (i32, i32),
    sex: Sex,
) -> Result<CurvePanel> {
    let (y0, y1) = year_range;
    if y1 < y0 {
        return Err(FcurveError::Config(format!("empty year range {y0}..={y1}")));
    }
    let mut gaps = Vec::new();
    let mut curves = Vec::new();
    for country in countries {
        let by_year: BTreeMap<i32, Vec<&LifeTableRow>> = rows_by_country
            .get(country)
            .map(|rows| {
                let mut m: BTreeMap<i32, Vec<&LifeTableRow>> = BTreeMap::new();
                for r in rows {
                    m.entry(r.year).or_default().push(r);
                }
                m
            })
            .unwrap_or_default();
        for year in y0..=y1 {
            let Some(block) = by_year.get(&year) else {
                gaps.push(format!("{country}/{year}"));
                continue;
            };
            if block.len() != N_AGES {
                return Err(FcurveError::Structure(format!(
                    "{country}/{year}: {} ages instead of {N_AGES}",
                    block.len()
                )));
            }
            let mut dx = vec![0.0; N_AGES];
            for r in block {
                dx[r.age as usize] = r.dx.ok_or_else(|| FcurveError::MissingValue {
                    country: country.clone(),
                    year,
                    age: r.age,
                })?;
            }
            curves.push(MortalityCurve::from_dx(country, year, sex, &dx)?);
        }
    }
    if !gaps.is_empty() {
        return Err(FcurveError::Coverage(gaps));
    }
    CurvePanel::new(curves)
}

/// One country of the analysed panel and the area it is reported under.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountryEntry {
    pub code: String,
    pub name: String,
    pub area: String,
}

/// Panel configuration: countries with their area grouping, the excluded
/// HMD populations, and the year range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelConfig {
    pub countries: Vec<CountryEntry>,
    pub excluded: Vec<String>,
    pub years: (i32, i32),
}

impl Default for PanelConfig {
    /// Thirty-two HMD populations 1960–2010, Germany split East/West.
    fn default() -> Self {
        let table: &[(&str, &str, &str)] = &[
            ("DNK", "Denmark", "North EU"),
            ("FIN", "Finland", "North EU"),
            ("NOR", "Norway", "North EU"),
            ("SWE", "Sweden", "North EU"),
            ("AUT", "Austria", "West EU"),
            ("BEL", "Belgium", "West EU"),
            ("CHE", "Switzerland", "West EU"),
            ("DEUTE", "East Germany", "West EU"),
            ("DEUTW", "West Germany", "West EU"),
            ("FRATNP", "France", "West EU"),
            ("IRL", "Ireland", "West EU"),
            ("NLD", "Netherlands", "West EU"),
            ("GBR_NP", "United Kingdom", "West EU"),
            ("ITA", "Italy", "South EU"),
            ("PRT", "Portugal", "South EU"),
            ("ESP", "Spain", "South EU"),
            ("BGR", "Bulgaria", "Center EU"),
            ("CZE", "Czech Republic", "Center EU"),
            ("HUN", "Hungary", "Center EU"),
            ("POL", "Poland", "Center EU"),
            ("SVK", "Slovakia", "Center EU"),
            ("BLR", "Belarus", "East EU"),
            ("EST", "Estonia", "East EU"),
            ("LVA", "Latvia", "East EU"),
            ("LTU", "Lithuania", "East EU"),
            ("RUS", "Russia", "East EU"),
            ("UKR", "Ukraine", "East EU"),
            ("AUS", "Australia", "Extra-EU"),
            ("CAN", "Canada", "Extra-EU"),
            ("JPN", "Japan", "Extra-EU"),
            ("NZL_NP", "New Zealand", "Extra-EU"),
            ("USA", "United States", "Extra-EU"),
        ];
        PanelConfig {
            countries: table
                .iter()
                .map(|(c, n, a)| CountryEntry {
                    code: c.to_string(),
                    name: n.to_string(),
                    area: a.to_string(),
                })
                .collect(),
            excluded: ["CHL", "HRV", "GRC", "ISR", "SVN", "KOR", "TWN", "LUX", "ISL"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            years: (1960, 2010),
        }
    }
}

impl PanelConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Codes of the included countries, minus anything on the exclusion list.
    pub fn codes(&self) -> Vec<String> {
        self.countries
            .iter()
            .filter(|c| !self.excluded.contains(&c.code))
            .map(|c| c.code.clone())
            .collect()
    }

    /// Area of each country code.
    pub fn areas(&self) -> BTreeMap<String, String> {
        self.countries
            .iter()
            .map(|c| (c.code.clone(), c.area.clone()))
            .collect()
    }

    pub fn area_order(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for c in &self.countries {
            if !seen.contains(&c.area) {
                seen.push(c.area.clone());
            }
        }
        seen
    }
}

/// Path of a country's table under the HMD directory convention
/// `<data_dir>/<CODE>.<mltper_1x1|fltper_1x1>.txt`.
pub fn table_path(data_dir: &Path, code: &str, sex: Sex) -> std::path::PathBuf {
    data_dir.join(format!("{code}.{}.txt", sex.table_name()))
}

/// Read every configured country for one sex and build its panel.
pub fn load_panel(data_dir: &Path, config: &PanelConfig, sex: Sex) -> Result<CurvePanel> {
    use rayon::prelude::*;
    let codes = config.codes();
    let parsed: Vec<(String, Vec<LifeTableRow>)> = codes
        .par_iter()
        .map(|code| {
            let path = table_path(data_dir, code, sex);
            let text = std::fs::read_to_string(&path).map_err(|e| FcurveError::io(&path, e))?;
            Ok((code.clone(), parse_life_table(&text, sex)?))
        })
        .collect::<Result<_>>()?;
    let rows: BTreeMap<String, Vec<LifeTableRow>> = parsed.into_iter().collect();
    build_panel(&rows, &codes, config.years, sex)
}

/// True when every configured table for both sexes exists under `data_dir`.
pub fn data_available(data_dir: &Path, config: &PanelConfig) -> bool {
    config.codes().iter().all(|c| {
        [Sex::Male, Sex::Female]
            .iter()
            .all(|&s| table_path(data_dir, c, s).is_file())
    })
}
