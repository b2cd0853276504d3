//! Rule-based mention generators for structured identifiers.

use chrono::{Datelike, Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use super::StoreError;

pub const DEFAULT_PHONE_PATTERN: &str = "010-####-####";

/// Digit groupings used by common Korean banks.
pub const DEFAULT_ACCOUNT_PATTERNS: &[&str] = &[
    "###-####-####-##",
    "###-######-##-###",
    "######-##-######",
    "###-###-######",
    "####-###-######",
    "###-##-#####-#",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PatternItem {
    Digit,
    Syllable,
    Letter,
    Literal(char),
}

/// Compiled custom pattern: `#` digit, `@` Hangul syllable from a table,
/// `?` ASCII letter, `\x` literal `x`, anything else literal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Pattern {
    source: String,
    items: Vec<PatternItem>,
    syllables: Vec<String>,
}

fn check_fragment(what: &str, s: &str) -> Result<(), StoreError> {
    if s.is_empty() {
        return Err(StoreError::InvalidGenerator(format!("{what} is empty")));
    }
    if s.chars()
        .any(|c| c == '<' || c == '>' || c == '\n' || c == '\r')
    {
        return Err(StoreError::InvalidGenerator(format!(
            "{what} {s:?} contains a marker delimiter or line break"
        )));
    }
    Ok(())
}

pub(crate) fn check_table(name: &str, entries: &[String]) -> Result<(), StoreError> {
    if entries.is_empty() {
        return Err(StoreError::MissingComponentTable(name.to_string()));
    }
    for e in entries {
        check_fragment(&format!("entry of table {name}"), e)?;
    }
    Ok(())
}

impl Pattern {
    pub fn compile(source: &str, syllables: Option<Vec<String>>) -> Result<Pattern, StoreError> {
        check_fragment("pattern", source)?;
        let mut items = Vec::new();
        let mut chars = source.chars();
        while let Some(c) = chars.next() {
            items.push(match c {
                '#' => PatternItem::Digit,
                '@' => PatternItem::Syllable,
                '?' => PatternItem::Letter,
                '\\' => match chars.next() {
                    Some(e) => PatternItem::Literal(e),
                    None => {
                        return Err(StoreError::InvalidGenerator(format!(
                            "pattern {source:?} ends with a dangling escape"
                        )))
                    }
                },
                other => PatternItem::Literal(other),
            });
        }
        let syllables = syllables.unwrap_or_default();
        if items.contains(&PatternItem::Syllable) {
            check_table("syllables", &syllables)?;
        }
        Ok(Pattern {
            source: source.to_string(),
            items,
            syllables,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn items(&self) -> &[PatternItem] {
        &self.items
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        let mut out = String::new();
        for item in &self.items {
            match item {
                PatternItem::Digit => out.push(char::from(b'0' + rng.gen_range(0..10u8))),
                PatternItem::Letter => {
                    let i = rng.gen_range(0..52u8);
                    out.push(char::from(if i < 26 { b'A' + i } else { b'a' + i - 26 }));
                }
                PatternItem::Syllable => {
                    out.push_str(self.syllables.choose(rng).expect("checked non-empty"))
                }
                PatternItem::Literal(c) => out.push(*c),
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NameTables {
    pub surnames: Vec<String>,
    pub given_syllables: Vec<String>,
    /// Allowed numbers of given-name syllables, drawn uniformly.
    pub given_lengths: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AddressTables {
    /// Administrative tiers from the largest unit down to the street.
    pub tiers: Vec<Vec<String>>,
    pub number_range: (u32, u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RrnConfig {
    pub first_year: i32,
    pub last_year: i32,
}

impl Default for RrnConfig {
    fn default() -> Self {
        RrnConfig {
            first_year: 1930,
            last_year: 2019,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    KoreanName(NameTables),
    KoreanAddress(AddressTables),
    ResidentRegistrationNumber(RrnConfig),
    PhoneNumber(Pattern),
    BankAccount { patterns: Vec<Pattern> },
    CustomPattern(Pattern),
}

impl Generator {
    pub fn validate(&self) -> Result<(), StoreError> {
        match self {
            Generator::KoreanName(t) => {
                check_table("surnames", &t.surnames)?;
                check_table("given_syllables", &t.given_syllables)?;
                if t.given_lengths.is_empty() || t.given_lengths.contains(&0) {
                    return Err(StoreError::InvalidGenerator(
                        "given_lengths must be a non-empty list of positive lengths".into(),
                    ));
                }
            }
            Generator::KoreanAddress(t) => {
                if t.tiers.is_empty() {
                    return Err(StoreError::MissingComponentTable("address tiers".into()));
                }
                for (i, tier) in t.tiers.iter().enumerate() {
                    check_table(&format!("address tier {i}"), tier)?;
                    if tier.iter().any(|e| e.contains(char::is_whitespace)) {
                        return Err(StoreError::InvalidGenerator(format!(
                            "address tier {i} has an entry containing whitespace"
                        )));
                    }
                }
                if t.number_range.0 > t.number_range.1 {
                    return Err(StoreError::InvalidGenerator("empty number_range".into()));
                }
            }
            Generator::ResidentRegistrationNumber(c) => {
                if c.first_year > c.last_year || c.first_year < 1900 || c.last_year > 2099 {
                    return Err(StoreError::InvalidGenerator(
                        "birth years must lie within 1900..=2099 and be ordered".into(),
                    ));
                }
            }
            Generator::BankAccount { patterns: ps } if ps.is_empty() => {
                return Err(StoreError::InvalidGenerator(
                    "bank_account needs at least one pattern".into(),
                ))
            }
            Generator::PhoneNumber(_)
            | Generator::BankAccount { .. }
            | Generator::CustomPattern(_) => {}
        }
        Ok(())
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> String {
        match self {
            Generator::KoreanName(t) => generate_name(t, rng),
            Generator::KoreanAddress(t) => generate_address(t, rng),
            Generator::ResidentRegistrationNumber(c) => generate_rrn_in(*c, rng),
            Generator::PhoneNumber(p) => generate_phone(p, rng),
            Generator::BankAccount { patterns: ps } => generate_account(ps, rng),
            Generator::CustomPattern(p) => p.generate(rng),
        }
    }
}

pub fn generate_name<R: Rng + ?Sized>(tables: &NameTables, rng: &mut R) -> String {
    let mut out = tables.surnames.choose(rng).expect("surnames").clone();
    let len = *tables.given_lengths.choose(rng).expect("lengths");
    for _ in 0..len {
        out.push_str(tables.given_syllables.choose(rng).expect("syllables"));
    }
    out
}

/// One unit from each tier in order, then a building number, space separated.
pub fn generate_address<R: Rng + ?Sized>(tables: &AddressTables, rng: &mut R) -> String {
    let mut parts: Vec<String> = tables
        .tiers
        .iter()
        .map(|tier| tier.choose(rng).expect("tier").clone())
        .collect();
    let (lo, hi) = tables.number_range;
    parts.push(rng.gen_range(lo..=hi).to_string());
    parts.join(" ")
}

/// Resident registration number `YYMMDD-GNNNNNN`. The birth date is a real
/// calendar date; `G` encodes century and sex (1/2 for 1900s, 3/4 for
/// 2000s). The remaining six digits are uniform; no check digit is computed.
pub fn generate_rrn<R: Rng + ?Sized>(rng: &mut R) -> String {
    generate_rrn_in(RrnConfig::default(), rng)
}

fn generate_rrn_in<R: Rng + ?Sized>(config: RrnConfig, rng: &mut R) -> String {
    let first = NaiveDate::from_ymd_opt(config.first_year, 1, 1).expect("valid year");
    let last = NaiveDate::from_ymd_opt(config.last_year, 12, 31).expect("valid year");
    let span = (last - first).num_days();
    let birth = first + Duration::days(rng.gen_range(0..=span));
    let male = rng.gen_bool(0.5);
    let code = match (birth.year() >= 2000, male) {
        (false, true) => 1,
        (false, false) => 2,
        (true, true) => 3,
        (true, false) => 4,
    };
    let mut out = format!(
        "{:02}{:02}{:02}-{}",
        birth.year() % 100,
        birth.month(),
        birth.day(),
        code
    );
    for _ in 0..6 {
        out.push(char::from(b'0' + rng.gen_range(0..10u8)));
    }
    out
}

pub fn generate_phone<R: Rng + ?Sized>(pattern: &Pattern, rng: &mut R) -> String {
    pattern.generate(rng)
}

pub fn generate_account<R: Rng + ?Sized>(patterns: &[Pattern], rng: &mut R) -> String {
    patterns.choose(rng).expect("patterns").generate(rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use regex::Regex;
    use std::collections::HashSet;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Independent validator: shape by regex, date by calendar lookup with
    /// the century taken from the gender digit.
    fn rrn_is_valid(s: &str) -> bool {
        let re = Regex::new(r"^(\d{2})(\d{2})(\d{2})-([1-4])\d{6}$").unwrap();
        let Some(c) = re.captures(s) else {
            return false;
        };
        let yy: i32 = c[1].parse().unwrap();
        let mm: u32 = c[2].parse().unwrap();
        let dd: u32 = c[3].parse().unwrap();
        let century = if matches!(&c[4], "1" | "2") {
            1900
        } else {
            2000
        };
        NaiveDate::from_ymd_opt(century + yy, mm, dd).is_some()
    }

    #[test]
    fn court_example_rrn_is_accepted_by_the_validator() {
        assert!(rrn_is_valid("561231-1234567"));
        assert!(!rrn_is_valid("561331-1234567"));
        assert!(!rrn_is_valid("560230-1234567"));
        assert!(!rrn_is_valid("561231-5234567"));
    }

    #[test]
    fn generated_rrns_are_valid() {
        let mut r = rng(1);
        for _ in 0..10_000 {
            let s = generate_rrn(&mut r);
            assert!(rrn_is_valid(&s), "{s}");
            let month: u32 = s[2..4].parse().unwrap();
            assert!((1..=12).contains(&month));
        }
        assert_eq!(generate_rrn(&mut rng(9)), generate_rrn(&mut rng(9)));
    }

    #[test]
    fn tiny_name_table_reaches_every_combination() {
        let t = NameTables {
            surnames: vec!["홍".into()],
            given_syllables: vec!["길".into(), "동".into()],
            given_lengths: vec![2],
        };
        let mut r = rng(3);
        let seen: HashSet<String> = (0..200).map(|_| generate_name(&t, &mut r)).collect();
        let expected: HashSet<String> = ["홍길길", "홍길동", "홍동길", "홍동동"]
            .into_iter()
            .map(String::from)
            .collect();
        assert_eq!(seen, expected);
    }

    #[test]
    fn address_parses_back_into_its_tiers() {
        let t = AddressTables {
            tiers: vec![
                vec!["서울특별시".into(), "부산광역시".into()],
                vec!["강남구".into(), "해운대구".into(), "달성군".into()],
                vec!["역삼동".into(), "우동".into(), "가창리".into()],
                vec!["테헤란로".into(), "해운대로".into()],
            ],
            number_range: (1, 300),
        };
        let mut r = rng(5);
        for _ in 0..2_000 {
            let a = generate_address(&t, &mut r);
            let parts: Vec<&str> = a.split(' ').collect();
            assert_eq!(parts.len(), t.tiers.len() + 1, "{a}");
            for (part, tier) in parts.iter().zip(&t.tiers) {
                assert!(tier.iter().any(|e| e == part), "{part} not in tier");
            }
            let n: u32 = parts.last().unwrap().parse().unwrap();
            assert!((1..=300).contains(&n));
        }
    }

    #[test]
    fn phone_and_account_patterns() {
        let phone = Pattern::compile(DEFAULT_PHONE_PATTERN, None).unwrap();
        let re = Regex::new(r"^010-\d{4}-\d{4}$").unwrap();
        let mut r = rng(7);
        for _ in 0..10_000 {
            let p = generate_phone(&phone, &mut r);
            assert!(re.is_match(&p), "{p}");
        }
        let accounts: Vec<Pattern> = DEFAULT_ACCOUNT_PATTERNS
            .iter()
            .map(|p| Pattern::compile(p, None).unwrap())
            .collect();
        let shapes: Vec<Regex> = DEFAULT_ACCOUNT_PATTERNS
            .iter()
            .map(|p| Regex::new(&format!("^{}$", p.replace('#', r"\d"))).unwrap())
            .collect();
        for _ in 0..1_000 {
            let a = generate_account(&accounts, &mut r);
            assert!(shapes.iter().any(|s| s.is_match(&a)), "{a}");
        }
    }

    #[test]
    fn custom_pattern_grammar() {
        let p = Pattern::compile("자가\\#-##-@?", Some(vec!["가".into(), "나".into()])).unwrap();
        let re = Regex::new(r"^자가#-\d\d-[가나][A-Za-z]$").unwrap();
        let mut r = rng(11);
        for _ in 0..500 {
            let s = p.generate(&mut r);
            assert!(re.is_match(&s), "{s}");
        }
        assert!(matches!(
            Pattern::compile("@@", None),
            Err(StoreError::MissingComponentTable(_))
        ));
        assert!(Pattern::compile("ab\\", None).is_err());
        assert!(Pattern::compile("a<<<b", None).is_err());
        assert!(Pattern::compile("", None).is_err());
    }
}
