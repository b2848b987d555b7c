//! Traffic-sign text prompts.
//!
//! A prompt is a scenario description followed by the sign's category and
//! the traffic rule it encodes. The scenario is one phrase from each of four
//! pools (detail, appearance, background, image characteristics).
//!
//! Grammar for the combined mode:
//!
//! ```text
//! <detail>, <appearance>, <background>, <image>, <category>. <rule>
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_TAXONOMY_TOML: &str = include_str!("../assets/taxonomy.toml");
pub const DEFAULT_POOLS_TOML: &str = include_str!("../assets/pools.toml");
pub const DEFAULT_PROMPTS_PER_CLASS: usize = 8;

/// Number of classes in the shipped taxonomy.
pub const CANONICAL_CLASSES: usize = 46;

const SCENARIO_SEPARATOR: &str = ", ";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    #[serde(rename = "id")]
    pub class_id: usize,
    #[serde(rename = "name")]
    pub canonical_name: String,
    #[serde(rename = "rule")]
    pub rule_text: String,
    #[serde(default)]
    pub aliases: BTreeMap<String, Vec<String>>,
}

impl TaxonomyEntry {
    pub fn new(class_id: usize, name: &str, rule: &str) -> Result<Self> {
        let entry = Self {
            class_id,
            canonical_name: name.to_owned(),
            rule_text: rule.to_owned(),
            aliases: BTreeMap::new(),
        };
        entry.validate()?;
        Ok(entry)
    }

    fn validate(&self) -> Result<()> {
        if self.canonical_name.trim().is_empty() {
            return Err(Error::Config(format!("class {} has an empty name", self.class_id)));
        }
        if self.rule_text.trim().is_empty() {
            return Err(Error::Config(format!(
                "class {} (`{}`) has an empty rule",
                self.class_id, self.canonical_name
            )));
        }
        Ok(())
    }
}

/// Class list with ids dense over `0..len`.
#[derive(Debug, Clone, PartialEq)]
pub struct Taxonomy {
    entries: Vec<TaxonomyEntry>,
}

#[derive(Deserialize)]
struct TaxonomyFile {
    #[serde(rename = "class")]
    classes: Vec<TaxonomyEntry>,
}

impl Taxonomy {
    pub fn new(mut entries: Vec<TaxonomyEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Config("taxonomy has no classes".into()));
        }
        entries.sort_by_key(|e| e.class_id);
        for (i, e) in entries.iter().enumerate() {
            e.validate()?;
            if e.class_id != i {
                return Err(Error::Config(format!(
                    "class ids must be unique and dense from 0; expected {i}, found {}",
                    e.class_id
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: TaxonomyFile = toml::from_str(text)?;
        Self::new(file.classes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read taxonomy {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The shipped 46-class taxonomy.
    pub fn default_signs() -> Self {
        Self::from_toml(DEFAULT_TAXONOMY_TOML).expect("bundled taxonomy is valid")
    }

    /// The first `n` classes, for desk-scale experiments.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.entries.len() {
            return Err(Error::Range(format!(
                "cannot take {n} classes from a taxonomy of {}",
                self.entries.len()
            )));
        }
        Ok(Self {
            entries: self.entries[..n].to_vec(),
        })
    }

    pub fn entries(&self) -> &[TaxonomyEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, class_id: usize) -> Option<&TaxonomyEntry> {
        self.entries.get(class_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioPools {
    pub detail: Vec<String>,
    pub appearance: Vec<String>,
    pub background: Vec<String>,
    pub image: Vec<String>,
}

impl ScenarioPools {
    pub fn new(
        detail: Vec<String>,
        appearance: Vec<String>,
        background: Vec<String>,
        image: Vec<String>,
    ) -> Result<Self> {
        let pools = Self {
            detail,
            appearance,
            background,
            image,
        };
        pools.validate()?;
        Ok(pools)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, pool) in self.named() {
            if pool.is_empty() {
                return Err(Error::Config(format!("scenario pool `{name}` is empty")));
            }
            for phrase in pool {
                if phrase.trim().is_empty() {
                    return Err(Error::Config(format!("pool `{name}` has an empty phrase")));
                }
                if phrase.contains('{') || phrase.contains('}') {
                    return Err(Error::Config(format!(
                        "pool `{name}` phrase `{phrase}` contains a template placeholder"
                    )));
                }
            }
        }
        Ok(())
    }

    fn named(&self) -> [(&'static str, &Vec<String>); 4] {
        [
            ("detail", &self.detail),
            ("appearance", &self.appearance),
            ("background", &self.background),
            ("image", &self.image),
        ]
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let pools: Self = toml::from_str(text)?;
        pools.validate()?;
        Ok(pools)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read pools {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn default_english() -> Self {
        Self::from_toml(DEFAULT_POOLS_TOML).expect("bundled pools are valid")
    }
}

/// Which prompt components are included; mirrors the ablation rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    /// `a photo of a <category> traffic sign.`
    Plain,
    /// Scenario plus category.
    ScenarioOnly,
    /// Category plus rule.
    RulesOnly,
    /// Scenario, category and rule.
    #[default]
    Combined,
}

impl PromptMode {
    pub fn uses_scenario(self) -> bool {
        matches!(self, PromptMode::ScenarioOnly | PromptMode::Combined)
    }

    pub fn uses_rules(self) -> bool {
        matches!(self, PromptMode::RulesOnly | PromptMode::Combined)
    }
}

impl fmt::Display for PromptMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptMode::Plain => "plain",
            PromptMode::ScenarioOnly => "scenario_only",
            PromptMode::RulesOnly => "rules_only",
            PromptMode::Combined => "combined",
        })
    }
}

impl FromStr for PromptMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "plain" => Ok(PromptMode::Plain),
            "scenario_only" | "scenario" => Ok(PromptMode::ScenarioOnly),
            "rules_only" | "rules" => Ok(PromptMode::RulesOnly),
            "combined" => Ok(PromptMode::Combined),
            other => Err(Error::Config(format!("unknown prompt mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub template_id: usize,
    pub class_id: usize,
    pub text: String,
}

/// Draws one phrase per pool, in pool order, and joins them.
pub fn compose_scenario(pools: &ScenarioPools, seed: u64) -> Result<String> {
    compose_scenario_with(pools, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn compose_scenario_with<R: Rng>(pools: &ScenarioPools, rng: &mut R) -> Result<String> {
    pools.validate()?;
    let parts: Vec<&str> = pools
        .named()
        .iter()
        .map(|(_, pool)| pool.choose(rng).expect("pools are nonempty").as_str())
        .collect();
    Ok(parts.join(SCENARIO_SEPARATOR))
}

/// Combined prompt: scenario, category, then the rule sentence.
pub fn compose_prompt(scenario: &str, entry: &TaxonomyEntry) -> Result<PromptTemplate> {
    render(PromptMode::Combined, scenario, entry, 0)
}

fn render(mode: PromptMode, scenario: &str, entry: &TaxonomyEntry, template_id: usize) -> Result<PromptTemplate> {
    if mode.uses_scenario() && scenario.trim().is_empty() {
        return Err(Error::Config("scenario must be nonempty".into()));
    }
    let name = &entry.canonical_name;
    let rule = &entry.rule_text;
    let text = match mode {
        PromptMode::Plain => format!("a photo of a {name} traffic sign."),
        PromptMode::ScenarioOnly => format!("{scenario}{SCENARIO_SEPARATOR}{name}."),
        PromptMode::RulesOnly => format!("{name}. {rule}"),
        PromptMode::Combined => format!("{scenario}{SCENARIO_SEPARATOR}{name}. {rule}"),
    };
    Ok(PromptTemplate {
        template_id,
        class_id: entry.class_id,
        text,
    })
}

/// A full prompt set: `n_per_class` templates for every class, stored class
/// by class so that the templates of class `c` occupy ids
/// `c * n_per_class .. (c + 1) * n_per_class`.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSet {
    templates: Vec<PromptTemplate>,
    n_classes: usize,
    n_per_class: usize,
}

impl PromptSet {
    pub fn from_templates(mut templates: Vec<PromptTemplate>) -> Result<Self> {
        if templates.is_empty() {
            return Err(Error::Coverage("prompt set is empty".into()));
        }
        templates.sort_by_key(|t| t.template_id);
        let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
        for t in &templates {
            *per_class.entry(t.class_id).or_default() += 1;
        }
        let n_classes = per_class.keys().next_back().map_or(0, |&c| c + 1);
        if let Some(missing) = (0..n_classes).find(|c| !per_class.contains_key(c)) {
            return Err(Error::Coverage(format!("class {missing} has no prompt template")));
        }
        let counts: BTreeSet<usize> = per_class.values().copied().collect();
        if counts.len() != 1 {
            return Err(Error::Coverage(format!(
                "classes have unequal template counts {counts:?}"
            )));
        }
        let n_per_class = *counts.iter().next().unwrap();
        for (i, t) in templates.iter().enumerate() {
            if t.template_id != i || t.class_id != i / n_per_class {
                return Err(Error::Coverage(format!(
                    "template {} for class {} is out of the contiguous per-class layout",
                    t.template_id, t.class_id
                )));
            }
        }
        Ok(Self {
            templates,
            n_classes,
            n_per_class,
        })
    }

    pub fn templates(&self) -> &[PromptTemplate] {
        &self.templates
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_per_class(&self) -> usize {
        self.n_per_class
    }

    pub fn for_class(&self, class_id: usize) -> &[PromptTemplate] {
        let start = class_id * self.n_per_class;
        &self.templates[start..start + self.n_per_class]
    }

    /// Fails unless every class in `0..n_classes` has templates.
    pub fn check_covers(&self, n_classes: usize) -> Result<()> {
        if self.n_classes < n_classes {
            return Err(Error::Coverage(format!(
                "prompt set covers {} classes, {n_classes} required",
                self.n_classes
            )));
        }
        Ok(())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.templates {
            serde_json::to_writer(&mut out, t)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<Self> {
        let mut templates = Vec::new();
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            templates.push(serde_json::from_str(&line)?);
        }
        Self::from_templates(templates)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_jsonl())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Hex SHA-256 of the JSON-lines encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }
}

/// `n_per_class` templates for every class, in the given mode.
pub fn generate_prompt_set(
    taxonomy: &Taxonomy,
    pools: &ScenarioPools,
    n_per_class: usize,
    mode: PromptMode,
    seed: u64,
) -> Result<PromptSet> {
    if n_per_class < 1 {
        return Err(Error::Range("n_per_class must be at least 1".into()));
    }
    pools.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut templates = Vec::with_capacity(taxonomy.len() * n_per_class);
    for entry in taxonomy.entries() {
        for _ in 0..n_per_class {
            let scenario = compose_scenario_with(pools, &mut rng)?;
            templates.push(render(mode, &scenario, entry, templates.len())?);
        }
    }
    PromptSet::from_templates(templates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singleton_pools() -> ScenarioPools {
        ScenarioPools::new(
            vec!["a photo of".into()],
            vec!["red octagonal".into()],
            vec!["at an intersection".into()],
            vec!["clear daytime image".into()],
        )
        .unwrap()
    }

    #[test]
    fn singleton_pools_fix_order() {
        assert_eq!(
            compose_scenario(&singleton_pools(), 42).unwrap(),
            "a photo of, red octagonal, at an intersection, clear daytime image"
        );
    }

    #[test]
    fn scenario_is_deterministic_and_varies_with_seed() {
        let pools = ScenarioPools::default_english();
        assert_eq!(compose_scenario(&pools, 7).unwrap(), compose_scenario(&pools, 7).unwrap());
        let distinct: BTreeSet<String> = (0..100).map(|s| compose_scenario(&pools, s).unwrap()).collect();
        assert!(distinct.len() >= 2);
    }

    #[test]
    fn empty_pool_is_a_configuration_error() {
        let mut pools = singleton_pools();
        pools.background.clear();
        assert!(matches!(compose_scenario(&pools, 0), Err(Error::Config(_))));
        assert!(ScenarioPools::new(vec![], vec!["a".into()], vec!["b".into()], vec!["c".into()]).is_err());
        assert!(ScenarioPools::new(vec!["{x}".into()], vec!["a".into()], vec!["b".into()], vec!["c".into()]).is_err());
    }

    #[test]
    fn prompt_contains_name_and_rule() {
        let entry = TaxonomyEntry::new(0, "stop", "vehicles must come to a complete halt").unwrap();
        let t = compose_prompt("a traffic sign photo", &entry).unwrap();
        assert!(t.text.contains("stop"));
        assert!(t.text.contains("vehicles must come to a complete halt"));
        assert_eq!(t.text, "a traffic sign photo, stop. vehicles must come to a complete halt");
    }

    #[test]
    fn empty_rule_is_rejected() {
        assert!(TaxonomyEntry::new(0, "stop", "").is_err());
        assert!(TaxonomyEntry::new(0, "", "rule").is_err());
    }

    #[test]
    fn default_taxonomy_has_46_dense_classes() {
        let tax = Taxonomy::default_signs();
        assert_eq!(tax.len(), CANONICAL_CLASSES);
        let names: BTreeSet<&str> = tax.entries().iter().map(|e| e.canonical_name.as_str()).collect();
        assert_eq!(names.len(), CANONICAL_CLASSES);
        for name in ["no overtaking", "no parking", "no pedestrians", "stop"] {
            assert!(names.contains(name), "{name}");
        }
    }

    #[test]
    fn one_template_per_class_for_single_scenario() {
        let tax = Taxonomy::default_signs();
        let set = generate_prompt_set(&tax, &singleton_pools(), 1, PromptMode::Combined, 0).unwrap();
        assert_eq!(set.len(), 46);
        for (c, t) in set.templates().iter().enumerate() {
            assert_eq!(t.class_id, c);
        }
    }

    #[test]
    fn prompt_set_cardinality_determinism_and_invariants() {
        let tax = Taxonomy::default_signs();
        let pools = ScenarioPools::default_english();
        let a = generate_prompt_set(&tax, &pools, 2, PromptMode::Combined, 11).unwrap();
        let b = generate_prompt_set(&tax, &pools, 2, PromptMode::Combined, 11).unwrap();
        assert_eq!(a.len(), 92);
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        for t in a.templates() {
            let entry = tax.get(t.class_id).unwrap();
            assert!(t.text.contains(&entry.canonical_name));
            assert!(t.text.contains(&entry.rule_text));
        }
        for c in 0..46 {
            let ids: Vec<usize> = a.for_class(c).iter().map(|t| t.template_id).collect();
            assert_eq!(ids, vec![2 * c, 2 * c + 1]);
        }
        assert!(generate_prompt_set(&tax, &pools, 0, PromptMode::Combined, 0).is_err());
    }

    #[test]
    fn ablation_modes_are_separable() {
        let tax = Taxonomy::default_signs().truncated(3).unwrap();
        let pools = ScenarioPools::default_english();
        let scen = generate_prompt_set(&tax, &pools, 4, PromptMode::ScenarioOnly, 1).unwrap();
        let rules = generate_prompt_set(&tax, &pools, 4, PromptMode::RulesOnly, 1).unwrap();
        let plain = generate_prompt_set(&tax, &pools, 4, PromptMode::Plain, 1).unwrap();
        for ((s, r), p) in scen.templates().iter().zip(rules.templates()).zip(plain.templates()) {
            let entry = tax.get(s.class_id).unwrap();
            assert!(s.text.contains(&entry.canonical_name) && !s.text.contains(&entry.rule_text));
            assert!(r.text.contains(&entry.rule_text));
            assert!(!pools.detail.iter().any(|d| r.text.contains(d.as_str())));
            assert!(p.text.contains(&entry.canonical_name) && !p.text.contains(&entry.rule_text));
        }
    }

    #[test]
    fn jsonl_round_trip_and_coverage() {
        let tax = Taxonomy::default_signs().truncated(5).unwrap();
        let set = generate_prompt_set(&tax, &ScenarioPools::default_english(), 3, PromptMode::Combined, 2)
            .unwrap();
        let back = PromptSet::read_jsonl(set.to_jsonl().as_bytes()).unwrap();
        assert_eq!(back, set);
        assert!(set.check_covers(5).is_ok());
        assert!(matches!(set.check_covers(6), Err(Error::Coverage(_))));
        let mut partial = set.templates().to_vec();
        partial.retain(|t| t.class_id != 2);
        assert!(matches!(PromptSet::from_templates(partial), Err(Error::Coverage(_))));
    }
}
