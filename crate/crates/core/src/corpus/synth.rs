//! Deterministic synthetic corpora with planted ground truth.
//!
//! Each posting draws from its own keyed stream `(seed, index)`, and wages
//! from a separate `(seed, index, "wage")` stream, so wage parameters can be
//! changed without perturbing the generated text.

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    detect_explicit_request, CorpusError, Education, ExplicitRequest, JobPosting, JobType,
    MonthYear, Result, WageRange,
};
use crate::keyed::keyed_rng;
use crate::occupation::ProfileRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationSeed {
    pub soc_code: String,
    pub title: String,
    /// Words that describe the occupation; postings sample from this pool.
    pub keywords: Vec<String>,
    pub skill_tags: Vec<String>,
    pub wage_log_mean: f64,
    pub wage_log_sd: f64,
    /// Relative sampling weight.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeywordLean {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenderedKeyword {
    pub word: String,
    pub lean: KeywordLean,
    /// Probability that a posting contains the word.
    pub rate: f64,
    /// Additive shift of the posting's log wage when the word is present.
    #[serde(default)]
    pub wage_log_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub occupations: Vec<OccupationSeed>,
    #[serde(default)]
    pub gendered_keywords: Vec<GenderedKeyword>,
    pub explicit_request_rate: f64,
    /// Share of postings that advertise a wage.
    pub wage_share: f64,
    /// Half-width of the posted range relative to its mid-point.
    pub wage_spread: f64,
    pub keywords_per_posting: usize,
    pub filler_words: Vec<String>,
    pub filler_per_posting: usize,
    pub states: Vec<String>,
    pub sectors: Vec<String>,
    pub org_types: Vec<String>,
}

/// Ground truth for one generated posting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PostingTruth {
    pub posting_id: String,
    pub soc_code: String,
    pub occupation_keywords: Vec<String>,
    pub female_keywords: Vec<String>,
    pub male_keywords: Vec<String>,
    pub explicit_request: ExplicitRequest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub postings: Vec<JobPosting>,
    pub truth: Vec<PostingTruth>,
    pub occupations: Vec<OccupationSeed>,
}

impl SyntheticCorpus {
    /// Occupation profile rows for the generating occupations.
    pub fn profile_rows(&self) -> Vec<ProfileRow> {
        self.occupations
            .iter()
            .map(|o| {
                let half = o.keywords.len() / 2;
                ProfileRow {
                    soc_code: o.soc_code.clone(),
                    title: o.title.clone(),
                    alt_titles: String::new(),
                    tasks: o.keywords[..half].join(", "),
                    knowledge: o.keywords[half..].join(", "),
                }
            })
            .collect()
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl SynthConfig {
    /// A nine-occupation configuration with distinct keyword pools.
    pub fn demo(n: usize) -> Self {
        let occ = |soc: &str, title: &str, kw: &str, tags: &str, mean: f64, weight: f64| OccupationSeed {
            soc_code: soc.into(),
            title: title.into(),
            keywords: words(kw),
            skill_tags: words(tags),
            wage_log_mean: mean,
            wage_log_sd: 0.25,
            weight,
        };
        let occupations = vec![
            occ("29-1141", "Staff Nurse", "nurse patient ward clinical medication hospital bedside nursing", "care medical communication", 12.3, 1.0),
            occ("47-2111", "Electrician", "electrician wiring circuit voltage conduit panel breaker earthing", "electrical technical maintenance", 12.2, 1.0),
            occ("43-4051", "Customer Support Executive", "customer calls queries telecalling complaints crm support escalation", "communication customer_service computer", 12.0, 1.5),
            occ("25-2021", "Primary Teacher", "teacher classroom lessons students curriculum pupils school teaching", "teaching communication writing", 12.1, 1.0),
            occ("51-4121", "Welder", "welder welding fabrication steel arc metal torch joints", "technical manufacturing safety", 12.15, 0.8),
            occ("13-2011", "Accountant", "accountant ledger tally gst audit invoices reconciliation taxation", "financial computer writing", 12.5, 1.2),
            occ("39-5012", "Beautician", "beautician salon hair makeup grooming facial styling cosmetics", "appearance customer_service care", 11.9, 0.7),
            occ("53-3032", "Truck Driver", "driver truck licence delivery route vehicle haulage logistics", "driving logistics safety", 12.0, 0.9),
            occ("15-1252", "Software Developer", "developer software java python backend api coding debugging", "computer software technical", 13.0, 1.2),
        ];
        let gendered_keywords = vec![
            GenderedKeyword { word: "caring".into(), lean: KeywordLean::Female, rate: 0.15, wage_log_shift: 0.0 },
            GenderedKeyword { word: "polite".into(), lean: KeywordLean::Female, rate: 0.15, wage_log_shift: 0.0 },
            GenderedKeyword { word: "strong".into(), lean: KeywordLean::Male, rate: 0.15, wage_log_shift: 0.0 },
            GenderedKeyword { word: "fieldwork".into(), lean: KeywordLean::Male, rate: 0.15, wage_log_shift: 0.0 },
        ];
        SynthConfig {
            n,
            occupations,
            gendered_keywords,
            explicit_request_rate: 0.02,
            wage_share: 0.36,
            wage_spread: 0.2,
            keywords_per_posting: 4,
            filler_words: words(
                "we are hiring candidates should have good experience apply immediately salary \
                 negotiable location office team work required skills opportunity growth shift \
                 timing interview walk urgent openings company benefits training basic knowledge",
            ),
            filler_per_posting: 10,
            states: words("Delhi Maharashtra Karnataka Gujarat Punjab Kerala"),
            sectors: words("services manufacturing construction agriculture"),
            org_types: words("private government ngo others"),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CorpusError::InvalidConfig(m));
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(self.explicit_request_rate) {
            return bad(format!("explicit_request_rate {} outside [0,1]", self.explicit_request_rate));
        }
        if !in_unit(self.wage_share) {
            return bad(format!("wage_share {} outside [0,1]", self.wage_share));
        }
        if !(0.0..1.0).contains(&self.wage_spread) {
            return bad(format!("wage_spread {} outside [0,1)", self.wage_spread));
        }
        if self.occupations.is_empty() {
            return bad("no occupations".into());
        }
        for o in &self.occupations {
            if o.keywords.is_empty() || !(o.weight > 0.0) || !(o.wage_log_sd >= 0.0) {
                return bad(format!("occupation {} needs keywords, positive weight, sd >= 0", o.soc_code));
            }
        }
        for k in &self.gendered_keywords {
            if !in_unit(k.rate) {
                return bad(format!("keyword `{}` rate {} outside [0,1]", k.word, k.rate));
            }
        }
        if self.filler_words.is_empty() || self.states.is_empty() || self.sectors.is_empty() || self.org_types.is_empty() {
            return bad("filler words, states, sectors and org types must be non-empty".into());
        }
        Ok(())
    }
}

const EDUCATION: [Education; 6] = [
    Education::Secondary,
    Education::SeniorSecondary,
    Education::Diploma,
    Education::Graduate,
    Education::Postgraduate,
    Education::Unspecified,
];

pub fn synthesize_corpus(config: &SynthConfig, seed: u64) -> Result<SyntheticCorpus> {
    config.validate()?;
    let total_weight: f64 = config.occupations.iter().map(|o| o.weight).sum();
    let mut postings = Vec::with_capacity(config.n);
    let mut truth = Vec::with_capacity(config.n);

    for i in 0..config.n {
        let id = format!("syn-{i:06}");
        let mut rng = keyed_rng(seed, &["posting", &i.to_string()]);

        let mut pick = rng.random::<f64>() * total_weight;
        let occ = config
            .occupations
            .iter()
            .find(|o| {
                pick -= o.weight;
                pick < 0.0
            })
            .unwrap_or(config.occupations.last().unwrap());

        let k = config.keywords_per_posting.min(occ.keywords.len()).max(1);
        let occupation_keywords: Vec<String> =
            occ.keywords.choose_multiple(&mut rng, k).cloned().collect();

        let mut female_keywords = Vec::new();
        let mut male_keywords = Vec::new();
        for gk in &config.gendered_keywords {
            if rng.random::<f64>() < gk.rate {
                match gk.lean {
                    KeywordLean::Female => female_keywords.push(gk.word.clone()),
                    KeywordLean::Male => male_keywords.push(gk.word.clone()),
                }
            }
        }

        let request = if rng.random::<f64>() < config.explicit_request_rate {
            if rng.random::<bool>() {
                ExplicitRequest::Male
            } else {
                ExplicitRequest::Female
            }
        } else {
            ExplicitRequest::None
        };

        let filler: Vec<&str> = (0..config.filler_per_posting)
            .map(|_| config.filler_words.choose(&mut rng).unwrap().as_str())
            .collect();

        let mut description = format!("Key duties: {}.", occupation_keywords.join(", "));
        if !filler.is_empty() {
            description.push(' ');
            description.push_str(&filler.join(" "));
            description.push('.');
        }
        let gendered: Vec<&str> = female_keywords
            .iter()
            .chain(&male_keywords)
            .map(String::as_str)
            .collect();
        if !gendered.is_empty() {
            description.push_str(&format!(" Looking for {} people.", gendered.join(" and ")));
        }
        match request {
            ExplicitRequest::Male => description.push_str(" Only male candidates may apply."),
            ExplicitRequest::Female => description.push_str(" Only female candidates may apply."),
            ExplicitRequest::None => {}
        }

        let n_tags = rng.random_range(1..=occ.skill_tags.len().clamp(1, 3));
        let skill_tags: BTreeSet<String> = occ
            .skill_tags
            .choose_multiple(&mut rng, n_tags)
            .cloned()
            .collect();
        let job_type = match rng.random::<f64>() {
            x if x < 0.81 => JobType::FullTime,
            x if x < 0.875 => JobType::PartTime,
            _ => JobType::Internship,
        };
        let month = rng.random_range(0..28u32);
        let month_year = MonthYear {
            year: 2020 + ((month + 6) / 12) as u16,
            month: ((month + 6) % 12 + 1) as u8,
        };

        let mut wage_rng = keyed_rng(seed, &["wage", &i.to_string()]);
        let wage_range = if wage_rng.random::<f64>() < config.wage_share {
            let z: f64 = Normal::new(0.0, 1.0).unwrap().sample(&mut wage_rng);
            let shift: f64 = config
                .gendered_keywords
                .iter()
                .filter(|gk| gendered.contains(&gk.word.as_str()))
                .map(|gk| gk.wage_log_shift)
                .sum();
            let mid = (occ.wage_log_mean + shift + occ.wage_log_sd * z).exp();
            Some(WageRange {
                low: mid * (1.0 - config.wage_spread),
                high: mid * (1.0 + config.wage_spread),
            })
        } else {
            None
        };

        let title = occ.title.clone();
        let posting = JobPosting {
            explicit_request: detect_explicit_request(&title, &description),
            id: id.clone(),
            title,
            description,
            wage_range,
            education: *EDUCATION.choose(&mut rng).unwrap(),
            experience_years: Some(f64::from(rng.random_range(0..=20u32)) / 2.0),
            sector: config.sectors.choose(&mut rng).cloned(),
            org_type: config.org_types.choose(&mut rng).cloned(),
            job_type: Some(job_type),
            state: config.states.choose(&mut rng).cloned(),
            month_year: Some(month_year),
            skill_tags,
        };
        debug_assert_eq!(posting.explicit_request, request);
        truth.push(PostingTruth {
            posting_id: id,
            soc_code: occ.soc_code.clone(),
            occupation_keywords,
            female_keywords,
            male_keywords,
            explicit_request: request,
        });
        postings.push(posting);
    }

    Ok(SyntheticCorpus {
        postings,
        truth,
        occupations: config.occupations.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let cfg = SynthConfig::demo(1000);
        let a = synthesize_corpus(&cfg, 7).unwrap();
        let b = synthesize_corpus(&cfg, 7).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        let c = synthesize_corpus(&cfg, 8).unwrap();
        assert_ne!(a.postings, c.postings);
    }

    #[test]
    fn explicit_rate_within_binomial_band() {
        let cfg = SynthConfig::demo(10_000);
        let c = synthesize_corpus(&cfg, 11).unwrap();
        let k = c
            .postings
            .iter()
            .filter(|p| p.explicit_request != ExplicitRequest::None)
            .count();
        let rate = k as f64 / 10_000.0;
        // 3 sigma of Binomial(10000, 0.02) is 0.0042
        assert!((rate - 0.02).abs() <= 0.005, "rate {rate}");
    }

    #[test]
    fn rate_one_requests_everywhere() {
        let mut cfg = SynthConfig::demo(300);
        cfg.explicit_request_rate = 1.0;
        let c = synthesize_corpus(&cfg, 3).unwrap();
        assert!(c.postings.iter().all(|p| p.explicit_request != ExplicitRequest::None));
        assert!(c.truth.iter().zip(&c.postings).all(|(t, p)| t.explicit_request == p.explicit_request));
    }

    #[test]
    fn invalid_rate_rejected() {
        let mut cfg = SynthConfig::demo(10);
        cfg.explicit_request_rate = 1.5;
        assert!(matches!(synthesize_corpus(&cfg, 1), Err(CorpusError::InvalidConfig(_))));
        let mut cfg = SynthConfig::demo(10);
        cfg.gendered_keywords[0].rate = -0.1;
        assert!(synthesize_corpus(&cfg, 1).is_err());
    }

    #[test]
    fn wage_shift_leaves_text_untouched() {
        let mut cfg = SynthConfig::demo(200);
        cfg.wage_share = 1.0;
        let a = synthesize_corpus(&cfg, 5).unwrap();
        cfg.gendered_keywords[0].wage_log_shift = -0.3;
        let b = synthesize_corpus(&cfg, 5).unwrap();
        for ((pa, pb), t) in a.postings.iter().zip(&b.postings).zip(&a.truth) {
            assert_eq!(pa.description, pb.description);
            let d = pb.log_wage().unwrap() - pa.log_wage().unwrap();
            let expect = if t.female_keywords.contains(&"caring".to_string()) { -0.3 } else { 0.0 };
            assert!((d - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn postings_validate() {
        let c = synthesize_corpus(&SynthConfig::demo(500), 9).unwrap();
        for p in &c.postings {
            p.validate().unwrap();
            assert!(!p.job_text().contains(" mr") && !p.job_text().contains("Ms."));
        }
    }
}
