//! Synthetic cases assembled from a small built-in clinical catalog.
//!
//! Departments follow the three largest departments of a typical inpatient
//! cohort (oncology, gastrointestinal surgery, thyroid surgery). Every disease
//! carries one finding phrase per modality, so generated cases are internally
//! consistent and the same catalog doubles as a label pool and a tiny
//! reference corpus.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{CaseRecord, LabelPool, Sex};
use crate::retrieval::Document;

pub struct Disease {
    pub name: &'static str,
    pub complaint: &'static str,
    pub history: &'static str,
    pub exam: &'static str,
    pub lab: &'static str,
    pub imaging: &'static str,
    pub pathology: &'static str,
    pub female_only: bool,
}

const fn d(
    name: &'static str,
    complaint: &'static str,
    history: &'static str,
    exam: &'static str,
    lab: &'static str,
    imaging: &'static str,
    pathology: &'static str,
) -> Disease {
    Disease { name, complaint, history, exam, lab, imaging, pathology, female_only: false }
}

const fn female(mut disease: Disease) -> Disease {
    disease.female_only = true;
    disease
}

pub struct Department {
    pub name: &'static str,
    /// Relative share of cases.
    pub weight: f64,
    pub diseases: &'static [Disease],
}

pub static CATALOG: [Department; 3] = [
    Department {
        name: "Oncology",
        weight: 15.76,
        diseases: &[
            d("Lung adenocarcinoma", "cough with blood-streaked sputum", "Progressive dry cough and weight loss of 4 kg.", "Decreased breath sounds over the right upper lobe.", "CEA 18.2 ng/mL (elevated); CYFRA21-1 5.1 ng/mL.", "Chest CT: 3.1 cm spiculated mass in the right upper lobe with mediastinal lymphadenopathy.", "Bronchoscopic biopsy: adenocarcinoma, TTF-1 positive, EGFR exon 19 deletion."),
            female(d("Breast cancer", "painless lump in the left breast", "Lump noticed three months ago, slowly enlarging.", "Firm irregular 2.5 cm mass in the upper outer quadrant of the left breast.", "CA15-3 41 U/mL (elevated).", "Mammography: BI-RADS 5 spiculated mass with microcalcifications.", "Core biopsy: invasive ductal carcinoma, ER positive, HER2 negative.")),
            d("Nasopharyngeal carcinoma", "nasal obstruction and bloody nasal discharge", "Right-sided hearing loss and neck swelling for two months.", "Enlarged non-tender right cervical lymph node.", "EBV VCA-IgA positive; EBV DNA 4.2e3 copies/mL.", "MRI: nasopharyngeal mass invading the right parapharyngeal space.", "Nasopharyngeal biopsy: non-keratinizing undifferentiated carcinoma."),
            d("Diffuse large B-cell lymphoma", "fever and night sweats", "Weight loss and generalized lymph node enlargement.", "Multiple enlarged rubbery lymph nodes in neck and axilla.", "LDH 520 U/L (elevated); beta2-microglobulin raised.", "PET-CT: multiple hypermetabolic lymph nodes above and below the diaphragm.", "Lymph node biopsy: diffuse large B-cell lymphoma, CD20 positive, Ki-67 80%."),
            d("Hepatocellular carcinoma", "right upper abdominal pain", "Long history of hepatitis B infection without antiviral therapy.", "Hepatomegaly with a palpable firm liver edge.", "AFP 860 ng/mL (elevated); HBsAg positive.", "Contrast CT: 5 cm hepatic lesion with arterial enhancement and washout.", "Liver biopsy: moderately differentiated hepatocellular carcinoma."),
            female(d("Cervical cancer", "irregular vaginal bleeding", "Postcoital bleeding for three months.", "Exophytic friable lesion on the cervix.", "SCC antigen 6.3 ng/mL (elevated).", "Pelvic MRI: 3 cm cervical mass without parametrial invasion.", "Cervical biopsy: squamous cell carcinoma, p16 positive.")),
            d("Esophageal squamous cell carcinoma", "progressive difficulty swallowing", "Dysphagia first to solids then to liquids.", "Cachexia; no palpable supraclavicular nodes.", "SCC antigen 3.9 ng/mL (elevated); albumin 33 g/L.", "Barium swallow: irregular filling defect in the mid esophagus.", "Endoscopic biopsy: moderately differentiated squamous cell carcinoma."),
            d("Metastatic bone disease", "persistent lower back pain", "Back pain worse at night, history of treated malignancy.", "Tenderness over the L3 spinous process.", "Alkaline phosphatase 310 U/L (elevated); calcium 2.8 mmol/L.", "Bone scan: multiple foci of increased uptake in the spine and pelvis.", ""),
        ],
    },
    Department {
        name: "Gastrointestinal Surgery",
        weight: 13.55,
        diseases: &[
            d("Gastric cancer", "epigastric pain and early satiety", "Dull epigastric pain after meals with weight loss.", "Mild epigastric tenderness; no palpable mass.", "CEA 12.4 ng/mL (elevated); CA72-4 raised; fecal occult blood positive.", "CT: thickening of the gastric antral wall with perigastric nodes.", "Gastroscopic biopsy: poorly differentiated adenocarcinoma with signet ring cells."),
            d("Colorectal cancer", "change in bowel habits with blood in stool", "Alternating constipation and diarrhea for four months.", "Digital rectal examination reveals a hard mass at 6 cm.", "CEA 22.5 ng/mL (elevated); fecal occult blood positive.", "Colonoscopy and CT: circumferential sigmoid mass with bowel wall thickening.", "Colonoscopic biopsy: moderately differentiated adenocarcinoma."),
            d("Cholelithiasis", "recurrent right upper quadrant pain", "Pain after fatty meals radiating to the right shoulder.", "Positive Murphy sign.", "Total bilirubin 24 umol/L; mildly raised ALP.", "Ultrasound: multiple echogenic gallbladder stones with acoustic shadowing.", ""),
            d("Acute appendicitis", "migratory right lower abdominal pain", "Periumbilical pain shifting to the right iliac fossa within 12 hours.", "McBurney point tenderness with rebound tenderness.", "WBC 14.2 x10^9/L with neutrophilia; CRP 58 mg/L.", "Ultrasound: non-compressible appendix 9 mm in diameter.", "Appendectomy specimen: acute suppurative appendicitis."),
            d("Colon polyp", "intermittent rectal bleeding", "Occasional bright red blood on stool.", "Unremarkable abdominal examination.", "Fecal occult blood weakly positive.", "Colonoscopy: 1.2 cm pedunculated polyp in the descending colon.", "Polypectomy specimen: tubular adenoma with low-grade dysplasia."),
            d("Gastric ulcer", "burning epigastric pain", "Pain worsening after meals, relieved by antacids.", "Epigastric tenderness without guarding.", "Helicobacter pylori urea breath test positive.", "Gastroscopy: 1 cm clean-based ulcer on the lesser curvature.", "Ulcer margin biopsy: chronic active inflammation, no malignancy."),
            d("Inguinal hernia", "reducible groin swelling", "Swelling enlarges on standing and coughing.", "Reducible right inguinal bulge with positive cough impulse.", "Routine blood tests within normal limits.", "Ultrasound: bowel loop herniating through the right inguinal canal.", ""),
            d("Intestinal obstruction", "abdominal distension and vomiting", "No passage of flatus for two days after previous laparotomy.", "Distended abdomen with high-pitched bowel sounds.", "Potassium 3.1 mmol/L (low); WBC 11.8 x10^9/L.", "Abdominal X-ray: dilated small bowel loops with air-fluid levels.", ""),
        ],
    },
    Department {
        name: "Thyroid Surgery",
        weight: 8.82,
        diseases: &[
            d("Papillary thyroid carcinoma", "anterior neck mass", "Painless neck nodule found on routine check-up.", "Firm 1.5 cm nodule in the right thyroid lobe moving with swallowing.", "TSH 2.1 mIU/L; thyroglobulin 48 ng/mL.", "Thyroid ultrasound: hypoechoic nodule with microcalcifications, TI-RADS 5.", "Fine-needle aspiration: Bethesda VI, papillary carcinoma, BRAF V600E positive."),
            d("Nodular goiter", "gradually enlarging neck", "Neck enlargement over several years without compressive symptoms.", "Diffusely enlarged multinodular thyroid.", "Thyroid function within normal limits.", "Ultrasound: multiple mixed cystic-solid nodules in both lobes.", "Fine-needle aspiration: benign follicular nodule (Bethesda II)."),
            d("Hashimoto thyroiditis", "fatigue and cold intolerance", "Weight gain and constipation over the past year.", "Firm, diffusely enlarged non-tender thyroid.", "Anti-TPO antibodies 560 IU/mL (elevated); TSH 8.9 mIU/L.", "Ultrasound: heterogeneous hypoechoic thyroid parenchyma.", "Fine-needle aspiration: lymphocytic infiltration with Hurthle cells."),
            d("Graves disease", "palpitations and weight loss", "Heat intolerance, tremor and increased appetite.", "Diffuse goiter with bruit; exophthalmos.", "Free T4 48 pmol/L (elevated); TSH < 0.01 mIU/L; TRAb positive.", "Ultrasound: diffusely enlarged hypervascular thyroid.", ""),
            d("Thyroid adenoma", "solitary neck nodule", "Slow-growing painless nodule.", "Smooth, mobile 2 cm nodule in the left lobe.", "Thyroid function within normal limits.", "Ultrasound: well-circumscribed isoechoic nodule with halo.", "Lobectomy specimen: follicular adenoma without capsular invasion."),
            d("Follicular thyroid carcinoma", "enlarging thyroid nodule", "Rapid growth of a known thyroid nodule.", "Firm 3 cm nodule fixed to surrounding tissue.", "Thyroglobulin 210 ng/mL (elevated).", "Ultrasound: large solid nodule with irregular margins.", "Lobectomy specimen: follicular carcinoma with capsular and vascular invasion."),
            d("Hyperparathyroidism", "bone pain and kidney stones", "Recurrent renal colic and polyuria.", "No palpable neck mass.", "Calcium 2.9 mmol/L (elevated); PTH 185 pg/mL (elevated).", "Sestamibi scan: focal uptake at the left inferior parathyroid.", "Parathyroidectomy specimen: parathyroid adenoma."),
        ],
    },
];

/// Conditions that co-occur across departments.
pub static COMORBIDITIES: [Disease; 6] = [
    d("Hypertension", "", "History of hypertension treated with amlodipine.", "Blood pressure 156/94 mmHg.", "", "", ""),
    d("Type 2 diabetes mellitus", "", "Type 2 diabetes on metformin for six years.", "", "Fasting glucose 9.1 mmol/L; HbA1c 8.2%.", "", ""),
    d("Hepatic cyst", "", "", "", "", "Ultrasound: 2 cm anechoic well-defined lesion in the right hepatic lobe.", ""),
    d("Hypoproteinemia", "", "Poor appetite and reduced oral intake.", "Mild bilateral ankle edema.", "Albumin 29 g/L (low); total protein 56 g/L.", "", ""),
    d("Chronic gastritis", "", "Intermittent upper abdominal discomfort for years.", "", "Helicobacter pylori antibody positive.", "", ""),
    d("Anemia", "", "Fatigue and exertional dizziness.", "Pale conjunctivae.", "Hemoglobin 92 g/L (low); MCV 74 fL.", "", ""),
];

/// (min age, max age, weight) bands used by the generator.
pub const AGE_BANDS: [(u32, u32, f64); 4] = [
    (18, 44, 0.194),
    (45, 59, 0.241),
    (60, 74, 0.396),
    (75, 90, 0.169),
];

pub const MALE_SHARE: f64 = 0.539;

fn pick_weighted(rng: &mut ChaCha8Rng, weights: impl IntoIterator<Item = f64> + Clone) -> usize {
    let total: f64 = weights.clone().into_iter().sum();
    let mut x = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.into_iter().enumerate() {
        last = i;
        if x < w {
            return i;
        }
        x -= w;
    }
    last
}

fn join_nonempty<'a>(parts: impl IntoIterator<Item = &'a str>, sep: &str) -> String {
    parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join(sep)
}

/// Deterministic synthetic cases for `seed`.
pub fn generate_cases(count: usize, seed: u64) -> Vec<CaseRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|i| generate_one(&mut rng, seed, i)).collect()
}

fn generate_one(rng: &mut ChaCha8Rng, seed: u64, i: usize) -> CaseRecord {
    let dept = &CATALOG[pick_weighted(rng, CATALOG.iter().map(|d| d.weight))];
    let primary_count = if rng.random_bool(0.3) { 2 } else { 1 };
    let primaries: Vec<&Disease> =
        rand::seq::index::sample(rng, dept.diseases.len(), primary_count)
            .into_iter()
            .map(|k| &dept.diseases[k])
            .collect();
    let mut gold: Vec<&Disease> = primaries.clone();
    if rng.random_bool(0.5) {
        gold.push(&COMORBIDITIES[rng.random_range(0..COMORBIDITIES.len())]);
    }

    let band = AGE_BANDS[pick_weighted(rng, AGE_BANDS.iter().map(|b| b.2))];
    let age = rng.random_range(band.0..=band.1);
    let sex = if gold.iter().any(|d| d.female_only) || !rng.random_bool(MALE_SHARE) {
        Sex::Female
    } else {
        Sex::Male
    };
    let duration = rng.random_range(2..=12);
    let unit = if rng.random_bool(0.5) { "weeks" } else { "months" };

    let imaging_done = !rng.random_bool(0.1);
    let pathology_done = !rng.random_bool(0.3);

    CaseRecord {
        case_id: format!("syn-{seed}-{:04}", i + 1),
        age,
        sex,
        chief_complaints: format!(
            "{} for {duration} {unit}.",
            join_nonempty(primaries.iter().map(|d| d.complaint), " and ")
        ),
        present_illness: join_nonempty(gold.iter().map(|d| d.history), " "),
        physical_examination: join_nonempty(gold.iter().map(|d| d.exam), " "),
        lab_results: join_nonempty(gold.iter().map(|d| d.lab), " "),
        imaging_results: if imaging_done {
            join_nonempty(gold.iter().map(|d| d.imaging), " ")
        } else {
            String::new()
        },
        pathology_results: if pathology_done {
            join_nonempty(gold.iter().map(|d| d.pathology), " ")
        } else {
            String::new()
        },
        department: dept.name.to_string(),
        gold_labels: gold.iter().map(|d| d.name.to_string()).collect(),
    }
}

/// Every catalog department with its diseases and the shared comorbidities.
pub fn builtin_label_pool() -> LabelPool {
    let map: BTreeMap<String, Vec<String>> = CATALOG
        .iter()
        .map(|dept| {
            let labels = dept
                .diseases
                .iter()
                .chain(COMORBIDITIES.iter())
                .map(|d| d.name.to_string())
                .collect();
            (dept.name.to_string(), labels)
        })
        .collect();
    LabelPool::new(map).expect("catalog departments are non-empty")
}

/// One reference document per catalog disease, built from its findings.
pub fn reference_corpus() -> Vec<Document> {
    CATALOG
        .iter()
        .flat_map(|dept| dept.diseases.iter())
        .chain(COMORBIDITIES.iter())
        .map(|d| Document {
            id: format!("ref-{}", d.name.to_lowercase().replace([' ', '-'], "_")),
            title: d.name.to_string(),
            body: join_nonempty(
                [
                    format!("{} typically presents with {}.", d.name, if d.complaint.is_empty() { "nonspecific symptoms" } else { d.complaint }).as_str(),
                    d.history,
                    d.exam,
                    d.lab,
                    d.imaging,
                    d.pathology,
                ],
                " ",
            ),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::case_model::{cases_to_json, check_record};

    #[test]
    fn same_seed_same_bytes() {
        assert_eq!(cases_to_json(&generate_cases(1, 42)), cases_to_json(&generate_cases(1, 42)));
        assert_ne!(cases_to_json(&generate_cases(3, 42)), cases_to_json(&generate_cases(3, 43)));
    }

    #[test]
    fn departments_come_from_the_catalog() {
        for case in generate_cases(200, 9) {
            assert!(CATALOG.iter().any(|d| d.name == case.department));
            let value = serde_json::to_value(&case).unwrap();
            assert!(check_record(0, &value).is_empty(), "{case:?}");
        }
    }

    #[test]
    fn age_bands_match_configured_weights() {
        let cases = generate_cases(1000, 2024);
        for (lo, hi, weight) in AGE_BANDS {
            let observed =
                cases.iter().filter(|c| (lo..=hi).contains(&c.age)).count() as f64 / cases.len() as f64;
            assert!((observed - weight).abs() <= 0.02, "band {lo}-{hi}: {observed} vs {weight}");
        }
    }

    #[test]
    fn builtin_pool_covers_each_department() {
        let pool = builtin_label_pool();
        for dept in &CATALOG {
            assert!(pool.department(dept.name).unwrap().len() >= dept.diseases.len());
        }
    }

    #[test]
    fn reference_corpus_has_unique_ids() {
        let docs = reference_corpus();
        let ids: std::collections::BTreeSet<_> = docs.iter().map(|d| d.id.clone()).collect();
        assert_eq!(ids.len(), docs.len());
    }
}
