//! Shipped experiment presets. Presets are data files embedded at compile
//! time; the `preset` subcommand materializes them to disk unchanged.

pub const PRESETS: &[(&str, &str)] = &[
    ("fig3_alignment", include_str!("../presets/fig3_alignment.json")),
    ("fig3_alignment_d1000", include_str!("../presets/fig3_alignment_d1000.json")),
    ("fig4_over_ranked", include_str!("../presets/fig4_over_ranked.json")),
    ("fig4_under_ranked", include_str!("../presets/fig4_under_ranked.json")),
    ("kappa_sweep", include_str!("../presets/kappa_sweep.json")),
    ("adaptive_over_ranked", include_str!("../presets/adaptive_over_ranked.json")),
    ("verify_thm_3_1", include_str!("../presets/verify_thm_3_1.json")),
    ("verify_thm_3_2", include_str!("../presets/verify_thm_3_2.json")),
    ("verify_thm_3_6", include_str!("../presets/verify_thm_3_6.json")),
    ("verify_thm_c9", include_str!("../presets/verify_thm_c9.json")),
    ("verify_thm_c13", include_str!("../presets/verify_thm_c13.json")),
    ("verify_thm_4_2", include_str!("../presets/verify_thm_4_2.json")),
    ("verify_lemma_c4", include_str!("../presets/verify_lemma_c4.json")),
    ("verify_lemma_c4_alpha1", include_str!("../presets/verify_lemma_c4_alpha1.json")),
    ("verify_lemma_d6", include_str!("../presets/verify_lemma_d6.json")),
];

pub fn lookup(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, body)| *body)
}

pub fn names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

/// Default verification preset for each theorem id.
pub fn verify_preset_for(theorem: &str) -> Option<&'static str> {
    let name = match theorem {
        "thm_3_1" => "verify_thm_3_1",
        "thm_3_2" => "verify_thm_3_2",
        "thm_3_6" => "verify_thm_3_6",
        "thm_c9" => "verify_thm_c9",
        "thm_c13" => "verify_thm_c13",
        "thm_4_2" => "verify_thm_4_2",
        "lemma_c4" => "verify_lemma_c4",
        "lemma_d6" => "verify_lemma_d6",
        _ => return None,
    };
    lookup(name)
}
