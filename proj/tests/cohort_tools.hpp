#pragma once

// Helpers shared by the pipeline unit tests and the acceptance binary.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "cachexia/cohort.hpp"

namespace cohort_tools {

inline const char* kModalities[] = {"clinical", "sm", "labs", "notes", "image"};

/// Removes one modality from every record. Gold labels stay so every record remains stageable.
inline cachexia::Cohort drop_modality(cachexia::Cohort c, const std::string& modality) {
  for (auto& r : c) {
    if (modality == "clinical") {
      r.age_years.reset(), r.sex.reset(), r.race_ethnicity.reset(), r.height_m.reset();
      r.weight_kg.reset(), r.prior_weight_kg_6mo.reset(), r.bmi.reset(), r.tnm_stage_code.reset();
      r.ecog.reset(), r.food_intake.reset();
    } else if (modality == "sm") {
      r.sm = {};
    } else if (modality == "labs") {
      r.labs = {};
    } else if (modality == "notes") {
      r.notes.reset();
    } else if (modality == "image") {
      r.image_ref.reset();
    }
  }
  return c;
}

/// A fast run config over every modality, with stub embeddings and the keyword extractor.
inline nlohmann::json small_run_config(const std::filesystem::path& cohort, const std::filesystem::path& out) {
  return {{"paths", {{"cohort", cohort.string()}, {"battery", "builtin"}, {"out_dir", out.string()}}},
          {"modalities", "clinical,sm,labs,notes"},
          {"notes", {{"enabled", true}, {"provider", "keyword"}}},
          {"embeddings", {{"enabled", false}, {"text", {{"kind", "stub"}, {"dim", 16}}}}},
          {"learner", {{"folds", 3}, {"train", {{"max_epochs", 4}, {"patience", 4}}}}},
          {"search", {{"budget", 5}}},
          {"seed", 3}};
}

}  // namespace cohort_tools
