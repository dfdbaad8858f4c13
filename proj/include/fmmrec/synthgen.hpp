#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fmmrec/data.hpp"

namespace fmmrec {

struct SynthModalitySpec {
    std::string name;
    std::uint32_t dim = 16;
    double signal = 0.5;  // fraction of feature magnitude driven by the attribute
};

struct SynthAttrSpec {
    std::string name;
    std::uint32_t classes = 2;
};

struct SynthConfig {
    std::uint32_t n_users = 500;
    std::uint32_t n_items = 200;
    std::vector<SynthModalitySpec> modalities;
    std::vector<SynthAttrSpec> attrs;
    double coupling = 0.5;  // attribute influence on interaction choice
    std::uint32_t interactions_per_user = 20;
    std::uint64_t seed = 0;
};

struct SynthResult {
    Dataset dataset;
    nlohmann::json manifest;  // ground truth: item groups, subspaces, centroids
};

// Plants a sensitive-attribute signal into modal features (strength s per
// modality) and into interaction choices (coupling c), then splits 8:1:1.
// Fully deterministic per seed.
SynthResult generate(const SynthConfig& cfg);

// Emits interactions.tsv, modal_<name>.txt, attributes.txt, splits.tsv and
// manifest.json into dir using the data-module file formats.
void write_synth_files(const SynthResult& result, const std::string& dir);

}  // namespace fmmrec
