#pragma once

#include <string>
#include <utility>
#include <vector>

#include "dmz/tensor.hpp"

namespace dmz::data {

// Grayscale shapes with three enumerable factors: shape class (circle or
// square), fill (outline or filled), and quadrant position.
struct SyntheticSpec {
    int64_t resolution = 8;  // square images
    int64_t count = 0;
    uint64_t seed = 0;

    void validate() const;
};

struct LabeledImages {
    Tensor images;  // (N,1,R,R) in [-1,1]
    std::vector<int> shape_labels;     // 0 circle, 1 square
    std::vector<int> fill_labels;      // 0 outline, 1 filled
    std::vector<int> position_labels;  // quadrant 0..3

    const std::vector<int>& factor(const std::string& name) const;
};

LabeledImages generate_synthetic(const SyntheticSpec& spec);

// Two aligned domains for translation: same shape/position factors per
// index, source all outlines, target all filled.
std::pair<LabeledImages, LabeledImages> generate_paired_domains(
    const SyntheticSpec& spec);

// Labels as CSV: index,shape,fill,position.
void save_labels(const LabeledImages& data, const std::string& path);
std::vector<std::vector<int>> load_labels(const std::string& path);

}  // namespace dmz::data
