#include "dmz/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dmz/errors.hpp"
#include "dmz/rng.hpp"

namespace dmz::data {

namespace {

struct Factors {
    int shape;     // 0 circle, 1 square
    int fill;      // 0 outline, 1 filled
    int position;  // quadrant 0..3
};

void draw(Tensor& images, int64_t index, int64_t res, const Factors& f) {
    double q = static_cast<double>(res) / 4.0;
    double cy = (f.position / 2 == 0) ? q : 3.0 * q;
    double cx = (f.position % 2 == 0) ? q : 3.0 * q;
    cy -= 0.5;
    cx -= 0.5;
    double r = static_cast<double>(res) / 4.0 - 0.5;
    double* img = images.data.data() + index * res * res;
    for (int64_t y = 0; y < res; ++y) {
        for (int64_t x = 0; x < res; ++x) {
            double dy = static_cast<double>(y) - cy;
            double dx = static_cast<double>(x) - cx;
            double dist = f.shape == 0 ? std::sqrt(dy * dy + dx * dx)
                                       : std::max(std::abs(dy), std::abs(dx));
            bool on = f.fill == 1 ? dist <= r + 1e-9
                                  : std::abs(dist - r) <= 0.55;
            if (on) img[y * res + x] = 1.0;
        }
    }
}

}  // namespace

void SyntheticSpec::validate() const {
    if (resolution < 4) throw ConfigError("synthetic: resolution must be >= 4");
    if (count < 1) throw ConfigError("synthetic: count must be positive");
}

const std::vector<int>& LabeledImages::factor(const std::string& name) const {
    if (name == "shape") return shape_labels;
    if (name == "fill") return fill_labels;
    if (name == "position") return position_labels;
    throw ConfigError("unknown factor: " + name +
                      " (expected shape, fill or position)");
}

LabeledImages generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    // Cycle through all 16 factor combinations, then shuffle the order, so
    // marginals stay balanced at any count.
    std::vector<int> combos(static_cast<size_t>(spec.count));
    for (int64_t i = 0; i < spec.count; ++i)
        combos[static_cast<size_t>(i)] = static_cast<int>(i % 16);
    std::shuffle(combos.begin(), combos.end(), rng.engine());

    LabeledImages out;
    out.images = Tensor::full({spec.count, 1, spec.resolution, spec.resolution},
                              -1.0);
    for (int64_t i = 0; i < spec.count; ++i) {
        int c = combos[static_cast<size_t>(i)];
        Factors f{c % 2, (c / 2) % 2, c / 4};
        draw(out.images, i, spec.resolution, f);
        out.shape_labels.push_back(f.shape);
        out.fill_labels.push_back(f.fill);
        out.position_labels.push_back(f.position);
    }
    return out;
}

std::pair<LabeledImages, LabeledImages> generate_paired_domains(
    const SyntheticSpec& spec) {
    spec.validate();
    Rng rng(spec.seed);
    std::vector<int> combos(static_cast<size_t>(spec.count));
    for (int64_t i = 0; i < spec.count; ++i)
        combos[static_cast<size_t>(i)] = static_cast<int>(i % 8);
    std::shuffle(combos.begin(), combos.end(), rng.engine());

    LabeledImages src, tgt;
    src.images = Tensor::full({spec.count, 1, spec.resolution, spec.resolution},
                              -1.0);
    tgt.images = src.images;
    for (int64_t i = 0; i < spec.count; ++i) {
        int c = combos[static_cast<size_t>(i)];
        Factors base{c % 2, 0, c / 2};
        draw(src.images, i, spec.resolution, base);
        Factors filled = base;
        filled.fill = 1;
        draw(tgt.images, i, spec.resolution, filled);
        for (LabeledImages* d : {&src, &tgt}) {
            d->shape_labels.push_back(base.shape);
            d->position_labels.push_back(base.position);
        }
        src.fill_labels.push_back(0);
        tgt.fill_labels.push_back(1);
    }
    return {std::move(src), std::move(tgt)};
}

void save_labels(const LabeledImages& data, const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "index,shape,fill,position\n";
    for (size_t i = 0; i < data.shape_labels.size(); ++i)
        out << i << ',' << data.shape_labels[i] << ',' << data.fill_labels[i]
            << ',' << data.position_labels[i] << '\n';
    if (!out) throw IoError("write failed for " + path);
}

std::vector<std::vector<int>> load_labels(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("labels file empty: " + path);
    std::vector<std::vector<int>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::vector<int> row;
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            try {
                row.push_back(std::stoi(cell));
            } catch (const std::exception&) {
                throw DataError("labels file has non-integer cell: " + cell);
            }
        }
        if (row.size() != 4)
            throw DataError("labels file row has wrong arity in " + path);
        rows.push_back(std::move(row));
    }
    return rows;
}

}  // namespace dmz::data
