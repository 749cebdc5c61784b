// Copyright 2026 The DPM Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/**
 * @file data.hpp
 * @brief Synthetic live/spoof datasets with semantic labels, noise injectors
 * that record ground-truth provenance, and the line-delimited dataset format.
 *
 * Label convention: c = 1 is live, c = 0 is spoof. The category named
 * `spoof_type` is special: live samples are drawn from one cluster and spoof
 * samples from one sub-cluster per spoof type, and the label only carries
 * meaning for spoof samples (live samples store 0 and are never supervised on
 * it). Every other category applies to all samples and shifts features by a
 * per-label offset.
 */

#pragma once

#include "dpm/common.hpp"
#include "dpm/random.hpp"

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace dpm {

inline constexpr int kLive = 1;
inline constexpr int kSpoof = 0;
inline constexpr const char* kSpoofCategory = "spoof_type";

enum class LabelProvenance { annotated, self_distributed };

inline const char* to_string(LabelProvenance p) {
    return p == LabelProvenance::annotated ? "annotated" : "self_distributed";
}

struct Category {
    std::string name;
    int cardinality = 0;
    LabelProvenance provenance = LabelProvenance::annotated;

    bool spoof_only() const { return name == kSpoofCategory; }
    bool operator==(const Category&) const = default;
};

struct NoiseFlags {
    bool label_flipped = false;
    bool semantic_reassigned = false;
    bool data_corrupted = false;
    double corruption_severity = 0.0;

    unsigned bits() const {
        return (label_flipped ? 1u : 0u) | (semantic_reassigned ? 2u : 0u) | (data_corrupted ? 4u : 0u);
    }
    static NoiseFlags from_bits(unsigned b, double severity) {
        return NoiseFlags{(b & 1u) != 0, (b & 2u) != 0, (b & 4u) != 0, severity};
    }
    bool clean() const { return bits() == 0; }
    bool operator==(const NoiseFlags&) const = default;
};

struct Sample {
    int64_t id = 0;
    std::vector<double> x;
    int c = kSpoof;
    std::vector<int> s;  // aligned with Dataset::categories
    NoiseFlags flags;

    bool operator==(const Sample&) const = default;
};

struct Dataset {
    std::vector<Sample> samples;
    int feature_dim = 0;
    std::vector<Category> categories;
    uint64_t seed_provenance = 0;

    size_t size() const { return samples.size(); }
    bool empty() const { return samples.empty(); }

    std::optional<size_t> find_category(const std::string& name) const {
        for (size_t k = 0; k < categories.size(); ++k)
            if (categories[k].name == name) return k;
        return std::nullopt;
    }

    size_t category_index(const std::string& name) const {
        auto k = find_category(name);
        if (!k) throw ConfigError("unknown semantic category '" + name + "'");
        return *k;
    }

    /// Whether sample i carries a meaningful label for category k.
    bool supervised(size_t i, size_t k) const {
        return !categories[k].spoof_only() || samples[i].c == kSpoof;
    }

    Matrix features() const {
        Matrix m(static_cast<Eigen::Index>(samples.size()), feature_dim);
        for (size_t i = 0; i < samples.size(); ++i)
            for (int j = 0; j < feature_dim; ++j) m(static_cast<Eigen::Index>(i), j) = samples[i].x[j];
        return m;
    }

    std::vector<int> live_labels() const {
        std::vector<int> out(samples.size());
        for (size_t i = 0; i < samples.size(); ++i) out[i] = samples[i].c;
        return out;
    }

    /// Throws DataError on any broken invariant.
    void validate() const {
        if (feature_dim < 1) throw DataError("feature_dim must be >= 1");
        for (size_t i = 0; i < samples.size(); ++i) {
            const Sample& smp = samples[i];
            const std::string where = "sample " + std::to_string(smp.id);
            if (smp.id != static_cast<int64_t>(i)) throw DataError(where + ": ids must be dense [0, N)");
            if (static_cast<int>(smp.x.size()) != feature_dim) throw DataError(where + ": wrong feature count");
            if (smp.c != kLive && smp.c != kSpoof) throw DataError(where + ": live/spoof label must be 0 or 1");
            if (smp.s.size() != categories.size()) throw DataError(where + ": wrong semantic label count");
            for (size_t k = 0; k < categories.size(); ++k)
                if (smp.s[k] < 0 || smp.s[k] >= categories[k].cardinality)
                    throw DataError(where + ": label out of range for category '" + categories[k].name + "'");
        }
    }

    bool operator==(const Dataset&) const = default;
};

/// Noise regimes applied on top of a clean dataset.
struct NoiseSpec {
    double semantic_noise_fraction = 0.0;
    double binary_label_flip_fraction = 0.0;
    double data_noise_fraction = 0.0;
    double data_noise_severity = 0.0;
    double cluster_overlap = 0.0;

    void validate() const {
        auto frac = [](double f, const char* what) {
            require(f >= 0.0 && f <= 1.0, std::string(what) + " must lie in [0, 1]");
        };
        frac(semantic_noise_fraction, "semantic_noise_fraction");
        frac(binary_label_flip_fraction, "binary_label_flip_fraction");
        frac(data_noise_fraction, "data_noise_fraction");
        require(data_noise_severity >= 0.0, "data_noise_severity must be >= 0");
        require(cluster_overlap >= 0.0, "cluster_overlap must be >= 0");
    }
};

struct GeneratorOptions {
    double center_radius = 3.0;    // norm of the live and spoof centers
    double subtype_radius = 0.3;   // norm of the random part of each spoof-type offset
    double subtype_spacing = 2.5;  // spacing of spoof-type centers along the live-to-spoof axis
    double offset_radius = 1.5;    // norm of a non-spoof semantic offset
    double within_stddev = 1.0;
    uint64_t sample_stream = 0;    // datasets differing only here share their cluster centers
};

/// Live samples come from one Gaussian cluster, spoof samples from one
/// sub-cluster per spoof type arranged around a common spoof center;
/// n_per_class samples each. Spoof types are ordered along the live-to-spoof
/// axis, so type 0 is the hardest to tell from live. All center and offset
/// norms are scaled by 1/(1+overlap).
inline Dataset generate_synthetic(int n_per_class, int dim, const std::vector<Category>& categories,
                                  double cluster_overlap, uint64_t seed, const GeneratorOptions& opt = {}) {
    require(n_per_class >= 1, "n_per_class must be >= 1");
    require(dim >= 2, "feature dimension must be >= 2");
    require(cluster_overlap >= 0.0, "cluster_overlap must be >= 0");
    require(opt.center_radius >= 0.0 && opt.subtype_radius >= 0.0 && opt.offset_radius >= 0.0 && opt.within_stddev >= 0.0,
            "generator radii and spread must be >= 0");
    for (const auto& cat : categories) require(cat.cardinality >= 2, "category '" + cat.name + "' needs cardinality >= 2");
    for (size_t a = 0; a < categories.size(); ++a)
        for (size_t b = a + 1; b < categories.size(); ++b)
            require(categories[a].name != categories[b].name, "duplicate category '" + categories[a].name + "'");

    Rng rng(derive_seed(seed, stream::kGenerate));
    const double scale = 1.0 / (1.0 + cluster_overlap);

    auto random_direction = [&](double radius) {
        std::vector<double> v(dim);
        double norm = 0.0;
        do {
            norm = 0.0;
            for (auto& e : v) {
                e = rng.normal();
                norm += e * e;
            }
        } while (norm == 0.0);
        norm = std::sqrt(norm);
        for (auto& e : v) e *= radius * scale / norm;
        return v;
    };

    Dataset ds;
    ds.feature_dim = dim;
    ds.categories = categories;
    ds.seed_provenance = seed;

    std::optional<size_t> spoof_k = ds.find_category(kSpoofCategory);
    const int n_spoof_types = spoof_k ? categories[*spoof_k].cardinality : 1;

    const auto live_center = random_direction(opt.center_radius);
    const auto spoof_center = random_direction(opt.center_radius);
    std::vector<double> axis(dim);
    double axis_norm = 0.0;
    for (int j = 0; j < dim; ++j) {
        axis[j] = spoof_center[j] - live_center[j];
        axis_norm += axis[j] * axis[j];
    }
    axis_norm = std::sqrt(axis_norm);
    std::vector<std::vector<double>> spoof_centers;
    for (int t = 0; t < n_spoof_types; ++t) {
        auto c = random_direction(opt.subtype_radius);
        const double along = (t - 0.5 * (n_spoof_types - 1)) * opt.subtype_spacing * scale;
        for (int j = 0; j < dim; ++j) c[j] += spoof_center[j] + (axis_norm > 0.0 ? along * axis[j] / axis_norm : 0.0);
        spoof_centers.push_back(std::move(c));
    }
    std::vector<std::vector<std::vector<double>>> offsets(categories.size());
    for (size_t k = 0; k < categories.size(); ++k) {
        if (spoof_k && k == *spoof_k) continue;
        for (int a = 0; a < categories[k].cardinality; ++a) offsets[k].push_back(random_direction(opt.offset_radius));
    }

    Rng draw(derive_seed(derive_seed(seed, stream::kGenerate), opt.sample_stream + 1));
    auto emit = [&](int c, int spoof_type, const std::vector<double>& center) {
        Sample smp;
        smp.id = static_cast<int64_t>(ds.samples.size());
        smp.c = c;
        smp.s.assign(categories.size(), 0);
        smp.x = center;
        for (size_t k = 0; k < categories.size(); ++k) {
            if (spoof_k && k == *spoof_k) {
                smp.s[k] = spoof_type;
                continue;
            }
            const int label = static_cast<int>(draw.below(static_cast<uint64_t>(categories[k].cardinality)));
            smp.s[k] = label;
            for (int j = 0; j < dim; ++j) smp.x[j] += offsets[k][label][j];
        }
        for (int j = 0; j < dim; ++j) smp.x[j] += opt.within_stddev * draw.normal();
        ds.samples.push_back(std::move(smp));
    };

    for (int i = 0; i < n_per_class; ++i) emit(kLive, 0, live_center);
    for (int t = 0; t < n_spoof_types; ++t)
        for (int i = 0; i < n_per_class; ++i) emit(kSpoof, t, spoof_centers[t]);
    return ds;
}

/// Uniformly re-draws the label (possibly to the same value) for
/// round(fraction * eligible) samples. For the spoof-type category only spoof
/// samples are eligible.
inline Dataset inject_semantic_label_noise(Dataset ds, double fraction, uint64_t seed,
                                           const std::string& category = kSpoofCategory) {
    require(fraction >= 0.0 && fraction <= 1.0, "semantic noise fraction must lie in [0, 1]");
    if (ds.categories.empty() || fraction == 0.0) return ds;
    const size_t k = ds.find_category(category).value_or(0);

    std::vector<size_t> eligible;
    for (size_t i = 0; i < ds.size(); ++i)
        if (ds.supervised(i, k)) eligible.push_back(i);

    Rng rng(derive_seed(seed, stream::kSemanticNoise));
    const auto picked = rng.choose(eligible.size(), count_for_fraction(fraction, eligible.size()));
    const auto card = static_cast<uint64_t>(ds.categories[k].cardinality);
    for (size_t p : picked) {
        Sample& smp = ds.samples[eligible[p]];
        smp.s[k] = static_cast<int>(rng.below(card));
        smp.flags.semantic_reassigned = true;
    }
    return ds;
}

inline Dataset inject_binary_label_noise(Dataset ds, double fraction, uint64_t seed) {
    require(fraction >= 0.0 && fraction <= 1.0, "binary label noise fraction must lie in [0, 1]");
    if (fraction == 0.0) return ds;
    Rng rng(derive_seed(seed, stream::kBinaryNoise));
    for (size_t i : rng.choose(ds.size(), count_for_fraction(fraction, ds.size()))) {
        Sample& smp = ds.samples[i];
        smp.c = 1 - smp.c;
        smp.flags.label_flipped = true;
    }
    return ds;
}

/// Moving average over neighbouring feature coordinates, truncated at the edges.
inline std::vector<double> smooth_features(const std::vector<double>& x, int window) {
    require(window >= 1, "smoothing window must be >= 1");
    if (window == 1) return x;
    const int n = static_cast<int>(x.size());
    const int half = window / 2;
    std::vector<double> out(x.size());
    for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        int cnt = 0;
        for (int t = std::max(0, j - half); t <= std::min(n - 1, j + half); ++t) {
            acc += x[t];
            ++cnt;
        }
        out[j] = acc / cnt;
    }
    return out;
}

/// Feature-space analogue of blurring an image: smooth then add
/// N(0, severity^2) per coordinate, for round(fraction * N) samples.
inline Dataset inject_data_noise(Dataset ds, double fraction, double severity, uint64_t seed, int window = 3) {
    require(fraction >= 0.0 && fraction <= 1.0, "data noise fraction must lie in [0, 1]");
    require(severity >= 0.0, "data noise severity must be >= 0");
    require(window >= 1, "smoothing window must be >= 1");
    if (fraction == 0.0) return ds;
    Rng rng(derive_seed(seed, stream::kDataNoise));
    for (size_t i : rng.choose(ds.size(), count_for_fraction(fraction, ds.size()))) {
        Sample& smp = ds.samples[i];
        smp.x = smooth_features(smp.x, window);
        if (severity > 0.0)
            for (double& v : smp.x) v += severity * rng.normal();
        smp.flags.data_corrupted = true;
        smp.flags.corruption_severity = std::max(smp.flags.corruption_severity, severity);
    }
    return ds;
}

/// Applies all three injectors with seeds derived from `seed`.
inline Dataset apply_noise(Dataset ds, const NoiseSpec& spec, uint64_t seed) {
    spec.validate();
    ds = inject_semantic_label_noise(std::move(ds), spec.semantic_noise_fraction, derive_seed(seed, 101));
    ds = inject_binary_label_noise(std::move(ds), spec.binary_label_flip_fraction, derive_seed(seed, 102));
    ds = inject_data_noise(std::move(ds), spec.data_noise_fraction, spec.data_noise_severity, derive_seed(seed, 103));
    return ds;
}

// ---------------------------------------------------------------------------
// File format
//
//   dpm-dataset v1 D=<D> seed=<seed> categories=<name>:<A>:<provenance>;...
//   <id>,<x_0>,...,<x_{D-1}>,<c>,<s_1>,...,<s_K>,<flag bits>,<severity>
//
// Flag bits: 1 = label flipped, 2 = semantic reassigned, 4 = data corrupted.
// ---------------------------------------------------------------------------

inline void write_dataset(std::ostream& os, const Dataset& ds) {
    os << "dpm-dataset v1 D=" << ds.feature_dim << " seed=" << ds.seed_provenance << " categories=";
    for (size_t k = 0; k < ds.categories.size(); ++k) {
        if (k) os << ';';
        os << ds.categories[k].name << ':' << ds.categories[k].cardinality << ':' << to_string(ds.categories[k].provenance);
    }
    os << '\n';
    for (const Sample& smp : ds.samples) {
        os << smp.id;
        for (double v : smp.x) os << ',' << format_real(v);
        os << ',' << smp.c;
        for (int s : smp.s) os << ',' << s;
        os << ',' << smp.flags.bits() << ',' << format_real(smp.flags.corruption_severity) << '\n';
    }
}

inline Dataset read_dataset(std::istream& is, const std::string& source = "dataset") {
    std::string line;
    if (!std::getline(is, line) || line.empty()) throw DataError(source + ": empty dataset file");

    Dataset ds;
    {
        std::istringstream hs(line);
        std::string magic, version, tok;
        hs >> magic >> version;
        if (magic != "dpm-dataset" || version != "v1") throw ParseError(source + ":1", "missing 'dpm-dataset v1' header");
        bool have_d = false, have_seed = false;
        while (hs >> tok) {
            auto eq = tok.find('=');
            if (eq == std::string::npos) throw ParseError(source + ":1", "bad header token '" + tok + "'");
            std::string key = tok.substr(0, eq), val = tok.substr(eq + 1);
            if (key == "D") {
                have_d = parse_int(val, ds.feature_dim) && ds.feature_dim >= 1;
                if (!have_d) throw ParseError(source + ":1", "bad D");
            } else if (key == "seed") {
                have_seed = parse_int(val, ds.seed_provenance);
                if (!have_seed) throw ParseError(source + ":1", "bad seed");
            } else if (key == "categories") {
                if (val.empty()) continue;
                for (auto part : split(val, ';')) {
                    auto fields = split(part, ':');
                    Category cat;
                    if (fields.size() != 3 || fields[0].empty() || !parse_int(fields[1], cat.cardinality))
                        throw ParseError(source + ":1", "bad category '" + std::string(part) + "'");
                    cat.name = std::string(fields[0]);
                    if (fields[2] == "annotated") cat.provenance = LabelProvenance::annotated;
                    else if (fields[2] == "self_distributed") cat.provenance = LabelProvenance::self_distributed;
                    else throw ParseError(source + ":1", "bad provenance '" + std::string(fields[2]) + "'");
                    ds.categories.push_back(cat);
                }
            } else {
                throw ParseError(source + ":1", "unknown header key '" + key + "'");
            }
        }
        if (!have_d || !have_seed) throw ParseError(source + ":1", "header must declare D and seed");
    }

    const size_t n_fields = 1 + static_cast<size_t>(ds.feature_dim) + 1 + ds.categories.size() + 2;
    size_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = split(line, ',');
        Sample smp;
        const bool id_ok = !fields.empty() && parse_int(fields[0], smp.id);
        const std::string where = source + ":" + std::to_string(line_no) +
                                  (id_ok ? " (row id " + std::to_string(smp.id) + ")" : std::string());
        if (!id_ok) throw ParseError(where, "bad id field");
        if (fields.size() != n_fields)
            throw ParseError(where, "expected " + std::to_string(n_fields) + " fields (D=" +
                                        std::to_string(ds.feature_dim) + "), got " + std::to_string(fields.size()));
        size_t f = 1;
        smp.x.resize(ds.feature_dim);
        for (int j = 0; j < ds.feature_dim; ++j, ++f)
            if (!parse_real(fields[f], smp.x[j])) throw ParseError(where, "bad x_" + std::to_string(j));
        if (!parse_int(fields[f++], smp.c)) throw ParseError(where, "bad c");
        smp.s.resize(ds.categories.size());
        for (size_t k = 0; k < ds.categories.size(); ++k, ++f)
            if (!parse_int(fields[f], smp.s[k])) throw ParseError(where, "bad label for '" + ds.categories[k].name + "'");
        unsigned bits = 0;
        double severity = 0.0;
        if (!parse_int(fields[f++], bits) || bits > 7) throw ParseError(where, "bad flags");
        if (!parse_real(fields[f], severity)) throw ParseError(where, "bad severity");
        smp.flags = NoiseFlags::from_bits(bits, severity);
        ds.samples.push_back(std::move(smp));
    }
    if (ds.samples.empty()) throw DataError(source + ": empty dataset (no records)");
    try {
        ds.validate();
    } catch (const DataError& e) {
        throw ParseError(source, e.what());
    }
    return ds;
}

inline void save_dataset(const Dataset& ds, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open '" + path + "' for writing");
    write_dataset(os, ds);
    if (!os) throw DataError("write failed for '" + path + "'");
}

inline Dataset load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open '" + path + "'");
    return read_dataset(is, path);
}

}  // namespace dpm
