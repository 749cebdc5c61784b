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
 * @file experiment.hpp
 * @brief Ablation arms, the default synthetic benchmark, and the noise sweep
 * shared by the CLI and the acceptance suite.
 */

#pragma once

#include "dpm/data.hpp"
#include "dpm/inference.hpp"
#include "dpm/metrics.hpp"
#include "dpm/training.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>
#include <vector>

namespace dpm {

enum class Arm { baseline, s, s_lq, s_lq_dq };

inline const std::vector<Arm>& all_arms() {
    static const std::vector<Arm> arms{Arm::baseline, Arm::s, Arm::s_lq, Arm::s_lq_dq};
    return arms;
}

inline std::string to_string(Arm a) {
    switch (a) {
        case Arm::baseline: return "baseline";
        case Arm::s: return "s";
        case Arm::s_lq: return "s-lq";
        case Arm::s_lq_dq: return "s-lq-dq";
    }
    return "?";
}

inline Arm parse_arm(const std::string& s) {
    for (Arm a : all_arms())
        if (to_string(a) == s) return a;
    throw ConfigError("unknown arm '" + s + "' (expected baseline, s, s-lq or s-lq-dq)");
}

/// Maps an arm one-to-one onto the enable bits of the config.
inline TrainConfig apply_arm(TrainConfig cfg, Arm arm) {
    cfg.enable_semantic = arm != Arm::baseline;
    cfg.enable_lq = arm == Arm::s_lq || arm == Arm::s_lq_dq;
    cfg.enable_dq = arm == Arm::s_lq_dq;
    return cfg;
}

inline Arm arm_of(const TrainConfig& cfg) {
    if (!cfg.enable_semantic) return Arm::baseline;
    if (!cfg.enable_lq) return Arm::s;
    return cfg.enable_dq ? Arm::s_lq_dq : Arm::s_lq;
}

/// Random partition into (train, test); ids are renumbered densely.
inline std::pair<Dataset, Dataset> train_test_split(const Dataset& ds, double test_fraction, uint64_t seed) {
    require(test_fraction > 0.0 && test_fraction < 1.0, "test_fraction must lie in (0, 1)");
    Rng rng(derive_seed(seed, 31));
    std::vector<size_t> order(ds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    const size_t n_test = count_for_fraction(test_fraction, ds.size());
    Dataset train = ds, test = ds;
    train.samples.clear();
    test.samples.clear();
    for (size_t r = 0; r < order.size(); ++r) {
        Dataset& dst = r < n_test ? test : train;
        Sample smp = ds.samples[order[r]];
        smp.id = static_cast<int64_t>(dst.samples.size());
        dst.samples.push_back(std::move(smp));
    }
    return {std::move(train), std::move(test)};
}

/// The default desk-scale benchmark: 200 samples per cluster (800 total),
/// split evenly into train and test.
struct BenchmarkSpec {
    int dim = 16;
    int spoof_types = 3;
    int n_per_class = 200;  // before the train/test split
    double test_fraction = 0.5;
    double overlap = 0.0;
    GeneratorOptions generator{};
    double data_noise_severity = 2.0;

    std::vector<Category> categories() const { return {Category{kSpoofCategory, spoof_types}}; }
};

/// Training defaults for the benchmark. Stage 1 uses lr 1e-3: with a few
/// hundred samples an epoch is only a handful of steps, and 1e-4 leaves the
/// backbone far from converged after 50 epochs.
inline TrainConfig benchmark_config(uint64_t seed = 0) {
    TrainConfig cfg;
    cfg.stage1.lr = 1e-3;
    cfg.seed = seed;
    return cfg;
}

struct BenchmarkData {
    Dataset train;
    Dataset test;
};

inline BenchmarkData make_benchmark(const BenchmarkSpec& spec, uint64_t seed) {
    Dataset all = generate_synthetic(spec.n_per_class, spec.dim, spec.categories(), spec.overlap, seed, spec.generator);
    auto [train, test] = train_test_split(all, spec.test_fraction, seed);
    return {std::move(train), std::move(test)};
}

/// Injected noise for one experiment cell. Label noise touches only the
/// training split; data noise corrupts both splits independently.
struct NoiseSetting {
    double semantic = 0.0;
    double binary = 0.0;
    double data = 0.0;
};

inline BenchmarkData make_noisy_benchmark(const BenchmarkSpec& spec, const NoiseSetting& noise, uint64_t seed) {
    BenchmarkData b = make_benchmark(spec, seed);
    b.train = inject_semantic_label_noise(std::move(b.train), noise.semantic, derive_seed(seed, 201));
    b.train = inject_binary_label_noise(std::move(b.train), noise.binary, derive_seed(seed, 202));
    b.train = inject_data_noise(std::move(b.train), noise.data, spec.data_noise_severity, derive_seed(seed, 203));
    b.test = inject_data_noise(std::move(b.test), noise.data, spec.data_noise_severity, derive_seed(seed, 204));
    return b;
}

struct ArmResult {
    Arm arm = Arm::baseline;
    EvalReport report;
    TrainResult training;
    std::vector<Prediction> predictions;
};

/// The corrected (data-quality damped) confidence is used exactly when the
/// arm trains stage 2.
inline bool arm_uses_correction(Arm a) { return a == Arm::s_lq_dq; }

inline std::vector<Prediction> predict_dataset(const ModelParams& p, const Dataset& ds, bool corrected) {
    return predict_batch(p, ds.features(), corrected).predictions;
}

inline EvalReport evaluate_predictions(const std::vector<Prediction>& preds, const Dataset& ds, double threshold) {
    std::vector<double> scores(preds.size());
    for (size_t i = 0; i < preds.size(); ++i) scores[i] = preds[i].p_live();
    return evaluate(scores, ds.live_labels(), threshold);
}

inline ArmResult run_arm(const Dataset& train, const Dataset& test, const TrainConfig& base, Arm arm, double threshold = 0.5) {
    ArmResult r;
    r.arm = arm;
    r.training = train_full_dpm(train, apply_arm(base, arm));
    r.predictions = predict_dataset(r.training.params, test, arm_uses_correction(arm));
    r.report = evaluate_predictions(r.predictions, test, threshold);
    return r;
}

// ---------------------------------------------------------------------------
// Noise sweep
// ---------------------------------------------------------------------------

enum class NoiseKind { semantic, binary, data };

inline std::string to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::semantic: return "semantic";
        case NoiseKind::binary: return "binary";
        case NoiseKind::data: return "data";
    }
    return "?";
}

inline NoiseKind parse_noise_kind(const std::string& s) {
    for (NoiseKind k : {NoiseKind::semantic, NoiseKind::binary, NoiseKind::data})
        if (to_string(k) == s) return k;
    throw ConfigError("unknown noise kind '" + s + "' (expected semantic, binary or data)");
}

inline std::vector<double> default_fractions(NoiseKind k) {
    if (k == NoiseKind::data) return {0.0, 0.1, 0.2, 0.3, 0.5};
    return {0.0, 0.2, 0.5, 0.7, 1.0};
}

inline NoiseSetting noise_of(NoiseKind k, double fraction) {
    NoiseSetting n;
    (k == NoiseKind::semantic ? n.semantic : k == NoiseKind::binary ? n.binary : n.data) = fraction;
    return n;
}

struct SweepSpec {
    BenchmarkSpec benchmark{};
    TrainConfig base = benchmark_config();
    std::vector<NoiseKind> kinds{NoiseKind::semantic};
    std::vector<double> fractions;  // empty: the kind's defaults
    std::vector<Arm> arms = all_arms();
    std::vector<uint64_t> seeds{1, 2, 3, 4, 5};
    double threshold = 0.5;
};

struct SweepRow {
    NoiseKind kind = NoiseKind::semantic;
    double fraction = 0.0;
    Arm arm = Arm::baseline;
    uint64_t seed = 0;
    double acer = 0.0;
    double apcer = 0.0;
    double bpcer = 0.0;
};

/// Rows in canonical order: kind, fraction, arm, seed (as listed in the spec).
inline std::vector<SweepRow> run_noise_sweep(const SweepSpec& spec) {
    require(!spec.seeds.empty(), "noise sweep needs at least one seed");
    require(!spec.arms.empty(), "noise sweep needs at least one arm");
    std::vector<SweepRow> rows;
    for (NoiseKind kind : spec.kinds) {
        const auto fractions = spec.fractions.empty() ? default_fractions(kind) : spec.fractions;
        for (double f : fractions) {
            require(f >= 0.0 && f <= 1.0, "noise fractions must lie in [0, 1]");
            for (Arm arm : spec.arms)
                for (uint64_t seed : spec.seeds) {
                    const BenchmarkData b = make_noisy_benchmark(spec.benchmark, noise_of(kind, f), seed);
                    TrainConfig cfg = spec.base;
                    cfg.seed = seed;
                    const ArmResult r = run_arm(b.train, b.test, cfg, arm, spec.threshold);
                    rows.push_back({kind, f, arm, seed, r.report.acer, r.report.apcer, r.report.bpcer});
                }
        }
    }
    return rows;
}

struct SweepCell {
    NoiseKind kind = NoiseKind::semantic;
    double fraction = 0.0;
    Arm arm = Arm::baseline;
    size_t n = 0;
    double acer_mean = 0.0, acer_std = 0.0;
    double apcer_mean = 0.0, apcer_std = 0.0;
    double bpcer_mean = 0.0, bpcer_std = 0.0;
};

/// Mean and sample standard deviation per (kind, fraction, arm), in first-seen order.
inline std::vector<SweepCell> summarize_sweep(const std::vector<SweepRow>& rows) {
    std::vector<SweepCell> cells;
    std::vector<std::vector<const SweepRow*>> members;
    for (const auto& r : rows) {
        auto it = std::find_if(cells.begin(), cells.end(),
                               [&](const SweepCell& c) { return c.kind == r.kind && c.fraction == r.fraction && c.arm == r.arm; });
        if (it == cells.end()) {
            cells.push_back({r.kind, r.fraction, r.arm});
            members.emplace_back();
            it = cells.end() - 1;
        }
        members[static_cast<size_t>(it - cells.begin())].push_back(&r);
    }
    auto stats = [](const std::vector<const SweepRow*>& m, double SweepRow::*field, double& mean, double& sd) {
        mean = 0.0;
        for (const auto* r : m) mean += r->*field;
        mean /= static_cast<double>(m.size());
        double ss = 0.0;
        for (const auto* r : m) ss += (r->*field - mean) * (r->*field - mean);
        sd = m.size() > 1 ? std::sqrt(ss / static_cast<double>(m.size() - 1)) : 0.0;
    };
    for (size_t i = 0; i < cells.size(); ++i) {
        cells[i].n = members[i].size();
        stats(members[i], &SweepRow::acer, cells[i].acer_mean, cells[i].acer_std);
        stats(members[i], &SweepRow::apcer, cells[i].apcer_mean, cells[i].apcer_std);
        stats(members[i], &SweepRow::bpcer, cells[i].bpcer_mean, cells[i].bpcer_std);
    }
    return cells;
}

inline void write_sweep_rows(std::ostream& os, const std::vector<SweepRow>& rows) {
    os << "noise_kind,fraction,arm,seed,acer,apcer,bpcer\n";
    for (const auto& r : rows)
        os << to_string(r.kind) << ',' << format_real(r.fraction) << ',' << to_string(r.arm) << ',' << r.seed << ','
           << format_real(r.acer) << ',' << format_real(r.apcer) << ',' << format_real(r.bpcer) << '\n';
}

inline void write_sweep_summary(std::ostream& os, const std::vector<SweepCell>& cells) {
    os << "noise_kind,fraction,arm,n,acer_mean,acer_std,apcer_mean,apcer_std,bpcer_mean,bpcer_std\n";
    for (const auto& c : cells)
        os << to_string(c.kind) << ',' << format_real(c.fraction) << ',' << to_string(c.arm) << ',' << c.n << ','
           << format_real(c.acer_mean) << ',' << format_real(c.acer_std) << ',' << format_real(c.apcer_mean) << ','
           << format_real(c.apcer_std) << ',' << format_real(c.bpcer_mean) << ',' << format_real(c.bpcer_std) << '\n';
}

// ---------------------------------------------------------------------------
// Quality report
// ---------------------------------------------------------------------------

struct QualityRow {
    int64_t id = 0;
    int c = kSpoof;
    bool corrupted = false;
    double severity = 0.0;
    double sigma_d_sq = 1.0;
};

struct QualityHistogram {
    std::vector<double> edges;  // bins + 1 edges; the last bin is closed
    std::vector<size_t> clean;
    std::vector<size_t> corrupted;
};

struct QualityReport {
    std::vector<QualityRow> rows;
    QualityHistogram histogram;
    size_t n_clean = 0;
    size_t n_corrupted = 0;
    double mean_clean = 0.0;      // NaN when the group is empty
    double mean_corrupted = 0.0;  // NaN when the group is empty
};

inline QualityHistogram quality_histogram(const std::vector<QualityRow>& rows, int bins) {
    require(bins >= 1, "histogram needs at least one bin");
    QualityHistogram h;
    h.clean.assign(static_cast<size_t>(bins), 0);
    h.corrupted.assign(static_cast<size_t>(bins), 0);
    double lo = rows.front().sigma_d_sq, hi = lo;
    for (const auto& r : rows) {
        lo = std::min(lo, r.sigma_d_sq);
        hi = std::max(hi, r.sigma_d_sq);
    }
    if (hi == lo) hi = lo + 1.0;
    const double width = (hi - lo) / bins;
    for (int b = 0; b <= bins; ++b) h.edges.push_back(b == bins ? hi : lo + b * width);
    for (const auto& r : rows) {
        auto b = static_cast<size_t>(std::clamp(static_cast<int>((r.sigma_d_sq - lo) / width), 0, bins - 1));
        ++(r.corrupted ? h.corrupted : h.clean)[b];
    }
    return h;
}

/// Per-sample sigma_D^2 with corruption provenance, plus a binned histogram.
inline QualityReport quality_report(const ModelParams& p, const Dataset& ds, int bins = 20) {
    if (ds.empty()) throw DataError("quality report needs a non-empty dataset");
    const Vector q = predict_batch(p, ds.features(), true).embeddings.sigma_d_sq;
    QualityReport rep;
    double sum_clean = 0.0, sum_corrupted = 0.0;
    for (size_t i = 0; i < ds.size(); ++i) {
        const Sample& s = ds.samples[i];
        const double v = q(static_cast<Eigen::Index>(i));
        rep.rows.push_back({s.id, s.c, s.flags.data_corrupted, s.flags.corruption_severity, v});
        if (s.flags.data_corrupted) {
            ++rep.n_corrupted;
            sum_corrupted += v;
        } else {
            ++rep.n_clean;
            sum_clean += v;
        }
    }
    rep.mean_clean = rep.n_clean ? sum_clean / static_cast<double>(rep.n_clean) : std::nan("");
    rep.mean_corrupted = rep.n_corrupted ? sum_corrupted / static_cast<double>(rep.n_corrupted) : std::nan("");
    rep.histogram = quality_histogram(rep.rows, bins);
    return rep;
}

inline void write_quality_rows(std::ostream& os, const std::vector<QualityRow>& rows) {
    os << "id,c,corrupted,severity,sigma_d_sq\n";
    for (const auto& r : rows)
        os << r.id << ',' << r.c << ',' << (r.corrupted ? 1 : 0) << ',' << format_real(r.severity) << ','
           << format_real(r.sigma_d_sq) << '\n';
}

inline void write_quality_histogram(std::ostream& os, const QualityHistogram& h) {
    os << "bin,lower,upper,clean,corrupted\n";
    for (size_t b = 0; b < h.clean.size(); ++b)
        os << b << ',' << format_real(h.edges[b]) << ',' << format_real(h.edges[b + 1]) << ',' << h.clean[b] << ','
           << h.corrupted[b] << '\n';
}

}  // namespace dpm
