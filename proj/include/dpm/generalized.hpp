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
 * @file generalized.hpp
 * @brief Self-labeling: a tagger trained on a label-sufficient dataset assigns
 * semantic labels to a label-deficient one, which is then trained on as usual.
 */

#pragma once

#include "dpm/experiment.hpp"

#include <concepts>
#include <optional>
#include <string>
#include <vector>

namespace dpm {

/// Anything that maps feature rows to labels of one category.
template <typename T>
concept SemanticTagger = requires(const T& t, const Matrix& x) {
    { t.predict(x) } -> std::convertible_to<std::vector<int>>;
    { t.cardinality() } -> std::convertible_to<int>;
};

struct TaggerConfig {
    StageConfig train{"adam", 1e-3, 50, 64};
    std::vector<int> hidden{64, 64};
    int embed_dim = 32;
    uint64_t seed = 0;
};

/// The model's MLP with a single semantic classifier on top.
class TaggerModel {
public:
    TaggerModel(ModelParams params, std::string category, int cardinality)
        : params_(std::move(params)), category_(std::move(category)), cardinality_(cardinality) {}

    std::vector<int> predict(const Matrix& x) const {
        const Matrix logits = semantic_logits(params_, category_, embed(params_, x));
        std::vector<int> out(static_cast<size_t>(logits.rows()));
        for (Eigen::Index i = 0; i < logits.rows(); ++i) logits.row(i).maxCoeff(&out[static_cast<size_t>(i)]);
        return out;
    }

    int cardinality() const { return cardinality_; }
    const std::string& category() const { return category_; }
    const ModelParams& params() const { return params_; }

private:
    ModelParams params_;
    std::string category_;
    int cardinality_;
};

namespace detail {
inline std::vector<size_t> eligible_rows(const Dataset& ds, size_t k) {
    std::vector<size_t> rows;
    for (size_t i = 0; i < ds.size(); ++i)
        if (ds.supervised(i, k)) rows.push_back(i);
    return rows;
}
}  // namespace detail

/// Supervised training of the category classifier on the rows the category
/// applies to. Rejects categories whose eligible rows carry a single label.
inline TaggerModel train_tagger(const Dataset& d_suf, const std::string& category, const TaggerConfig& cfg = {}) {
    const size_t k = d_suf.category_index(category);
    const auto rows = detail::eligible_rows(d_suf, k);
    if (rows.empty()) throw ConfigError("category '" + category + "' has no labeled samples to train a tagger on");
    bool varied = false;
    for (size_t r : rows) varied = varied || d_suf.samples[r].s[k] != d_suf.samples[rows.front()].s[k];
    if (!varied) throw ConfigError("category '" + category + "' has a single label in the training data; cannot train a tagger");

    TrainConfig tc;
    tc.stage1 = cfg.train;
    tc.hidden = cfg.hidden;
    tc.embed_dim = cfg.embed_dim;
    tc.seed = cfg.seed;
    tc.validate();

    const Category cat = d_suf.categories[k];
    ModelParams p = init_params(ModelSpec{d_suf.feature_dim, cfg.hidden, cfg.embed_dim, {cat}},
                                derive_seed(cfg.seed, stream::kTagger));
    AdamState adam = make_adam_state(p);
    const TensorFilter trainable = [](const std::string& n) { return is_backbone(n) || n.rfind("omega_s.", 0) == 0; };

    const Matrix x_all = d_suf.features();
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        const auto order = detail::epoch_order(rows.size(), cfg.seed, stream::kTagger, epoch);
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.train.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.train.batch_size));
            std::vector<int> idx;
            std::vector<int> labels;
            for (size_t r = start; r < stop; ++r) {
                idx.push_back(static_cast<int>(rows[order[r]]));
                labels.push_back(d_suf.samples[rows[order[r]]].s[k]);
            }
            BackboneTrace trace;
            const Matrix mu = embed(p, detail::gather_rows(x_all, idx), &trace);
            CeGrad g;
            const LossValue loss = semantic_ce_deterministic(mu, p.omega_s[0], labels, &g);
            detail::check_divergence(loss.total, tc, 1, epoch + 1, "tagger " + format_real(loss.total));
            ModelParams grad = p.zeros_like();
            grad.omega_s[0] = g.d_omega;
            embed_backward(p, trace, g.d_input, grad);
            adam_step(p, grad, adam, tc, cfg.train.lr, trainable);
        }
    }
    return TaggerModel(std::move(p), cat.name, cat.cardinality);
}

/// Fraction of the category's eligible rows on which the tagger reproduces the stored label.
template <SemanticTagger T>
double tagger_accuracy(const T& tagger, const Dataset& ds, const std::string& category) {
    const size_t k = ds.category_index(category);
    const auto rows = detail::eligible_rows(ds, k);
    if (rows.empty()) throw DataError("no labeled samples for category '" + category + "'");
    const auto pred = tagger.predict(ds.features());
    size_t ok = 0;
    for (size_t r : rows) ok += pred[r] == ds.samples[r].s[k];
    return static_cast<double>(ok) / static_cast<double>(rows.size());
}

struct SelfLabelResult {
    Dataset dataset;                         // category filled with tagged labels
    std::vector<std::optional<int>> original; // prior annotation per sample, when the input carried the category
    std::optional<double> agreement;         // fraction of tagged rows equal to the prior annotation
    size_t n_tagged = 0;
};

/// Tags every eligible sample of `d_def` with the tagger's argmax. The
/// category is appended if missing; its provenance becomes self_distributed.
/// Features and live/spoof labels are left untouched.
template <SemanticTagger T>
SelfLabelResult self_label(const T& tagger, const Dataset& d_def, const std::string& category) {
    SelfLabelResult out;
    out.dataset = d_def;
    Dataset& ds = out.dataset;
    auto k_opt = ds.find_category(category);
    const bool annotated = k_opt.has_value();
    if (!annotated) {
        ds.categories.push_back(Category{category, tagger.cardinality(), LabelProvenance::self_distributed});
        for (auto& s : ds.samples) s.s.push_back(0);
        k_opt = ds.categories.size() - 1;
    } else if (ds.categories[*k_opt].cardinality != tagger.cardinality()) {
        throw ConfigError("tagger cardinality " + std::to_string(tagger.cardinality()) + " differs from category '" + category +
                          "' cardinality " + std::to_string(ds.categories[*k_opt].cardinality));
    }
    const size_t k = *k_opt;
    ds.categories[k].provenance = LabelProvenance::self_distributed;

    const auto pred = tagger.predict(ds.features());
    require_shape(pred.size() == ds.size(), "tagger returned the wrong number of labels");
    out.original.assign(ds.size(), std::nullopt);
    size_t agree = 0;
    for (size_t i = 0; i < ds.size(); ++i) {
        if (!ds.supervised(i, k)) continue;
        if (pred[i] < 0 || pred[i] >= tagger.cardinality()) throw DataError("tagger produced an out-of-range label");
        if (annotated) {
            out.original[i] = d_def.samples[i].s[k];
            agree += pred[i] == d_def.samples[i].s[k];
        }
        ds.samples[i].s[k] = pred[i];
        ++out.n_tagged;
    }
    if (annotated && out.n_tagged) out.agreement = static_cast<double>(agree) / static_cast<double>(out.n_tagged);
    return out;
}

struct GeneralizedOptions {
    std::string category = kSpoofCategory;
    TaggerConfig tagger{};
    double holdout_fraction = 0.2;  // part of D_suf held out to score the tagger
    bool compare_arms = false;      // also train and score all four arms
    double threshold = 0.5;
};

struct GeneralizedReport {
    double tagger_holdout_accuracy = 0.0;
    std::optional<double> agreement;
    Dataset labeled_train;
    ModelParams params;
    EvalReport report;
    std::vector<ArmResult> arms;  // filled when compare_arms
};

/// Trains on the self-labeled training split with the given tagger and scores on the test split.
template <SemanticTagger T>
GeneralizedReport run_generalized_with_tagger(const T& tagger, const Dataset& d_def_train, const Dataset& d_def_test,
                                              const TrainConfig& cfg, const GeneralizedOptions& opt = {}) {
    GeneralizedReport rep;
    SelfLabelResult sl = self_label(tagger, d_def_train, opt.category);
    rep.agreement = sl.agreement;
    rep.labeled_train = std::move(sl.dataset);
    const TrainResult tr = train_full_dpm(rep.labeled_train, cfg);
    rep.params = tr.params;
    rep.report = evaluate_predictions(predict_dataset(tr.params, d_def_test, cfg.enable_dq), d_def_test, opt.threshold);
    if (opt.compare_arms)
        for (Arm arm : all_arms()) rep.arms.push_back(run_arm(rep.labeled_train, d_def_test, cfg, arm, opt.threshold));
    return rep;
}

/// Tagger on D_suf, self-labels on D_def, then the full two-stage model.
inline GeneralizedReport run_generalized_pipeline(const Dataset& d_suf, const Dataset& d_def_train, const Dataset& d_def_test,
                                                  const TrainConfig& cfg, GeneralizedOptions opt = {}) {
    opt.tagger.seed = cfg.seed;
    auto [fit, holdout] = train_test_split(d_suf, opt.holdout_fraction, derive_seed(cfg.seed, stream::kTagger));
    const TaggerModel tagger = train_tagger(fit, opt.category, opt.tagger);
    GeneralizedReport rep = run_generalized_with_tagger(tagger, d_def_train, d_def_test, cfg, opt);
    rep.tagger_holdout_accuracy = tagger_accuracy(tagger, holdout, opt.category);
    return rep;
}

/// Label-sufficient sibling of the default benchmark: same cluster directions,
/// fresh samples, tighter clusters and a slightly different center scale.
inline Dataset make_label_sufficient(const BenchmarkSpec& spec, uint64_t seed) {
    GeneratorOptions g = spec.generator;
    g.sample_stream = 1;
    g.within_stddev *= 0.75;
    return generate_synthetic(spec.n_per_class, spec.dim, spec.categories(), spec.overlap + 0.25, seed, g);
}

}  // namespace dpm
