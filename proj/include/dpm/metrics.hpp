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
 * @file metrics.hpp
 * @brief Anti-spoofing error rates over p_live scores.
 *
 * Live is the positive class. A sample is accepted as live when
 * p_live >= threshold, so APCER (= FAR = FPR) is the accepted fraction of
 * spoof samples and BPCER (= FRR = 1 - TPR) the rejected fraction of live
 * samples. All rates are returned in percent.
 */

#pragma once

#include "dpm/common.hpp"
#include "dpm/data.hpp"
#include "dpm/inference.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace dpm {

struct ClassCounts {
    size_t live = 0;
    size_t spoof = 0;
};

namespace detail {
inline ClassCounts count_classes(std::span<const double> scores, std::span<const int> labels) {
    require_shape(scores.size() == labels.size(), "score count differs from label count");
    ClassCounts cc;
    for (int l : labels) {
        if (l == kLive) ++cc.live;
        else if (l == kSpoof) ++cc.spoof;
        else throw DataError("live/spoof label must be 0 or 1");
    }
    return cc;
}
}  // namespace detail

inline double apcer(std::span<const double> p_live, std::span<const int> labels, double threshold = 0.5) {
    const auto cc = detail::count_classes(p_live, labels);
    if (cc.spoof == 0) throw MetricError("APCER undefined: no spoof samples");
    size_t accepted = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == kSpoof && p_live[i] >= threshold) ++accepted;
    return 100.0 * static_cast<double>(accepted) / static_cast<double>(cc.spoof);
}

inline double bpcer(std::span<const double> p_live, std::span<const int> labels, double threshold = 0.5) {
    const auto cc = detail::count_classes(p_live, labels);
    if (cc.live == 0) throw MetricError("BPCER undefined: no live samples");
    size_t rejected = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (labels[i] == kLive && p_live[i] < threshold) ++rejected;
    return 100.0 * static_cast<double>(rejected) / static_cast<double>(cc.live);
}

inline double acer(double apcer_pct, double bpcer_pct) { return (apcer_pct + bpcer_pct) / 2.0; }

/// (FAR + FRR) / 2 at the given threshold.
inline double hter(std::span<const double> p_live, std::span<const int> labels, double threshold = 0.5) {
    return (apcer(p_live, labels, threshold) + bpcer(p_live, labels, threshold)) / 2.0;
}

struct RocPoint {
    double threshold;
    double fpr;
    double tpr;
};

/// One point per distinct score plus the +inf / -inf sentinels, ordered by
/// decreasing threshold (so fpr and tpr are non-decreasing along the list).
inline std::vector<RocPoint> roc_sweep(std::span<const double> p_live, std::span<const int> labels) {
    const auto cc = detail::count_classes(p_live, labels);
    if (cc.live == 0 || cc.spoof == 0) throw MetricError("ROC undefined: both classes required");
    std::vector<size_t> order(p_live.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return p_live[a] > p_live[b]; });

    std::vector<RocPoint> roc;
    roc.push_back({std::numeric_limits<double>::infinity(), 0.0, 0.0});
    size_t tp = 0, fp = 0;
    for (size_t i = 0; i < order.size();) {
        const double t = p_live[order[i]];
        while (i < order.size() && p_live[order[i]] == t) {
            if (labels[order[i]] == kLive) ++tp;
            else ++fp;
            ++i;
        }
        roc.push_back({t, static_cast<double>(fp) / static_cast<double>(cc.spoof),
                       static_cast<double>(tp) / static_cast<double>(cc.live)});
    }
    roc.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
    return roc;
}

/// Trapezoidal area under the ROC.
inline double roc_auc(const std::vector<RocPoint>& roc) {
    double area = 0.0;
    for (size_t i = 1; i < roc.size(); ++i) area += (roc[i].fpr - roc[i - 1].fpr) * (roc[i].tpr + roc[i - 1].tpr) / 2.0;
    return area;
}

struct TprAtFpr {
    double tpr = 0.0;
    double threshold = std::numeric_limits<double>::infinity();
    double fpr = 0.0;
    bool attainable = true;  // false when the spoof count cannot resolve the target
};

/// Highest TPR over thresholds with FPR <= target; among thresholds reaching
/// that TPR the highest one is reported.
inline TprAtFpr tpr_at_fpr(std::span<const double> p_live, std::span<const int> labels, double fpr_target) {
    if (!(fpr_target > 0.0 && fpr_target < 1.0)) throw ConfigError("fpr_target must lie in (0, 1)");
    const auto cc = detail::count_classes(p_live, labels);
    if (cc.live == 0 || cc.spoof == 0) throw MetricError("TPR@FPR undefined: both classes required");
    TprAtFpr best;
    for (const RocPoint& pt : roc_sweep(p_live, labels)) {
        if (pt.fpr > fpr_target) break;
        if (pt.tpr > best.tpr) {
            best.tpr = pt.tpr;
            best.threshold = pt.threshold;
            best.fpr = pt.fpr;
        }
    }
    best.attainable = static_cast<double>(cc.spoof) * fpr_target >= 1.0;
    return best;
}

struct EvalReport {
    double apcer = 0.0;
    double bpcer = 0.0;
    double acer = 0.0;
    double hter = 0.0;
    std::map<double, TprAtFpr> tpr_at_fpr;
    std::vector<RocPoint> roc;
    double auc = 0.0;
    double threshold_used = 0.5;
    size_t n_live = 0;
    size_t n_spoof = 0;
    std::vector<std::string> warnings;
};

inline const std::vector<double>& default_fpr_targets() {
    static const std::vector<double> targets{0.01, 0.005, 0.001};
    return targets;
}

inline EvalReport evaluate(std::span<const double> p_live, std::span<const int> labels, double threshold = 0.5,
                           const std::vector<double>& fpr_targets = default_fpr_targets()) {
    EvalReport r;
    const auto cc = detail::count_classes(p_live, labels);
    r.n_live = cc.live;
    r.n_spoof = cc.spoof;
    r.threshold_used = threshold;
    r.apcer = apcer(p_live, labels, threshold);
    r.bpcer = bpcer(p_live, labels, threshold);
    r.acer = acer(r.apcer, r.bpcer);
    r.hter = hter(p_live, labels, threshold);
    r.roc = roc_sweep(p_live, labels);
    r.auc = roc_auc(r.roc);
    for (double t : fpr_targets) {
        auto v = tpr_at_fpr(p_live, labels, t);
        if (!v.attainable) r.warnings.push_back("TPR@FPR=" + format_real(t) + " unattainable with " + std::to_string(cc.spoof) + " spoof samples");
        r.tpr_at_fpr[t] = v;
    }
    return r;
}

/// Joins a prediction dump with ground-truth labels by id.
inline EvalReport evaluate_records(const std::vector<PredictionRecord>& recs, const Dataset& truth, double threshold = 0.5) {
    std::vector<double> scores;
    std::vector<int> labels;
    scores.reserve(recs.size());
    labels.reserve(recs.size());
    for (const auto& r : recs) {
        if (r.id < 0 || static_cast<size_t>(r.id) >= truth.size())
            throw DataError("prediction id " + std::to_string(r.id) + " not present in dataset");
        scores.push_back(r.p_live);
        labels.push_back(truth.samples[static_cast<size_t>(r.id)].c);
    }
    return evaluate(scores, labels, threshold);
}

namespace detail {
inline nlohmann::json real_json(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    return v;
}
}  // namespace detail

inline nlohmann::ordered_json to_json(const EvalReport& r, bool include_roc = true) {
    nlohmann::ordered_json j;
    j["apcer"] = r.apcer;
    j["bpcer"] = r.bpcer;
    j["acer"] = r.acer;
    j["hter"] = r.hter;
    j["auc"] = r.auc;
    j["threshold_used"] = r.threshold_used;
    j["n_live"] = r.n_live;
    j["n_spoof"] = r.n_spoof;
    auto& t = j["tpr_at_fpr"] = nlohmann::ordered_json::array();
    for (const auto& [fpr, v] : r.tpr_at_fpr)
        t.push_back({{"fpr_target", fpr}, {"tpr", v.tpr}, {"threshold", detail::real_json(v.threshold)}, {"attainable", v.attainable}});
    if (include_roc) {
        auto& roc = j["roc"] = nlohmann::ordered_json::array();
        for (const auto& p : r.roc) roc.push_back({detail::real_json(p.threshold), p.fpr, p.tpr});
    }
    j["warnings"] = r.warnings;
    return j;
}

inline std::string csv_header() { return "apcer,bpcer,acer,hter,auc,threshold,n_live,n_spoof"; }

inline std::string csv_row(const EvalReport& r) {
    return format_real(r.apcer) + "," + format_real(r.bpcer) + "," + format_real(r.acer) + "," + format_real(r.hter) + "," +
           format_real(r.auc) + "," + format_real(r.threshold_used) + "," + std::to_string(r.n_live) + "," +
           std::to_string(r.n_spoof);
}

}  // namespace dpm
