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

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <sstream>

namespace {

using namespace dpm;

struct Scored {
    std::vector<double> scores;
    std::vector<int> labels;
};

// Random instance with both classes present; coarse rounding forces ties.
Scored random_instance(Rng& rng, size_t n, bool ties) {
    Scored s;
    for (size_t i = 0; i < n; ++i) {
        const int label = i < 2 ? static_cast<int>(i) : static_cast<int>(rng.below(2));
        double v = std::clamp(0.5 + 0.25 * rng.normal() + (label == kLive ? 0.1 : -0.1), 0.0, 1.0);
        if (ties) v = std::round(v * 20.0) / 20.0;
        s.scores.push_back(v);
        s.labels.push_back(label);
    }
    return s;
}

TEST(Rates, Counting) {
    std::vector<double> p(60, 0.1);
    std::vector<int> y(60, kSpoof);
    for (int i = 50; i < 60; ++i) p[static_cast<size_t>(i)] = 0.9, y[static_cast<size_t>(i)] = kLive;
    p[0] = p[1] = p[2] = 0.5;  // 3 of 50 spoof accepted at the threshold
    EXPECT_DOUBLE_EQ(apcer(p, y), 6.0);
    EXPECT_EQ(bpcer(p, y), 0.0);
    p[55] = 0.49;
    EXPECT_DOUBLE_EQ(bpcer(p, y), 10.0);
    EXPECT_DOUBLE_EQ(apcer(p, y, 0.6), 0.0);
}

TEST(Rates, PerfectClassifier) {
    const std::vector<double> p{0.9, 0.8, 0.2, 0.1};
    const std::vector<int> y{kLive, kLive, kSpoof, kSpoof};
    const EvalReport r = evaluate(p, y);
    EXPECT_EQ(r.apcer, 0.0);
    EXPECT_EQ(r.bpcer, 0.0);
    EXPECT_EQ(r.acer, 0.0);
    EXPECT_EQ(r.hter, 0.0);
    EXPECT_EQ(r.auc, 1.0);
}

TEST(Rates, AcerOfFixedRates) {
    EXPECT_NEAR(acer(2.29, 0.96), 1.625, 1e-12);
    EXPECT_NEAR(std::round(acer(2.29, 0.96) * 100.0) / 100.0, 1.63, 1e-12);
}

TEST(Rates, HterEqualsAcerAndSymmetricErrors) {
    // 1 of 10 live rejected, 1 of 10 spoof accepted.
    std::vector<double> p;
    std::vector<int> y;
    for (int i = 0; i < 10; ++i) p.push_back(i == 0 ? 0.2 : 0.8), y.push_back(kLive);
    for (int i = 0; i < 10; ++i) p.push_back(i == 0 ? 0.7 : 0.3), y.push_back(kSpoof);
    EXPECT_DOUBLE_EQ(hter(p, y), 10.0);
    Rng rng(1);
    for (int t = 0; t < 20; ++t) {
        const Scored s = random_instance(rng, 50, false);
        const EvalReport r = evaluate(s.scores, s.labels, 0.4);
        EXPECT_EQ(r.hter, r.acer);
        EXPECT_EQ(r.acer, (r.apcer + r.bpcer) / 2.0);
    }
}

TEST(Rates, EmptyClassIsUndefined) {
    const std::vector<double> p{0.9, 0.8};
    const std::vector<int> live{kLive, kLive};
    EXPECT_THROW(apcer(p, live), MetricError);
    EXPECT_THROW(roc_sweep(p, live), MetricError);
    const std::vector<int> spoof{kSpoof, kSpoof};
    EXPECT_THROW(bpcer(p, spoof), MetricError);
}

TEST(TprAtFpr, WorkedExample) {
    const std::vector<double> p{0.9, 0.8, 0.7, 0.1};
    const std::vector<int> y{kLive, kLive, kSpoof, kSpoof};
    const TprAtFpr v = tpr_at_fpr(p, y, 0.5);
    EXPECT_EQ(v.tpr, 1.0);
    EXPECT_GT(v.threshold, 0.7);
    EXPECT_EQ(v.fpr, 0.0);
}

TEST(TprAtFpr, SeparatedScoresReachFullTpr) {
    const std::vector<double> p{0.99, 0.95, 0.9, 0.3, 0.2, 0.01};
    const std::vector<int> y{kLive, kLive, kLive, kSpoof, kSpoof, kSpoof};
    for (double t : {0.01, 0.1, 0.5, 0.9}) EXPECT_EQ(tpr_at_fpr(p, y, t).tpr, 1.0);
    EXPECT_THROW(tpr_at_fpr(p, y, 0.0), ConfigError);
    EXPECT_THROW(tpr_at_fpr(p, y, 1.0), ConfigError);
}

TEST(TprAtFpr, UnattainableTargetIsFlagged) {
    const std::vector<double> p{0.9, 0.1};
    const std::vector<int> y{kLive, kSpoof};
    EXPECT_FALSE(tpr_at_fpr(p, y, 0.01).attainable);
    const EvalReport r = evaluate(p, y);
    EXPECT_EQ(r.warnings.size(), default_fpr_targets().size());
}

TEST(TprAtFpr, MatchesExhaustiveEnumeration) {
    Rng rng(2);
    for (int t = 0; t < 100; ++t) {
        const Scored s = random_instance(rng, 2 + rng.below(999), t % 2 == 0);
        for (double target : {0.01, 0.05, 0.2, 0.5}) {
            const TprAtFpr v = tpr_at_fpr(s.scores, s.labels, target);
            const oracle::BruteTpr b = oracle::brute_tpr_at_fpr(s.scores, s.labels, target);
            ASSERT_EQ(v.tpr, b.tpr) << "instance " << t;
            ASSERT_EQ(v.threshold, b.threshold) << "instance " << t;
        }
    }
}

TEST(Roc, EndpointsMonotoneAndTiesCollapse) {
    const std::vector<double> p{0.8, 0.8, 0.8, 0.2, 0.5};
    const std::vector<int> y{kLive, kSpoof, kLive, kSpoof, kLive};
    const auto roc = roc_sweep(p, y);
    ASSERT_EQ(roc.size(), 5u);  // +inf, three distinct scores, -inf
    EXPECT_EQ(roc.front().fpr, 0.0);
    EXPECT_EQ(roc.front().tpr, 0.0);
    EXPECT_EQ(roc.back().fpr, 1.0);
    EXPECT_EQ(roc.back().tpr, 1.0);
    for (size_t i = 1; i < roc.size(); ++i) {
        EXPECT_LT(roc[i].threshold, roc[i - 1].threshold);
        EXPECT_GE(roc[i].fpr, roc[i - 1].fpr);
        EXPECT_GE(roc[i].tpr, roc[i - 1].tpr);
    }
}

TEST(Roc, AucMatchesPairwiseOracle) {
    Rng rng(3);
    for (int t = 0; t < 100; ++t) {
        const Scored s = random_instance(rng, 100, t % 2 == 1);
        EXPECT_NEAR(roc_auc(roc_sweep(s.scores, s.labels)), oracle::pairwise_auc(s.scores, s.labels), 1e-12);
    }
}

TEST(Metrics, PermutationInvariant) {
    Rng rng(4);
    Scored s = random_instance(rng, 200, true);
    const EvalReport a = evaluate(s.scores, s.labels, 0.45);
    std::vector<size_t> idx(s.scores.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    rng.shuffle(idx);
    Scored p;
    for (size_t i : idx) p.scores.push_back(s.scores[i]), p.labels.push_back(s.labels[i]);
    const EvalReport b = evaluate(p.scores, p.labels, 0.45);
    EXPECT_EQ(a.acer, b.acer);
    EXPECT_EQ(a.auc, b.auc);
    for (const auto& [k, v] : a.tpr_at_fpr) EXPECT_EQ(v.tpr, b.tpr_at_fpr.at(k).tpr);
}

TEST(Metrics, DumpFileMatchesInProcess) {
    Rng rng(5);
    const Scored s = random_instance(rng, 80, false);
    Dataset truth;
    truth.feature_dim = 1;
    std::vector<PredictionRecord> recs;
    for (size_t i = 0; i < s.scores.size(); ++i) {
        Sample smp;
        smp.id = static_cast<int64_t>(i);
        smp.x = {0.0};
        smp.c = s.labels[i];
        truth.samples.push_back(smp);
        recs.push_back({static_cast<int64_t>(i), s.scores[i], s.scores[i] >= 0.5 ? kLive : kSpoof, 1.0, false});
    }
    std::stringstream ss;
    write_predictions(ss, recs);
    const EvalReport from_file = evaluate_records(read_predictions(ss), truth);
    const EvalReport direct = evaluate(s.scores, s.labels);
    EXPECT_EQ(to_json(from_file).dump(), to_json(direct).dump());
    EXPECT_EQ(csv_row(from_file), csv_row(direct));
}

}  // namespace
