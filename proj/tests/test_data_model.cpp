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

#include <set>
#include <sstream>

namespace {

using namespace dpm;

const std::vector<Category> kSpoofOnly{{kSpoofCategory, 3}};

std::set<int64_t> flagged(const Dataset& ds, bool NoiseFlags::*field) {
    std::set<int64_t> out;
    for (const auto& s : ds.samples)
        if (s.flags.*field) out.insert(s.id);
    return out;
}

// Leave-one-out 1-NN error on the spoof-type label of spoof samples.
double nn_semantic_error(const Dataset& ds) {
    std::vector<size_t> spoof;
    for (size_t i = 0; i < ds.size(); ++i)
        if (ds.samples[i].c == kSpoof) spoof.push_back(i);
    size_t wrong = 0;
    for (size_t a : spoof) {
        double best = std::numeric_limits<double>::infinity();
        size_t arg = a;
        for (size_t b : spoof) {
            if (a == b) continue;
            double d = 0.0;
            for (int j = 0; j < ds.feature_dim; ++j) d += std::pow(ds.samples[a].x[j] - ds.samples[b].x[j], 2);
            if (d < best) best = d, arg = b;
        }
        wrong += ds.samples[arg].s[0] != ds.samples[a].s[0];
    }
    return static_cast<double>(wrong) / static_cast<double>(spoof.size());
}

// ---------------------------------------------------------------------------
// Generator and injectors
// ---------------------------------------------------------------------------

TEST(Generator, CountsLiveAndSpoofPerType) {
    const Dataset ds = generate_synthetic(10, 2, kSpoofOnly, 0.0, 7);
    EXPECT_EQ(ds.size(), 40u);
    EXPECT_EQ(std::count_if(ds.samples.begin(), ds.samples.end(), [](const Sample& s) { return s.c == kLive; }), 10);
    std::vector<int> per_type(3, 0);
    for (const auto& s : ds.samples)
        if (s.c == kSpoof) ++per_type[static_cast<size_t>(s.s[0])];
    EXPECT_EQ(per_type, (std::vector<int>{10, 10, 10}));
    EXPECT_NO_THROW(ds.validate());
}

TEST(Generator, Deterministic) {
    EXPECT_EQ(generate_synthetic(10, 2, kSpoofOnly, 0.0, 7), generate_synthetic(10, 2, kSpoofOnly, 0.0, 7));
    EXPECT_NE(generate_synthetic(10, 2, kSpoofOnly, 0.0, 7), generate_synthetic(10, 2, kSpoofOnly, 0.0, 8));
}

TEST(Generator, OverlapIncreasesNearestNeighbourError) {
    // 250 live + 750 spoof = 1000 samples.
    const double tight = nn_semantic_error(generate_synthetic(250, 8, kSpoofOnly, 0.0, 3));
    const double loose = nn_semantic_error(generate_synthetic(250, 8, kSpoofOnly, 5.0, 3));
    EXPECT_GT(loose, tight);
}

TEST(Generator, RejectsBadArguments) {
    EXPECT_THROW(generate_synthetic(0, 2, kSpoofOnly, 0.0, 1), ConfigError);
    EXPECT_THROW(generate_synthetic(5, 1, kSpoofOnly, 0.0, 1), ConfigError);
    EXPECT_THROW(generate_synthetic(5, 2, {{kSpoofCategory, 1}}, 0.0, 1), ConfigError);
    EXPECT_THROW(generate_synthetic(5, 2, kSpoofOnly, -1.0, 1), ConfigError);
}

TEST(Generator, SampleStreamKeepsCenters) {
    GeneratorOptions other;
    other.sample_stream = 1;
    const Dataset a = generate_synthetic(400, 4, kSpoofOnly, 0.0, 9);
    const Dataset b = generate_synthetic(400, 4, kSpoofOnly, 0.0, 9, other);
    EXPECT_NE(a, b);
    // Same clusters: the live means agree to sampling error.
    RowVector ma = RowVector::Zero(4), mb = RowVector::Zero(4);
    const Matrix xa = a.features(), xb = b.features();
    for (int i = 0; i < 400; ++i) ma += xa.row(i), mb += xb.row(i);
    EXPECT_LT((ma - mb).norm() / 400.0, 0.3);
}

TEST(SemanticNoise, ZeroFractionIsIdentity) {
    const Dataset ds = generate_synthetic(10, 3, kSpoofOnly, 0.0, 1);
    EXPECT_EQ(inject_semantic_label_noise(ds, 0.0, 5), ds);
}

TEST(SemanticNoise, FullFractionFlagsEverySpoofSample) {
    // 100 spoof samples: 4 types x 25.
    const Dataset ds = generate_synthetic(25, 3, {{kSpoofCategory, 4}}, 0.0, 1);
    const Dataset noisy = inject_semantic_label_noise(ds, 1.0, 5);
    EXPECT_EQ(flagged(noisy, &NoiseFlags::semantic_reassigned).size(), 100u);
    for (const auto& s : noisy.samples) EXPECT_TRUE(s.c != kLive || !s.flags.semantic_reassigned);
}

TEST(SemanticNoise, DeterministicAndRounded) {
    const Dataset ds = generate_synthetic(11, 3, kSpoofOnly, 0.0, 1);  // 33 spoof
    const Dataset a = inject_semantic_label_noise(ds, 0.5, 5);
    EXPECT_EQ(flagged(a, &NoiseFlags::semantic_reassigned), flagged(inject_semantic_label_noise(ds, 0.5, 5), &NoiseFlags::semantic_reassigned));
    EXPECT_EQ(flagged(a, &NoiseFlags::semantic_reassigned).size(), 17u);  // round-half-up of 16.5
    EXPECT_THROW(inject_semantic_label_noise(ds, 1.5, 5), ConfigError);
}

TEST(BinaryNoise, CountsAndInvolution) {
    const Dataset ds = generate_synthetic(25, 3, kSpoofOnly, 0.0, 2);  // N = 100
    EXPECT_EQ(inject_binary_label_noise(ds, 0.0, 3), ds);
    EXPECT_EQ(flagged(inject_binary_label_noise(ds, 0.2, 3), &NoiseFlags::label_flipped).size(), 20u);
    const Dataset all = inject_binary_label_noise(ds, 1.0, 3);
    for (size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(all.samples[i].c, 1 - ds.samples[i].c);
    const Dataset back = inject_binary_label_noise(all, 1.0, 4);
    for (size_t i = 0; i < ds.size(); ++i) EXPECT_EQ(back.samples[i].c, ds.samples[i].c);
}

TEST(DataNoise, IdentityDegradation) {
    const Dataset ds = generate_synthetic(10, 5, kSpoofOnly, 0.0, 2);
    const Dataset out = inject_data_noise(ds, 1.0, 0.0, 3, 1);
    for (size_t i = 0; i < ds.size(); ++i) {
        EXPECT_EQ(out.samples[i].x, ds.samples[i].x);
        EXPECT_TRUE(out.samples[i].flags.data_corrupted);
    }
}

TEST(DataNoise, CountsAndProvenance) {
    const Dataset ds = generate_synthetic(50, 4, kSpoofOnly, 0.0, 2);  // N = 200
    const Dataset out = inject_data_noise(ds, 0.3, 2.0, 3);
    EXPECT_EQ(flagged(out, &NoiseFlags::data_corrupted).size(), 60u);
    EXPECT_EQ(out.size(), ds.size());
    EXPECT_EQ(out.feature_dim, ds.feature_dim);
    for (const auto& s : out.samples) EXPECT_EQ(s.flags.corruption_severity, s.flags.data_corrupted ? 2.0 : 0.0);
}

TEST(DataNoise, CorruptedSamplesLieFartherFromTheirCluster) {
    int wins = 0;
    for (uint64_t seed = 1; seed <= 5; ++seed) {
        const Dataset clean = generate_synthetic(50, 8, kSpoofOnly, 0.0, seed);
        const Dataset noisy = inject_data_noise(clean, 0.3, 2.0, seed + 100);
        // Cluster centers estimated from the clean data: key = spoof type, or -1 for live.
        std::map<int, std::pair<RowVector, int>> centers;
        auto key = [](const Sample& s) { return s.c == kLive ? -1 : s.s[0]; };
        const Matrix x = clean.features();
        for (size_t i = 0; i < clean.size(); ++i) {
            auto& [sum, n] = centers.try_emplace(key(clean.samples[i]), RowVector::Zero(8), 0).first->second;
            sum += x.row(static_cast<Eigen::Index>(i));
            ++n;
        }
        const Matrix xn = noisy.features();
        double d_clean = 0, d_bad = 0;
        int n_clean = 0, n_bad = 0;
        for (size_t i = 0; i < noisy.size(); ++i) {
            const auto& [sum, n] = centers.at(key(noisy.samples[i]));
            const double d = (xn.row(static_cast<Eigen::Index>(i)) - sum / n).norm();
            if (noisy.samples[i].flags.data_corrupted) d_bad += d, ++n_bad;
            else d_clean += d, ++n_clean;
        }
        wins += d_bad / n_bad > d_clean / n_clean;
    }
    EXPECT_GE(wins, 3);
}

TEST(ApplyNoise, AllInjectorsNeverChangeShape) {
    const Dataset ds = generate_synthetic(20, 4, {{kSpoofCategory, 3}, {"illumination", 4}}, 0.5, 2);
    NoiseSpec spec{0.5, 0.2, 0.3, 1.0, 0.0};
    const Dataset out = apply_noise(ds, spec, 4);
    EXPECT_EQ(out.size(), ds.size());
    EXPECT_EQ(out.categories, ds.categories);
    EXPECT_NO_THROW(out.validate());
    EXPECT_EQ(out, apply_noise(ds, spec, 4));
    EXPECT_EQ(apply_noise(ds, NoiseSpec{}, 4), ds);
}

// ---------------------------------------------------------------------------
// File format
// ---------------------------------------------------------------------------

TEST(DatasetIo, RoundTripIncludingFlags) {
    Dataset ds = generate_synthetic(15, 3, {{kSpoofCategory, 3}, {"illumination", 2}}, 1.0, 11);
    ds = apply_noise(ds, NoiseSpec{0.4, 0.1, 0.3, 2.0, 0.0}, 12);
    std::stringstream ss;
    write_dataset(ss, ds);
    EXPECT_EQ(read_dataset(ss), ds);
}

TEST(DatasetIo, WrongFeatureCountCitesRowId) {
    Dataset ds = generate_synthetic(2, 3, kSpoofOnly, 0.0, 1);
    std::stringstream ss;
    write_dataset(ss, ds);
    std::string text = ss.str();
    // Drop one feature from the record with id 3.
    const auto pos = text.find("\n3,");
    const auto comma = text.find(',', pos + 3);
    text.erase(pos + 3, comma - pos - 2);
    std::istringstream in(text);
    try {
        read_dataset(in, "f");
        FAIL() << "expected a parse error";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("row id 3"), std::string::npos) << e.what();
    }
}

TEST(DatasetIo, EmptyFileIsAnError) {
    std::istringstream empty("");
    EXPECT_THROW(read_dataset(empty), DataError);
    std::istringstream header_only("dpm-dataset v1 D=2 seed=0 categories=spoof_type:3:annotated\n");
    EXPECT_THROW(read_dataset(header_only), DataError);
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

ModelParams small_model(uint64_t seed = 1) { return init_params(ModelSpec{4, {6, 5}, 3, kSpoofOnly}, seed); }

TEST(Model, ZeroNetworkEmbedsToZero) {
    ModelParams p = small_model();
    p.for_each([](const std::string& n, Matrix& m) {
        if (is_backbone(n)) m.setZero();
    });
    Rng rng(3);
    EXPECT_EQ(embed(p, rng.normal_matrix(5, 4)), Matrix::Zero(5, 3));
}

TEST(Model, EmbedDeterministicAndPermutationEquivariant) {
    const ModelParams p = small_model();
    Rng rng(3);
    const Matrix x = rng.normal_matrix(6, 4);
    EXPECT_EQ(embed(p, x), embed(p, x));
    Matrix rev = x.colwise().reverse();
    EXPECT_TRUE(embed(p, rev).isApprox(Matrix(embed(p, x).colwise().reverse()), 1e-14));
    EXPECT_THROW(embed(p, rng.normal_matrix(2, 3)), DataError);
}

TEST(Model, VarianceHeadsStartAtOne) {
    const ModelParams p = small_model();
    Rng rng(4);
    const Matrix mu = rng.normal_matrix(5, 3);
    EXPECT_EQ(lq_variance(p, mu), Matrix::Ones(5, 3));
    EXPECT_EQ(dq_variance(p, mu), Vector::Ones(5));
}

TEST(Model, VarianceHeadsArePositive) {
    for (uint64_t seed = 0; seed < 1000; ++seed) {
        const ModelParams p = oracle::random_params(2, {2}, 3, seed);
        Rng rng(seed);
        const Matrix mu = rng.normal_matrix(2, 3, 3.0);
        ASSERT_TRUE((lq_variance(p, mu).array() > 0).all());
        ASSERT_TRUE((dq_variance(p, mu).array() > 0).all());
    }
}

TEST(Model, DqBiasShiftScalesVariance) {
    ModelParams p = oracle::random_params(2, {2}, 3, 5);
    Rng rng(1);
    const Matrix mu = rng.normal_matrix(4, 3);
    const Vector before = dq_variance(p, mu);
    p.dq_bias(0, 0) += 0.7;
    EXPECT_TRUE(dq_variance(p, mu).isApprox(before * std::exp(0.7), 1e-14));
}

TEST(Model, ClassifierLogits) {
    ModelParams p = small_model();
    p.omega_s[0] = Matrix::Identity(3, 3);
    RowVector z = RowVector::Zero(3);
    z(1) = 1.0;
    const Matrix logits = semantic_logits(p, kSpoofCategory, z);
    Eigen::Index arg;
    logits.row(0).maxCoeff(&arg);
    EXPECT_EQ(arg, 1);
    EXPECT_EQ(live_spoof_logits(p, Matrix::Zero(2, 3)), Matrix::Zero(2, 2));
    EXPECT_THROW(semantic_logits(p, "illumination", z), ConfigError);
}

TEST(Model, AnalyticGradientsMatchFiniteDifferences) {
    for (const auto& c : oracle::gradient_suite())
        for (uint64_t seed = 1; seed <= 10; ++seed) EXPECT_LT(c.run(seed), 1e-4) << c.name << " seed " << seed;
}

TEST(Model, TensorHashSeesEveryByte) {
    ModelParams p = small_model();
    const uint64_t h = tensor_hash(p, is_backbone);
    EXPECT_EQ(h, tensor_hash(small_model(), is_backbone));
    p.lq_bias(0, 0) = 1.0;
    EXPECT_EQ(h, tensor_hash(p, is_backbone));
    p.weights[0](0, 0) = std::nextafter(p.weights[0](0, 0), 1e9);
    EXPECT_NE(h, tensor_hash(p, is_backbone));
}

}  // namespace
