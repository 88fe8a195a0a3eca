#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "models.hpp"
#include "wbfuse/model.hpp"

namespace wbfuse {
namespace {

DenseLayer dense(std::size_t out, std::size_t in)
{
    return {Matrix(out, in, 0.1), std::vector<double>(out, 0.0)};
}

RecurrentLayer recurrent(std::size_t hidden, std::size_t in)
{
    return {Matrix(hidden, in, 0.1), Matrix(hidden, hidden, 0.1), std::vector<double>(hidden, 0.0)};
}

TEST(Validate, BuiltModelsAreValid)
{
    std::mt19937_64 rng(30);
    for (ArchTag arch : testing::kAllArchs) {
        const Model m = testing::random_model(arch, rng);
        EXPECT_TRUE(validate(m).empty()) << to_string(arch) << "\n" << format_report(validate(m));
        EXPECT_EQ(m.num_outputs(), 3u);
    }
}

TEST(Validate, DimensionChainBreakNamesBothLayers)
{
    Model m;
    m.input_dim = 3;
    m.layers = {dense(4, 3), dense(8, 5)};
    const auto report = validate(m);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_NE(report[0].where.find("layer 0"), std::string::npos);
    EXPECT_NE(report[0].where.find("layer 1"), std::string::npos);
}

TEST(Validate, LstmGateMismatchCitesGate)
{
    Model m;
    m.arch = ArchTag::lstm;
    m.input_dim = 2;
    LstmLayer l;
    for (auto& g : l.gates) {
        g = recurrent(4, 2);
    }
    l.gates[2] = recurrent(3, 2);
    m.layers = {l, dense(2, 4)};
    const auto report = validate(m);
    ASSERT_FALSE(report.empty());
    bool cites = false;
    for (const auto& v : report) {
        cites = cites || v.where.find("gate 2") != std::string::npos;
    }
    EXPECT_TRUE(cites) << format_report(report);
}

TEST(Validate, EmptyModelAndNonFiniteWeights)
{
    Model empty;
    empty.input_dim = 2;
    EXPECT_FALSE(validate(empty).empty());

    Model m;
    m.input_dim = 2;
    m.layers = {dense(2, 2)};
    std::get<DenseLayer>(m.layers[0]).weight(1, 0) = std::numeric_limits<double>::quiet_NaN();
    const auto report = validate(m);
    ASSERT_EQ(report.size(), 1u);
    EXPECT_NE(report[0].message.find("non-finite"), std::string::npos);
}

TEST(Validate, TypeInvariants)
{
    auto invalid = [](Model m) { return !validate(m).empty(); };
    Model base;
    base.input_dim = 2;

    Model bias = base;
    bias.layers = {DenseLayer{Matrix(2, 2), {0.0}}};
    EXPECT_TRUE(invalid(bias));

    Model rnn = base;
    rnn.arch = ArchTag::rnn;
    RecurrentLayer r = recurrent(3, 2);
    r.hidden_weight = Matrix(3, 2);
    rnn.layers = {r, dense(1, 3)};
    EXPECT_TRUE(invalid(rnn));

    Model mixed = base;
    mixed.arch = ArchTag::mlp;
    mixed.layers = {recurrent(3, 2), dense(1, 3)};
    EXPECT_TRUE(invalid(mixed));

    Model no_head = base;
    no_head.arch = ArchTag::rnn;
    no_head.layers = {recurrent(3, 2)};
    EXPECT_TRUE(invalid(no_head));

    Model res = base;
    res.arch = ArchTag::resmlp;
    ResidualBlock block{{dense(3, 2), dense(3, 3)}, 0};
    res.layers = {dense(2, 2), block, dense(1, 3)};
    EXPECT_TRUE(invalid(res));  // skip source width 2, block output 3
    std::get<ResidualBlock>(res.layers[1]).inner = {dense(3, 2), dense(2, 3)};
    res.layers[2] = dense(1, 2);
    EXPECT_FALSE(invalid(res)) << format_report(validate(res));
    std::get<ResidualBlock>(res.layers[1]).skip_source = 1;
    EXPECT_TRUE(invalid(res));  // not an earlier layer

    Model cnn = base;
    cnn.arch = ArchTag::cnn;
    cnn.input_dim = 8;
    cnn.input_shape = {2, 2, 2};
    cnn.layers = {ConvLayer{FilterBank(3, 2, 2), std::vector<double>(3, 0.0)}, dense(1, 12)};
    EXPECT_TRUE(invalid(cnn));  // even kernel
    cnn.layers[0] = ConvLayer{FilterBank(3, 2, 3), std::vector<double>(3, 0.0)};
    EXPECT_FALSE(invalid(cnn)) << format_report(validate(cnn));
    cnn.input_shape = {2, 2, 3};
    EXPECT_TRUE(invalid(cnn));
}

TEST(Tensors, FlattenRoundTripAndOrder)
{
    std::mt19937_64 rng(31);
    for (ArchTag arch : testing::kAllArchs) {
        const Model m = testing::random_model(arch, rng);
        const std::vector<double> flat = flatten(m);
        EXPECT_EQ(flat.size(), parameter_count(m));
        EXPECT_EQ(unflatten(m, flat), m);
        EXPECT_EQ(flatten(zeros_like(m)), std::vector<double>(flat.size(), 0.0));
    }
    Model m = testing::random_model(ArchTag::lstm, rng);
    std::vector<std::string> names;
    for_each_tensor(std::as_const(m), [&](std::size_t, const std::string& name, const std::vector<std::size_t>&,
                                          std::span<const double>) { names.push_back(name); });
    ASSERT_EQ(names.size(), 14u);
    EXPECT_EQ(names[0], "input.input_weight");
    EXPECT_EQ(names[4], "forget.hidden_weight");
    EXPECT_EQ(names[11], "output.bias");
    EXPECT_EQ(names[12], "weight");
    EXPECT_THROW(unflatten(m, std::vector<double>(3)), ContractViolation);
}

TEST(BuildModel, FanInScalingAndForgetBias)
{
    std::mt19937_64 rng(32);
    ModelSpec spec = testing::small_spec(ArchTag::lstm);
    spec.hidden = {64};
    const Model m = build_model(spec, rng);
    const auto& l = std::get<LstmLayer>(m.layers[0]);
    EXPECT_EQ(l.gate(Gate::forget).bias, std::vector<double>(64, 1.0));
    EXPECT_EQ(l.gate(Gate::input).bias, std::vector<double>(64, 0.0));
    double ss = 0.0;
    for (double v : l.gate(Gate::cell).hidden_weight.data()) {
        ss += v * v;
    }
    EXPECT_NEAR(ss / (64.0 * 64.0), 1.0 / 64.0, 0.2 / 64.0);
}

TEST(BuildModel, DeterministicGivenSeed)
{
    for (ArchTag arch : testing::kAllArchs) {
        std::mt19937_64 a(7), b(7);
        EXPECT_EQ(build_model(testing::small_spec(arch), a), build_model(testing::small_spec(arch), b));
    }
}

} // namespace
} // namespace wbfuse
