#include "test_support.hpp"

#include <gtest/gtest.h>

using namespace lst;
using lst::testing::random_block;
using lst::testing::random_matrix;

TEST(FcForward, IdentityMap) {
    FcLayer<double> fc(3, 3, Activation::none);
    fc.weight.setIdentity();
    const RealVector<double> x{{1.0, 2.0, 3.0}};
    EXPECT_EQ(fc_forward(fc, x), x);
}

TEST(FcForward, TanhOfZero) {
    FcLayer<double> fc(1, 1, Activation::tanh);
    fc.weight.setIdentity();
    EXPECT_EQ(fc_forward<double>(fc, RealVector<double>::Zero(1))(0), 0.0);
}

TEST(FcForward, BiasCancels) {
    FcLayer<double> fc(1, 1, Activation::tanh);
    fc.weight(0, 0) = 2.0;
    fc.bias(0) = -2.0;
    EXPECT_EQ(fc_forward<double>(fc, RealVector<double>::Ones(1))(0), 0.0);
}

TEST(FcForward, ShapeMismatch) {
    FcLayer<double> fc(3, 2, Activation::none);
    EXPECT_THROW(fc_forward<double>(fc, RealVector<double>::Zero(4)), Error);
}

TEST(LstForward, ZeroInputIdentityWeights) {
    LstBlock<double> block(28, 28);
    block.row.weight.setIdentity();
    block.col.weight.setIdentity();
    EXPECT_TRUE(lst_forward<double>(block, RealMatrix<double>::Zero(28, 28)).isZero(0.0));
}

TEST(LstForward, IdentityWeightsGiveDoubleTanh) {
    LstBlock<double> block(2, 2);
    block.row.weight.setIdentity();
    block.col.weight.setIdentity();
    const RealMatrix<double> x = RealMatrix<double>::Identity(2, 2);
    const RealMatrix<double> y = lst_forward(block, x);
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) EXPECT_DOUBLE_EQ(y(i, j), std::tanh(std::tanh(x(i, j))));
    }
}

TEST(LstForward, NonSquareBlockShapes) {
    Xoshiro256 rng(3);
    const auto block = random_block<double>(4, 3, rng);
    const RealMatrix<double> y = lst_forward(block, random_matrix<double>(4, 4, rng));
    EXPECT_EQ(y.rows(), 3);
    EXPECT_EQ(y.cols(), 3);
    EXPECT_THROW(lst_forward(block, random_matrix<double>(3, 3, rng)), Error);
}

// Loop form vs matrix form, 200 random (block, X) pairs over mixed sizes.
TEST(LstForward, LoopAndMatrixFormsAgree) {
    const std::size_t sizes[] = {1, 2, 3, 7, 28};
    Xoshiro256 rng(11);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t d_in = sizes[rng.bounded(5)];
        const std::size_t d_out = sizes[rng.bounded(5)];
        const auto block = random_block<double>(d_in, d_out, rng);
        const auto x = random_matrix<double>(d_in, d_in, rng);
        const RealMatrix<double> fast = lst_forward(block, x);
        const RealMatrix<double> slow = lst::testing::lst_loop_oracle(block, x);
        // Outputs live in [-1, 1]; relative error is taken against max(|y|, 1).
        for (Eigen::Index i = 0; i < fast.size(); ++i) {
            const double scale = std::max(std::abs(slow.data()[i]), 1.0);
            worst = std::max(worst, std::abs(fast.data()[i] - slow.data()[i]) / scale);
        }
    }
    EXPECT_LE(worst, 1e-12);
}

TEST(ResLstForward, ZeroBlockIsIdentity) {
    Xoshiro256 rng(1);
    const LstBlock<double> block(5, 5);
    for (int i = 0; i < 10; ++i) {
        const auto x = random_matrix<double>(5, 5, rng, -3, 3);
        EXPECT_EQ(res_lst_forward(block, x), x);
    }
}

TEST(ResLstForward, SkipOfZeroAndDefinition) {
    Xoshiro256 rng(2);
    const auto block = random_block<double>(4, 4, rng);
    const RealMatrix<double> zero = RealMatrix<double>::Zero(4, 4);
    EXPECT_EQ(res_lst_forward(block, zero), lst_forward(block, zero));
    const auto x = random_matrix<double>(4, 4, rng);
    EXPECT_TRUE((res_lst_forward(block, x) - x).isApprox(lst_forward(block, x), 1e-14));
    EXPECT_THROW(res_lst_forward(random_block<double>(4, 3, rng), x), Error);
}

TEST(Flatten, RowMajor) {
    RealMatrix<double> x(2, 2);
    x << 1, 2, 3, 4;
    const RealVector<double> v = flatten(x);
    EXPECT_EQ(v, (RealVector<double>{{1.0, 2.0, 3.0, 4.0}}));
    EXPECT_EQ(flatten<double>(RealMatrix<double>::Zero(28, 28)).size(), 784);
    RealMatrix<double> one_hot = RealMatrix<double>::Zero(28, 28);
    one_hot(5, 9) = 1.0;
    const RealVector<double> f = flatten(one_hot);
    EXPECT_EQ((f.array() != 0.0).count(), 1);
    EXPECT_EQ(f(5 * 28 + 9), 1.0);
}

TEST(Softmax, UniformOnZeros) {
    const RealVector<double> p = softmax<double>(RealVector<double>::Zero(10));
    for (int i = 0; i < 10; ++i) EXPECT_DOUBLE_EQ(p(i), 0.1);
}

TEST(Softmax, SumsToOneShiftInvariantArgmaxPreserving) {
    Xoshiro256 rng(77);
    for (int trial = 0; trial < 100; ++trial) {
        const RealVector<double> z = random_matrix<double>(10, 1, rng, -20, 20);
        const RealVector<double> p = softmax(z);
        EXPECT_NEAR(p.sum(), 1.0, 1e-12);
        const double c = rng.uniform(-500, 500);
        const RealVector<double> shifted = softmax(RealVector<double>((z.array() + c).matrix()));
        EXPECT_LE((p - shifted).cwiseAbs().maxCoeff(), 1e-12);
        EXPECT_EQ(argmax(p), argmax(z));
    }
}

TEST(Argmax, TiesGoToLowestIndex) {
    EXPECT_EQ(argmax(RealVector<double>{{1.0, 3.0, 3.0, 2.0}}), 1u);
    EXPECT_EQ(argmax(RealVector<double>::Zero(10)), 0u);
}

TEST(ParamCount, ReferenceLstModels) {
    EXPECT_EQ(param_count(lst1_spec()), 9474u);
    EXPECT_EQ(param_count(lst2_spec()), 11098u);
    EXPECT_EQ(param_count(reslst3_spec()), 12722u);
}

TEST(ParamCount, FfnnBaselines) {
    EXPECT_EQ(param_count(model_by_name("ffnn:784-12-10")), 9550u);
    EXPECT_EQ(param_count(model_by_name("ffnn:784-1024-1024-10")), 1863690u);
    // Published figures for these two count weights only; biases add 130 and 262.
    EXPECT_EQ(param_count(model_by_name("ffnn:784-40-40-40-10")), 34960u + 130u);
    EXPECT_EQ(param_count(model_by_name("ffnn:784-126-126-10")), 115920u + 262u);
    EXPECT_EQ(param_count(model_by_name("ffnn:784-600-600-10")), 837610u);
}

TEST(ParamCount, LstBlockFormula) {
    for (std::size_t d_in : {1u, 5u, 28u}) {
        for (std::size_t d_out : {1u, 9u, 28u}) EXPECT_EQ(LstBlock<double>(d_in, d_out).param_count(), 2 * (d_in + 1) * d_out);
    }
}

namespace {

// Random valid spec: a chain of LST / residual stages, flatten, FC stack.
ModelSpec random_spec(Xoshiro256& rng) {
    ModelSpec spec;
    spec.name = "random";
    spec.input_side = 1 + rng.bounded(8);
    std::size_t side = spec.input_side;
    const auto image_stages = rng.bounded(4);
    for (std::size_t i = 0; i < image_stages; ++i) {
        if (rng.bounded(2) == 0) {
            spec.stages.push_back(StageSpec::res_lst(side));
        } else {
            const std::size_t next = 1 + rng.bounded(8);
            spec.stages.push_back(StageSpec::lst(side, next));
            side = next;
        }
    }
    spec.stages.push_back(StageSpec::flatten());
    std::size_t width = side * side;
    const auto hidden = rng.bounded(3);
    for (std::size_t i = 0; i < hidden; ++i) {
        const std::size_t next = 1 + rng.bounded(20);
        spec.stages.push_back(StageSpec::fc(width, next, Activation::tanh));
        width = next;
    }
    spec.stages.push_back(StageSpec::fc(width, 10, Activation::none));
    return spec;
}

} // namespace

TEST(ParamCount, MatchesStoredValuesForReferenceAndRandomSpecs) {
    for (const auto& spec : {lst1_spec(), lst2_spec(), reslst3_spec()}) {
        EXPECT_EQ(stored_value_count(make_params<double>(spec)), param_count(spec));
    }
    Xoshiro256 rng(8);
    for (int i = 0; i < 50; ++i) {
        const auto spec = random_spec(rng);
        EXPECT_EQ(stored_value_count(make_params<float>(spec)), param_count(spec)) << spec_to_text(spec);
    }
}

TEST(Spec, InvalidChainsRejected) {
    ModelSpec bad = lst1_spec();
    bad.stages[0] = StageSpec::lst(27, 28);
    EXPECT_THROW(validate(bad), Error);
    bad = lst1_spec();
    bad.stages.back() = StageSpec::fc(784, 9, Activation::none);
    EXPECT_THROW(validate(bad), Error);
    bad = lst1_spec();
    bad.stages.erase(bad.stages.begin() + 1);
    EXPECT_THROW(param_count(bad), Error);
    EXPECT_THROW(model_by_name("lst9"), Error);
    EXPECT_THROW(model_by_name("ffnn:783-10"), Error);
}

TEST(Spec, TextRoundTrip) {
    Xoshiro256 rng(19);
    for (int i = 0; i < 30; ++i) {
        const auto spec = random_spec(rng);
        EXPECT_EQ(spec_from_text(spec_to_text(spec)), spec);
    }
    EXPECT_EQ(spec_from_text(spec_to_text(reslst3_spec())), reslst3_spec());
}

TEST(ModelForward, ReferenceModelsEmitTenLogits) {
    Xoshiro256 rng(4);
    for (const auto& spec : {lst1_spec(), lst2_spec(), reslst3_spec()}) {
        auto params = make_params<double>(spec);
        lst::testing::randomize(params, rng, 0.1);
        const auto logits = model_forward(spec, params, random_matrix<double>(28, 28, rng, 0, 1));
        EXPECT_EQ(logits.size(), 10);
        EXPECT_TRUE(logits.allFinite());
    }
}

TEST(ModelForward, Lst1ComposesStages) {
    Xoshiro256 rng(5);
    const auto spec = lst1_spec();
    auto params = make_params<double>(spec);
    lst::testing::randomize(params, rng, 0.2);
    const auto x = random_matrix<double>(28, 28, rng, 0, 1);
    const auto& block = std::get<LstBlock<double>>(params.stages[0]);
    const auto& out = std::get<FcLayer<double>>(params.stages[2]);
    const RealVector<double> expect = fc_forward(out, flatten(lst_forward(block, x)));
    EXPECT_TRUE(model_forward(spec, params, x).isApprox(expect, 1e-14));
    EXPECT_THROW(model_forward(spec, params, random_matrix<double>(27, 28, rng)), Error);
}

TEST(ModelForward, ResLst3WithZeroBlocksIsLinearReadout) {
    Xoshiro256 rng(6);
    const auto spec = reslst3_spec();
    auto params = make_params<double>(spec);
    auto& out = std::get<FcLayer<double>>(params.stages[4]);
    out.weight = random_matrix<double>(10, 784, rng);
    const auto x = random_matrix<double>(28, 28, rng, 0, 1);
    EXPECT_TRUE(model_forward(spec, params, x).isApprox(out.weight * flatten(x), 1e-14));
}

TEST(FfnnForward, SingleLayerIsOneFc) {
    const std::vector<std::size_t> widths{784, 10};
    const auto spec = ffnn_spec(widths);
    auto params = make_params<double>(spec);
    Xoshiro256 rng(9);
    lst::testing::randomize(params, rng);
    const RealVector<double> x = random_matrix<double>(784, 1, rng, 0, 1);
    EXPECT_EQ(ffnn_forward(widths, params, x), fc_forward(std::get<FcLayer<double>>(params.stages[1]), x));
}

TEST(FfnnForward, HiddenLayersUseTanhAndMatchModelForward) {
    const std::vector<std::size_t> widths{16, 5, 3, 10};
    const auto spec = ffnn_spec(widths);
    ASSERT_EQ(spec.input_side, 4u);
    auto params = make_params<double>(spec);
    Xoshiro256 rng(10);
    lst::testing::randomize(params, rng);
    const auto img = random_matrix<double>(4, 4, rng, 0, 1);
    EXPECT_TRUE(ffnn_forward(widths, params, flatten(img)).isApprox(model_forward(spec, params, img), 1e-14));
    EXPECT_THROW(ffnn_forward<double>(widths, params, RealVector<double>::Zero(15)), Error);
}

TEST(BatchForward, MatchesSingleSampleForward) {
    Xoshiro256 rng(12);
    for (const auto& spec : {lst1_spec(), lst2_spec(), reslst3_spec(), model_by_name("ffnn:784-12-10")}) {
        auto params = make_params<double>(spec);
        lst::testing::randomize(params, rng, 0.2);
        const auto batch = lst::testing::random_batch<double>(5, 28, rng);
        const RealMatrix<double> logits = forward_batch(spec, params, batch.images);
        ASSERT_EQ(logits.rows(), 5);
        for (Eigen::Index b = 0; b < 5; ++b) {
            const RealMatrix<double> img = batch.images.middleRows(b * 28, 28);
            const RealVector<double> single = model_forward(spec, params, img);
            EXPECT_LE((logits.row(b).transpose() - single).cwiseAbs().maxCoeff(), 1e-12) << spec.name;
        }
    }
}

TEST(BlockTranspose, NonSquareBlocks) {
    RealMatrix<double> stacked(4, 3);
    stacked << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    const RealMatrix<double> t = block_transpose(stacked, 2);
    ASSERT_EQ(t.rows(), 6);
    ASSERT_EQ(t.cols(), 2);
    EXPECT_EQ(t(0, 1), 4);
    EXPECT_EQ(t(2, 0), 3);
    EXPECT_EQ(t(3, 1), 10);
    EXPECT_EQ(block_transpose(t, 3), stacked);
}
