#include <gtest/gtest.h>

#include <algorithm>

#include "mldr/fusion.hpp"
#include "mldr/gradcheck.hpp"
#include "oracles.hpp"

using namespace mldr;

TEST(Fusion, KindNamesRoundTrip) {
    for (auto k : {FusionKind::concat, FusionKind::min, FusionKind::max, FusionKind::mean})
        EXPECT_EQ(fusion_from_string(to_string(k)), k);
    EXPECT_THROW(fusion_from_string("avg"), std::invalid_argument);
}

TEST(Fusion, IdenticalBranchesAreFixedPoints) {
    Rng rng(40);
    Tensor t = oracle::random_tensor({3, 8}, rng);
    for (std::size_t k : {2, 4}) {  // power-of-two branch counts: bit exact
        std::vector<Tensor> branches(k, t);
        for (auto kind : {FusionKind::min, FusionKind::max, FusionKind::mean})
            EXPECT_EQ(fuse(branches, kind), t) << to_string(kind) << " k=" << k;
    }
    // odd branch counts: mean is within one rounding step of t
    std::vector<Tensor> three(3, t);
    EXPECT_EQ(fuse(three, FusionKind::min), t);
    EXPECT_EQ(fuse(three, FusionKind::max), t);
    Tensor m = fuse(three, FusionKind::mean);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_NEAR(m[i], t[i], 4e-16 * std::abs(t[i]));
}

TEST(Fusion, ComponentwiseDefinitions) {
    Tensor a = Tensor::from({1, 2}, {1, 3});
    Tensor b = Tensor::from({1, 2}, {3, 1});
    EXPECT_EQ(fuse({a, b}, FusionKind::mean), Tensor::from({1, 2}, {2, 2}));
    EXPECT_EQ(fuse({a, b}, FusionKind::max), Tensor::from({1, 2}, {3, 3}));
    EXPECT_EQ(fuse({a, b}, FusionKind::min), Tensor::from({1, 2}, {1, 1}));
}

TEST(Fusion, ConcatLayout) {
    Rng rng(41);
    Tensor a = oracle::random_tensor({2, 8}, rng);
    Tensor b = oracle::random_tensor({2, 8}, rng);
    Tensor out = fuse({a, b}, FusionKind::concat);
    EXPECT_EQ(out.shape(), (std::vector<std::size_t>{2, 16}));
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t j = 0; j < 8; ++j) {
            EXPECT_EQ(out.at(n, j), a.at(n, j));
            EXPECT_EQ(out.at(n, 8 + j), b.at(n, j));
        }
}

TEST(Fusion, ErrorsOnBadInputs) {
    Tensor a({2, 8});
    EXPECT_THROW(fuse({a}, FusionKind::mean), std::invalid_argument);
    EXPECT_THROW(fuse({a, Tensor({2, 7})}, FusionKind::mean), std::invalid_argument);
    FusionState st(FusionKind::mean);
    EXPECT_THROW(st.backward(a), std::logic_error);
}

TEST(Fusion, MeanBackwardSharesEvenly) {
    FusionState st(FusionKind::mean);
    std::vector<Tensor> branches(4, Tensor({2, 3}, 1.0));
    st.fuse(branches);
    Tensor g({2, 3}, 1.0);
    auto grads = st.backward(g);
    ASSERT_EQ(grads.size(), 4u);
    for (auto& gb : grads)
        for (std::size_t i = 0; i < gb.size(); ++i) EXPECT_DOUBLE_EQ(gb[i], 0.25);
}

TEST(Fusion, MaxBackwardRoutesToSelectedBranch) {
    FusionState st(FusionKind::max);
    Tensor lo({1, 4}, 0.0), mid({1, 4}, 1.0), hi({1, 4}, 2.0);
    st.fuse({lo, hi, mid});
    for (std::size_t sel : st.argselect()) EXPECT_EQ(sel, 1u);
    Rng rng(42);
    Tensor g = oracle::random_tensor({1, 4}, rng);
    auto grads = st.backward(g);
    EXPECT_EQ(grads[1], g);
    EXPECT_EQ(grads[0], Tensor({1, 4}));
    EXPECT_EQ(grads[2], Tensor({1, 4}));
}

TEST(Fusion, MinMaxTiesPickLowestBranch) {
    FusionState st(FusionKind::max);
    Tensor t({1, 3}, 5.0);
    st.fuse({t, t, t});
    for (std::size_t sel : st.argselect()) EXPECT_EQ(sel, 0u);
}

TEST(Fusion, GradientConservationExact) {
    Rng rng(43);
    Tensor g = oracle::random_tensor({3, 8}, rng, -2, 2);
    for (std::size_t k : {2, 3, 4, 5, 6}) {
        std::vector<Tensor> branches;
        for (std::size_t b = 0; b < k; ++b) branches.push_back(oracle::random_tensor({3, 8}, rng));
        for (auto kind : {FusionKind::mean, FusionKind::max, FusionKind::min}) {
            FusionState st(kind);
            st.fuse(branches);
            auto grads = st.backward(g);
            Tensor sum({3, 8});
            for (auto& gb : grads)
                for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += gb[i];
            EXPECT_EQ(sum, g) << to_string(kind) << " k=" << k;  // exact, not approximate
        }
    }
}

TEST(Fusion, MeanOnehotBackwardGivesOneOverK) {
    FusionState st(FusionKind::mean);
    std::vector<Tensor> branches(4, Tensor({1, 8}, 0.5));
    st.fuse(branches);
    Tensor onehot({1, 8});
    onehot.at(0, 3) = 1.0;
    auto grads = st.backward(onehot);
    for (auto& gb : grads) {
        EXPECT_DOUBLE_EQ(gb.at(0, 3), 0.25);
        EXPECT_DOUBLE_EQ(gb.at(0, 0), 0.0);
    }
}

TEST(Fusion, PermutationSymmetry) {
    Rng rng(44);
    std::vector<Tensor> branches;
    for (int b = 0; b < 4; ++b) branches.push_back(oracle::random_tensor({2, 8}, rng));
    std::vector<Tensor> permuted{branches[2], branches[0], branches[3], branches[1]};
    for (auto kind : {FusionKind::min, FusionKind::max, FusionKind::mean}) {
        Tensor a = fuse(branches, kind);
        Tensor b = fuse(permuted, kind);
        EXPECT_LE(oracle::max_abs_diff(a, b), 1e-12) << to_string(kind);
    }
    // concat permutes the column blocks
    Tensor ca = fuse(branches, FusionKind::concat);
    Tensor cb = fuse(permuted, FusionKind::concat);
    const std::size_t perm[4] = {2, 0, 3, 1};
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t j = 0; j < 8; ++j)
                EXPECT_EQ(cb.at(n, b * 8 + j), ca.at(n, perm[b] * 8 + j));
}

TEST(Fusion, OrderingMinLeMeanLeMax) {
    Rng rng(45);
    for (int iter = 0; iter < 1000; ++iter) {
        std::vector<Tensor> branches;
        const std::size_t k = 2 + rng.below(4);
        for (std::size_t b = 0; b < k; ++b) branches.push_back(oracle::random_tensor({1, 4}, rng, -5, 5));
        Tensor lo = fuse(branches, FusionKind::min);
        Tensor mid = fuse(branches, FusionKind::mean);
        Tensor hi = fuse(branches, FusionKind::max);
        for (std::size_t i = 0; i < lo.size(); ++i) {
            ASSERT_LE(lo[i], mid[i]);
            ASSERT_LE(mid[i], hi[i]);
        }
    }
}

// Two-branch toy model: two independent linear maps into a fusion head,
// checked end to end against central differences for each fusion kind.
TEST(Fusion, GradCheckThroughToyModel) {
    for (auto kind : {FusionKind::concat, FusionKind::min, FusionKind::max, FusionKind::mean}) {
        Rng rng(46);
        LinearLayer fa(5, 8), fb(5, 8);
        fa.init_params(rng);
        fb.init_params(rng);
        LinearLayer head(16, 8);  // used only for concat
        head.init_params(rng);
        FusionState st(kind);
        Tensor x = oracle::random_tensor({2, 5}, rng);
        std::vector<int> labels{1, 6};

        const auto fused_logits = [&]() {
            std::vector<Tensor> branches{fa.forward(x), fb.forward(x)};
            Tensor fusedv = st.fuse(branches);
            if (kind == FusionKind::concat) fusedv = head.forward(fusedv);
            return fusedv;
        };
        const auto loss = [&]() { return softmax_cross_entropy(fused_logits(), labels).loss; };

        // analytic pass
        fa.zero_grads();
        fb.zero_grads();
        head.zero_grads();
        LossOutput lo = softmax_cross_entropy(fused_logits(), labels);
        Tensor g = lo.grad_logits;
        if (kind == FusionKind::concat) g = head.backward(g);
        auto branch_grads = st.backward(g);
        Tensor gxa = fa.backward(branch_grads[0]);
        Tensor gxb = fb.backward(branch_grads[1]);
        Tensor gx = elementwise(EwKind::add, gxa, gxb);

        std::vector<ParamRef> probes = fa.params();
        for (auto& p : fb.params()) probes.push_back(p);
        if (kind == FusionKind::concat)
            for (auto& p : head.params()) probes.push_back(p);
        std::vector<Tensor> analytic;
        for (auto& p : probes) analytic.push_back(*p.grad);
        Tensor gx_copy = gx;
        probes.push_back({"input", &x, &gx});
        analytic.push_back(gx_copy);

        auto res = grad_check_probe(loss, probes, analytic, 1e-5);
        EXPECT_LT(res.max_rel_err, 1e-5) << to_string(kind) << " worst=" << res.worst;
    }
}
