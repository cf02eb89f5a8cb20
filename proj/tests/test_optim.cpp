#include <gtest/gtest.h>

#include "mldr/optim.hpp"

using namespace mldr;

namespace {

struct ScalarParam {
    Tensor value{std::vector<std::size_t>{1}};
    Tensor grad{std::vector<std::size_t>{1}};
    std::vector<ParamRef> refs() { return {{"theta", &value, &grad}}; }
};

}  // namespace

TEST(Sgd, ZeroGradZeroDecayIsFixedPoint) {
    ScalarParam p;
    p.value[0] = 2.5;
    Sgd sgd(SgdConfig{0.1, 0.9, 0.0});
    // prime a velocity
    p.grad[0] = 1.0;
    sgd.step(p.refs());
    const double v1 = sgd.velocity().at("theta")[0];
    EXPECT_DOUBLE_EQ(v1, 1.0);
    // zero grad: parameter moves only by the decaying velocity
    p.grad[0] = 0.0;
    sgd.step(p.refs());
    EXPECT_DOUBLE_EQ(sgd.velocity().at("theta")[0], 0.9);
}

TEST(Sgd, VanillaStep) {
    ScalarParam p;
    p.value[0] = 1.0;
    p.grad[0] = 1.0;
    Sgd sgd(SgdConfig{0.1, 0.0, 0.0});
    sgd.step(p.refs());
    EXPECT_DOUBLE_EQ(p.value[0], 0.9);
    EXPECT_DOUBLE_EQ(p.grad[0], 0.0);  // grads zeroed inside step
}

// Hand recurrence: v1=1, theta1=-0.1; v2=0.9+1=1.9, theta2=-0.1-0.19=-0.29.
TEST(Sgd, TwoStepMomentumRecurrence) {
    ScalarParam p;
    p.value[0] = 0.0;
    Sgd sgd(SgdConfig{0.1, 0.9, 0.0});
    p.grad[0] = 1.0;
    sgd.step(p.refs());
    EXPECT_NEAR(p.value[0], -0.1, 1e-15);
    p.grad[0] = 1.0;
    sgd.step(p.refs());
    EXPECT_NEAR(p.value[0], -0.29, 1e-15);
}

TEST(Sgd, QuadraticDescentIsMonotone) {
    // loss 0.5*theta^2, grad = theta; lr < 2 contracts
    ScalarParam p;
    p.value[0] = 3.0;
    Sgd sgd(SgdConfig{0.5, 0.0, 0.0});
    double prev = 0.5 * p.value[0] * p.value[0];
    for (int i = 0; i < 20; ++i) {
        p.grad[0] = p.value[0];
        sgd.step(p.refs());
        const double loss = 0.5 * p.value[0] * p.value[0];
        EXPECT_LT(loss, prev);
        prev = loss;
    }
}

TEST(Sgd, PureWeightDecayShrinksByExactFactor) {
    ScalarParam p;
    p.value[0] = 4.0;
    const double lr = 0.1, wd = 0.05;
    Sgd sgd(SgdConfig{lr, 0.0, wd});
    p.grad[0] = 0.0;
    sgd.step(p.refs());
    EXPECT_DOUBLE_EQ(p.value[0], 4.0 * (1.0 - lr * wd));
}

TEST(Sgd, ShapeMismatchThrows) {
    Tensor value({2});
    Tensor grad({3});
    std::vector<ParamRef> refs{{"bad", &value, &grad}};
    Sgd sgd(SgdConfig{});
    EXPECT_THROW(sgd.step(refs), std::invalid_argument);
}

TEST(Sgd, ConfigValidation) {
    EXPECT_THROW(Sgd(SgdConfig{0.0, 0.9, 0.0}), std::invalid_argument);
    EXPECT_THROW(Sgd(SgdConfig{0.1, 1.0, 0.0}), std::invalid_argument);
    EXPECT_THROW(Sgd(SgdConfig{0.1, 0.9, -0.1}), std::invalid_argument);
}

TEST(LrSchedule, ConstantPolicy) {
    LrPolicy p;
    for (int e : {0, 1, 10, 1000}) EXPECT_DOUBLE_EQ(lr_schedule(e, 0.001, p), 0.001);
}

TEST(LrSchedule, StepDecay) {
    LrPolicy p = LrPolicy::parse("step_decay", 0.1, 10);
    EXPECT_DOUBLE_EQ(lr_schedule(0, 1.0, p), 1.0);
    EXPECT_DOUBLE_EQ(lr_schedule(9, 1.0, p), 1.0);
    EXPECT_DOUBLE_EQ(lr_schedule(10, 1.0, p), 0.1);
    EXPECT_NEAR(lr_schedule(25, 0.001, p), 0.001 * 0.01, 1e-18);
}

TEST(LrSchedule, DegenerateFactorIsConstant) {
    LrPolicy p = LrPolicy::parse("step_decay", 1.0, 5);
    for (int e : {0, 4, 5, 50}) EXPECT_DOUBLE_EQ(lr_schedule(e, 0.02, p), 0.02);
}

TEST(LrSchedule, RejectsNegativeEpochAndBadPolicy) {
    EXPECT_THROW(lr_schedule(-1, 0.001, LrPolicy{}), std::invalid_argument);
    EXPECT_THROW(LrPolicy::parse("cosine", 0.1, 10), std::invalid_argument);
    EXPECT_THROW(LrPolicy::parse("step_decay", 0.1, 0), std::invalid_argument);
}
