#include <gtest/gtest.h>

#include <algorithm>

#include "ninformer/gradcheck.hpp"
#include "ninformer/ops.hpp"

using namespace ninformer;

namespace {

// Restores the fault hook even when an assertion fails mid-test.
struct FaultGuard {
  explicit FaultGuard(const std::string& op) { set_backward_fault(op); }
  ~FaultGuard() { set_backward_fault(""); }
};

}  // namespace

TEST(GradCheck, RelativeErrorUsesFloor) {
  EXPECT_DOUBLE_EQ(relative_error(1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-6);
}

TEST(GradCheck, ComponentListCoversOpsBlocksAndModels) {
  const auto names = gradcheck_components();
  auto has = [&](const std::string& n) { return std::find(names.begin(), names.end(), n) != names.end(); };
  for (const char* n : {"op:matmul", "op:gelu", "op:layer_norm", "op:softmax", "block:attention", "block:nin_gating",
                        "block:nin_block", "model:ninformer", "model:vit"}) {
    EXPECT_TRUE(has(n)) << n;
  }
  EXPECT_THROW(run_gradcheck("op:nonexistent"), ContractError);
}

TEST(GradCheck, RepresentativeComponentsPass) {
  for (const char* n : {"op:matmul", "op:gelu", "op:layer_norm", "op:depthwise_conv2d", "block:nin_gating",
                        "block:attention", "model:ninformer"}) {
    const auto r = run_gradcheck(n);
    EXPECT_TRUE(r.passed) << n << " error " << r.max_relative_error;
    EXPECT_EQ(r.seeds, 10u);
    EXPECT_GT(r.values_checked, 0u);
  }
}

TEST(GradCheck, InjectedFaultIsDetected) {
  FaultGuard guard("gelu");
  const auto r = run_gradcheck("op:gelu");
  EXPECT_FALSE(r.passed);
  EXPECT_GT(r.max_relative_error, 0.1);
  const auto block = run_gradcheck("block:nin_block");
  EXPECT_FALSE(block.passed);
  EXPECT_TRUE(run_gradcheck("op:matmul").passed);
}
