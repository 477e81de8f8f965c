#include <gtest/gtest.h>

#include "corrupted_probe.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/gradcheck.hpp"

namespace xmodal {
namespace {

TEST(GradcheckTest, StandardProbesPass) {
  const GradcheckReport r = run_gradcheck({}, standard_probes());
  ASSERT_EQ(r.probes.size(), 4u);
  EXPECT_TRUE(r.passed);
  for (const ProbeResult& p : r.probes) {
    EXPECT_LT(p.max_error, 1e-4) << p.name << " worst at " << p.input << "[" << p.index << "]";
    EXPECT_FALSE(p.input.empty());
  }
  EXPECT_EQ(r.probes[3].name, "combined");
}

TEST(GradcheckTest, CorruptedRuleIsCaughtAndLocated) {
  std::vector<GradProbe> probes = standard_probes();
  probes.push_back(testing::corrupted_probe());
  GradcheckOptions o;
  o.trials = 3;
  const GradcheckReport r = run_gradcheck(o, probes);
  EXPECT_FALSE(r.passed);
  EXPECT_TRUE(r.probes[0].passed);
  const ProbeResult& bad = r.probes.back();
  EXPECT_FALSE(bad.passed);
  EXPECT_GT(bad.max_error, 1e-2);
  EXPECT_TRUE(bad.input == "y_j" || bad.input == "y_k") << bad.input;
  EXPECT_NE(bad.analytic, bad.numeric);
}

TEST(GradcheckTest, RejectsBadOptions) {
  GradcheckOptions o;
  o.trials = 0;
  EXPECT_THROW(run_gradcheck(o, standard_probes()), ContractError);
  o = {};
  o.batch = 1;
  EXPECT_THROW(run_gradcheck(o, standard_probes()), ContractError);
}

TEST(GradcheckTest, DeterministicInSeed) {
  GradcheckOptions o;
  o.trials = 2;
  EXPECT_EQ(run_gradcheck(o, standard_probes()).probes[0].max_error,
            run_gradcheck(o, standard_probes()).probes[0].max_error);
}

}  // namespace
}  // namespace xmodal
