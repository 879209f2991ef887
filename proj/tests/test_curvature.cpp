#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "rdiff/curvature.hpp"
#include "rdiff/manifolds.hpp"

using namespace rdiff;

TEST(Constants, FlatSpaceIsExact) {
  const GeometryConstants gc = compute_constants(Euclidean(3).spec(4.0));
  EXPECT_EQ(gc.c1, 1.0);
  EXPECT_EQ(gc.c2, 1.0);
  EXPECT_EQ(gc.c3, 0.0);
  EXPECT_EQ(gc.c4, 0.0);
  EXPECT_EQ(consensus_step(gc), 0.5);
}

TEST(Constants, SphereUsesCotangent) {
  const double d = 0.6;
  const GeometryConstants gc = compute_constants(Sphere(2).spec(d));
  EXPECT_EQ(gc.c1, 1.0);
  EXPECT_NEAR(gc.c2, d * std::cos(d) / std::sin(d), 1e-15);
  EXPECT_EQ(gc.c3, 1.0);
  EXPECT_NEAR(consensus_step(gc), 0.5 * d * std::cos(d) / std::sin(d), 1e-15);
}

TEST(Constants, GrassmannCurvatureRange) {
  const double d = 1.0;
  const GeometryConstants gc = compute_constants(Grassmann(20, 3).spec(d));
  const double a = std::sqrt(2.0) * d;
  EXPECT_NEAR(gc.c2, a * std::cos(a) / std::sin(a), 1e-15);
  EXPECT_EQ(gc.c1, 1.0);
  EXPECT_EQ(gc.c4, 2.0);
}

TEST(Constants, NegativeCurvatureUsesHyperbolicCotangent) {
  ManifoldSpec s;
  s.k_min = -0.25;
  s.k_max = 0.0;
  s.diameter = 3.0;
  const GeometryConstants gc = compute_constants(s);
  const double a = 0.5 * 3.0;
  EXPECT_NEAR(gc.c1, a * (std::exp(2 * a) + 1) / (std::exp(2 * a) - 1), 1e-14);
  EXPECT_EQ(gc.c2, 1.0);
  EXPECT_EQ(gc.c3, 0.25);
}

TEST(TheoremConstants, HandComputedExample) {
  GeometryConstants gc;  // flat, D = 1
  const TheoremConstants tc = make_theorem_constants(gc, 0.5, 1.0, 0.0, 4, 2.0);
  EXPECT_DOUBLE_EQ(tc.xi, 0.125);
  EXPECT_DOUBLE_EQ(tc.c_of_xi, 4160.0);
  EXPECT_DOUBLE_EQ(tc.b, 8.75);
  EXPECT_DOUBLE_EQ(tc.rho1, 0.875);
  EXPECT_DOUBLE_EQ(tc.rho2, 1.0 - 1.0 / 64.0);
  EXPECT_DOUBLE_EQ(tc.eta0, 0.5);
  EXPECT_DOUBLE_EQ(consensus_bound(tc, 10), 0.25 * 4160.0 * 4 * 8.75 / 10);
  // init/(2 eta0 sqrt T) + eta0 (delta sqrt(C B) + C1 (sigma^2 + delta^2)) (1 + log T)/sqrt T
  const double expect = 0.3 / (2 * 0.5 * 10) + 0.5 * (std::sqrt(4160.0 * 8.75) + 1.0) * (1 + std::log(100.0)) / 10;
  EXPECT_NEAR(gap_bound(tc, 100, 0.3), expect, 1e-12);
}

TEST(TheoremConstants, Eta0IsCappedAtOne) {
  GeometryConstants gc;
  gc.diameter = 4.0;
  EXPECT_EQ(make_theorem_constants(gc, 0.5, 1.0, 0.1, 4, 2.0).eta0, 1.0);
  EXPECT_EQ(make_theorem_constants(gc, 0.5, 1.0, 0.1, 4, 8.0).eta0, 0.5);
}

TEST(StepSchedule, InverseSquareRoot) {
  EXPECT_DOUBLE_EQ(step_schedule(0.8, 1), 0.8);
  EXPECT_DOUBLE_EQ(step_schedule(0.8, 16), 0.2);
}

TEST(StepGuards, NameTheViolatedGuard) {
  const GeometryConstants gc = compute_constants(Sphere(2).spec(1.0));
  TheoremConstants tc = make_theorem_constants(gc, 0.8, 1.0, 0.1, 4, 2.0);
  EXPECT_EQ(check_step_guards(tc, std::numbers::pi), "");
  tc.s = 4.0;
  EXPECT_NE(check_step_guards(tc, std::numbers::pi).find("s*D"), std::string::npos);
  tc = make_theorem_constants(gc, 0.8, 1.0, 0.1, 4, 2.0);
  tc.eta0 = 1.0;
  EXPECT_NE(check_step_guards(tc, std::numbers::pi).find("eta0*G"), std::string::npos);
}

TEST(CosineLaw, FlatSpaceHoldsWithEquality) {
  Euclidean m(3);
  const GeometryConstants gc = compute_constants(m.spec(10.0));
  Rng rng(1);
  for (int k = 0; k < 100; ++k) {
    const CosineLawCheck c = check_cosine_law(m, gc, m.random_point(rng), m.random_point(rng), m.random_point(rng));
    EXPECT_NEAR(c.slack_upper, 0.0, 1e-10);
    EXPECT_NEAR(c.slack_lower, 0.0, 1e-10);
  }
}

TEST(Lemmas, SphereCertifies) {
  Sphere m(3);
  const GeometryConstants gc = compute_constants(m.spec(1.2));
  Rng rng(4);
  const LemmaCertificate cert = certify_lemmas(m, gc, m.random_point(rng), 2000, rng);
  EXPECT_TRUE(cert.certified());
}

TEST(Lemmas, GrassmannCertifies) {
  Grassmann m(8, 3);
  const GeometryConstants gc = compute_constants(m.spec(1.0));
  Rng rng(6);
  const LemmaCertificate cert = certify_lemmas(m, gc, m.random_point(rng), 500, rng);
  EXPECT_TRUE(cert.certified());
}

TEST(Lemmas, FlatConstantsOnTheSphereAreCaught) {
  Sphere m(2);
  GeometryConstants gc = compute_constants(m.spec(1.5));
  gc.c2 = 1.0;
  gc.c4 = 0.0;
  Rng rng(8);
  const LemmaCertificate cert = certify_lemmas(m, gc, m.random_point(rng), 2000, rng);
  EXPECT_GT(cert.cosine_lower_failures, 0u);
  EXPECT_GT(cert.log_lipschitz_failures, 0u);
}
