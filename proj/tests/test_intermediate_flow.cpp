#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <cmath>
#include <limits>
#include <vector>

#include "vortexlab/intermediate_flow.hpp"
#include "vortexlab/rate_fit.hpp"

using namespace vortexlab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

IntermediateState tracer_only(double M, std::vector<Vec2> tracers) {
  QuadrupoleSpec q;
  q.amplitude = 0.0;
  auto s = init_quadrupole(q, StrainParams{M});
  s.tracers = std::move(tracers);
  return s;
}

// One full-ensemble run at M = 2 up to T_M, shared by several checks.
struct FullRun {
  IntermediateState initial;
  IntermediateState final_state;
  std::vector<double> times, norm1, mismatch, det;
  std::vector<SupportBounds> bounds;
  double grid_l2_initial = 0.0;
};

const FullRun& full_run() {
  static const FullRun run = [] {
    FullRun r;
    FlowSettings fs;
    fs.symmetry = SymmetryMode::full;
    auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{2.0}, fs);
    seed_jacobian_tracers(s, {1.25, 1.75}, 1e-3);
    r.initial = s;
    r.grid_l2_initial = grid_lp_norm(s, 2.0);
    const double T = s.strain.T_M();
    const double dt = recommended_dt(s, T);
    evolve(s, dt, static_cast<int>(std::lround(T / dt)), [&](const IntermediateState& st) {
      r.times.push_back(st.t);
      r.norm1.push_back(lp_norm(st, 1.0));
      r.mismatch.push_back(symmetry_mismatch(st));
      r.det.push_back(flow_map_jacobian(st, {1.25, 1.75}, 1e-3));
      r.bounds.push_back(support_bounds(st));
    });
    r.final_state = s;
    return r;
  }();
  return run;
}

}  // namespace

TEST(StrainParams, TimescaleIdentity) {
  for (double M : {0.5, 2.0, 4.0, 8.0}) {
    StrainParams p{M};
    EXPECT_NEAR(M * p.T_M(), std::log1p(M), 1e-15);
    EXPECT_GT(p.T_M(), 0.0);
  }
  EXPECT_EQ(StrainParams{0.0}.T_M(), 1.0);
  EXPECT_THROW(StrainParams{-1.0}.validate(), Error);
}

TEST(InitQuadrupole, ZeroAmplitudeGivesEmptyEnsemble) {
  QuadrupoleSpec q;
  q.amplitude = 0.0;
  const auto s = init_quadrupole(q, StrainParams{2.0});
  EXPECT_TRUE(s.empty());
  EXPECT_EQ(lp_norm(s, 1.0), 0.0);
  EXPECT_EQ(lp_norm(s, kInf), 0.0);
  EXPECT_EQ(gradient_probe(s, 0.1), 0.0);
  EXPECT_EQ(total_circulation(s), 0.0);
}

TEST(InitQuadrupole, TotalCirculationVanishesExactly) {
  FlowSettings fs;
  fs.symmetry = SymmetryMode::full;
  const auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{2.0}, fs);
  double sum = 0.0;
  for (const auto& p : s.particles) sum += p.circulation;
  EXPECT_EQ(sum, 0.0);
  EXPECT_EQ(total_circulation(init_quadrupole(QuadrupoleSpec{}, StrainParams{2.0})), 0.0);
}

TEST(InitQuadrupole, InitialDataIsOddInBothVariables) {
  const QuadrupoleSpec q;
  for (const Vec2 x : {Vec2{1.2, 1.7}, Vec2{1.3, 1.9}, Vec2{1.1, 1.6}}) {
    EXPECT_GT(q.omega0(x), 0.0);
    EXPECT_EQ(q.omega0({-x.x2, x.x3}), -q.omega0(x));
    EXPECT_EQ(q.omega0({x.x2, -x.x3}), -q.omega0(x));
    EXPECT_EQ(q.omega0({-x.x2, -x.x3}), q.omega0(x));
  }
  EXPECT_EQ(q.omega0({0.5, 0.5}), 0.0);
}

TEST(InitQuadrupole, ParticleQuadratureMatchesAdaptiveQuadrature) {
  using boost::math::quadrature::gauss_kronrod;
  QuadrupoleSpec q;
  q.spacing = 1.0 / 128;
  const auto s = init_quadrupole(q, StrainParams{0.0});
  const double R = q.bump_radius;
  auto inner = [&](double x2) {
    const double w = std::sqrt(std::max(0.0, R * R - (x2 - q.center.x2) * (x2 - q.center.x2)));
    if (w == 0.0) return 0.0;
    return gauss_kronrod<double, 61>::integrate(
        [&](double x3) { return q.phi({x2, x3}); }, q.center.x3 - w, q.center.x3 + w, 10, 1e-11);
  };
  const double exact = 4.0 * gauss_kronrod<double, 61>::integrate(inner, q.center.x2 - R,
                                                                    q.center.x2 + R, 10, 1e-11);
  EXPECT_NEAR(lp_norm(s, 1.0) / exact, 1.0, 1e-6);
}

TEST(InitQuadrupole, RejectsUnderResolvedBump) {
  QuadrupoleSpec q;
  q.spacing = 1.0 / 32;
  try {
    init_quadrupole(q, StrainParams{1.0});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::UnderResolvedBump);
  }
  q.spacing = 0.03;
  EXPECT_THROW(init_quadrupole(q, StrainParams{1.0}), Error);
}

TEST(Step, StrainOnlyTracerIsExact) {
  auto s = tracer_only(2.0, {{0.7, -1.3}, {2.0, 0.4}});
  for (int n = 0; n < 1000; ++n) step(s, 1e-3);
  EXPECT_NEAR(s.t, 1.0, 1e-12);
  EXPECT_NEAR(s.tracers[0].x2, 0.7 * std::exp(-2.0), 1e-8);
  EXPECT_EQ(s.tracers[0].x3, -1.3);
  EXPECT_NEAR(s.tracers[1].x2, 2.0 * std::exp(-2.0), 1e-8);
  EXPECT_EQ(s.tracers[1].x3, 0.4);
}

TEST(Step, LoneBlobDoesNotSelfAdvect) {
  FlowSettings fs;
  fs.symmetry = SymmetryMode::full;
  QuadrupoleSpec q;
  q.amplitude = 0.0;
  auto s = init_quadrupole(q, StrainParams{0.0}, fs);
  Particle p;
  p.label = p.position = {0.5, -0.25};
  p.omega0 = 1.0;
  p.circulation = q.spacing * q.spacing;
  s.particles.push_back(p);
  for (int n = 0; n < 20; ++n) step(s, 0.05);
  EXPECT_LE(norm(s.particles[0].position - p.label), 1e-6);
}

TEST(Step, GuardsAgainstLargeSteps) {
  auto s = tracer_only(2.0, {{1.0, 1.0}});
  try {
    step(s, 0.06);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::CFLViolation);
  }
  auto q = init_quadrupole(QuadrupoleSpec{}, StrainParams{1.0});
  const double umax = max_induced_speed(q);
  EXPECT_GT(umax, 0.0);
  EXPECT_THROW(step(q, 0.09 * q.spec.spacing / umax * 10.0), Error);
}

TEST(Step, BlowupGuardOutsideStrainRegion) {
  auto s = tracer_only(0.0, {{0.0, 10.5}});
  try {
    step(s, 0.01);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::BlowupGuard);
  }
}

TEST(LpNorm, ExactGrowthLaws) {
  const auto& r = full_run();
  const auto& s0 = r.initial;
  const auto& s = r.final_state;
  const double M = s.strain.M;
  for (double v : r.norm1) EXPECT_EQ(v, r.norm1.front());
  EXPECT_NEAR(lp_norm(s, 2.0) / lp_norm(s0, 2.0), std::exp(M * s.t / 2.0), 1e-12 * std::exp(M * s.t / 2.0));
  EXPECT_EQ(lp_norm(s, kInf), std::exp(M * s.t) * lp_norm(s0, kInf));
  EXPECT_NEAR(s.t, s.strain.T_M(), 1e-12);
}

TEST(LpNorm, GrowthAtMEqualsFour) {
  auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{4.0});
  const double l2 = lp_norm(s, 2.0);
  s.t = s.strain.T_M();  // the particle value is a closed form in t
  EXPECT_NEAR(lp_norm(s, 2.0) / l2, std::sqrt(5.0), 1e-12);
}

TEST(LpNorm, GridRemapTracksGrowthLaw) {
  const auto& r = full_run();
  const auto& s = r.final_state;
  const double ratio = grid_lp_norm(s, 2.0) / r.grid_l2_initial;
  EXPECT_NEAR(ratio / std::exp(s.strain.M * s.t / 2.0), 1.0, 0.02);
  EXPECT_NEAR(grid_lp_norm(s, 2.0) / lp_norm(s, 2.0), 1.0, 0.02);
}

TEST(Symmetry, MirrorPairsStayMatched) {
  const auto& r = full_run();
  for (double m : r.mismatch) EXPECT_LE(m, 1e-6);
}

TEST(FlowMapJacobian, IdentityAtStart) {
  auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{2.0});
  seed_jacobian_tracers(s, {1.3, 1.6}, 1e-3);
  EXPECT_NEAR(flow_map_jacobian(s, {1.3, 1.6}, 1e-3), 1.0, 1e-12);
}

TEST(FlowMapJacobian, StrainOnlyIsExponential) {
  auto s = tracer_only(2.0, {});
  seed_jacobian_tracers(s, {0.5, 0.5}, 1e-3);
  for (int n = 0; n < 500; ++n) step(s, 1e-3);
  EXPECT_NEAR(flow_map_jacobian(s, {0.5, 0.5}, 1e-3), std::exp(-2.0 * s.t), 1e-12);
}

TEST(FlowMapJacobian, QuadrupoleMatchesDeterminantLaw) {
  const auto& r = full_run();
  for (std::size_t i = 0; i < r.times.size(); ++i)
    EXPECT_NEAR(r.det[i] / std::exp(-2.0 * r.times[i]), 1.0, 0.01);
  EXPECT_NEAR(r.det.back(), 1.0 / 3.0, 0.01 / 3.0);
}

TEST(FlowMapJacobian, RequiresSeededTracers) {
  const auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{2.0});
  try {
    flow_map_jacobian(s, {1.5, 1.5}, 1e-3);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TracersNotSeeded);
  }
}

TEST(SupportBounds, InitialSupportInsideBox) {
  const auto& b = full_run().bounds.front();
  EXPECT_GE(b.min_A2, 1.0);
  EXPECT_LE(b.max_A2, 2.0);
  EXPECT_GE(b.min_A3, 1.0);
  EXPECT_LE(b.max_A3, 2.0);
}

TEST(SupportBounds, NoStrainKeepsQuadrant) {
  auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{0.0});
  const double dt = recommended_dt(s, 1.0);
  double lo = kInf;
  evolve(s, dt, static_cast<int>(std::lround(1.0 / dt)),
         [&](const IntermediateState& st) { lo = std::min(lo, support_bounds(st).min_A2); });
  EXPECT_GT(lo, 0.5);
}

TEST(SupportBounds, DecayRateOfMaxA2GrowsWithStrain) {
  std::vector<double> rates;
  for (double M : {2.0, 4.0, 8.0}) {
    auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{M});
    const double T = s.strain.T_M();
    // Bounds depend only on particle paths; a coarser step keeps this quick.
    const int steps = std::max(20, static_cast<int>(std::ceil(M * T / 0.1)));
    std::vector<double> t, a2;
    evolve(s, T / steps, steps, [&](const IntermediateState& st) {
      t.push_back(st.t);
      a2.push_back(support_bounds(st).max_A2);
    });
    rates.push_back(fit_exponential(t, a2).rate);
  }
  EXPECT_LT(rates[0], 0.0);
  EXPECT_LT(rates[1], rates[0]);
  EXPECT_LT(rates[2], rates[1]);
}

TEST(GradientProbe, EmptyEnsembleIsZero) {
  QuadrupoleSpec q;
  q.amplitude = 0.0;
  EXPECT_EQ(gradient_probe(init_quadrupole(q, StrainParams{1.0}), 0.05), 0.0);
}

TEST(GradientProbe, RejectsIntrudingSupport) {
  const auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{1.0});
  try {
    gradient_probe(s, 0.7);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::SupportIntrudesProbeBall);
  }
}

TEST(GradientProbe, BoundedWithoutStrain) {
  auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{0.0});
  const double delta = probe_radius(0.0);
  const double p0 = gradient_probe(s, delta);
  EXPECT_GT(p0, 0.0);
  const double dt = recommended_dt(s, 1.0);
  double lo = kInf, hi = 0.0;
  evolve(s, dt, static_cast<int>(std::lround(1.0 / dt)), [&](const IntermediateState& st) {
    const double p = gradient_probe(st, delta);
    lo = std::min(lo, p);
    hi = std::max(hi, p);
  });
  EXPECT_GE(lo, 0.5 * p0);
  EXPECT_LE(hi, 2.0 * p0);
}

TEST(GradientProbe, SamplesAreInsideDisk) {
  const auto pts = disk_samples(0.2, 100);
  ASSERT_EQ(pts.size(), 100u);
  EXPECT_EQ(norm(pts[0]), 0.0);
  for (const auto& p : pts) EXPECT_LE(norm(p), 0.2);
}

TEST(LogLipschitz, RatioStaysBounded) {
  const auto& r = full_run();
  const double a = log_lipschitz_ratio(r.initial, 400, 5);
  const double b = log_lipschitz_ratio(r.final_state, 400, 5);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(a, 1.0);
  EXPECT_LT(b, 1.0);
}

TEST(FlowSeries, HermiteInterpolationHitsSnapshots) {
  auto s = init_quadrupole(QuadrupoleSpec{}, StrainParams{2.0});
  const auto series = evolve(s, 0.01, 3);
  ASSERT_EQ(series.snapshots().size(), 4u);
  const auto mid = series.positions_at(0.02);
  EXPECT_EQ(mid, series.snapshots()[2].positions);
  EXPECT_EQ(series.positions_at(0.03), series.snapshots()[3].positions);
  for (std::size_t i = 0; i < s.particles.size(); ++i)
    EXPECT_EQ(series.snapshots()[3].positions[i], s.particles[i].position);
  try {
    series.positions_at(0.05);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::FlowSeriesGap);
  }
}

TEST(FlowSeries, InterpolationIsAccurateBetweenSnapshots) {
  auto coarse = init_quadrupole(QuadrupoleSpec{}, StrainParams{4.0});
  auto fine = coarse;
  const auto series = evolve(coarse, 0.02, 2);
  evolve(fine, 0.01, 3);  // t = 0.03 lies between the coarse snapshots
  const auto interp = series.positions_at(0.03);
  double err = 0.0;
  for (std::size_t i = 0; i < interp.size(); ++i)
    err = std::max(err, norm(interp[i] - fine.particles[i].position));
  EXPECT_LT(err, 1e-7);
}

TEST(Evolve, DeterministicRerun) {
  auto a = init_quadrupole(QuadrupoleSpec{}, StrainParams{4.0});
  auto b = a;
  evolve(a, 0.01, 3);
  evolve(b, 0.01, 3);
  for (std::size_t i = 0; i < a.particles.size(); ++i)
    EXPECT_EQ(a.particles[i].position, b.particles[i].position);
}

TEST(CrossBackend, ShortRunAgrees) {
  FlowSettings d;
  d.domain = TorusDomain2D{4.0};
  FlowSettings g = d;
  g.backend = Backend::grid;
  auto a = init_quadrupole(QuadrupoleSpec{}, StrainParams{2.0}, d);
  auto b = init_quadrupole(QuadrupoleSpec{}, StrainParams{2.0}, g);
  evolve(a, 0.02, 5);
  evolve(b, 0.02, 5);
  double err = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.particles.size(); ++i) {
    err = std::max(err, norm(a.particles[i].position - b.particles[i].position));
    scale = std::max(scale, norm(a.particles[i].position));
  }
  EXPECT_LE(err, 1e-3 * scale);
}
